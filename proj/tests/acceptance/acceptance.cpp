#include "fmnet/classify.hpp"
#include "fmnet/evalsuite.hpp"
#include "fmnet/pipeline.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

using namespace fmnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

int failures = 0;

void report(int criterion, const std::string& title, Verdict& v) {
    std::cout << "criterion " << std::setw(2) << criterion << " " << (v.pass ? "PASS" : "FAIL") << "  " << title << ":"
              << v.detail.str() << std::endl;
    if (!v.pass) ++failures;
}

template <typename F>
void run_criterion(int criterion, const std::string& title, F&& body) {
    Verdict v;
    try {
        body(v);
    } catch (const std::exception& e) {
        v.require(false, std::string("exception: ") + e.what());
    }
    report(criterion, title, v);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

template <typename T>
Tensor<T> uniform_tensor(int n, int c, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(n, c);
    for (auto& x : t.data) x = static_cast<T>(u(rng));
    return t;
}

double central_difference(double& x, const std::function<double()>& f, double h = 1e-4) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

// ---------------------------------------------------------------- 1

void shape_walk(Verdict& v) {
    const auto t0 = Clock::now();
    Network<float> net;
    net.init(1);
    const Tensor<float> x(1, 1, 48, 80, 0.5f);
    ShapeTrace enc, dec, disc;
    const auto code = net.encoder.forward(x, Pass::infer(), &enc);
    net.decoder.forward(code.mu, Pass::infer(), &dec);
    net.discriminator.forward(code.mu, Pass::infer(), &disc);
    const double elapsed = seconds_since(t0);

    const ShapeTrace want_enc = {{"input", {1, 1, 48, 80}}, {"EC1", {1, 32, 24, 40}}, {"EC2", {1, 64, 12, 20}},
                                 {"EC3", {1, 128, 6, 10}},  {"EF", {1, 7680, 1, 1}},  {"EL1", {1, 1024, 1, 1}},
                                 {"mu", {1, 2048, 1, 1}},   {"var", {1, 2048, 1, 1}}};
    const ShapeTrace want_dec = {{"input", {1, 2048, 1, 1}}, {"DL1", {1, 7680, 1, 1}}, {"DUF", {1, 128, 6, 10}},
                                 {"DCT1", {1, 64, 12, 20}},  {"DCT2", {1, 32, 24, 40}}, {"DCT3", {1, 16, 48, 80}},
                                 {"DC1", {1, 1, 48, 80}}};
    const ShapeTrace want_disc = {{"DSL1", {1, 1000, 1, 1}}, {"DSL2", {1, 500, 1, 1}},
                                  {"DSL3", {1, 215, 1, 1}},  {"DSL4", {1, 1, 1, 1}}};
    v.require(enc == want_enc, "encoder trace");
    v.require(dec == want_dec, "decoder trace");
    v.require(disc == want_disc, "discriminator trace");
    v.require(elapsed < 1.0, "runtime");
    v.detail << " " << enc.size() + dec.size() + disc.size() << " shapes checked in " << std::fixed
             << std::setprecision(3) << elapsed << " s";
}

// ---------------------------------------------------------------- 2

double normal_log_pdf(double x, double mu, double sigma) {
    const double u = (x - mu) / sigma;
    return -0.5 * u * u - std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
}

double kl_by_quadrature(double mu_a, double s_a, double mu_b, double s_b) {
    auto f = [&](double x) {
        const double log_p = normal_log_pdf(x, mu_a, s_a);
        return std::exp(log_p) * (log_p - normal_log_pdf(x, mu_b, s_b));
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, mu_a - 12 * s_a, mu_a + 12 * s_a, 15,
                                                                         1e-13);
}

void loss_oracles(Verdict& v) {
    std::mt19937_64 rng(20);
    double worst_kl = 0.0;
    for (int t = 0; t < 20; ++t) {
        const int dims = 8;
        const auto mu_a = uniform_tensor<double>(1, dims, rng, -2.0, 2.0);
        const auto lv_a = uniform_tensor<double>(1, dims, rng, -2.0, 1.5);
        const auto mu_b = uniform_tensor<double>(1, dims, rng, -2.0, 2.0);
        const auto lv_b = uniform_tensor<double>(1, dims, rng, -2.0, 1.5);
        double sum_std = 0.0, sum_pair = 0.0;
        for (int j = 0; j < dims; ++j) {
            const double sa = std::exp(0.5 * lv_a.data[j]), sb = std::exp(0.5 * lv_b.data[j]);
            const double q_std = kl_by_quadrature(mu_a.data[j], sa, 0.0, 1.0);
            const double q_pair = kl_by_quadrature(mu_a.data[j], sa, mu_b.data[j], sb);
            sum_std += q_std;
            sum_pair += q_pair;
            // Single-dimension values through the public API.
            Tensor<double> m1(1, 1), l1(1, 1), m2(1, 1), l2(1, 1);
            m1.data[0] = mu_a.data[j];
            l1.data[0] = lv_a.data[j];
            m2.data[0] = mu_b.data[j];
            l2.data[0] = lv_b.data[j];
            worst_kl = std::max(worst_kl, std::abs(kl_standard(m1, l1) - q_std));
            worst_kl = std::max(worst_kl, std::abs(kl_gaussians(m1, l1, m2, l2) - q_pair));
        }
        worst_kl = std::max(worst_kl, std::abs(kl_standard(mu_a, lv_a) - sum_std) / dims);
        worst_kl = std::max(worst_kl, std::abs(kl_gaussians(mu_a, lv_a, mu_b, lv_b) - sum_pair / dims));
    }
    v.require(worst_kl <= 1e-6, "KL vs quadrature");

    const auto a = uniform_tensor<double>(3, 48 * 80, rng, 0.0, 1.0);
    const auto b = uniform_tensor<double>(3, 48 * 80, rng, 0.0, 1.0);
    Tensor<double> a4(3, 1, 48, 80), b4(3, 1, 48, 80);
    a4.data = a.data;
    b4.data = b.data;
    double loop = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) loop += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    loop /= static_cast<double>(a.data.size());
    double worst_loop = std::abs(recon_loss(a4, b4) - loop);

    Spectrogram sa, sb;
    for (std::size_t i = 0; i < sa.values.size(); ++i) {
        sa.values[i] = static_cast<float>(a.data[i]);
        sb.values[i] = static_cast<float>(b.data[i]);
    }
    double pix = 0.0;
    for (std::size_t i = 0; i < sa.values.size(); ++i) {
        const double d = static_cast<double>(sa.values[i]) - sb.values[i];
        pix += d * d;
    }
    worst_loop = std::max(worst_loop, std::abs(pixel_loss(sa, sb) - pix / sa.values.size()));

    std::vector<double> pr(16), pf(16);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& p : pr) p = u(rng);
    for (auto& p : pf) p = u(rng);
    pr[0] = 0.0;
    pf[1] = 1.0;
    auto clamp = [](double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); };
    double d_loop = 0.0, g_loop = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i) {
        d_loop += -std::log(clamp(pr[i])) / pr.size();
        d_loop += -std::log(1.0 - clamp(pf[i])) / pf.size();
        g_loop += -std::log(clamp(pf[i])) / pf.size();
    }
    worst_loop = std::max(worst_loop, std::abs(adv_disc_loss(pr, pf) - d_loop));
    worst_loop = std::max(worst_loop, std::abs(adv_gen_loss(pf) - g_loop));
    v.require(worst_loop <= 1e-12, "loop oracles");

    const double self = ssim(sa, sa);
    const double asym = std::abs(ssim(sa, sb) - ssim(sb, sa));
    v.require(self == 1.0, "ssim(a,a) == 1");
    v.require(asym <= 1e-12, "ssim symmetry");
    v.detail << std::scientific << std::setprecision(2) << " max KL error " << worst_kl << ", max loop error "
             << worst_loop << ", ssim(a,a) " << std::defaultfloat << self << ", asymmetry " << std::scientific
             << asym;
}

// ---------------------------------------------------------------- 3

struct GradCheck {
    double worst = 0.0;
    int checked = 0;
    void add(double analytic, double numeric) {
        worst = std::max(worst, relative_error(analytic, numeric));
        ++checked;
    }
};

void gradient_checks(Verdict& v) {
    std::mt19937_64 rng(30);
    std::uniform_int_distribution<int> pick(0, 1 << 30);
    std::ostringstream parts;
    parts << std::scientific << std::setprecision(2);

    {
        auto x_hat = uniform_tensor<double>(2, 48 * 80, rng, 0.05, 0.95);
        const auto x = uniform_tensor<double>(2, 48 * 80, rng, 0.0, 1.0);
        Tensor<double> g;
        recon_loss(x_hat, x, &g);
        GradCheck c;
        for (int k = 0; k < 10; ++k) {
            const std::size_t i = pick(rng) % x_hat.data.size();
            c.add(g.data[i], central_difference(x_hat.data[i], [&] { return recon_loss(x_hat, x); }));
        }
        v.require(c.worst <= 1e-3, "recon_loss");
        parts << " recon " << c.worst;
    }
    {
        auto mu = uniform_tensor<double>(3, 64, rng, -2.0, 2.0);
        auto lv = uniform_tensor<double>(3, 64, rng, -2.0, 1.0);
        Tensor<double> gm, gl;
        kl_standard(mu, lv, &gm, &gl);
        GradCheck c;
        for (int k = 0; k < 10; ++k) {
            const std::size_t i = pick(rng) % mu.data.size();
            if (k % 2 == 0)
                c.add(gm.data[i], central_difference(mu.data[i], [&] { return kl_standard(mu, lv); }));
            else
                c.add(gl.data[i], central_difference(lv.data[i], [&] { return kl_standard(mu, lv); }));
        }
        v.require(c.worst <= 1e-3, "kl_standard");
        parts << ", kl_standard " << c.worst;
    }
    {
        std::uniform_real_distribution<double> u(0.05, 0.95);
        std::vector<double> pr(10), pf(10), gr(10), gf(10);
        for (auto& p : pr) p = u(rng);
        for (auto& p : pf) p = u(rng);
        adv_disc_loss_grad(pr, pf, gr, gf);
        GradCheck c;
        for (int i = 0; i < 10; ++i) {
            if (i % 2 == 0)
                c.add(gr[i], central_difference(pr[i], [&] { return adv_disc_loss(pr, pf); }));
            else
                c.add(gf[i], central_difference(pf[i], [&] { return adv_disc_loss(pr, pf); }));
        }
        auto lr = uniform_tensor<double>(5, 1, rng, -3.0, 3.0);
        auto lf = uniform_tensor<double>(5, 1, rng, -3.0, 3.0);
        Tensor<double> glr, glf;
        adv_disc_loss_logits(lr, lf, &glr, &glf);
        for (int i = 0; i < 5; ++i) {
            c.add(glr.data[i], central_difference(lr.data[i], [&] { return adv_disc_loss_logits<double>(lr, lf, nullptr, nullptr); }));
            c.add(glf.data[i], central_difference(lf.data[i], [&] { return adv_disc_loss_logits<double>(lr, lf, nullptr, nullptr); }));
        }
        v.require(c.worst <= 1e-3, "adversarial discriminator loss");
        parts << ", disc " << c.worst;
    }
    {
        std::uniform_real_distribution<double> u(0.05, 0.95);
        std::vector<double> pf(10), gf(10);
        for (auto& p : pf) p = u(rng);
        adv_gen_loss_grad(pf, gf);
        GradCheck c;
        for (int i = 0; i < 10; ++i) c.add(gf[i], central_difference(pf[i], [&] { return adv_gen_loss(pf); }));
        auto lf = uniform_tensor<double>(10, 1, rng, -3.0, 3.0);
        Tensor<double> glf;
        adv_gen_loss_logits(lf, &glf);
        for (int i = 0; i < 10; ++i)
            c.add(glf.data[i], central_difference(lf.data[i], [&] { return adv_gen_loss_logits<double>(lf, nullptr); }));
        v.require(c.worst <= 1e-3, "adversarial generator loss");
        parts << ", gen " << c.worst;
    }
    v.detail << std::scientific << std::setprecision(2) << " worst relative error:" << parts.str();
}

// ---------------------------------------------------------------- 4

void reparameterization(Verdict& v) {
    const int n = 100000;
    const std::vector<double> mus = {0.0, 1.5, -2.0, 0.3};
    const std::vector<double> log_vars = {0.0, -1.0, 1.2, -3.0};
    const int dims = static_cast<int>(mus.size());
    Tensor<double> mu(n, dims), lv(n, dims);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < dims; ++j) {
            mu.data[static_cast<std::size_t>(i) * dims + j] = mus[j];
            lv.data[static_cast<std::size_t>(i) * dims + j] = log_vars[j];
        }
    std::mt19937_64 rng(40);
    const auto eps = standard_normal_like(mu, rng);
    const auto z = reparameterize(mu, lv, eps);
    double worst_mean = 0.0, worst_var = 0.0;
    for (int j = 0; j < dims; ++j) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += z.data[static_cast<std::size_t>(i) * dims + j];
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = z.data[static_cast<std::size_t>(i) * dims + j] - mean;
            var += d * d;
        }
        var /= n - 1;
        const double target_var = std::exp(log_vars[j]);
        const double mean_err = std::abs(mean - mus[j]) / (3.0 * std::sqrt(target_var / n));
        const double var_err = std::abs(var - target_var) / target_var;
        worst_mean = std::max(worst_mean, mean_err);
        worst_var = std::max(worst_var, var_err);
    }
    v.require(worst_mean <= 1.0, "mean within 3 sigma / sqrt(N)");
    v.require(worst_var <= 0.05, "variance within 5%");
    v.detail << std::setprecision(3) << " worst mean error " << worst_mean << " of the 3 sigma/sqrt(N) band, worst "
             << "variance error " << 100.0 * worst_var << "%";
}

// ------------------------------------------------------- trained models

struct Budget {
    TrainConfig fmnet;
    TrainConfig nonr;
    TrainConfig smnet;
    ClassifierConfig classifier;
};

Budget acceptance_budget() {
    Budget b;
    b.fmnet.epochs_per_phase = {60, 20, 10};
    b.fmnet.weights.lambda_anchor = 10.0;
    b.nonr = b.fmnet;
    b.smnet = b.fmnet;
    b.smnet.epochs_per_phase = {60, 1, 1};
    b.classifier.epochs = 40;
    return b;
}

struct Trained {
    fs::path dir;
    nlohmann::json reports = nlohmann::json::array();
};

// Trains every phase of `kind` into `dir`, or reuses an earlier run with an identical config and corpus.
Trained train_or_reuse(ModelKind kind, const TrainConfig& config, const PairList& train, const PairList& test,
                       const std::string& corpus_digest, const fs::path& dir) {
    const nlohmann::json key = {{"model", to_string(kind)}, {"config", config.to_json()}, {"corpus", corpus_digest}};
    const fs::path done = dir / "acceptance_done.json";
    if (fs::exists(done)) {
        const auto j = read_json_file(done);
        if (j.at("key") == key) return {dir, j.at("reports")};
    }
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::cout << "  training " << to_string(kind) << " into " << dir.string() << std::endl;
    Trainer t(kind, config);
    t.set_output_dir(dir);
    t.set_validation(test);
    Trained out{dir, nlohmann::json::array()};
    if (kind == ModelKind::smnet) {
        out.reports.push_back(t.train_smnet(train).to_json());
    } else {
        out.reports.push_back(t.train_phase1(sims_of(train)).to_json());
        out.reports.push_back(t.train_phase2(train).to_json());
        out.reports.push_back(t.train_phase3(meas_of(train), sims_of(train)).to_json());
    }
    write_json_file(done, {{"key", key}, {"reports", out.reports}});
    return out;
}

fs::path stem(const Trained& t, ModelKind kind, int phase) {
    return t.dir / (to_string(kind) + "_phase" + std::to_string(phase));
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct Models {
    Dataset los;
    std::vector<PairRecord> ttw;
    PairList train, test, ttw_test;
    Trained fmnet, nonr, smnet;
    ClassifierConfig classifier;
};

Models prepare(const fs::path& work) {
    Models m;
    const Budget budget = acceptance_budget();
    DatasetConfig cfg;
    const fs::path data = work / "data_los";
    const fs::path digest_file = work / "data_los.digest";
    if (!fs::exists(digest_file) || !fs::exists(data)) {
        fs::remove_all(data);
        generate_dataset(cfg, data);
        std::ofstream(digest_file) << dataset_digest(data);
    }
    m.los = load_dataset(data);
    m.train = m.los.split(Split::train);
    m.test = m.los.split(Split::test);
    const std::string digest = slurp(digest_file);

    DatasetConfig ttw_cfg;
    ttw_cfg.profile = CorruptionProfile::ttw();
    ttw_cfg.master_seed = 1042;
    for (int i = 0; i < ttw_cfg.total_pairs; ++i) m.ttw.push_back(make_pair(ttw_cfg, i));
    for (const auto& r : m.ttw)
        if (r.split == Split::test) m.ttw_test.push_back(&r);

    m.fmnet = train_or_reuse(ModelKind::fmnet, budget.fmnet, m.train, m.test, digest, work / "fmnet");
    m.smnet = train_or_reuse(ModelKind::smnet, budget.smnet, m.train, m.test, digest, work / "smnet");
    m.nonr = train_or_reuse(ModelKind::nonr, budget.nonr, m.train, m.test, digest, work / "nonr");
    m.classifier = budget.classifier;
    return m;
}

// ---------------------------------------------------------------- 5

void phase1_reconstruction(Verdict& v, Models& m) {
    auto net = load_network(stem(m.fmnet, ModelKind::fmnet, 1));
    double mse = 0.0;
    for (const auto* p : m.test) mse += pixel_loss(enhance(net, p->sim), p->sim);
    mse /= static_cast<double>(m.test.size());
    const double seconds = m.fmnet.reports.at(0).at("wall_seconds").get<double>();
    const auto epochs = m.fmnet.reports.at(0).at("series").at("recon").size();
    v.require(mse <= 0.01, "held-out MSE");
    v.require(seconds <= 1800.0, "runtime");
    v.detail << std::setprecision(4) << " held-out simulated MSE " << mse << " after " << epochs << " epochs in "
             << std::fixed << std::setprecision(0) << seconds << " s";
}

// ---------------------------------------------------------------- 6

void feature_mapping(Verdict& v, Models& m) {
    auto p1 = load_network(stem(m.fmnet, ModelKind::fmnet, 1));
    auto p2 = load_network(stem(m.fmnet, ModelKind::fmnet, 2));
    auto sm = load_network(stem(m.smnet, ModelKind::smnet, 1));
    const double k1 = mean_of(matched_latent_divergence(p1, m.test));
    const double k2 = mean_of(matched_latent_divergence(p2, m.test));
    const double ks = mean_of(matched_latent_divergence(sm, m.test));
    v.require(k2 * 5.0 <= k1, "5x below phase 1");
    v.require(k2 * 5.0 <= ks, "5x below SMNet");
    v.detail << std::scientific << std::setprecision(3) << " mean matched KLD phase 1 " << k1 << ", phase 2 " << k2
             << ", SMNet " << ks << std::defaultfloat << std::setprecision(3) << " (ratios " << k1 / k2 << ", "
             << ks / k2 << ")";
}

// ---------------------------------------------------------------- 7

void enhancement_quality(Verdict& v, Models& m) {
    auto net = load_network(stem(m.fmnet, ModelKind::fmnet, 3));
    const auto r = eval_enhancement(m.test, net, "fmnet", "los");
    const auto& o = r.overall;
    v.require(o.ssim_enh_vs_sim >= o.ssim_meas_vs_sim + 0.10, "SSIM gain 0.10");
    v.require(o.pixel_loss_enh_vs_sim <= 0.5 * o.pixel_loss_meas_vs_sim, "pixel loss halved");
    v.detail << std::setprecision(4) << " over " << o.count << " test pairs SSIM " << o.ssim_meas_vs_sim << " -> "
             << o.ssim_enh_vs_sim << ", pixel loss " << o.pixel_loss_meas_vs_sim << " -> " << o.pixel_loss_enh_vs_sim;
}

// ---------------------------------------------------------------- 8

void domain_shift(Verdict& v, Models& m) {
    auto fm = load_network(stem(m.fmnet, ModelKind::fmnet, 3));
    auto sm = load_network(stem(m.smnet, ModelKind::smnet, 1));
    auto nr = load_network(stem(m.nonr, ModelKind::nonr, 3));
    const auto rf = eval_domain_shift(fm, m.ttw_test, "ttw", "fmnet", "ttw");
    const auto rs = eval_domain_shift(sm, m.ttw_test, "ttw", "smnet", "ttw");
    const auto rn = eval_domain_shift(nr, m.ttw_test, "ttw", "nonr", "ttw");
    v.require(rf.overall.ssim_enh_vs_sim >= rf.overall.ssim_meas_vs_sim + 0.05, "SSIM gain 0.05");
    int wins = 0;
    for (const auto& row : rf.rows) {
        const double f = row.ssim_enh_vs_meas.value();
        const double s = rs.row(row.activity).ssim_enh_vs_meas.value();
        const double n = rn.row(row.activity).ssim_enh_vs_meas.value();
        wins += f > s && f > n;
    }
    v.require(wins == static_cast<int>(rf.rows.size()), "FMNet SSIM(enh, meas) above both baselines per activity");
    v.detail << std::setprecision(4) << " SSIM to clean " << rf.overall.ssim_meas_vs_sim << " -> "
             << rf.overall.ssim_enh_vs_sim << "; SSIM(enh, meas) fmnet " << *rf.overall.ssim_enh_vs_meas << ", smnet "
             << *rs.overall.ssim_enh_vs_meas << ", nonr " << *rn.overall.ssim_enh_vs_meas << "; fmnet ahead in "
             << wins << "/" << rf.rows.size() << " activities";
}

// ---------------------------------------------------------------- 9

void classification(Verdict& v, Models& m, const fs::path& work) {
    const fs::path cache = work / "regimes.json";
    const nlohmann::json key = {{"config", m.classifier.to_json()},
                                {"fmnet", read_json_file(m.fmnet.dir / "acceptance_done.json").at("key")},
                                {"sizes", kSweepSizes}};
    std::vector<RegimeResult> results;
    double seconds = 0.0;
    if (fs::exists(cache) && read_json_file(cache).at("key") == key) {
        const auto j = read_json_file(cache);
        for (const auto& r : j.at("results")) results.push_back(RegimeResult::from_json(r));
        seconds = j.at("seconds").get<double>();
    } else {
        std::cout << "  running the classification sweep" << std::endl;
        auto net = load_network(stem(m.fmnet, ModelKind::fmnet, 3));
        RegimeRequest req;
        req.sizes = kSweepSizes;
        req.config = m.classifier;
        const auto t0 = Clock::now();
        results = eval_regimes(&net, m.los, req);
        seconds = seconds_since(t0);
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : results) arr.push_back(r.to_json());
        write_json_file(cache, {{"key", key}, {"results", arr}, {"seconds", seconds}});
    }
    auto find = [&](const std::string& regime, int size) -> const RegimeResult* {
        for (const auto& r : results)
            if (r.regime == regime && r.train_size == size) return &r;
        return nullptr;
    };
    double om_full = 0.0;
    for (const auto& r : results)
        if (r.regime == "train_om_test_om") om_full = std::max(om_full, r.accuracy);
    v.detail << std::fixed << std::setprecision(1);
    for (int size : kSweepSizes) {
        const auto* em = find("train_s_test_em", size);
        const auto* om = find("train_s_test_om", size);
        const auto* oo = find("train_om_test_om", size);
        if (!em || !om) {
            v.require(false, "missing sweep size " + std::to_string(size));
            continue;
        }
        const double ref = oo ? oo->accuracy : om_full;
        v.require(em->accuracy >= om->accuracy + 0.15, "EM gap at " + std::to_string(size));
        v.require(em->accuracy >= ref - 0.10, "EM vs Train-OM at " + std::to_string(size));
        v.detail << " " << size << ": EM " << 100 * em->accuracy << " OM " << 100 * om->accuracy << " Train-OM "
                 << 100 * ref << (oo ? "" : "*") << ";";
    }
    v.require(seconds <= 3600.0, "sweep runtime");
    v.detail << " sweep " << std::setprecision(0) << seconds << " s";
}

// ---------------------------------------------------------------- 10

struct PipelineRun {
    std::string dataset_digest;
    std::string training_log;
    std::string metrics;
    std::string kld;
    std::string regimes;
};

PipelineRun small_pipeline(const fs::path& root) {
    fs::remove_all(root);
    fs::create_directories(root);
    write_json_file(root / "train.json", {{"epochs_per_phase", {3, 2, 1}}, {"batch_size", 8}});
    write_json_file(root / "cls.json", {{"channels", {4, 8}}, {"dense", {16}}, {"epochs", 4}});

    GenDataOptions g;
    g.common.out = root / "data";
    g.common.quiet = true;
    g.pairs_per_activity = 6;
    g.profile = "los";
    cmd_gen_data(g);

    TrainOptions t;
    t.common.out = root / "train";
    t.common.config = root / "train.json";
    t.common.quiet = true;
    t.data = root / "data";
    cmd_train(t);

    EvalOptions e;
    e.common.out = root / "eval";
    e.common.quiet = true;
    e.checkpoint = root / "train" / "fmnet_phase3";
    e.data = root / "data";
    e.latents = false;
    cmd_eval(e);

    ClassifyOptions c;
    c.common.out = root / "cls";
    c.common.config = root / "cls.json";
    c.common.quiet = true;
    c.checkpoint = root / "train" / "fmnet_phase3";
    c.data = root / "data";
    cmd_classify(c);

    return {dataset_digest(root / "data"), slurp(root / "train" / "training_log.jsonl"),
            slurp(root / "eval" / "metrics.json"), slurp(root / "eval" / "kld.json"),
            slurp(root / "cls" / "regimes.json")};
}

void determinism(Verdict& v, const fs::path& work) {
    const auto a = small_pipeline(work / "determinism_a");
    const auto b = small_pipeline(work / "determinism_b");
    v.require(a.dataset_digest == b.dataset_digest, "dataset bytes");
    v.require(!a.training_log.empty() && a.training_log == b.training_log, "loss curves");
    v.require(!a.metrics.empty() && a.metrics == b.metrics, "metrics JSON");
    v.require(!a.kld.empty() && a.kld == b.kld, "KLD JSON");
    v.require(!a.regimes.empty() && a.regimes == b.regimes, "classification JSON");
    const auto lines = std::count(a.training_log.begin(), a.training_log.end(), '\n');
    v.detail << " dataset " << a.dataset_digest.substr(0, 12) << ", " << lines
             << " training-log lines, metrics, KLD and regime JSON compared byte for byte";
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path(FMNET_ACCEPTANCE_WORK);
    if (const char* env = std::getenv("FMNET_ACCEPTANCE_WORK")) work = env;
    fs::create_directories(work);
    setenv("FMNET_RUNS_DIR", (work / "runs").c_str(), 1);
    std::cout << "acceptance work directory: " << work.string() << std::endl;

    run_criterion(1, "architecture shape walk", shape_walk);
    run_criterion(2, "loss oracles", loss_oracles);
    run_criterion(3, "gradient checks", gradient_checks);
    run_criterion(4, "reparameterization statistics", reparameterization);

    std::optional<Models> models;
    try {
        models = prepare(work);
    } catch (const std::exception& e) {
        std::cout << "model preparation failed: " << e.what() << std::endl;
    }
    auto with_models = [&](int n, const std::string& title, auto body) {
        run_criterion(n, title, [&](Verdict& v) {
            if (!models) throw std::runtime_error("trained models unavailable");
            body(v, *models);
        });
    };
    with_models(5, "phase-1 reconstruction", phase1_reconstruction);
    with_models(6, "feature-mapping effect", feature_mapping);
    with_models(7, "enhancement quality", enhancement_quality);
    with_models(8, "domain shift", domain_shift);
    with_models(9, "classification scheme", [&](Verdict& v, Models& m) { classification(v, m, work); });
    run_criterion(10, "determinism", [&](Verdict& v) { determinism(v, work); });

    std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria fail") << std::endl;
    return failures == 0 ? 0 : 1;
}
