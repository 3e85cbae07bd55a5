#include "fmnet/evalsuite.hpp"

#include "fmnet/image_io.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>

namespace fmnet {

namespace {

nlohmann::json row_json(const MetricsRow& r) {
    nlohmann::json j = {{"activity", r.activity},
                        {"count", r.count},
                        {"pixel_loss_meas_vs_sim", r.pixel_loss_meas_vs_sim},
                        {"pixel_loss_enh_vs_sim", r.pixel_loss_enh_vs_sim},
                        {"ssim_meas_vs_sim", r.ssim_meas_vs_sim},
                        {"ssim_enh_vs_sim", r.ssim_enh_vs_sim}};
    if (r.ssim_enh_vs_meas) j["ssim_enh_vs_meas"] = *r.ssim_enh_vs_meas;
    if (r.latent_kld) j["latent_kld"] = *r.latent_kld;
    return j;
}

MetricsRow row_from_json(const nlohmann::json& j) {
    MetricsRow r;
    r.activity = j.at("activity").get<std::string>();
    r.count = j.at("count").get<int>();
    r.pixel_loss_meas_vs_sim = j.at("pixel_loss_meas_vs_sim").get<double>();
    r.pixel_loss_enh_vs_sim = j.at("pixel_loss_enh_vs_sim").get<double>();
    r.ssim_meas_vs_sim = j.at("ssim_meas_vs_sim").get<double>();
    r.ssim_enh_vs_sim = j.at("ssim_enh_vs_sim").get<double>();
    if (j.contains("ssim_enh_vs_meas")) r.ssim_enh_vs_meas = j.at("ssim_enh_vs_meas").get<double>();
    if (j.contains("latent_kld")) r.latent_kld = j.at("latent_kld").get<double>();
    return r;
}

struct RowSums {
    int count = 0;
    double pl_meas = 0, pl_enh = 0, ss_meas = 0, ss_enh = 0, ss_enh_meas = 0;

    void add(const Spectrogram& meas, const Spectrogram& sim, const Spectrogram& enh, bool with_meas_ref) {
        ++count;
        pl_meas += pixel_loss(meas, sim);
        pl_enh += pixel_loss(enh, sim);
        ss_meas += ssim(meas, sim);
        ss_enh += ssim(enh, sim);
        if (with_meas_ref) ss_enh_meas += ssim(enh, meas);
    }

    [[nodiscard]] MetricsRow row(const std::string& name, bool with_meas_ref) const {
        const double n = count;
        MetricsRow r{name, count, pl_meas / n, pl_enh / n, ss_meas / n, ss_enh / n, std::nullopt, std::nullopt};
        if (with_meas_ref) r.ssim_enh_vs_meas = ss_enh_meas / n;
        return r;
    }
};

MetricsReport build_report(const PairList& pairs, Network<float>& net, bool with_meas_ref) {
    if (pairs.empty()) throw std::invalid_argument("evaluation: empty test split");
    const auto enhanced = enhance_all(net, meas_of(pairs));
    std::map<int, RowSums> per;
    RowSums all;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        per[index_of(pairs[i]->activity)].add(pairs[i]->meas, pairs[i]->sim, enhanced[i], with_meas_ref);
        all.add(pairs[i]->meas, pairs[i]->sim, enhanced[i], with_meas_ref);
    }
    MetricsReport rep;
    for (const auto& [idx, sums] : per) rep.rows.push_back(sums.row(to_string(kActivities[idx]), with_meas_ref));
    rep.overall = all.row("overall", with_meas_ref);
    return rep;
}

}  // namespace

const MetricsRow& MetricsReport::row(const std::string& activity) const {
    if (activity == "overall") return overall;
    for (const auto& r : rows)
        if (r.activity == activity) return r;
    throw std::out_of_range("no metrics row for activity '" + activity + "'");
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) rows_json.push_back(row_json(r));
    return {{"kind", kind}, {"model", model}, {"corpus", corpus}, {"rows", rows_json}, {"overall", row_json(overall)}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.kind = j.at("kind").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.corpus = j.at("corpus").get<std::string>();
    for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
    r.overall = row_from_json(j.at("overall"));
    return r;
}

MetricsReport eval_enhancement(const PairList& test_pairs, Network<float>& net, const std::string& model_id,
                               const std::string& corpus_id) {
    for (const auto* p : test_pairs)
        if (p->split != Split::test) throw std::invalid_argument("eval_enhancement: " + p->id + " is not a test pair");
    MetricsReport rep = build_report(test_pairs, net, false);
    rep.model = model_id;
    rep.corpus = corpus_id;
    return rep;
}

MetricsReport eval_domain_shift(Network<float>& net, const PairList& ttw_pairs, const std::string& profile_name,
                                const std::string& model_id, const std::string& corpus_id) {
    if (profile_name != "ttw")
        throw std::invalid_argument("eval_domain_shift: corpus profile is '" + profile_name + "', expected 'ttw'");
    MetricsReport rep = build_report(ttw_pairs, net, true);
    rep.kind = "domain_shift";
    rep.model = model_id;
    rep.corpus = corpus_id;
    return rep;
}

double KldTable::value(const std::string& activity) const {
    for (const auto& [name, v] : rows)
        if (name == activity) return v;
    throw std::out_of_range("no KLD row for activity '" + activity + "'");
}

nlohmann::json KldTable::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i)
        rows_json.push_back({{"activity", rows[i].first}, {"count", counts[i]}, {"kld", rows[i].second}});
    return {{"model", model},
            {"corpus", corpus},
            {"metric", surrogate ? "mean_squared_latent_distance" : "kl_gaussians"},
            {"surrogate", surrogate},
            {"rows", rows_json},
            {"overall", overall}};
}

KldTable KldTable::from_json(const nlohmann::json& j) {
    KldTable t;
    t.model = j.at("model").get<std::string>();
    t.corpus = j.at("corpus").get<std::string>();
    t.surrogate = j.at("surrogate").get<bool>();
    for (const auto& r : j.at("rows")) {
        t.rows.emplace_back(r.at("activity").get<std::string>(), r.at("kld").get<double>());
        t.counts.push_back(r.at("count").get<int>());
    }
    t.overall = j.at("overall").get<double>();
    return t;
}

KldTable eval_latent_kld(const PairList& test_pairs, Network<float>& net, const std::string& model_id,
                         const std::string& corpus_id) {
    if (test_pairs.empty()) throw std::invalid_argument("eval_latent_kld: empty test split");
    const auto values = matched_latent_divergence(net, test_pairs);
    std::map<int, std::pair<double, int>> per;
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto& acc = per[index_of(test_pairs[i]->activity)];
        acc.first += values[i];
        ++acc.second;
        total += values[i];
    }
    KldTable t;
    t.model = model_id;
    t.corpus = corpus_id;
    t.surrogate = !net.encoder.variational();
    for (const auto& [idx, acc] : per) {
        t.rows.emplace_back(to_string(kActivities[idx]), acc.first / acc.second);
        t.counts.push_back(acc.second);
    }
    t.overall = total / static_cast<double>(values.size());
    return t;
}

std::vector<std::array<double, 2>> principal_scores(const std::vector<double>& x, int rows, int cols) {
    if (rows < 3) throw std::invalid_argument("principal_scores: need at least 3 rows");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data(), rows, cols);
    const Eigen::MatrixXd centred = m.rowwise() - m.colwise().mean();
    // Eigenvectors of the Gram matrix give the scores directly.
    const Eigen::MatrixXd gram = centred * centred.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    std::vector<std::array<double, 2>> out(rows);
    for (int k = 0; k < 2; ++k) {
        const int col = rows - 1 - k;  // eigenvalues ascend
        Eigen::VectorXd u = solver.eigenvectors().col(col);
        Eigen::Index arg;
        u.cwiseAbs().maxCoeff(&arg);
        if (u(arg) < 0) u = -u;
        const double s = std::sqrt(std::max(0.0, solver.eigenvalues()(col)));
        for (int i = 0; i < rows; ++i) out[i][k] = u(i) * s;
    }
    return out;
}

double LatentExport::cluster_separation() const {
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < activities.size(); ++i) members[activities[i]].push_back(i);
    if (members.size() < 2) throw std::invalid_argument("cluster_separation: need at least two classes");
    std::vector<std::array<double, 2>> centroids;
    double spread = 0.0;
    for (const auto& [name, idx] : members) {
        std::array<double, 2> c{0.0, 0.0};
        for (auto i : idx) {
            c[0] += projection[i][0];
            c[1] += projection[i][1];
        }
        c[0] /= static_cast<double>(idx.size());
        c[1] /= static_cast<double>(idx.size());
        double d = 0.0;
        for (auto i : idx) d += std::hypot(projection[i][0] - c[0], projection[i][1] - c[1]);
        spread += d / static_cast<double>(idx.size());
        centroids.push_back(c);
    }
    spread /= static_cast<double>(members.size());
    double inter = 0.0;
    int n = 0;
    for (std::size_t a = 0; a < centroids.size(); ++a)
        for (std::size_t b = a + 1; b < centroids.size(); ++b, ++n)
            inter += std::hypot(centroids[a][0] - centroids[b][0], centroids[a][1] - centroids[b][1]);
    return (inter / n) / spread;
}

std::pair<double, double> LatentExport::paired_vs_unpaired() const {
    std::map<std::string, std::size_t> meas_row, sim_row;
    for (std::size_t i = 0; i < ids.size(); ++i) (sources[i] == "meas" ? meas_row : sim_row)[ids[i]] = i;
    auto dist = [&](std::size_t a, std::size_t b) {
        return std::hypot(projection[a][0] - projection[b][0], projection[a][1] - projection[b][1]);
    };
    double paired = 0.0, unpaired = 0.0;
    long np = 0, nu = 0;
    for (const auto& [id, mi] : meas_row)
        for (const auto& [id2, si] : sim_row) {
            if (id == id2) {
                paired += dist(mi, si);
                ++np;
            } else {
                unpaired += dist(mi, si);
                ++nu;
            }
        }
    if (np == 0 || nu == 0) throw std::invalid_argument("paired_vs_unpaired: need matched and unmatched rows");
    return {paired / static_cast<double>(np), unpaired / static_cast<double>(nu)};
}

LatentExport export_latents(const PairList& pairs, Network<float>& net, const std::filesystem::path& out_csv) {
    if (pairs.empty()) throw std::invalid_argument("export_latents: no samples");
    SpecList items;
    LatentExport ex;
    for (const auto* p : pairs)
        for (const char* source : {"meas", "sim"}) {
            items.push_back(std::string(source) == "meas" ? &p->meas : &p->sim);
            ex.ids.push_back(p->id);
            ex.activities.push_back(to_string(p->activity));
            ex.sources.push_back(source);
        }
    const auto latents = encode(net, items);
    const int rows = static_cast<int>(items.size());
    std::vector<double> mu(latents.mu.data.begin(), latents.mu.data.end());
    ex.projection = principal_scores(mu, rows, kLatentDim);

    std::ofstream full(out_csv);
    if (!full) throw std::runtime_error("cannot write " + out_csv.string());
    full << "id,activity,source";
    for (int j = 0; j < kLatentDim; ++j) full << ",mu_" << j;
    full << '\n' << std::setprecision(9);
    for (int i = 0; i < rows; ++i) {
        full << ex.ids[i] << ',' << ex.activities[i] << ',' << ex.sources[i];
        for (int j = 0; j < kLatentDim; ++j) full << ',' << mu[static_cast<std::size_t>(i) * kLatentDim + j];
        full << '\n';
    }
    auto pca_path = out_csv;
    pca_path.replace_filename(out_csv.stem().string() + "_pca.csv");
    std::ofstream pca(pca_path);
    if (!pca) throw std::runtime_error("cannot write " + pca_path.string());
    pca << "id,activity,source,pc1,pc2\n" << std::setprecision(12);
    for (int i = 0; i < rows; ++i)
        pca << ex.ids[i] << ',' << ex.activities[i] << ',' << ex.sources[i] << ',' << ex.projection[i][0] << ','
            << ex.projection[i][1] << '\n';
    if (!full || !pca) throw std::runtime_error("write failed for latent export " + out_csv.string());
    return ex;
}

void write_comparison_grid(const std::filesystem::path& path, const PairList& pairs,
                           const std::vector<Spectrogram>& enhanced) {
    if (pairs.size() != enhanced.size()) throw std::invalid_argument("write_comparison_grid: size mismatch");
    std::vector<std::vector<const Spectrogram*>> rows;
    for (std::size_t i = 0; i < pairs.size(); ++i) rows.push_back({&pairs[i]->meas, &enhanced[i], &pairs[i]->sim});
    write_spectrogram_grid(path, rows);
}

}  // namespace fmnet
