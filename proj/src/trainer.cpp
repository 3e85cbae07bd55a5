#include "fmnet/trainer.hpp"

#include "fmnet/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace fmnet {

void TrainConfig::validate() const {
    for (int e : epochs_per_phase)
        if (e < 1) throw std::invalid_argument("train config: every phase needs at least one epoch");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(lr_phase1 > 0 && lr_phase2 > 0 && lr_phase3 > 0))
        throw std::invalid_argument("train config: learning rates must be positive");
    if (optimizer != "adam") throw std::invalid_argument("train config: unsupported optimizer '" + optimizer + "'");
    if (!(adam_betas.first >= 0 && adam_betas.first < 1 && adam_betas.second >= 0 && adam_betas.second < 1))
        throw std::invalid_argument("train config: adam betas must lie in [0,1)");
    if (disc_steps_per_gen_step < 1)
        throw std::invalid_argument("train config: disc_steps_per_gen_step must be >= 1");
    weights.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs_per_phase", epochs_per_phase},
            {"batch_size", batch_size},
            {"lr_phase1", lr_phase1},
            {"lr_phase2", lr_phase2},
            {"lr_phase3", lr_phase3},
            {"optimizer", optimizer},
            {"adam_betas", {adam_betas.first, adam_betas.second}},
            {"beta_kl", weights.beta_kl},
            {"lambda_anchor", weights.lambda_anchor},
            {"disc_steps_per_gen_step", disc_steps_per_gen_step},
            {"master_seed", master_seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("epochs_per_phase")) c.epochs_per_phase = j.at("epochs_per_phase").get<std::array<int, 3>>();
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_phase1 = j.value("lr_phase1", c.lr_phase1);
    c.lr_phase2 = j.value("lr_phase2", c.lr_phase2);
    c.lr_phase3 = j.value("lr_phase3", c.lr_phase3);
    c.optimizer = j.value("optimizer", c.optimizer);
    if (j.contains("adam_betas")) {
        const auto b = j.at("adam_betas").get<std::vector<double>>();
        if (b.size() != 2) throw std::invalid_argument("train config: adam_betas needs two values");
        c.adam_betas = {b[0], b[1]};
    }
    c.weights.beta_kl = j.value("beta_kl", c.weights.beta_kl);
    c.weights.lambda_anchor = j.value("lambda_anchor", c.weights.lambda_anchor);
    c.disc_steps_per_gen_step = j.value("disc_steps_per_gen_step", c.disc_steps_per_gen_step);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.validate();
    return c;
}

int PhaseReport::epochs() const { return series.empty() ? 0 : static_cast<int>(series.begin()->second.size()); }

double PhaseReport::last(const std::string& name) const {
    const auto it = series.find(name);
    if (it == series.end() || it->second.empty()) throw std::out_of_range("no loss series '" + name + "'");
    return it->second.back();
}

nlohmann::json PhaseReport::to_json() const {
    return {{"phase", phase},
            {"model", to_string(model)},
            {"series", series},
            {"wall_seconds", wall_seconds},
            {"checkpoint", checkpoint},
            {"summary", summary}};
}

SpecList sims_of(const PairList& pairs) {
    SpecList out;
    for (const auto* p : pairs) out.push_back(&p->sim);
    return out;
}

SpecList meas_of(const PairList& pairs) {
    SpecList out;
    for (const auto* p : pairs) out.push_back(&p->meas);
    return out;
}

std::vector<std::vector<int>> make_batches(int count, int batch_size, std::uint64_t seed) {
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < count; i += batch_size)
        batches.emplace_back(order.begin() + i, order.begin() + std::min(count, i + batch_size));
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

namespace {

using Clock = std::chrono::steady_clock;

constexpr int kEvalBatch = 32;

void axpy(Tensor<float>& y, const Tensor<float>& x, double a) {
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += static_cast<float>(a * x.data[i]);
}

void scale(Tensor<float>& y, double a) {
    for (auto& v : y.data) v = static_cast<float>(a * v);
}

Tensor<float> zeros_like(const Tensor<float>& t) { return Tensor<float>(t.n, t.c, t.h, t.w); }

SpecList gather(const SpecList& items, const std::vector<int>& idx) {
    SpecList out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(items[i]);
    return out;
}

void guard(double value, const char* name, int phase, int epoch, int batch) {
    if (!std::isfinite(value))
        throw TrainingDiverged("training diverged: " + std::string(name) + " = " + std::to_string(value) +
                               " in phase " + std::to_string(phase) + ", epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch));
}

struct AeLoss {
    double recon = 0.0;
    double kl = 0.0;
};

/// Reconstruction objective recon(D(z), target) + beta * KL with z drawn from
/// E(input). Gradients, multiplied by `weight`, accumulate into the encoder and decoder.
AeLoss autoencode(Network<float>& net, const Tensor<float>& input, const Tensor<float>& target, Pass pass,
                  double beta, double weight, std::mt19937_64& rng) {
    auto enc = net.encoder.forward(input, pass);
    const bool variational = net.encoder.variational();
    Tensor<float> eps, z;
    if (variational) {
        eps = standard_normal_like(enc.mu, rng);
        z = reparameterize(enc.mu, enc.log_var, eps);
    } else {
        z = enc.mu;
    }
    const auto x_hat = net.decoder.forward(z, pass);
    AeLoss loss;
    Tensor<float> g;
    loss.recon = recon_loss(x_hat, target, &g);
    scale(g, weight);
    const auto gz = net.decoder.backward(g);
    if (!variational) {
        net.encoder.backward(gz, nullptr);
        return loss;
    }
    Tensor<float> gmu_kl, glv_kl;
    loss.kl = kl_standard(enc.mu, enc.log_var, &gmu_kl, &glv_kl);
    auto gmu = zeros_like(enc.mu);
    auto glv = zeros_like(enc.log_var);
    reparameterize_backward(enc.log_var, eps, gz, gmu, glv);
    axpy(gmu, gmu_kl, weight * beta);
    axpy(glv, glv_kl, weight * beta);
    net.encoder.backward(gmu, &glv);
    return loss;
}

/// Latent divergence used by phase 3; gradients flow into the b side.
double latent_divergence(const EncoderOutput<float>& a, const EncoderOutput<float>& b, Tensor<float>* gmu_b,
                         Tensor<float>* glv_b) {
    if (a.log_var.empty()) return recon_loss(b.mu, a.mu, gmu_b);
    return kl_gaussians(a.mu, a.log_var, b.mu, b.log_var, gmu_b, glv_b);
}

double held_out_recon(Network<float>& net, const SpecList& sims) {
    double total = 0.0;
    for (std::size_t i = 0; i < sims.size(); i += kEvalBatch) {
        const SpecList part(sims.begin() + i, sims.begin() + std::min(sims.size(), i + kEvalBatch));
        const auto x = to_batch(part);
        const auto mu = net.encoder.forward(x, Pass::infer()).mu;
        total += recon_loss(net.decoder.forward(mu, Pass::infer()), x) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(sims.size());
}

double disc_accuracy(Network<float>& net, const PairList& pairs) {
    const auto real = encode(net, sims_of(pairs)).mu;
    const auto fake = encode(net, meas_of(pairs)).mu;
    const auto lr = net.discriminator.forward(real, Pass::infer());
    const auto lf = net.discriminator.forward(fake, Pass::infer());
    int correct = 0;
    for (float v : lr.data) correct += v > 0.0f;
    for (float v : lf.data) correct += v <= 0.0f;
    return static_cast<double>(correct) / static_cast<double>(lr.size() + lf.size());
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<Param<float>*> concat(std::vector<Param<float>*> a, const std::vector<Param<float>*>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

Trainer::Trainer(ModelKind kind, TrainConfig config) : kind_(kind), config_(std::move(config)), net_(kind) {
    config_.validate();
    net_.init(mix_seed(config_.master_seed, 0x5EED));
    meta_.arch_hash = architecture(kind).arch_hash;
    meta_.kind = kind;
    meta_.master_seed = config_.master_seed;
}

void Trainer::set_output_dir(std::filesystem::path dir) {
    std::filesystem::create_directories(dir);
    out_dir_ = std::move(dir);
}

void Trainer::set_validation(PairList pairs) { validation_ = std::move(pairs); }

void Trainer::set_epoch_callback(std::function<void(const nlohmann::json&)> cb) { on_epoch_ = std::move(cb); }

void Trainer::load(const std::filesystem::path& stem) { meta_ = load_checkpoint(net_, stem); }

void Trainer::require_phase(int phase) const {
    if (kind_ == ModelKind::smnet)
        throw CheckpointError("smnet is trained in a single supervised phase; phase " + std::to_string(phase) +
                              " does not exist for it");
    if (meta_.phase_completed != phase - 1)
        throw CheckpointError("phase " + std::to_string(phase) + " requires a phase-" + std::to_string(phase - 1) +
                              " checkpoint, but the loaded state has phase_completed=" +
                              std::to_string(meta_.phase_completed));
}

PhaseReport Trainer::begin(int phase) const {
    PhaseReport r;
    r.phase = phase;
    r.model = kind_;
    return r;
}

void Trainer::log_epoch(const PhaseReport& report, int epoch) {
    nlohmann::json line = {{"model", to_string(kind_)}, {"phase", report.phase}, {"epoch", epoch}};
    for (const auto& [name, values] : report.series) line[name] = values.back();
    if (!out_dir_.empty()) {
        std::ofstream log(out_dir_ / "training_log.jsonl", std::ios::app);
        log << line.dump() << '\n';
    }
    if (on_epoch_) on_epoch_(line);
}

void Trainer::finish(PhaseReport& report, int phase, double seconds) {
    report.wall_seconds = seconds;
    meta_.phase_completed = phase;
    meta_.epoch = report.epochs();
    meta_.metrics = nlohmann::json::object();
    for (const auto& [name, values] : report.series) meta_.metrics[name] = values.back();
    for (const auto& [k, v] : report.summary.items()) meta_.metrics[k] = v;
    if (!out_dir_.empty()) {
        const std::string stem = to_string(kind_) + "_phase" + std::to_string(phase);
        save_checkpoint(net_, meta_, out_dir_ / stem);
        report.checkpoint = stem;
    }
}

PhaseReport Trainer::train_phase1(const SpecList& sim) {
    require_phase(1);
    if (sim.empty()) throw std::invalid_argument("phase 1: empty training set");
    const auto t0 = Clock::now();
    const bool variational = net_.encoder.variational();
    PhaseReport report = begin(1);
    Adam<float> opt(concat(net_.encoder.params(), net_.decoder.params()), config_.lr_phase1,
                    config_.adam_betas.first, config_.adam_betas.second);
    std::mt19937_64 rng(mix_seed(config_.master_seed, 0xA001));
    const double beta = config_.weights.beta_kl;

    for (int epoch = 0; epoch < config_.epochs_per_phase[0]; ++epoch) {
        double recon = 0.0, kl = 0.0;
        const auto batches = make_batches(static_cast<int>(sim.size()), config_.batch_size,
                                          mix_seed(config_.master_seed, 1000 + epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto x = to_batch(gather(sim, batches[b]));
            net_.zero_grad();
            const auto l = autoencode(net_, x, x, Pass::train(), beta, 1.0, rng);
            guard(l.recon + beta * l.kl, "phase-1 loss", 1, epoch, static_cast<int>(b));
            opt.step();
            recon += l.recon * static_cast<double>(batches[b].size());
            kl += l.kl * static_cast<double>(batches[b].size());
        }
        const double n = static_cast<double>(sim.size());
        report.series["recon"].push_back(recon / n);
        if (variational) {
            report.series["kl"].push_back(kl / n);
            report.series["total"].push_back((recon + beta * kl) / n);
        } else {
            report.series["total"].push_back(recon / n);
        }
        if (!validation_.empty()) report.series["val_recon"].push_back(held_out_recon(net_, sims_of(validation_)));
        log_epoch(report, epoch);
    }
    finish(report, 1, std::chrono::duration<double>(Clock::now() - t0).count());
    return report;
}

PhaseReport Trainer::train_phase2(const PairList& pairs) {
    require_phase(2);
    if (pairs.empty()) throw std::invalid_argument("phase 2: empty training set");
    for (const auto* p : pairs)
        if (p == nullptr || p->sim.values.size() != static_cast<std::size_t>(kPixels) ||
            p->meas.values.size() != static_cast<std::size_t>(kPixels))
            throw std::invalid_argument("phase 2: unpaired record");
    const auto t0 = Clock::now();
    PhaseReport report = begin(2);
    const std::string decoder_before = parameter_digest(net_.decoder.params());
    if (!validation_.empty()) report.summary["val_kld_start"] = mean(matched_latent_divergence(net_, validation_));

    Adam<float> disc_opt(net_.discriminator.params(), config_.lr_phase2, config_.adam_betas.first,
                         config_.adam_betas.second);
    Adam<float> enc_opt(net_.encoder.params(), config_.lr_phase2, config_.adam_betas.first,
                        config_.adam_betas.second);
    std::mt19937_64 rng(mix_seed(config_.master_seed, 0xA002));
    const auto sims = sims_of(pairs), meas = meas_of(pairs);
    const double beta = config_.weights.beta_kl, lambda = config_.weights.lambda_anchor;

    for (int epoch = 0; epoch < config_.epochs_per_phase[1]; ++epoch) {
        double disc_sum = 0.0, gen_sum = 0.0, anchor_sum = 0.0, acc_sum = 0.0;
        const auto batches = make_batches(static_cast<int>(pairs.size()), config_.batch_size,
                                          mix_seed(config_.master_seed, 2000 + epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto s = to_batch(gather(sims, batches[b]));
            const auto m = to_batch(gather(meas, batches[b]));
            const double w = static_cast<double>(batches[b].size());

            // Discriminator: simulated latents are real, measured latents fake.
            const auto mu_s = net_.encoder.forward(s, Pass::infer()).mu;
            const auto mu_m = net_.encoder.forward(m, Pass::infer()).mu;
            double disc_loss = 0.0;
            for (int k = 0; k < config_.disc_steps_per_gen_step; ++k) {
                net_.zero_grad();
                const auto lr = net_.discriminator.forward(mu_s, Pass::infer());
                const auto lf = net_.discriminator.forward(mu_m, Pass::infer());
                Tensor<float> gr, gf;
                disc_loss = adv_disc_loss_logits(lr, lf, &gr, &gf);
                guard(disc_loss, "discriminator loss", 2, epoch, static_cast<int>(b));
                if (k == 0) {
                    int correct = 0;
                    for (float v : lr.data) correct += v > 0.0f;
                    for (float v : lf.data) correct += v <= 0.0f;
                    acc_sum += static_cast<double>(correct) / 2.0;
                }
                net_.discriminator.forward(mu_s, Pass::train());
                net_.discriminator.backward(gr);
                net_.discriminator.forward(mu_m, Pass::train());
                net_.discriminator.backward(gf);
                disc_opt.step();
            }

            // Encoder: fool the discriminator on measured latents, keep the simulated reconstruction.
            net_.zero_grad();
            const auto enc_m = net_.encoder.forward(m, Pass::frozen());
            const auto logits = net_.discriminator.forward(enc_m.mu, Pass::frozen());
            Tensor<float> gl;
            const double gen_loss = adv_gen_loss_logits(logits, &gl);
            net_.encoder.backward(net_.discriminator.backward(gl), nullptr);
            const auto anchor = autoencode(net_, s, s, Pass::frozen(), beta, lambda, rng);
            const double anchor_loss = anchor.recon + beta * anchor.kl;
            guard(gen_loss + lambda * anchor_loss, "encoder loss", 2, epoch, static_cast<int>(b));
            enc_opt.step();

            disc_sum += disc_loss * w;
            gen_sum += gen_loss * w;
            anchor_sum += anchor_loss * w;
        }
        const double n = static_cast<double>(pairs.size());
        report.series["disc"].push_back(disc_sum / n);
        report.series["gen"].push_back(gen_sum / n);
        report.series["anchor"].push_back(anchor_sum / n);
        report.series["disc_acc"].push_back(acc_sum / n);
        if (!validation_.empty()) {
            report.series["val_kld"].push_back(mean(matched_latent_divergence(net_, validation_)));
            report.series["val_disc_acc"].push_back(disc_accuracy(net_, validation_));
        }
        log_epoch(report, epoch);
    }
    const std::string decoder_after = parameter_digest(net_.decoder.params());
    if (decoder_after != decoder_before) throw std::logic_error("phase 2 modified the frozen decoder");
    report.summary["decoder_digest"] = decoder_after;
    finish(report, 2, std::chrono::duration<double>(Clock::now() - t0).count());
    return report;
}

PhaseReport Trainer::train_phase3(const SpecList& meas, const SpecList& sim_anchor) {
    require_phase(3);
    if (meas.empty()) throw std::invalid_argument("phase 3: empty training set");
    if (sim_anchor.empty()) throw std::invalid_argument("phase 3: empty anchor set");
    const auto t0 = Clock::now();
    PhaseReport report = begin(3);
    const auto val_meas = meas_of(validation_);
    if (!validation_.empty()) report.summary["val_content_start"] = content_loss(net_, val_meas);

    Adam<float> opt(concat(net_.encoder.params(), net_.decoder.params()), config_.lr_phase3,
                    config_.adam_betas.first, config_.adam_betas.second);
    std::mt19937_64 rng(mix_seed(config_.master_seed, 0xA003));
    const double beta = config_.weights.beta_kl, lambda = config_.weights.lambda_anchor;
    const bool variational = net_.encoder.variational();

    for (int epoch = 0; epoch < config_.epochs_per_phase[2]; ++epoch) {
        double content_sum = 0.0, anchor_sum = 0.0;
        const auto batches = make_batches(static_cast<int>(meas.size()), config_.batch_size,
                                          mix_seed(config_.master_seed, 3000 + epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto m = to_batch(gather(meas, batches[b]));
            const double w = static_cast<double>(batches[b].size());
            net_.zero_grad();

            // Target distribution; no gradient through this pass.
            const auto target = net_.encoder.forward(m, Pass::infer());
            Tensor<float> z = target.mu;
            if (variational) z = reparameterize(target.mu, target.log_var, standard_normal_like(target.mu, rng));
            const auto m_prime = net_.decoder.forward(z, Pass::frozen());
            const auto second = net_.encoder.forward(m_prime, Pass::frozen());
            Tensor<float> gmu, glv;
            const double content = latent_divergence(target, second, &gmu, variational ? &glv : nullptr);
            net_.decoder.backward(net_.encoder.backward(gmu, variational ? &glv : nullptr));

            // Simulated reconstruction retention.
            SpecList anchor_items;
            for (std::size_t i = 0; i < batches[b].size(); ++i)
                anchor_items.push_back(sim_anchor[(static_cast<std::size_t>(batches[b][i])) % sim_anchor.size()]);
            const auto s = to_batch(anchor_items);
            const auto anchor = autoencode(net_, s, s, Pass::frozen(), beta, lambda, rng);
            const double anchor_loss = anchor.recon + beta * anchor.kl;
            guard(content + lambda * anchor_loss, "phase-3 loss", 3, epoch, static_cast<int>(b));
            opt.step();

            content_sum += content * w;
            anchor_sum += anchor_loss * w;
        }
        const double n = static_cast<double>(meas.size());
        report.series["content"].push_back(content_sum / n);
        report.series["anchor"].push_back(anchor_sum / n);
        if (!validation_.empty()) report.series["val_content"].push_back(content_loss(net_, val_meas));
        log_epoch(report, epoch);
    }
    finish(report, 3, std::chrono::duration<double>(Clock::now() - t0).count());
    return report;
}

PhaseReport Trainer::train_smnet(const PairList& pairs) {
    if (kind_ != ModelKind::smnet) throw std::invalid_argument("train_smnet: trainer was built for " + to_string(kind_));
    if (meta_.phase_completed != 0) throw CheckpointError("smnet has already been trained");
    if (pairs.empty()) throw std::invalid_argument("smnet: empty training set");
    const auto t0 = Clock::now();
    PhaseReport report = begin(1);
    Adam<float> opt(concat(net_.encoder.params(), net_.decoder.params()), config_.lr_phase1,
                    config_.adam_betas.first, config_.adam_betas.second);
    std::mt19937_64 rng(mix_seed(config_.master_seed, 0xA001));
    const double beta = config_.weights.beta_kl;
    const auto sims = sims_of(pairs), meas = meas_of(pairs);

    for (int epoch = 0; epoch < config_.epochs_per_phase[0]; ++epoch) {
        double recon = 0.0, kl = 0.0;
        const auto batches = make_batches(static_cast<int>(pairs.size()), config_.batch_size,
                                          mix_seed(config_.master_seed, 1000 + epoch));
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto m = to_batch(gather(meas, batches[b]));
            const auto s = to_batch(gather(sims, batches[b]));
            net_.zero_grad();
            const auto l = autoencode(net_, m, s, Pass::train(), beta, 1.0, rng);
            guard(l.recon + beta * l.kl, "smnet loss", 1, epoch, static_cast<int>(b));
            opt.step();
            recon += l.recon * static_cast<double>(batches[b].size());
            kl += l.kl * static_cast<double>(batches[b].size());
        }
        const double n = static_cast<double>(pairs.size());
        report.series["recon"].push_back(recon / n);
        report.series["kl"].push_back(kl / n);
        report.series["total"].push_back((recon + beta * kl) / n);
        if (!validation_.empty()) {
            const auto enhanced = enhance_all(net_, meas_of(validation_));
            double mse = 0.0;
            for (std::size_t i = 0; i < enhanced.size(); ++i) mse += pixel_loss(enhanced[i], validation_[i]->sim);
            report.series["val_recon"].push_back(mse / static_cast<double>(enhanced.size()));
        }
        log_epoch(report, epoch);
    }
    finish(report, 1, std::chrono::duration<double>(Clock::now() - t0).count());
    return report;
}

LatentBatch encode(Network<float>& net, const SpecList& items) {
    LatentBatch out;
    out.mu = Tensor<float>(static_cast<int>(items.size()), kLatentDim, 1, 1);
    if (net.encoder.variational()) out.log_var = Tensor<float>(static_cast<int>(items.size()), kLatentDim, 1, 1);
    for (std::size_t i = 0; i < items.size(); i += kEvalBatch) {
        const SpecList part(items.begin() + i, items.begin() + std::min(items.size(), i + kEvalBatch));
        const auto enc = net.encoder.forward(to_batch(part), Pass::infer());
        std::copy(enc.mu.data.begin(), enc.mu.data.end(), out.mu.data.begin() + i * kLatentDim);
        if (!out.log_var.empty())
            std::copy(enc.log_var.data.begin(), enc.log_var.data.end(), out.log_var.data.begin() + i * kLatentDim);
    }
    return out;
}

Spectrogram enhance(Network<float>& net, const Spectrogram& m, bool deterministic, std::uint64_t seed) {
    const auto enc = net.encoder.forward(to_batch(std::vector<const Spectrogram*>{&m}), Pass::infer());
    Tensor<float> z = enc.mu;
    if (!deterministic && !enc.log_var.empty()) {
        std::mt19937_64 rng(seed);
        z = reparameterize(enc.mu, enc.log_var, standard_normal_like(enc.mu, rng));
    }
    Spectrogram s = from_batch(net.decoder.forward(z, Pass::infer()), 0);
    s.doppler_extent_hz = m.doppler_extent_hz;
    s.duration_s = m.duration_s;
    return s;
}

// One sample at a time: batched GEMMs sum in a different order, and the
// enhanced outputs must not depend on which other samples share a batch.
std::vector<Spectrogram> enhance_all(Network<float>& net, const SpecList& items, bool deterministic,
                                     std::uint64_t seed) {
    std::vector<Spectrogram> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i)
        out.push_back(enhance(net, *items[i], deterministic, mix_seed(seed, i)));
    return out;
}

std::vector<double> matched_latent_divergence(Network<float>& net, const PairList& pairs) {
    const auto ls = encode(net, sims_of(pairs));
    const auto lm = encode(net, meas_of(pairs));
    std::vector<double> out;
    out.reserve(pairs.size());
    std::vector<double> mu_s(kLatentDim), lv_s(kLatentDim), mu_m(kLatentDim), lv_m(kLatentDim);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::size_t off = i * kLatentDim;
        if (ls.log_var.empty()) {
            double acc = 0.0;
            for (int j = 0; j < kLatentDim; ++j) {
                const double d = static_cast<double>(lm.mu.data[off + j]) - ls.mu.data[off + j];
                acc += d * d;
            }
            out.push_back(acc / kLatentDim);
            continue;
        }
        for (int j = 0; j < kLatentDim; ++j) {
            mu_s[j] = ls.mu.data[off + j];
            lv_s[j] = ls.log_var.data[off + j];
            mu_m[j] = lm.mu.data[off + j];
            lv_m[j] = lm.log_var.data[off + j];
        }
        out.push_back(kl_gaussians(mu_m, lv_m, mu_s, lv_s));
    }
    return out;
}

double content_loss(Network<float>& net, const SpecList& meas) {
    if (meas.empty()) throw std::invalid_argument("content_loss: no samples");
    double total = 0.0;
    for (std::size_t i = 0; i < meas.size(); i += kEvalBatch) {
        const SpecList part(meas.begin() + i, meas.begin() + std::min(meas.size(), i + kEvalBatch));
        const auto first = net.encoder.forward(to_batch(part), Pass::infer());
        const auto m_prime = net.decoder.forward(first.mu, Pass::infer());
        const auto second = net.encoder.forward(m_prime, Pass::infer());
        total += latent_divergence(first, second, nullptr, nullptr) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(meas.size());
}

}  // namespace fmnet
