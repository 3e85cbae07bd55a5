#pragma once

#include "fmnet/dopplergen.hpp"
#include "fmnet/losses.hpp"
#include "fmnet/netcore.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fmnet {

struct TrainConfig {
    std::array<int, 3> epochs_per_phase = {200, 100, 50};
    int batch_size = 16;
    double lr_phase1 = 1e-3;
    double lr_phase2 = 1e-4;
    double lr_phase3 = 1e-4;
    std::string optimizer = "adam";
    std::pair<double, double> adam_betas = {0.9, 0.999};
    LossWeights weights;
    int disc_steps_per_gen_step = 1;
    std::uint64_t master_seed = 42;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    /// Missing keys keep their defaults.
    static TrainConfig from_json(const nlohmann::json& j);
};

struct PhaseReport {
    int phase = 1;
    ModelKind model = ModelKind::fmnet;
    std::map<std::string, std::vector<double>> series;
    double wall_seconds = 0.0;
    std::string checkpoint;
    /// Scalars measured once per phase (start/end statistics, digests).
    nlohmann::json summary = nlohmann::json::object();

    [[nodiscard]] int epochs() const;
    [[nodiscard]] double last(const std::string& name) const;
    [[nodiscard]] nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using SpecList = std::vector<const Spectrogram*>;
using PairList = std::vector<const PairRecord*>;

SpecList sims_of(const PairList& pairs);
SpecList meas_of(const PairList& pairs);

/// Owns one network and enforces the phase order through its checkpoint metadata.
class Trainer {
public:
    Trainer(ModelKind kind, TrainConfig config);

    /// Checkpoints and training_log.jsonl are written here when set.
    void set_output_dir(std::filesystem::path dir);
    /// Held-out pairs evaluated once per epoch; never used for updates.
    void set_validation(PairList pairs);
    void set_epoch_callback(std::function<void(const nlohmann::json&)> cb);

    /// Replaces the network and metadata with a saved checkpoint.
    void load(const std::filesystem::path& stem);

    PhaseReport train_phase1(const SpecList& sim);
    PhaseReport train_phase2(const PairList& pairs);
    /// `sim_anchor` feeds the retention term; pass the simulated halves of the training pairs.
    PhaseReport train_phase3(const SpecList& meas, const SpecList& sim_anchor);
    /// Single-phase supervised mapping from measured to simulated spectrograms.
    PhaseReport train_smnet(const PairList& pairs);

    Network<float>& network() { return net_; }
    [[nodiscard]] const CheckpointMeta& meta() const { return meta_; }
    [[nodiscard]] const TrainConfig& config() const { return config_; }

private:
    PhaseReport begin(int phase) const;
    void finish(PhaseReport& report, int phase, double seconds);
    void log_epoch(const PhaseReport& report, int epoch);
    void require_phase(int phase) const;

    ModelKind kind_;
    TrainConfig config_;
    Network<float> net_;
    CheckpointMeta meta_;
    std::filesystem::path out_dir_;
    PairList validation_;
    std::function<void(const nlohmann::json&)> on_epoch_;
};

/// Shuffled mini-batches of indices; a trailing singleton is merged into the previous batch.
std::vector<std::vector<int>> make_batches(int count, int batch_size, std::uint64_t seed);

struct LatentBatch {
    Tensor<float> mu;
    Tensor<float> log_var;  // empty for deterministic encoders
};

/// Eval-mode encoding of `items`, batched.
LatentBatch encode(Network<float>& net, const SpecList& items);

/// D(mu) by default, or D(z) with z sampled from the encoder posterior.
Spectrogram enhance(Network<float>& net, const Spectrogram& m, bool deterministic = true,
                    std::uint64_t seed = 0);
/// enhance() per item; sampled item i draws from mix_seed(seed, i).
std::vector<Spectrogram> enhance_all(Network<float>& net, const SpecList& items, bool deterministic = true,
                                     std::uint64_t seed = 0);

/// Matched-pair latent divergence per pair: kl_gaussians(meas || sim) for
/// variational encoders, mean squared latent distance otherwise.
std::vector<double> matched_latent_divergence(Network<float>& net, const PairList& pairs);

/// Mean content-consistency loss E(m) vs E(D(mu(m))) over `meas`.
double content_loss(Network<float>& net, const SpecList& meas);

}  // namespace fmnet
