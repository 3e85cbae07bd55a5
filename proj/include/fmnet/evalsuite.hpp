#pragma once

#include "fmnet/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fmnet {

struct MetricsRow {
    std::string activity;  // "overall" for the aggregate row
    int count = 0;
    double pixel_loss_meas_vs_sim = 0.0;
    double pixel_loss_enh_vs_sim = 0.0;
    double ssim_meas_vs_sim = 0.0;
    double ssim_enh_vs_sim = 0.0;
    /// Only for domain-shift reports: SSIM(enhanced, measured).
    std::optional<double> ssim_enh_vs_meas;
    std::optional<double> latent_kld;
};

struct MetricsReport {
    std::string kind = "enhancement";  // or "domain_shift"
    std::string model;
    std::string corpus;
    std::vector<MetricsRow> rows;
    MetricsRow overall;

    [[nodiscard]] const MetricsRow& row(const std::string& activity) const;
    [[nodiscard]] nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

/// Before/after pixel loss and SSIM against the clean spectrogram, per activity and overall.
MetricsReport eval_enhancement(const PairList& test_pairs, Network<float>& net, const std::string& model_id,
                               const std::string& corpus_id);

struct KldTable {
    std::string model;
    std::string corpus;
    /// True when the model has deterministic latents and the value is a mean squared distance.
    bool surrogate = false;
    std::vector<std::pair<std::string, double>> rows;  // activity -> mean
    std::vector<int> counts;
    double overall = 0.0;

    [[nodiscard]] double value(const std::string& activity) const;
    [[nodiscard]] nlohmann::json to_json() const;
    static KldTable from_json(const nlohmann::json& j);
};

KldTable eval_latent_kld(const PairList& test_pairs, Network<float>& net, const std::string& model_id,
                         const std::string& corpus_id);

/// Requires the corpus to carry the "ttw" profile tag.
MetricsReport eval_domain_shift(Network<float>& net, const PairList& ttw_pairs, const std::string& profile_name,
                                const std::string& model_id, const std::string& corpus_id);

struct LatentExport {
    std::vector<std::string> ids;
    std::vector<std::string> activities;
    std::vector<std::string> sources;  // "meas" or "sim"
    std::vector<std::array<double, 2>> projection;

    /// Mean distance between class centroids over mean distance of points to their centroid.
    [[nodiscard]] double cluster_separation() const;
    /// Mean pc-space distance of matched meas/sim rows, and of all unmatched meas/sim combinations.
    [[nodiscard]] std::pair<double, double> paired_vs_unpaired() const;
};

/// Writes `<out>` (id, activity, source, mu_0..mu_2047) and `<out stem>_pca.csv`
/// (id, activity, source, pc1, pc2); each pair contributes a meas row and a sim row.
LatentExport export_latents(const PairList& pairs, Network<float>& net, const std::filesystem::path& out_csv);

/// Two leading principal-component scores of the rows of `x` (rows x cols, row-major).
std::vector<std::array<double, 2>> principal_scores(const std::vector<double>& x, int rows, int cols);

/// Measured / enhanced / simulated columns, one row per listed pair.
void write_comparison_grid(const std::filesystem::path& path, const PairList& pairs,
                           const std::vector<Spectrogram>& enhanced);

}  // namespace fmnet
