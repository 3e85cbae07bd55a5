#pragma once

#include "fmnet/trainer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace fmnet {

enum class Source { simulated, measured, enhanced };
std::string to_string(Source s);

/// Counts every spectrogram handed out, per source.
struct DataAudit {
    long simulated = 0;
    long measured = 0;
    long enhanced = 0;
};

/// Labelled spectrograms drawn from one source. Reads go through at(), which
/// records them in the attached audit.
class LabeledView {
public:
    LabeledView(PairList pairs, Source source, DataAudit* audit = nullptr,
                const std::vector<Spectrogram>* enhanced = nullptr);

    [[nodiscard]] std::size_t size() const { return pairs_.size(); }
    [[nodiscard]] int label(std::size_t i) const { return index_of(pairs_[i]->activity); }
    [[nodiscard]] Source source() const { return source_; }
    const Spectrogram& at(std::size_t i) const;

private:
    PairList pairs_;
    Source source_;
    DataAudit* audit_;
    const std::vector<Spectrogram>* enhanced_;
};

struct ClassifierConfig {
    std::vector<int> channels = {16, 32, 64};
    std::vector<int> dense = {48};
    int epochs = 40;
    double lr = 1e-3;
    int batch_size = 16;
    std::uint64_t seed = 7;
    Source train_source = Source::simulated;
    Source test_source = Source::measured;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Stride-2 3x3 conv blocks with ReLU, dense layers, 6 logits.
class Classifier {
public:
    explicit Classifier(const ClassifierConfig& config);
    ~Classifier();
    Classifier(Classifier&&) noexcept;
    Classifier& operator=(Classifier&&) noexcept;

    Tensor<float> logits(const Tensor<float>& x, Pass pass);
    void backward(const Tensor<float>& grad_logits);
    std::vector<Param<float>*> params();
    std::size_t parameter_count();

    /// Row-wise softmax of the logits.
    std::vector<std::array<double, kNumActivities>> probabilities(const Tensor<float>& x);
    std::vector<int> predict(const std::vector<const Spectrogram*>& items);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Mean softmax cross-entropy; `grad` receives d loss / d logits.
double softmax_cross_entropy(const Tensor<float>& logits, const std::vector<int>& labels, Tensor<float>* grad);

struct TrainedClassifier {
    Classifier model;
    double train_accuracy = 0.0;
    std::vector<double> loss_curve;
};

TrainedClassifier train_classifier(const LabeledView& view, const ClassifierConfig& config);

struct RegimeResult {
    std::string regime;
    int train_size = 0;
    double accuracy = 0.0;
    double train_accuracy = 0.0;
    std::array<std::array<int, kNumActivities>, kNumActivities> confusion{};  // [true][predicted]
    DataAudit training_audit;

    [[nodiscard]] nlohmann::json to_json() const;
    static RegimeResult from_json(const nlohmann::json& j);
};

RegimeResult evaluate_classifier(Classifier& model, const LabeledView& test_view, std::string regime, int train_size);

inline const std::array<std::string, 3> kRegimes = {"train_om_test_om", "train_s_test_em", "train_s_test_om"};
inline const std::vector<int> kSweepSizes = {170, 194, 218, 243, 304};

struct RegimeRequest {
    std::vector<std::string> regimes = {kRegimes.begin(), kRegimes.end()};
    /// Empty means the full training pool of each source.
    std::vector<int> sizes;
    ClassifierConfig config;
};

/// Runs every requested (regime, size) combination over the fixed test split.
/// Simulated training pools contain every simulated spectrogram (train and test
/// pairs); measured pools contain train-split measurements only, so sizes beyond
/// their length are skipped. `fmnet` may be null when no enhanced regime is requested.
std::vector<RegimeResult> eval_regimes(Network<float>* fmnet, const Dataset& dataset, const RegimeRequest& request);

void write_confusion_png(const std::filesystem::path& path, const RegimeResult& result);

}  // namespace fmnet
