#include "fmnet/classify.hpp"

#include "fmnet/image_io.hpp"
#include "fmnet/optim.hpp"

#include <algorithm>
#include <cmath>

namespace fmnet {

std::string to_string(Source s) {
    switch (s) {
        case Source::simulated: return "simulated";
        case Source::measured: return "measured";
        case Source::enhanced: return "enhanced";
    }
    return "unknown";
}

namespace {

Source source_from_string(const std::string& s) {
    if (s == "simulated") return Source::simulated;
    if (s == "measured") return Source::measured;
    if (s == "enhanced") return Source::enhanced;
    throw std::invalid_argument("unknown data source '" + s + "'");
}

}  // namespace

LabeledView::LabeledView(PairList pairs, Source source, DataAudit* audit, const std::vector<Spectrogram>* enhanced)
    : pairs_(std::move(pairs)), source_(source), audit_(audit), enhanced_(enhanced) {
    if (source == Source::enhanced && (!enhanced || enhanced->size() != pairs_.size()))
        throw std::invalid_argument("enhanced view needs one enhanced spectrogram per pair");
}

const Spectrogram& LabeledView::at(std::size_t i) const {
    switch (source_) {
        case Source::simulated:
            if (audit_) ++audit_->simulated;
            return pairs_.at(i)->sim;
        case Source::measured:
            if (audit_) ++audit_->measured;
            return pairs_.at(i)->meas;
        case Source::enhanced:
            if (audit_) ++audit_->enhanced;
            return enhanced_->at(i);
    }
    throw std::logic_error("bad source");
}

void ClassifierConfig::validate() const {
    if (channels.empty()) throw std::invalid_argument("classifier: at least one conv block required");
    for (int c : channels)
        if (c < 1) throw std::invalid_argument("classifier: channel counts must be positive");
    for (int d : dense)
        if (d < 1) throw std::invalid_argument("classifier: dense widths must be positive");
    if (epochs < 1) throw std::invalid_argument("classifier: epochs must be >= 1");
    if (!(lr > 0)) throw std::invalid_argument("classifier: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("classifier: batch_size must be >= 1");
    if (train_source == Source::enhanced) throw std::invalid_argument("classifier: cannot train on enhanced data");
    if (test_source == Source::simulated) throw std::invalid_argument("classifier: test source must be measured");
}

nlohmann::json ClassifierConfig::to_json() const {
    return {{"conv_blocks", channels.size()}, {"channels", channels},   {"dense", dense},
            {"epochs", epochs},              {"lr", lr},               {"batch_size", batch_size},
            {"seed", seed},                  {"train_source", to_string(train_source)},
            {"test_source", to_string(test_source)}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    c.channels = j.value("channels", c.channels);
    if (j.contains("conv_blocks") && j.at("conv_blocks").get<std::size_t>() != c.channels.size())
        throw std::invalid_argument("classifier: conv_blocks does not match the channel list");
    c.dense = j.value("dense", c.dense);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("train_source")) c.train_source = source_from_string(j.at("train_source").get<std::string>());
    if (j.contains("test_source")) c.test_source = source_from_string(j.at("test_source").get<std::string>());
    c.validate();
    return c;
}

struct Classifier::Impl {
    std::vector<Conv2d<float>> convs;
    std::vector<ReLU<float>> conv_relus;
    std::vector<Linear<float>> dense;
    std::vector<ReLU<float>> dense_relus;
    std::array<int, 4> conv_out{};
};

Classifier::Classifier(const ClassifierConfig& config) : impl_(std::make_unique<Impl>()) {
    config.validate();
    int cin = 1, h = kDopplerBins, w = kTimeFrames;
    for (std::size_t i = 0; i < config.channels.size(); ++i) {
        impl_->convs.emplace_back("classifier.conv" + std::to_string(i + 1), cin, config.channels[i], 3, 2, 1);
        impl_->conv_relus.emplace_back();
        cin = config.channels[i];
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    int features = cin * h * w;
    for (std::size_t i = 0; i < config.dense.size(); ++i) {
        impl_->dense.emplace_back("classifier.fc" + std::to_string(i + 1), features, config.dense[i]);
        impl_->dense_relus.emplace_back();
        features = config.dense[i];
    }
    impl_->dense.emplace_back("classifier.out", features, kNumActivities);
    std::mt19937_64 rng(config.seed);
    for (auto& c : impl_->convs) c.init(rng);
    for (auto& d : impl_->dense) d.init(rng);
}

Classifier::~Classifier() = default;
Classifier::Classifier(Classifier&&) noexcept = default;
Classifier& Classifier::operator=(Classifier&&) noexcept = default;

Tensor<float> Classifier::logits(const Tensor<float>& x, Pass pass) {
    require_shape(x, 1, kDopplerBins, kTimeFrames, "Classifier");
    Tensor<float> h = x;
    for (std::size_t i = 0; i < impl_->convs.size(); ++i)
        h = impl_->conv_relus[i].forward(impl_->convs[i].forward(h, pass), pass);
    impl_->conv_out = h.shape();
    for (std::size_t i = 0; i + 1 < impl_->dense.size(); ++i)
        h = impl_->dense_relus[i].forward(impl_->dense[i].forward(h, pass), pass);
    return impl_->dense.back().forward(h, pass);
}

void Classifier::backward(const Tensor<float>& grad_logits) {
    Tensor<float> g = impl_->dense.back().backward(grad_logits);
    for (std::size_t i = impl_->dense.size() - 1; i-- > 0;)
        g = impl_->dense[i].backward(impl_->dense_relus[i].backward(g));
    const auto& s = impl_->conv_out;
    g = g.reshaped(s[1], s[2], s[3]);
    for (std::size_t i = impl_->convs.size(); i-- > 0;) g = impl_->convs[i].backward(impl_->conv_relus[i].backward(g));
}

std::vector<Param<float>*> Classifier::params() {
    std::vector<Param<float>*> out;
    for (auto& c : impl_->convs)
        for (auto* p : c.params()) out.push_back(p);
    for (auto& d : impl_->dense)
        for (auto* p : d.params()) out.push_back(p);
    return out;
}

std::size_t Classifier::parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->value.size();
    return n;
}

namespace {

std::vector<std::array<double, kNumActivities>> softmax_rows(const Tensor<float>& logits) {
    std::vector<std::array<double, kNumActivities>> out(logits.n);
    for (int i = 0; i < logits.n; ++i) {
        const float* l = logits.data.data() + static_cast<std::size_t>(i) * kNumActivities;
        const double top = *std::max_element(l, l + kNumActivities);
        double z = 0.0;
        for (int k = 0; k < kNumActivities; ++k) z += out[i][k] = std::exp(l[k] - top);
        for (auto& p : out[i]) p /= z;
    }
    return out;
}

}  // namespace

std::vector<std::array<double, kNumActivities>> Classifier::probabilities(const Tensor<float>& x) {
    return softmax_rows(logits(x, Pass::infer()));
}

std::vector<int> Classifier::predict(const std::vector<const Spectrogram*>& items) {
    std::vector<int> out;
    for (std::size_t i = 0; i < items.size(); i += 64) {
        const std::vector<const Spectrogram*> part(items.begin() + i, items.begin() + std::min(items.size(), i + 64));
        const auto l = logits(to_batch(part), Pass::infer());
        for (int r = 0; r < l.n; ++r) {
            const float* row = l.data.data() + static_cast<std::size_t>(r) * kNumActivities;
            out.push_back(static_cast<int>(std::max_element(row, row + kNumActivities) - row));
        }
    }
    return out;
}

double softmax_cross_entropy(const Tensor<float>& logits, const std::vector<int>& labels, Tensor<float>* grad) {
    if (logits.features() != kNumActivities || static_cast<std::size_t>(logits.n) != labels.size())
        throw std::invalid_argument("softmax_cross_entropy: shape mismatch");
    const auto p = softmax_rows(logits);
    if (grad) *grad = Tensor<float>(logits.n, kNumActivities, 1, 1);
    double loss = 0.0;
    const double n = logits.n;
    for (int i = 0; i < logits.n; ++i) {
        loss -= std::log(std::max(p[i][labels[i]], 1e-300));
        if (grad)
            for (int k = 0; k < kNumActivities; ++k)
                grad->data[static_cast<std::size_t>(i) * kNumActivities + k] =
                    static_cast<float>((p[i][k] - (k == labels[i] ? 1.0 : 0.0)) / n);
    }
    return loss / n;
}

TrainedClassifier train_classifier(const LabeledView& view, const ClassifierConfig& config) {
    config.validate();
    if (view.size() == 0) throw std::invalid_argument("train_classifier: empty training view");
    std::array<bool, kNumActivities> seen{};
    for (std::size_t i = 0; i < view.size(); ++i) seen[view.label(i)] = true;
    if (std::count(seen.begin(), seen.end(), true) < 2)
        throw std::invalid_argument("train_classifier: fewer than 2 classes present");

    TrainedClassifier out{Classifier(config), 0.0, {}};
    Adam<float> opt(out.model.params(), config.lr);
    std::vector<const Spectrogram*> items;
    std::vector<int> labels;
    for (std::size_t i = 0; i < view.size(); ++i) {
        items.push_back(&view.at(i));
        labels.push_back(view.label(i));
    }
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double total = 0.0;
        for (const auto& batch : make_batches(static_cast<int>(items.size()), config.batch_size,
                                              mix_seed(config.seed, static_cast<std::uint64_t>(epoch)))) {
            std::vector<const Spectrogram*> xs;
            std::vector<int> ys;
            for (int i : batch) {
                xs.push_back(items[i]);
                ys.push_back(labels[i]);
            }
            opt.zero_grad();
            Tensor<float> g;
            const double loss = softmax_cross_entropy(out.model.logits(to_batch(xs), Pass::train()), ys, &g);
            if (!std::isfinite(loss))
                throw TrainingDiverged("classifier diverged at epoch " + std::to_string(epoch));
            out.model.backward(g);
            opt.step();
            total += loss * static_cast<double>(batch.size());
        }
        out.loss_curve.push_back(total / static_cast<double>(items.size()));
    }
    const auto pred = out.model.predict(items);
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    out.train_accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
    return out;
}

RegimeResult evaluate_classifier(Classifier& model, const LabeledView& test_view, std::string regime, int train_size) {
    if (test_view.size() == 0) throw std::invalid_argument("evaluate_classifier: empty test view");
    std::vector<const Spectrogram*> items;
    for (std::size_t i = 0; i < test_view.size(); ++i) items.push_back(&test_view.at(i));
    const auto pred = model.predict(items);
    RegimeResult r;
    r.regime = std::move(regime);
    r.train_size = train_size;
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++r.confusion[test_view.label(i)][pred[i]];
        correct += pred[i] == test_view.label(i);
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
    return r;
}

nlohmann::json RegimeResult::to_json() const {
    std::vector<std::string> labels;
    for (auto a : kActivities) labels.push_back(abbreviation(a));
    return {{"regime", regime},
            {"train_size", train_size},
            {"accuracy", accuracy},
            {"train_accuracy", train_accuracy},
            {"labels", labels},
            {"confusion", confusion},
            {"training_audit",
             {{"simulated", training_audit.simulated},
              {"measured", training_audit.measured},
              {"enhanced", training_audit.enhanced}}}};
}

RegimeResult RegimeResult::from_json(const nlohmann::json& j) {
    RegimeResult r;
    r.regime = j.at("regime").get<std::string>();
    r.train_size = j.at("train_size").get<int>();
    r.accuracy = j.at("accuracy").get<double>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    r.confusion = j.at("confusion").get<decltype(r.confusion)>();
    const auto& a = j.at("training_audit");
    r.training_audit = {a.at("simulated").get<long>(), a.at("measured").get<long>(), a.at("enhanced").get<long>()};
    return r;
}

std::vector<RegimeResult> eval_regimes(Network<float>* fmnet, const Dataset& dataset, const RegimeRequest& request) {
    const PairList train = dataset.split(Split::train);
    const PairList test = dataset.split(Split::test);
    if (test.empty()) throw std::invalid_argument("eval_regimes: empty test split");
    PairList sim_pool = train;
    sim_pool.insert(sim_pool.end(), test.begin(), test.end());

    std::vector<Spectrogram> enhanced;
    for (const auto& regime : request.regimes) {
        if (std::find(kRegimes.begin(), kRegimes.end(), regime) == kRegimes.end())
            throw std::invalid_argument("unknown regime '" + regime + "'");
        if (regime == "train_s_test_em" && enhanced.empty()) {
            if (!fmnet) throw std::invalid_argument("regime train_s_test_em needs an FMNet checkpoint");
            enhanced = enhance_all(*fmnet, meas_of(test));
        }
    }

    std::vector<RegimeResult> results;
    for (const auto& regime : request.regimes) {
        const bool simulated = regime != "train_om_test_om";
        const PairList& pool = simulated ? sim_pool : train;
        std::vector<int> sizes = request.sizes;
        if (sizes.empty()) sizes = {static_cast<int>(train.size())};
        for (int size : sizes) {
            if (size < 1 || static_cast<std::size_t>(size) > pool.size()) continue;
            ClassifierConfig cfg = request.config;
            cfg.train_source = simulated ? Source::simulated : Source::measured;
            cfg.test_source = regime == "train_s_test_em" ? Source::enhanced : Source::measured;
            DataAudit audit;
            const LabeledView train_view(PairList(pool.begin(), pool.begin() + size), cfg.train_source, &audit);
            auto trained = train_classifier(train_view, cfg);
            const LabeledView test_view(test, cfg.test_source, nullptr,
                                        cfg.test_source == Source::enhanced ? &enhanced : nullptr);
            RegimeResult r = evaluate_classifier(trained.model, test_view, regime, size);
            r.train_accuracy = trained.train_accuracy;
            r.training_audit = audit;
            if (simulated && (audit.measured != 0 || audit.enhanced != 0))
                throw std::logic_error("regime " + regime + " read measured data during training");
            results.push_back(r);
        }
    }
    return results;
}

void write_confusion_png(const std::filesystem::path& path, const RegimeResult& result) {
    std::vector<std::vector<double>> m;
    for (const auto& row : result.confusion) m.emplace_back(row.begin(), row.end());
    std::vector<std::string> labels;
    for (auto a : kActivities) labels.push_back(abbreviation(a));
    write_heatmap(path, m, labels);
}

}  // namespace fmnet
