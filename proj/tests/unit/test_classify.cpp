#include "fmnet/classify.hpp"

#include <doctest.h>

#include <filesystem>

using namespace fmnet;

namespace {

Dataset small_dataset(int total) {
    Dataset ds;
    ds.config.total_pairs = total;
    ds.profile_name = ds.config.profile.name;
    for (int i = 0; i < total; ++i) ds.records.push_back(make_pair(ds.config, i));
    return ds;
}

ClassifierConfig quick_config() {
    ClassifierConfig c;
    c.channels = {4, 8};
    c.dense = {16};
    c.epochs = 12;
    c.batch_size = 8;
    return c;
}

}  // namespace

TEST_CASE("softmax cross-entropy matches a loop oracle") {
    Tensor<float> logits(3, 6);
    for (std::size_t i = 0; i < logits.size(); ++i) logits.data[i] = static_cast<float>(std::sin(1.7 * i) * 3.0);
    const std::vector<int> labels = {0, 4, 5};
    Tensor<float> grad;
    const double loss = softmax_cross_entropy(logits, labels, &grad);

    double want = 0.0;
    for (int n = 0; n < 3; ++n) {
        double mx = -1e300, z = 0.0;
        for (int k = 0; k < 6; ++k) mx = std::max(mx, static_cast<double>(logits.at(n, k, 0, 0)));
        for (int k = 0; k < 6; ++k) z += std::exp(logits.at(n, k, 0, 0) - mx);
        want += -(logits.at(n, labels[n], 0, 0) - mx - std::log(z)) / 3.0;
        for (int k = 0; k < 6; ++k) {
            const double p = std::exp(logits.at(n, k, 0, 0) - mx) / z;
            CHECK(grad.at(n, k, 0, 0) == doctest::Approx((p - (k == labels[n])) / 3.0).epsilon(1e-6));
        }
    }
    CHECK(loss == doctest::Approx(want).epsilon(1e-9));
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 1}, nullptr), std::invalid_argument);
}

TEST_CASE("classifier config validation") {
    ClassifierConfig c;
    CHECK(c.channels == std::vector<int>{16, 32, 64});
    CHECK_NOTHROW(c.validate());
    CHECK(ClassifierConfig::from_json(c.to_json()).to_json() == c.to_json());
    auto bad = c;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.train_source = Source::enhanced;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    Classifier model(c);
    CHECK(model.parameter_count() < 400000u);
}

TEST_CASE("labelled views count every read per source") {
    const auto ds = small_dataset(12);
    const auto train = ds.split(Split::train);
    DataAudit audit;
    const LabeledView sims(train, Source::simulated, &audit);
    const LabeledView meas(train, Source::measured, &audit);
    CHECK(&sims.at(0) == &train[0]->sim);
    CHECK(&meas.at(1) == &train[1]->meas);
    sims.at(2);
    CHECK(audit.simulated == 2);
    CHECK(audit.measured == 1);
    CHECK(sims.label(0) == index_of(train[0]->activity));
    CHECK_THROWS_AS(LabeledView(train, Source::enhanced), std::invalid_argument);
}

TEST_CASE("training a classifier: probabilities, fit and determinism") {
    const auto ds = small_dataset(48);
    const LabeledView view(ds.split(Split::train), Source::simulated);
    const auto a = train_classifier(view, quick_config());
    const auto b = train_classifier(view, quick_config());
    CHECK(a.loss_curve.size() == 12u);
    CHECK(a.loss_curve == b.loss_curve);
    CHECK(a.train_accuracy == b.train_accuracy);
    CHECK(a.train_accuracy >= 0.8);
    CHECK(a.loss_curve.back() < a.loss_curve.front());

    auto model = train_classifier(view, quick_config()).model;
    const auto probs = model.probabilities(to_batch(sims_of(ds.split(Split::test))));
    for (const auto& row : probs) {
        double s = 0.0;
        for (double p : row) s += p;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    PairList one_class;
    for (const auto* p : ds.split(Split::train))
        if (p->activity == Activity::sit_down) one_class.push_back(p);
    CHECK_THROWS_AS(train_classifier(LabeledView(one_class, Source::simulated), quick_config()), std::invalid_argument);
}

TEST_CASE("regimes: isolation audit, confusion bookkeeping and size sweep") {
    const auto ds = small_dataset(36);
    Network<float> net;
    net.init(3);
    RegimeRequest req;
    req.config = quick_config();
    req.config.epochs = 3;
    req.sizes = {10, 29, 36};
    const auto results = eval_regimes(&net, ds, req);

    const int n_test = static_cast<int>(ds.split(Split::test).size());
    int om = 0;
    for (const auto& r : results) {
        CAPTURE(r.regime);
        int trace = 0, total = 0;
        for (int t = 0; t < kNumActivities; ++t)
            for (int p = 0; p < kNumActivities; ++p) {
                total += r.confusion[t][p];
                if (t == p) trace += r.confusion[t][p];
            }
        CHECK(total == n_test);
        CHECK(r.accuracy == static_cast<double>(trace) / n_test);
        if (r.regime == "train_om_test_om") {
            ++om;
            CHECK(r.training_audit.simulated == 0);
        } else {
            CHECK(r.training_audit.measured == 0);
            CHECK(r.training_audit.enhanced == 0);
            CHECK(r.training_audit.simulated > 0);
        }
        CHECK(RegimeResult::from_json(r.to_json()).to_json() == r.to_json());
    }
    CHECK(om == 2);
    CHECK(results.size() == 8u);

    RegimeRequest em_only;
    em_only.regimes = {"train_s_test_em"};
    CHECK_THROWS_AS(eval_regimes(nullptr, ds, em_only), std::invalid_argument);
    em_only.regimes = {"train_x"};
    CHECK_THROWS_AS(eval_regimes(&net, ds, em_only), std::invalid_argument);

    const auto png = std::filesystem::temp_directory_path() / "fmnet_unit_confusion.png";
    write_confusion_png(png, results.front());
    CHECK(std::filesystem::file_size(png) > 0u);
    std::filesystem::remove(png);
}
