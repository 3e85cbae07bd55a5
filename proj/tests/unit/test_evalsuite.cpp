#include "fmnet/evalsuite.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fmnet;

namespace {

struct Corpus {
    std::vector<PairRecord> records;
    PairList test, train;

    explicit Corpus(CorruptionProfile profile, int total = 24) {
        DatasetConfig cfg;
        cfg.total_pairs = total;
        cfg.profile = std::move(profile);
        for (int i = 0; i < total; ++i) records.push_back(make_pair(cfg, i));
        for (const auto& r : records) (r.split == Split::test ? test : train).push_back(&r);
    }
};

Network<float> network(std::uint64_t seed, ModelKind kind = ModelKind::fmnet) {
    Network<float> net(kind);
    net.init(seed);
    return net;
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fmnet_unit_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("enhancement report: baselines, aggregation and round trip") {
    const Corpus c(CorruptionProfile::los(), 60);
    auto a = network(1);
    auto b = network(2);
    const auto ra = eval_enhancement(c.test, a, "a", "los");
    const auto rb = eval_enhancement(c.test, b, "b", "los");

    CHECK(ra.rows.size() == 6u);
    double pixel_sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < ra.rows.size(); ++i) {
        CHECK(ra.rows[i].pixel_loss_meas_vs_sim == rb.rows[i].pixel_loss_meas_vs_sim);
        CHECK(ra.rows[i].ssim_meas_vs_sim == rb.rows[i].ssim_meas_vs_sim);
        CHECK(ra.rows[i].count >= 1);
        CHECK(ra.rows[i].ssim_enh_vs_sim >= -1.0);
        CHECK(ra.rows[i].ssim_enh_vs_sim <= 1.0);
        CHECK(ra.rows[i].pixel_loss_enh_vs_sim >= 0.0);
        pixel_sum += ra.rows[i].pixel_loss_meas_vs_sim * ra.rows[i].count;
        count += ra.rows[i].count;
    }
    CHECK(count == ra.overall.count);
    CHECK(count == static_cast<int>(c.test.size()));
    CHECK(std::abs(pixel_sum - ra.overall.pixel_loss_meas_vs_sim * count) <= 1e-9);

    double direct = 0.0;
    for (const auto* p : c.test) direct += pixel_loss(p->meas, p->sim);
    CHECK(ra.overall.pixel_loss_meas_vs_sim == doctest::Approx(direct / c.test.size()).epsilon(1e-12));

    CHECK(MetricsReport::from_json(ra.to_json()).to_json() == ra.to_json());
    CHECK(ra.row("stand_up").activity == "stand_up");
    CHECK_THROWS_AS(static_cast<void>(ra.row("jump")), std::out_of_range);
}

TEST_CASE("enhancement evaluation is limited to test pairs") {
    const Corpus c(CorruptionProfile::los(), 12);
    auto net = network(3);
    CHECK_THROWS_AS(eval_enhancement(c.train, net, "m", "los"), std::invalid_argument);
    CHECK_THROWS_AS(eval_enhancement({}, net, "m", "los"), std::invalid_argument);
}

TEST_CASE("latent KLD is zero when both sides are identical") {
    const Corpus c(CorruptionProfile::identity(), 30);
    auto net = network(4);
    const auto table = eval_latent_kld(c.test, net, "fmnet", "identity");
    CHECK(table.overall == 0.0);
    CHECK_FALSE(table.surrogate);
    CHECK(table.rows.size() == 6u);
    CHECK(KldTable::from_json(table.to_json()).to_json() == table.to_json());

    auto nonr = network(5, ModelKind::nonr);
    CHECK(eval_latent_kld(c.test, nonr, "nonr", "identity").surrogate);
}

TEST_CASE("domain shift needs a through-wall corpus") {
    const Corpus los(CorruptionProfile::los(), 12);
    const Corpus ttw(CorruptionProfile::ttw(), 12);
    auto net = network(6);
    CHECK_THROWS_AS(eval_domain_shift(net, los.test, "los", "fmnet", "los"), std::invalid_argument);
    const auto r = eval_domain_shift(net, ttw.test, "ttw", "fmnet", "ttw");
    CHECK(r.kind == "domain_shift");
    REQUIRE(r.overall.ssim_enh_vs_meas.has_value());
    double want = 0.0;
    for (const auto* p : ttw.test) want += ssim(enhance(net, p->meas), p->meas);
    CHECK(*r.overall.ssim_enh_vs_meas == doctest::Approx(want / ttw.test.size()).epsilon(1e-12));
    const auto again = eval_domain_shift(net, ttw.test, "ttw", "fmnet", "ttw");
    CHECK(again.to_json() == r.to_json());
}

TEST_CASE("principal scores recover a planted two-dimensional structure") {
    const int rows = 40, cols = 5;
    const std::vector<double> u = {0.5, 0.5, 0.5, 0.5, 0.0};
    const std::vector<double> v = {0.5, -0.5, 0.5, -0.5, 0.0};
    std::vector<double> x(rows * cols), a(rows), b(rows);
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < rows; ++i) {
        a[i] = 3.0 * std::sin(0.7 * i) + 0.2 * i;
        b[i] = 0.5 * std::cos(1.3 * i);
        ma += a[i] / rows;
        mb += b[i] / rows;
    }
    // Centre both score vectors and make them orthogonal so they are the exact principal scores.
    double ab = 0.0, aa = 0.0;
    for (int i = 0; i < rows; ++i) {
        a[i] -= ma;
        b[i] -= mb;
        ab += a[i] * b[i];
        aa += a[i] * a[i];
    }
    for (int i = 0; i < rows; ++i) b[i] -= ab / aa * a[i];
    ma = mb = 0.0;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) x[i * cols + j] = a[i] * u[j] + b[i] * v[j] + (j == 4 ? 2.0 : 0.0);
    const auto s = principal_scores(x, rows, cols);
    REQUIRE(s.size() == static_cast<std::size_t>(rows));
    const double sign1 = (s[0][0] * (a[0] - ma) >= 0.0) ? 1.0 : -1.0;
    const double sign2 = (s[0][1] * (b[0] - mb) >= 0.0) ? 1.0 : -1.0;
    for (int i = 0; i < rows; ++i) {
        CHECK(sign1 * s[i][0] == doctest::Approx(a[i] - ma).epsilon(1e-8));
        CHECK(sign2 * s[i][1] == doctest::Approx(b[i] - mb).epsilon(1e-8));
    }
    CHECK_THROWS_AS(principal_scores(std::vector<double>(10, 0.0), 2, 5), std::invalid_argument);
}

TEST_CASE("latent export files and separation statistics") {
    const Corpus c(CorruptionProfile::los(), 18);
    auto net = network(7);
    const auto dir = scratch("latents");
    PairList all;
    for (const auto& r : c.records) all.push_back(&r);
    const auto ex = export_latents(all, net, dir / "latents.csv");
    CHECK(ex.ids.size() == 36u);

    std::ifstream full(dir / "latents.csv");
    std::string line;
    int rows = 0;
    std::getline(full, line);
    CHECK(line.rfind("id,activity,source,mu_0", 0) == 0);
    while (std::getline(full, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 2050);
        ++rows;
    }
    CHECK(rows == 36);

    std::ifstream pca(dir / "latents_pca.csv");
    std::getline(pca, line);
    CHECK(line == "id,activity,source,pc1,pc2");
    rows = 0;
    while (std::getline(pca, line)) ++rows;
    CHECK(rows == 36);

    CHECK(ex.cluster_separation() > 0.0);
    const auto [paired, unpaired] = ex.paired_vs_unpaired();
    CHECK(paired >= 0.0);
    CHECK(unpaired > 0.0);

    const auto enhanced = enhance_all(net, meas_of(c.test));
    write_comparison_grid(dir / "grid.png", c.test, enhanced);
    CHECK(std::filesystem::file_size(dir / "grid.png") > 0u);
    std::filesystem::remove_all(dir);
}
