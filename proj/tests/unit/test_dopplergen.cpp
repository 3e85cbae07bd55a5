#include "fmnet/digest.hpp"
#include "fmnet/dopplergen.hpp"
#include "fmnet/losses.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

using namespace fmnet;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fmnet_unit_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

ScattererTrack constant_track(double v, double seconds = 5.0, double rate = 500.0) {
    ScattererTrack t;
    t.velocity.assign(static_cast<std::size_t>(seconds * rate), v);
    return t;
}

int argmax_row(const Spectrogram& s, int col) {
    int best = 0;
    for (int r = 1; r < kDopplerBins; ++r)
        if (s(r, col) > s(best, col)) best = r;
    return best;
}

}  // namespace

TEST_CASE("activity and split names round trip") {
    std::set<std::string> abbrevs;
    for (auto a : kActivities) {
        CHECK(activity_from_string(to_string(a)) == a);
        abbrevs.insert(abbreviation(a));
    }
    CHECK(abbrevs == std::set<std::string>{"SD", "SU", "SW", "WS", "WF", "FW"});
    CHECK_THROWS_AS(activity_from_string("jump"), std::invalid_argument);
    CHECK(split_from_string("test") == Split::test);
}

TEST_CASE("track contract for every activity") {
    for (auto a : kActivities) {
        CAPTURE(to_string(a));
        const auto tracks = synth_tracks(a, 6.2, 31);
        CHECK(tracks.size() >= 3);
        CHECK(tracks.size() <= 5);
        CHECK(tracks.front().part == BodyPart::torso);
        for (const auto& t : tracks) {
            CHECK(t.velocity.size() == 3100);
            CHECK(t.amplitude > 0.0);
            CHECK(t.amplitude <= 1.0);
            for (double v : t.velocity) CHECK(std::abs(v) <= kMaxHumanSpeed);
        }
    }
}

TEST_CASE("sit down ends at rest and stand up mirrors it") {
    const auto sit = synth_tracks(Activity::sit_down, 5.0, 7);
    const auto stand = synth_tracks(Activity::stand_up, 5.0, 7);
    const auto& torso = sit.front().velocity;
    CHECK(torso.back() == 0.0);
    const auto last_moving = std::find_if(torso.rbegin(), torso.rend(), [](double v) { return v != 0.0; });
    CHECK(last_moving != torso.rend());
    CHECK(*std::min_element(torso.begin(), torso.end()) < 0.0);
    REQUIRE(stand.size() == sit.size());
    for (std::size_t i = 0; i < sit.size(); ++i)
        for (std::size_t k = 0; k < sit[i].velocity.size(); ++k) REQUIRE(stand[i].velocity[k] == -sit[i].velocity[k]);
}

TEST_CASE("walk to fall ends with a fast transient") {
    const auto tracks = synth_tracks(Activity::walk_to_fall, 6.0, 5);
    const auto& v = tracks.front().velocity;
    const double walk_peak = std::abs(*std::max_element(v.begin(), v.begin() + v.size() / 3,
                                                        [](double a, double b) { return std::abs(a) < std::abs(b); }));
    const double overall = std::abs(*std::max_element(v.begin(), v.end(),
                                                      [](double a, double b) { return std::abs(a) < std::abs(b); }));
    CHECK(overall > 1.5 * walk_peak);
}

TEST_CASE("track synthesis is deterministic and validates its inputs") {
    const auto a = synth_tracks(Activity::sit_to_walk, 5.0, 7);
    const auto b = synth_tracks(Activity::sit_to_walk, 5.0, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].velocity == b[i].velocity);
    CHECK_THROWS_AS(synth_tracks(Activity::sit_down, 3.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth_tracks(static_cast<Activity>(17), 5.0, 1), std::invalid_argument);
}

TEST_CASE("a constant 1 m/s scatterer lands on the bin nearest 38.7 Hz") {
    const RenderParams p;
    const double fd = 2.0 * 1.0 * 5.8e9 / 299792458.0;
    CHECK(fd == doctest::Approx(38.69).epsilon(1e-3));
    const int row = kDopplerBins / 2 + static_cast<int>(std::lround(fd / (500.0 / 96.0)));
    CHECK(row == 31);
    CHECK(p.row_for_doppler(fd) == row);
    const auto s = render_clean({constant_track(1.0)}, p);
    for (int col = 2; col < kTimeFrames - 2; ++col) CHECK(argmax_row(s, col) == row);
}

TEST_CASE("zero velocity concentrates energy on the zero-Doppler row") {
    const auto s = render_clean({constant_track(0.0), constant_track(0.0)});
    double near = 0.0, far = 0.0;
    for (int r = 0; r < kDopplerBins; ++r)
        for (int c = 0; c < kTimeFrames; ++c) (std::abs(r - kDopplerBins / 2) <= 2 ? near : far) += s(r, c);
    for (int c = 0; c < kTimeFrames; ++c) CHECK(argmax_row(s, c) == kDopplerBins / 2);
    CHECK(near > 5.0 * far);
}

TEST_CASE("rendered spectrograms are normalized 48x80 grids") {
    const auto s = render_clean(synth_tracks(Activity::floor_to_walk, 7.0, 3));
    CHECK(s.values.size() == 48u * 80u);
    CHECK_NOTHROW(s.validate_normalized());
    CHECK(s.doppler_extent_hz == doctest::Approx(24 * 500.0 / 96.0));
    CHECK(s.duration_s == doctest::Approx(7.0));
}

TEST_CASE("render errors") {
    CHECK_THROWS_AS(render_clean({}), std::invalid_argument);
    try {
        render_clean({constant_track(0.5), constant_track(3.5)});
        FAIL("no exception");
    } catch (const OutOfBandError& e) {
        CHECK(std::string(e.what()).find("track 1") != std::string::npos);
    }
}

TEST_CASE("identity corruption returns the input") {
    const auto clean = render_clean(synth_tracks(Activity::stand_up, 5.0, 9));
    const auto out = corrupt(clean, CorruptionProfile::identity(), 123);
    CHECK(out.values == clean.values);
}

TEST_CASE("los corruption is deterministic and visibly degrading") {
    const auto clean = render_clean(synth_tracks(Activity::walk_to_sit, 6.0, 4));
    const auto a = corrupt(clean, CorruptionProfile::los(), 55);
    const auto b = corrupt(clean, CorruptionProfile::los(), 55);
    CHECK(a.values == b.values);
    CHECK_NOTHROW(a.validate_normalized());
    CHECK(ssim(a, clean) < 0.9);
    CHECK(corrupt(clean, CorruptionProfile::los(), 56).values != a.values);
}

TEST_CASE("ttw preset is harsher than los") {
    const auto los = CorruptionProfile::los();
    const auto ttw = CorruptionProfile::ttw();
    CHECK(ttw.signal_atten < los.signal_atten);
    CHECK(ttw.ghost_count > los.ghost_count);
    CHECK(ttw.signal_atten == doctest::Approx(0.5 * los.signal_atten));
    CHECK(ttw.ghost_count == los.ghost_count + 2);
    CHECK(ttw.noise_sigma == doctest::Approx(1.5 * los.noise_sigma));
    CHECK(CorruptionProfile::preset("ttw").name == "ttw");
    CHECK(CorruptionProfile::from_json(ttw.to_json()).to_json() == ttw.to_json());
    CHECK_THROWS_AS(CorruptionProfile::preset("fog"), std::invalid_argument);

    auto bad = los;
    bad.signal_atten = 1.5;
    CHECK_THROWS(bad.validate());
    bad = los;
    bad.clutter_amp = -0.1;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("default corpus split is 243 train and 61 test") {
    DatasetConfig cfg;
    CHECK(cfg.total_pairs == 304);
    int train = 0, test = 0;
    std::set<std::string> ids;
    std::array<int, kNumActivities> per_class{};
    for (int i = 0; i < cfg.total_pairs; ++i) {
        const auto spec = sample_spec(cfg, i);
        (spec.split == Split::train ? train : test)++;
        ids.insert(spec.id);
        per_class[index_of(spec.activity)]++;
        CHECK(spec.subject >= 1);
        CHECK(spec.subject <= 3);
        CHECK(spec.duration_s >= 5.0);
        CHECK(spec.duration_s <= 10.0);
    }
    CHECK(train == 243);
    CHECK(test == 61);
    CHECK(ids.size() == 304u);
    CHECK(per_class == std::array<int, kNumActivities>{51, 51, 51, 51, 50, 50});
}

TEST_CASE("sample specs do not depend on each other") {
    DatasetConfig a, b;
    b.total_pairs = 304;
    CHECK(sample_spec(a, 200).seed == sample_spec(b, 200).seed);
    b.master_seed = 43;
    CHECK(sample_spec(a, 200).seed != sample_spec(b, 200).seed);
    CHECK(mix_seed(42, 0) != mix_seed(42, 1));
    CHECK(mix_seed(42, 0) == mix_seed(42, 0));
}

TEST_CASE("pairs share motion and regenerate from their seed") {
    DatasetConfig cfg;
    cfg.total_pairs = 12;
    for (int i = 0; i < cfg.total_pairs; ++i) {
        const auto pair = make_pair(cfg, i);
        const auto tracks = synth_tracks(pair.activity, pair.duration_s, track_seed(pair.seed));
        CHECK(render_clean(tracks, cfg.render).values == pair.sim.values);
        CHECK(corrupt(pair.sim, cfg.profile, corruption_seed(pair.seed)).values == pair.meas.values);
    }
}

TEST_CASE("dataset config validation and json") {
    DatasetConfig cfg;
    cfg.total_pairs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.total_pairs = 30;
    cfg.profile = CorruptionProfile::ttw();
    const auto back = DatasetConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(DatasetConfig::from_json({{"pairs_per_activity", 51}}).total_pairs == 306);
    CHECK(DatasetConfig::from_json({{"profile", "ttw"}}).profile.name == "ttw");
}

TEST_CASE("generated datasets are byte-identical and load back") {
    DatasetConfig cfg;
    cfg.total_pairs = 14;
    cfg.write_previews = true;
    const auto d1 = scratch("ds1");
    const auto d2 = scratch("ds2");
    const auto summary = generate_dataset(cfg, d1);
    generate_dataset(cfg, d2);
    CHECK(summary.total == 14);
    CHECK(summary.train + summary.test == 14);
    CHECK(dataset_digest(d1) == dataset_digest(d2));
    CHECK(sha256_file(d1 / "manifest.jsonl") == sha256_file(d2 / "manifest.jsonl"));

    std::ifstream manifest(d1 / "manifest.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(manifest, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"id", "activity", "subject", "split", "profile_name", "seed"}) CHECK(j.contains(key));
        ++lines;
    }
    CHECK(lines == 14);

    const auto ds = load_dataset(d1);
    REQUIRE(ds.records.size() == 14u);
    CHECK(ds.profile_name == "los");
    const auto fresh = make_pair(cfg, 5);
    CHECK(ds.records[5].sim.values == fresh.sim.values);
    CHECK(ds.records[5].meas.values == fresh.meas.values);
    CHECK(std::filesystem::file_size(d1 / "arrays" / (fresh.id + ".sim.f32")) == 48u * 80u * 4u);
    CHECK(std::filesystem::exists(d1 / "previews"));
    CHECK(ds.split(Split::test).size() == static_cast<std::size_t>(summary.test));

    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST_CASE("raw arrays are little-endian f32 with a length check") {
    const auto dir = scratch("f32");
    std::filesystem::create_directories(dir);
    const std::vector<float> v = {1.0f, -2.5f, 0.25f};
    write_f32(dir / "x.f32", v);
    std::ifstream in(dir / "x.f32", std::ios::binary);
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    CHECK(bytes[0] == 0x00);
    CHECK(bytes[3] == 0x3F);
    CHECK(read_f32(dir / "x.f32", 3) == v);
    CHECK_THROWS(read_f32(dir / "x.f32", 4));
    std::filesystem::remove_all(dir);
}

TEST_CASE("clean templates are separable by nearest centroid") {
    DatasetConfig cfg;
    cfg.total_pairs = 120;
    cfg.profile = CorruptionProfile::identity();
    std::vector<Spectrogram> sims;
    std::vector<int> labels;
    for (int i = 0; i < cfg.total_pairs; ++i) {
        const auto spec = sample_spec(cfg, i);
        sims.push_back(render_clean(synth_tracks(spec.activity, spec.duration_s, track_seed(spec.seed)), cfg.render));
        labels.push_back(index_of(spec.activity));
    }
    int correct = 0;
    for (std::size_t k = 0; k < sims.size(); ++k) {
        std::array<std::vector<double>, kNumActivities> centroid;
        std::array<int, kNumActivities> count{};
        for (auto& c : centroid) c.assign(kPixels, 0.0);
        for (std::size_t i = 0; i < sims.size(); ++i) {
            if (i == k) continue;
            for (int p = 0; p < kPixels; ++p) centroid[labels[i]][p] += sims[i].values[p];
            count[labels[i]]++;
        }
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < kNumActivities; ++c) {
            double d = 0.0;
            for (int p = 0; p < kPixels; ++p) {
                const double diff = centroid[c][p] / count[c] - sims[k].values[p];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        correct += best == labels[k];
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(sims.size());
    MESSAGE("leave-one-out nearest-centroid accuracy " << acc);
    CHECK(acc >= 0.8);
}
