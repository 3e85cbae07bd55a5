#pragma once

#include "fmnet/spectrogram.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmnet {

enum class Activity { sit_down, stand_up, sit_to_walk, walk_to_sit, walk_to_fall, floor_to_walk };
inline constexpr int kNumActivities = 6;
inline constexpr std::array<Activity, kNumActivities> kActivities = {
    Activity::sit_down,    Activity::stand_up,     Activity::sit_to_walk,
    Activity::walk_to_sit, Activity::walk_to_fall, Activity::floor_to_walk};

std::string to_string(Activity a);
/// Short class label: SD, SU, SW, WS, WF, FW.
std::string abbreviation(Activity a);
Activity activity_from_string(const std::string& s);
inline int index_of(Activity a) { return static_cast<int>(a); }

enum class BodyPart { torso, left_limb, right_limb };
std::string to_string(BodyPart p);

struct ScattererTrack {
    double amplitude = 1.0;
    std::vector<double> velocity;  // radial velocity in m/s, one value per sample
    BodyPart part = BodyPart::torso;
};

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kMaxHumanSpeed = 4.0;

struct RenderParams {
    double sample_rate_hz = 500.0;
    double carrier_hz = 5.8e9;
    int window = 64;
    int fft_size = 96;
    double dynamic_range_db = 40.0;

    [[nodiscard]] double bin_spacing_hz() const { return sample_rate_hz / fft_size; }
    /// Largest representable |Doppler| on the cropped 48-bin grid.
    [[nodiscard]] double doppler_extent_hz() const { return (kDopplerBins / 2) * bin_spacing_hz(); }
    [[nodiscard]] double doppler_hz(double velocity) const {
        return 2.0 * velocity * carrier_hz / kSpeedOfLight;
    }
    /// Grid row whose centre frequency is nearest to f_hz.
    [[nodiscard]] int row_for_doppler(double f_hz) const;
};

class OutOfBandError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Scatterer velocity histories for one repetition of `activity`. All
/// randomness comes from `seed`; sit_down and stand_up draw identical
/// parameters and differ only in sign.
std::vector<ScattererTrack> synth_tracks(Activity activity, double duration_s, std::uint64_t seed,
                                         double sample_rate_hz = 500.0);

/// Hann-windowed STFT of the summed scatterer returns, 40 dB dynamic range,
/// cropped to 48 Doppler bins, resampled to 80 frames, min-max normalized.
Spectrogram render_clean(const std::vector<ScattererTrack>& tracks, const RenderParams& params = {});

struct CorruptionProfile {
    std::string name = "identity";
    double clutter_amp = 0.0;
    double clutter_width_bins = 1.0;
    int ghost_count = 0;
    double ghost_atten = 0.5;
    std::vector<int> ghost_doppler_shift_bins;
    std::vector<int> ghost_time_shift_frames;
    double noise_sigma = 0.0;
    double noise_corr_bins = 1.0;
    double gain_jitter = 0.0;
    double signal_atten = 1.0;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static CorruptionProfile from_json(const nlohmann::json& j);

    static CorruptionProfile identity();
    static CorruptionProfile los();
    static CorruptionProfile ttw();
    static CorruptionProfile preset(const std::string& name);
};

/// Blur width (in bins) applied to every multipath ghost.
inline constexpr double kGhostBlurBins = 1.0;

Spectrogram corrupt(const Spectrogram& clean, const CorruptionProfile& profile, std::uint64_t seed);

/// Counter-based seed derivation (SplitMix64 finaliser over master + golden-ratio stride).
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t counter);

enum class Split { train, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct PairRecord {
    std::string id;
    Activity activity = Activity::sit_down;
    int subject = 1;
    Split split = Split::train;
    std::string profile_name;
    std::uint64_t seed = 0;
    double duration_s = 0.0;
    Spectrogram sim;
    Spectrogram meas;
};

struct DatasetConfig {
    /// Total pair count; allocated to activities round-robin, so the first
    /// total % 6 activities receive one extra pair.
    int total_pairs = 304;
    double train_fraction = 0.8;
    std::uint64_t master_seed = 42;
    double min_duration_s = 5.0;
    double max_duration_s = 10.0;
    CorruptionProfile profile = CorruptionProfile::los();
    RenderParams render;
    bool write_previews = false;

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static DatasetConfig from_json(const nlohmann::json& j);
};

/// Seeds and labels of sample `index`, reproducible without generating any other sample.
struct SampleSpec {
    int index = 0;
    std::string id;
    Activity activity = Activity::sit_down;
    int subject = 1;
    Split split = Split::train;
    std::uint64_t seed = 0;
    double duration_s = 0.0;
};
SampleSpec sample_spec(const DatasetConfig& config, int index);
std::uint64_t track_seed(std::uint64_t sample_seed);
std::uint64_t corruption_seed(std::uint64_t sample_seed);

/// Builds one pair in memory.
PairRecord make_pair(const DatasetConfig& config, int index);

struct DatasetSummary {
    int total = 0;
    std::map<std::string, std::map<std::string, int>> counts;  // activity -> split -> n
    int train = 0;
    int test = 0;
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Writes the manifest and the per-sample arrays, with optional PNG previews.
DatasetSummary generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);

struct Dataset {
    std::filesystem::path root;
    std::string profile_name;
    DatasetConfig config;
    std::vector<PairRecord> records;

    [[nodiscard]] std::vector<const PairRecord*> split(Split s) const;
};

Dataset load_dataset(const std::filesystem::path& dir);
/// SHA-256 over the manifest and every array file it references.
std::string dataset_digest(const std::filesystem::path& dir);

void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count);

}  // namespace fmnet
