#include "fmnet/dopplergen.hpp"

#include "fmnet/digest.hpp"
#include "fmnet/image_io.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>

namespace fmnet {

namespace {

constexpr double kPi = std::numbers::pi;

struct ActivityName {
    Activity activity;
    const char* name;
    const char* abbrev;
};

constexpr std::array<ActivityName, kNumActivities> kActivityNames = {{
    {Activity::sit_down, "sit_down", "SD"},
    {Activity::stand_up, "stand_up", "SU"},
    {Activity::sit_to_walk, "sit_to_walk", "SW"},
    {Activity::walk_to_sit, "walk_to_sit", "WS"},
    {Activity::walk_to_fall, "walk_to_fall", "WF"},
    {Activity::floor_to_walk, "floor_to_walk", "FW"},
}};

}  // namespace

std::string to_string(Activity a) { return kActivityNames.at(index_of(a)).name; }
std::string abbreviation(Activity a) { return kActivityNames.at(index_of(a)).abbrev; }

Activity activity_from_string(const std::string& s) {
    for (const auto& e : kActivityNames)
        if (s == e.name || s == e.abbrev) return e.activity;
    throw std::invalid_argument("unknown activity '" + s + "'");
}

std::string to_string(BodyPart p) {
    switch (p) {
        case BodyPart::torso: return "torso";
        case BodyPart::left_limb: return "left_limb";
        case BodyPart::right_limb: return "right_limb";
    }
    return "unknown";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

int RenderParams::row_for_doppler(double f_hz) const {
    return static_cast<int>(std::lround(f_hz / bin_spacing_hz())) + kDopplerBins / 2;
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t counter) {
    std::uint64_t z = master + (counter + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// ------------------------------------------------------------ templates

namespace {

double half_sine(double t, double start, double dur) {
    if (t < start || t > start + dur) return 0.0;
    return std::sin(kPi * (t - start) / dur);
}

double smoothstep(double t, double a, double b) {
    if (t <= a) return 0.0;
    if (t >= b) return 1.0;
    const double u = (t - a) / (b - a);
    return u * u * (3.0 - 2.0 * u);
}

/// Velocity contributions shared by all templates.
struct Body {
    int samples;
    double fs;
    std::vector<double> torso, left, right;
    std::vector<std::vector<double>> extras;

    Body(int n, double fs_, int extra)
        : samples(n), fs(fs_), torso(n, 0.0), left(n, 0.0), right(n, 0.0),
          extras(extra, std::vector<double>(n, 0.0)) {}

    [[nodiscard]] double time(int i) const { return i / fs; }

    /// Posture change: torso half-sine with delayed, rescaled limb lobes.
    void burst(double sign, double peak, double start, double dur, double leg_scale,
               double arm_scale, double delay) {
        for (int i = 0; i < samples; ++i) {
            const double t = time(i);
            torso[i] += sign * peak * half_sine(t, start, dur);
            left[i] += sign * peak * leg_scale * half_sine(t, start + delay, 0.85 * dur);
            right[i] += sign * peak * arm_scale * half_sine(t, start + 0.5 * delay, 0.7 * dur);
            for (std::size_t k = 0; k < extras.size(); ++k)
                extras[k][i] += sign * peak * (k == 0 ? 0.8 : 1.1) * half_sine(t, start + 0.25 * delay, 0.9 * dur);
        }
    }

    /// Gait: torso at `speed`, limbs oscillating about it, weighted by `weight(t)`.
    template <typename Weight>
    void walk(double speed, double swing, double gait_hz, double phase, Weight weight) {
        for (int i = 0; i < samples; ++i) {
            const double t = time(i);
            const double w = weight(t);
            if (w == 0.0) continue;
            const double osc = swing * std::sin(2.0 * kPi * gait_hz * t + phase);
            torso[i] += w * speed;
            left[i] += w * (speed + osc);
            right[i] += w * (speed - osc);
            for (std::size_t k = 0; k < extras.size(); ++k)
                extras[k][i] += w * (speed + (k == 0 ? -0.7 : 0.7) * osc);
        }
    }
};

}  // namespace

std::vector<ScattererTrack> synth_tracks(Activity activity, double duration_s, std::uint64_t seed,
                                         double sample_rate_hz) {
    if (!(duration_s >= 4.0 && duration_s <= 10.0))
        throw std::invalid_argument("synth_tracks: duration must lie in [4,10] s");
    if (index_of(activity) < 0 || index_of(activity) >= kNumActivities)
        throw std::invalid_argument("synth_tracks: unknown activity");
    const int n = static_cast<int>(std::llround(duration_s * sample_rate_hz));
    const double T = duration_s;

    std::mt19937_64 rng(seed);
    auto U = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    // Draw order is fixed for every activity.
    const int extra = static_cast<int>(rng() % 3);
    const double limb_amp = U(0.35, 0.55);
    const double arm_amp = U(0.15, 0.3);
    const double gait_hz = U(1.5, 2.5);
    const double gait_phase = U(0.0, 2.0 * kPi);
    const double swing = U(0.6, 1.2);
    const double walk_speed = U(0.8, 1.3);
    const double leg_scale = U(0.5, 0.8);
    const double arm_scale = U(1.1, 1.5);
    const double delay = U(0.05, 0.2);
    const double start_frac = U(0.0, 1.0);
    const double dur = U(1.2, 2.0);
    const double peak = U(0.8, 1.3);

    Body body(n, sample_rate_hz, extra);
    switch (activity) {
        case Activity::sit_down:
        case Activity::stand_up: {
            const double sign = activity == Activity::sit_down ? -1.0 : 1.0;
            const double start = (0.2 + 0.25 * start_frac) * T;
            body.burst(sign, peak, start, dur, leg_scale, arm_scale, delay);
            break;
        }
        case Activity::sit_to_walk: {
            const double start = (0.1 + 0.15 * start_frac) * T;
            const double burst_dur = 0.8 * dur;
            body.burst(1.0, peak, start, burst_dur, leg_scale, arm_scale, delay);
            const double walk_from = start + burst_dur + delay;
            body.walk(walk_speed, swing, gait_hz, gait_phase,
                      [&](double t) { return smoothstep(t, walk_from, walk_from + 0.6); });
            break;
        }
        case Activity::walk_to_sit: {
            const double walk_until = (0.4 + 0.15 * start_frac) * T;
            body.walk(walk_speed, swing, gait_hz, gait_phase,
                      [&](double t) { return 1.0 - smoothstep(t, walk_until - 0.6, walk_until); });
            body.burst(-1.0, peak, walk_until + delay, dur, leg_scale, arm_scale, delay);
            break;
        }
        case Activity::walk_to_fall: {
            const double walk_until = (0.35 + 0.2 * start_frac) * T;
            const double fall_peak = U(2.0, 2.7);
            const double fall_dur = U(0.35, 0.6);
            body.walk(walk_speed, swing, gait_hz, gait_phase,
                      [&](double t) { return 1.0 - smoothstep(t, walk_until - 0.3, walk_until); });
            body.burst(-1.0, fall_peak, walk_until, fall_dur, leg_scale, std::min(arm_scale, 1.1), 0.5 * delay);
            break;
        }
        case Activity::floor_to_walk: {
            const double start = (0.05 + 0.1 * start_frac) * T;
            const double first_peak = U(0.4, 0.7);
            const double first_dur = U(0.8, 1.3);
            const double gap = U(0.2, 0.5);
            const double second_dur = 0.75 * dur;
            body.burst(1.0, first_peak, start, first_dur, leg_scale, arm_scale, delay);
            const double second_start = start + first_dur + gap;
            body.burst(1.0, peak, second_start, second_dur, leg_scale, arm_scale, delay);
            const double walk_from = second_start + second_dur + delay;
            body.walk(walk_speed, swing, gait_hz, gait_phase,
                      [&](double t) { return smoothstep(t, walk_from, walk_from + 0.6); });
            break;
        }
    }

    std::vector<ScattererTrack> tracks;
    tracks.push_back({1.0, std::move(body.torso), BodyPart::torso});
    tracks.push_back({limb_amp, std::move(body.left), BodyPart::left_limb});
    tracks.push_back({limb_amp, std::move(body.right), BodyPart::right_limb});
    for (std::size_t k = 0; k < body.extras.size(); ++k)
        tracks.push_back({arm_amp, std::move(body.extras[k]), k == 0 ? BodyPart::left_limb : BodyPart::right_limb});
    for (const auto& tr : tracks)
        for (double v : tr.velocity)
            if (std::abs(v) > kMaxHumanSpeed)
                throw std::logic_error("synth_tracks: template exceeded the human speed bound");
    return tracks;
}

// ------------------------------------------------------------- rendering

namespace {

std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

/// Rescales to [0,1] so the minimum maps to exactly 0 and the maximum to exactly 1.
void min_max_normalize(std::vector<double>& v) {
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) throw std::domain_error("cannot normalize a constant spectrogram");
    for (auto& x : v) x = (x - lo) / (hi - lo);
}

Spectrogram to_spectrogram(const std::vector<double>& v, double extent_hz, double duration_s) {
    Spectrogram s;
    for (std::size_t i = 0; i < v.size(); ++i) s.values[i] = static_cast<float>(v[i]);
    s.doppler_extent_hz = extent_hz;
    s.duration_s = duration_s;
    return s;
}

}  // namespace

Spectrogram render_clean(const std::vector<ScattererTrack>& tracks, const RenderParams& params) {
    if (tracks.empty()) throw std::invalid_argument("render_clean: no scatterer tracks");
    const std::size_t n = tracks.front().velocity.size();
    if (n < static_cast<std::size_t>(params.window))
        throw std::invalid_argument("render_clean: track shorter than the STFT window");
    const double extent = params.doppler_extent_hz();
    for (std::size_t i = 0; i < tracks.size(); ++i) {
        if (tracks[i].velocity.size() != n)
            throw std::invalid_argument("render_clean: tracks differ in length");
        for (double v : tracks[i].velocity)
            if (std::abs(params.doppler_hz(v)) > extent)
                throw OutOfBandError("render_clean: track " + std::to_string(i) + " (" +
                                     to_string(tracks[i].part) + ") reaches " +
                                     std::to_string(params.doppler_hz(v)) +
                                     " Hz, beyond the +/-" + std::to_string(extent) + " Hz grid");
    }

    std::vector<std::complex<double>> signal(n, {0.0, 0.0});
    for (const auto& tr : tracks) {
        double phase = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            signal[k] += tr.amplitude * std::polar(1.0, phase);
            phase += 2.0 * kPi * params.doppler_hz(tr.velocity[k]) / params.sample_rate_hz;
        }
    }

    const int win = params.window, nfft = params.fft_size;
    const int hop = std::max(1, static_cast<int>((n - win) / (kTimeFrames - 1)));
    const int frames = static_cast<int>((n - win) / hop) + 1;

    std::vector<double> window(win);
    for (int i = 0; i < win; ++i) window[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / (win - 1)));

    auto* in = fftw_alloc_complex(nfft);
    auto* out = fftw_alloc_complex(nfft);
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_1d(nfft, in, out, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    // db(row, frame)
    std::vector<double> db(static_cast<std::size_t>(kDopplerBins) * frames);
    for (int f = 0; f < frames; ++f) {
        for (int i = 0; i < nfft; ++i) {
            if (i < win) {
                const auto v = signal[static_cast<std::size_t>(f) * hop + i] * window[i];
                in[i][0] = v.real();
                in[i][1] = v.imag();
            } else {
                in[i][0] = in[i][1] = 0.0;
            }
        }
        fftw_execute(plan);
        for (int r = 0; r < kDopplerBins; ++r) {
            const int k = ((r - kDopplerBins / 2) % nfft + nfft) % nfft;
            const double mag = std::hypot(out[k][0], out[k][1]);
            db[static_cast<std::size_t>(r) * frames + f] = 20.0 * std::log10(mag + 1e-12);
        }
    }
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);

    const double top = *std::max_element(db.begin(), db.end());
    const double floor = top - params.dynamic_range_db;
    for (auto& v : db) v = std::max(v, floor);

    std::vector<double> grid(kPixels);
    for (int c = 0; c < kTimeFrames; ++c) {
        const double pos = frames == 1 ? 0.0 : static_cast<double>(c) * (frames - 1) / (kTimeFrames - 1);
        const int f0 = std::min(static_cast<int>(pos), frames - 1);
        const int f1 = std::min(f0 + 1, frames - 1);
        const double a = pos - f0;
        for (int r = 0; r < kDopplerBins; ++r) {
            const double v0 = db[static_cast<std::size_t>(r) * frames + f0];
            const double v1 = db[static_cast<std::size_t>(r) * frames + f1];
            grid[static_cast<std::size_t>(r) * kTimeFrames + c] = (1.0 - a) * v0 + a * v1;
        }
    }
    min_max_normalize(grid);
    return to_spectrogram(grid, extent, static_cast<double>(n) / params.sample_rate_hz);
}

// ------------------------------------------------------------ corruption

void CorruptionProfile::validate() const {
    auto bad = [&](const std::string& what) {
        throw std::invalid_argument("corruption profile '" + name + "': " + what);
    };
    if (clutter_amp < 0 || noise_sigma < 0 || gain_jitter < 0) bad("amplitudes must be non-negative");
    if (!(clutter_width_bins > 0) || !(noise_corr_bins > 0)) bad("widths must be positive");
    if (ghost_count < 0) bad("ghost_count must be >= 0");
    if (!(ghost_atten > 0 && ghost_atten <= 1)) bad("ghost_atten must lie in (0,1]");
    if (!(signal_atten > 0 && signal_atten <= 1)) bad("signal_atten must lie in (0,1]");
    if (ghost_doppler_shift_bins.size() != static_cast<std::size_t>(ghost_count) ||
        ghost_time_shift_frames.size() != static_cast<std::size_t>(ghost_count))
        bad("one Doppler and one time offset required per ghost");
}

nlohmann::json CorruptionProfile::to_json() const {
    return {{"name", name},
            {"clutter_amp", clutter_amp},
            {"clutter_width_bins", clutter_width_bins},
            {"ghost_count", ghost_count},
            {"ghost_atten", ghost_atten},
            {"ghost_doppler_shift_bins", ghost_doppler_shift_bins},
            {"ghost_time_shift_frames", ghost_time_shift_frames},
            {"noise_sigma", noise_sigma},
            {"noise_corr_bins", noise_corr_bins},
            {"gain_jitter", gain_jitter},
            {"signal_atten", signal_atten}};
}

CorruptionProfile CorruptionProfile::from_json(const nlohmann::json& j) {
    CorruptionProfile p = j.contains("name") ? preset(j.at("name").get<std::string>()) : identity();
    p.clutter_amp = j.value("clutter_amp", p.clutter_amp);
    p.clutter_width_bins = j.value("clutter_width_bins", p.clutter_width_bins);
    p.ghost_count = j.value("ghost_count", p.ghost_count);
    p.ghost_atten = j.value("ghost_atten", p.ghost_atten);
    p.ghost_doppler_shift_bins = j.value("ghost_doppler_shift_bins", p.ghost_doppler_shift_bins);
    p.ghost_time_shift_frames = j.value("ghost_time_shift_frames", p.ghost_time_shift_frames);
    p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
    p.noise_corr_bins = j.value("noise_corr_bins", p.noise_corr_bins);
    p.gain_jitter = j.value("gain_jitter", p.gain_jitter);
    p.signal_atten = j.value("signal_atten", p.signal_atten);
    p.validate();
    return p;
}

CorruptionProfile CorruptionProfile::identity() { return {}; }

CorruptionProfile CorruptionProfile::los() {
    CorruptionProfile p;
    p.name = "los";
    p.clutter_amp = 0.55;
    p.clutter_width_bins = 1.5;
    p.ghost_count = 2;
    p.ghost_atten = 0.5;
    p.ghost_doppler_shift_bins = {4, -6};
    p.ghost_time_shift_frames = {3, 6};
    p.noise_sigma = 0.12;
    p.noise_corr_bins = 1.2;
    p.gain_jitter = 0.12;
    p.signal_atten = 0.8;
    return p;
}

CorruptionProfile CorruptionProfile::ttw() {
    CorruptionProfile p = los();
    p.name = "ttw";
    p.signal_atten *= 0.5;
    p.ghost_count += 2;
    p.ghost_doppler_shift_bins.insert(p.ghost_doppler_shift_bins.end(), {-3, 8});
    p.ghost_time_shift_frames.insert(p.ghost_time_shift_frames.end(), {9, 4});
    p.noise_sigma *= 1.5;
    return p;
}

CorruptionProfile CorruptionProfile::preset(const std::string& name) {
    if (name == "los") return los();
    if (name == "ttw") return ttw();
    if (name == "identity") return identity();
    throw std::invalid_argument("unknown corruption profile '" + name + "'");
}

namespace {

std::vector<double> gaussian_kernel(double sigma, bool unit_energy) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += unit_energy ? k[i + radius] * k[i + radius] : k[i + radius];
    }
    if (unit_energy) norm = std::sqrt(norm);
    for (auto& v : k) v /= norm;
    return k;
}

/// Separable 'valid' convolution of a rows x cols field.
std::vector<double> convolve_valid(const std::vector<double>& field, int rows, int cols,
                                   const std::vector<double>& k) {
    const int taps = static_cast<int>(k.size());
    const int out_r = rows - taps + 1, out_c = cols - taps + 1;
    std::vector<double> tmp(static_cast<std::size_t>(rows) * out_c, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < out_c; ++c) {
            double acc = 0.0;
            for (int t = 0; t < taps; ++t) acc += k[t] * field[static_cast<std::size_t>(r) * cols + c + t];
            tmp[static_cast<std::size_t>(r) * out_c + c] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(out_r) * out_c, 0.0);
    for (int r = 0; r < out_r; ++r)
        for (int c = 0; c < out_c; ++c) {
            double acc = 0.0;
            for (int t = 0; t < taps; ++t) acc += k[t] * tmp[static_cast<std::size_t>(r + t) * out_c + c];
            out[static_cast<std::size_t>(r) * out_c + c] = acc;
        }
    return out;
}

/// Zero-padded 'same' Gaussian blur of a 48x80 grid.
std::vector<double> blur_same(const std::vector<double>& grid, double sigma) {
    const auto k = gaussian_kernel(sigma, false);
    const int radius = static_cast<int>(k.size()) / 2;
    const int rows = kDopplerBins + 2 * radius, cols = kTimeFrames + 2 * radius;
    std::vector<double> padded(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int r = 0; r < kDopplerBins; ++r)
        for (int c = 0; c < kTimeFrames; ++c)
            padded[static_cast<std::size_t>(r + radius) * cols + c + radius] =
                grid[static_cast<std::size_t>(r) * kTimeFrames + c];
    return convolve_valid(padded, rows, cols, k);
}

}  // namespace

Spectrogram corrupt(const Spectrogram& clean, const CorruptionProfile& profile, std::uint64_t seed) {
    clean.validate();
    profile.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<double> out(kPixels);
    for (int i = 0; i < kPixels; ++i) out[i] = profile.signal_atten * clean.values[i];

    if (profile.ghost_count > 0) {
        std::vector<double> base(clean.values.begin(), clean.values.end());
        double gain = 1.0;
        for (int g = 0; g < profile.ghost_count; ++g) {
            gain *= profile.ghost_atten;
            const int dr = profile.ghost_doppler_shift_bins[g];
            const int dc = profile.ghost_time_shift_frames[g];
            std::vector<double> shifted(kPixels, 0.0);
            for (int r = 0; r < kDopplerBins; ++r)
                for (int c = 0; c < kTimeFrames; ++c) {
                    const int sr = r - dr, sc = c - dc;
                    if (sr >= 0 && sr < kDopplerBins && sc >= 0 && sc < kTimeFrames)
                        shifted[r * kTimeFrames + c] = base[sr * kTimeFrames + sc];
                }
            const auto blurred = blur_same(shifted, kGhostBlurBins);
            for (int i = 0; i < kPixels; ++i) out[i] += gain * blurred[i];
        }
    }

    if (profile.clutter_amp > 0) {
        const double w = profile.clutter_width_bins;
        for (int r = 0; r < kDopplerBins; ++r) {
            const double d = r - kDopplerBins / 2;
            const double ridge = profile.clutter_amp * std::exp(-0.5 * d * d / (w * w));
            for (int c = 0; c < kTimeFrames; ++c) out[r * kTimeFrames + c] += ridge;
        }
    }

    const auto kernel = gaussian_kernel(profile.noise_corr_bins, true);
    const int radius = static_cast<int>(kernel.size()) / 2;
    const int nr = kDopplerBins + 2 * radius, nc = kTimeFrames + 2 * radius;
    std::vector<double> white(static_cast<std::size_t>(nr) * nc);
    for (auto& v : white) v = normal(rng);
    if (profile.noise_sigma > 0) {
        const auto noise = convolve_valid(white, nr, nc, kernel);
        for (int i = 0; i < kPixels; ++i) out[i] += profile.noise_sigma * noise[i];
    }

    for (int c = 0; c < kTimeFrames; ++c) {
        const double jitter = normal(rng);
        if (profile.gain_jitter == 0.0) continue;
        const double factor = std::max(0.0, 1.0 + profile.gain_jitter * jitter);
        for (int r = 0; r < kDopplerBins; ++r) out[r * kTimeFrames + c] *= factor;
    }

    for (auto& v : out) v = std::max(v, 0.0);
    min_max_normalize(out);
    return to_spectrogram(out, clean.doppler_extent_hz, clean.duration_s);
}

// --------------------------------------------------------------- dataset

void DatasetConfig::validate() const {
    if (total_pairs <= 0) throw std::invalid_argument("dataset config: zero requested samples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("dataset config: train_fraction must lie in (0,1)");
    if (!(min_duration_s >= 4.0 && max_duration_s <= 10.0 && min_duration_s <= max_duration_s))
        throw std::invalid_argument("dataset config: durations must lie in [4,10] s");
    profile.validate();
}

nlohmann::json DatasetConfig::to_json() const {
    return {{"total_pairs", total_pairs},
            {"train_fraction", train_fraction},
            {"master_seed", master_seed},
            {"min_duration_s", min_duration_s},
            {"max_duration_s", max_duration_s},
            {"profile", profile.to_json()},
            {"render",
             {{"sample_rate_hz", render.sample_rate_hz},
              {"carrier_hz", render.carrier_hz},
              {"window", render.window},
              {"fft_size", render.fft_size},
              {"dynamic_range_db", render.dynamic_range_db}}},
            {"write_previews", write_previews}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.total_pairs = j.value("total_pairs", c.total_pairs);
    if (j.contains("pairs_per_activity"))
        c.total_pairs = j.at("pairs_per_activity").get<int>() * kNumActivities;
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.min_duration_s = j.value("min_duration_s", c.min_duration_s);
    c.max_duration_s = j.value("max_duration_s", c.max_duration_s);
    if (j.contains("profile")) {
        const auto& p = j.at("profile");
        c.profile = p.is_string() ? CorruptionProfile::preset(p.get<std::string>())
                                  : CorruptionProfile::from_json(p);
    }
    if (j.contains("render")) {
        const auto& r = j.at("render");
        c.render.sample_rate_hz = r.value("sample_rate_hz", c.render.sample_rate_hz);
        c.render.carrier_hz = r.value("carrier_hz", c.render.carrier_hz);
        c.render.window = r.value("window", c.render.window);
        c.render.fft_size = r.value("fft_size", c.render.fft_size);
        c.render.dynamic_range_db = r.value("dynamic_range_db", c.render.dynamic_range_db);
    }
    c.write_previews = j.value("write_previews", c.write_previews);
    c.validate();
    return c;
}

std::uint64_t track_seed(std::uint64_t sample_seed) { return mix_seed(sample_seed, 1); }
std::uint64_t corruption_seed(std::uint64_t sample_seed) { return mix_seed(sample_seed, 2); }

SampleSpec sample_spec(const DatasetConfig& config, int index) {
    if (index < 0 || index >= config.total_pairs) throw std::out_of_range("sample index out of range");
    SampleSpec s;
    s.index = index;
    s.activity = kActivities[index % kNumActivities];
    s.subject = (index / kNumActivities) % 3 + 1;
    // Test slots are spread evenly over the interleaved activity order.
    const long total = config.total_pairs;
    const long n_train = std::lround(config.train_fraction * static_cast<double>(total));
    const long n_test = total - n_train;
    s.split = ((index + 1) * n_test) / total > (index * n_test) / total ? Split::test : Split::train;
    s.seed = mix_seed(config.master_seed, static_cast<std::uint64_t>(index));
    std::mt19937_64 rng(mix_seed(s.seed, 3));
    const double d = std::uniform_real_distribution<double>(config.min_duration_s, config.max_duration_s)(rng);
    s.duration_s = std::round(d * config.render.sample_rate_hz) / config.render.sample_rate_hz;
    std::ostringstream id;
    id << 'p' << std::setw(4) << std::setfill('0') << index << '_' << to_string(s.activity);
    s.id = id.str();
    return s;
}

PairRecord make_pair(const DatasetConfig& config, int index) {
    const SampleSpec spec = sample_spec(config, index);
    PairRecord rec;
    rec.id = spec.id;
    rec.activity = spec.activity;
    rec.subject = spec.subject;
    rec.split = spec.split;
    rec.profile_name = config.profile.name;
    rec.seed = spec.seed;
    rec.duration_s = spec.duration_s;
    const auto tracks = synth_tracks(spec.activity, spec.duration_s, track_seed(spec.seed),
                                     config.render.sample_rate_hz);
    rec.sim = render_clean(tracks, config.render);
    rec.meas = corrupt(rec.sim, config.profile, corruption_seed(spec.seed));
    return rec;
}

nlohmann::json DatasetSummary::to_json() const {
    return {{"total", total}, {"train", train}, {"test", test}, {"counts", counts}};
}

void write_f32(const std::filesystem::path& path, std::span<const float> values) {
    static_assert(std::endian::native == std::endian::little, ".f32 files are little-endian");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("missing array file: " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_count * sizeof(float))
        throw std::runtime_error(path.string() + ": expected " + std::to_string(expected_count) +
                                 " float32 values, found " + std::to_string(bytes) + " bytes");
    in.seekg(0);
    std::vector<float> v(expected_count);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    return v;
}

DatasetSummary generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir / "arrays", ec);
    if (ec) throw std::runtime_error("cannot create dataset directory " + out_dir.string() + ": " + ec.message());
    if (config.write_previews) fs::create_directories(out_dir / "previews", ec);

    std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw std::runtime_error("dataset directory not writable: " + out_dir.string());

    DatasetSummary summary;
    for (int i = 0; i < config.total_pairs; ++i) {
        const PairRecord rec = make_pair(config, i);
        const std::string sim_rel = "arrays/" + rec.id + ".sim.f32";
        const std::string meas_rel = "arrays/" + rec.id + ".meas.f32";
        write_f32(out_dir / sim_rel, rec.sim.values);
        write_f32(out_dir / meas_rel, rec.meas.values);
        nlohmann::json line = {{"id", rec.id},
                               {"activity", to_string(rec.activity)},
                               {"subject", rec.subject},
                               {"split", to_string(rec.split)},
                               {"profile_name", rec.profile_name},
                               {"seed", rec.seed},
                               {"duration_s", rec.duration_s},
                               {"sim_path", sim_rel},
                               {"meas_path", meas_rel}};
        if (config.write_previews) {
            const std::string png_rel = "previews/" + rec.id + ".png";
            write_spectrogram_grid(out_dir / png_rel, {{&rec.meas, &rec.sim}});
            line["preview_path"] = png_rel;
        }
        manifest << line.dump() << '\n';
        ++summary.total;
        ++summary.counts[to_string(rec.activity)][to_string(rec.split)];
        (rec.split == Split::train ? summary.train : summary.test)++;
    }
    manifest.close();
    std::ofstream meta(out_dir / "dataset.json", std::ios::trunc);
    meta << nlohmann::json{{"config", config.to_json()}, {"summary", summary.to_json()}}.dump(2) << '\n';
    return summary;
}

std::vector<const PairRecord*> Dataset::split(Split s) const {
    std::vector<const PairRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.root = dir;
    std::ifstream meta(dir / "dataset.json");
    if (!meta) throw std::runtime_error("missing artifact: " + (dir / "dataset.json").string());
    const auto meta_json = nlohmann::json::parse(meta);
    ds.config = DatasetConfig::from_json(meta_json.at("config"));
    ds.profile_name = ds.config.profile.name;

    std::ifstream manifest(dir / "manifest.jsonl");
    if (!manifest) throw std::runtime_error("missing artifact: " + (dir / "manifest.jsonl").string());
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        PairRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.activity = activity_from_string(j.at("activity").get<std::string>());
        rec.subject = j.at("subject").get<int>();
        rec.split = split_from_string(j.at("split").get<std::string>());
        rec.profile_name = j.at("profile_name").get<std::string>();
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.duration_s = j.at("duration_s").get<double>();
        rec.sim.values = read_f32(dir / j.at("sim_path").get<std::string>(), kPixels);
        rec.meas.values = read_f32(dir / j.at("meas_path").get<std::string>(), kPixels);
        for (auto* s : {&rec.sim, &rec.meas}) {
            s->doppler_extent_hz = ds.config.render.doppler_extent_hz();
            s->duration_s = rec.duration_s;
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

std::string dataset_digest(const std::filesystem::path& dir) {
    Sha256 h;
    std::ifstream manifest(dir / "manifest.jsonl");
    if (!manifest) throw std::runtime_error("missing artifact: " + (dir / "manifest.jsonl").string());
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        h.update(line);
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"sim_path", "meas_path"})
            h.update(sha256_file(dir / j.at(key).get<std::string>()));
    }
    return h.hex();
}

}  // namespace fmnet
