#pragma once

#include "fmnet/classify.hpp"
#include "fmnet/evalsuite.hpp"
#include "fmnet/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmnet {

/// Bad or missing command-line input; the CLI exits with status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A referenced file or directory does not exist.
class MissingArtifact : public std::runtime_error {
public:
    explicit MissingArtifact(const std::filesystem::path& p)
        : std::runtime_error("missing artifact: " + p.string()), path(p) {}
    std::filesystem::path path;
};

/// An output directory guarded by a lock file, closed with run_manifest.json.
class RunDirectory {
public:
    /// Refuses a directory that already holds files or is locked.
    RunDirectory(std::filesystem::path dir, std::string command);
    ~RunDirectory();
    RunDirectory(const RunDirectory&) = delete;
    RunDirectory& operator=(const RunDirectory&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return dir_; }
    std::filesystem::path file(const std::string& relative);
    void note_timing(const std::string& key, double seconds);
    /// Every listed artifact must exist; writes run_manifest.json and releases the lock.
    nlohmann::json finish(const nlohmann::json& config, const std::string& input_digest, std::uint64_t seed);

private:
    std::filesystem::path dir_;
    std::string command_;
    std::string run_id_;
    std::string started_at_;
    std::vector<std::string> artifacts_;
    nlohmann::json timings_ = nlohmann::json::object();
    bool locked_ = false;
};

/// Default run root: $FMNET_RUNS_DIR, else ./runs.
std::filesystem::path runs_root();
/// First unused `<root>/<command>-NNN`.
std::filesystem::path fresh_run_dir(const std::string& command);

nlohmann::json read_json_file(const std::filesystem::path& p);
void write_json_file(const std::filesystem::path& p, const nlohmann::json& j);

struct CommonOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    bool quiet = false;
};

struct GenDataOptions {
    CommonOptions common;
    std::optional<std::string> profile;
    std::optional<int> pairs_per_activity;
    std::optional<int> total;
    bool previews = false;
};
nlohmann::json cmd_gen_data(const GenDataOptions& o);

struct TrainOptions {
    CommonOptions common;
    std::string model = "fmnet";
    std::string phase = "all";
    std::filesystem::path data;
    std::optional<std::filesystem::path> resume;
};
nlohmann::json cmd_train(const TrainOptions& o);

struct EnhanceOptions {
    CommonOptions common;
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::string split = "test";
    bool sample = false;
};
nlohmann::json cmd_enhance(const EnhanceOptions& o);

struct EvalOptions {
    CommonOptions common;
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::optional<std::filesystem::path> ttw;
    bool latents = true;
};
nlohmann::json cmd_eval(const EvalOptions& o);

struct ClassifyOptions {
    CommonOptions common;
    std::optional<std::filesystem::path> checkpoint;
    std::filesystem::path data;
    std::string regime = "all";
    bool sweep = false;
};
nlohmann::json cmd_classify(const ClassifyOptions& o);

struct ReportOptions {
    CommonOptions common;
    /// Eval and classify run directories to collate.
    std::vector<std::filesystem::path> inputs;
};
nlohmann::json cmd_report(const ReportOptions& o);

/// Loads a checkpoint of whatever model kind its metadata names.
Network<float> load_network(const std::filesystem::path& stem, CheckpointMeta* meta = nullptr);

}  // namespace fmnet
