#include "fmnet/pipeline.hpp"

#include "fmnet/digest.hpp"
#include "fmnet/image_io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace fmnet {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void require_exists(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifact(p);
}

Dataset open_dataset(const fs::path& dir) {
    if (dir.empty()) throw UsageError("--data is required");
    require_exists(dir / "dataset.json");
    require_exists(dir / "manifest.jsonl");
    return load_dataset(dir);
}

std::string corpus_id(const Dataset& ds, const std::string& digest) {
    return ds.profile_name + ":" + digest.substr(0, 16);
}

void progress(bool quiet, const std::string& line) {
    if (!quiet) std::cerr << line << std::endl;
}

PairList one_per_activity(const PairList& pairs, int per_activity) {
    PairList out;
    std::map<int, int> taken;
    for (const auto* p : pairs)
        if (taken[index_of(p->activity)]++ < per_activity) out.push_back(p);
    std::stable_sort(out.begin(), out.end(),
                     [](const PairRecord* a, const PairRecord* b) { return index_of(a->activity) < index_of(b->activity); });
    return out;
}

}  // namespace

// ------------------------------------------------------------------ runs

RunDirectory::RunDirectory(fs::path dir, std::string command)
    : dir_(std::move(dir)), command_(std::move(command)), run_id_(dir_.filename().string()), started_at_(utc_now()) {
    if (fs::exists(dir_ / ".lock")) throw std::runtime_error("run directory " + dir_.string() + " is locked by another command");
    if (fs::exists(dir_) && !fs::is_empty(dir_))
        throw std::runtime_error("refusing to write into non-empty run directory " + dir_.string());
    fs::create_directories(dir_);
    const int fd = ::open((dir_ / ".lock").c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw std::runtime_error("run directory " + dir_.string() + " is locked by another command");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
    locked_ = true;
}

RunDirectory::~RunDirectory() {
    if (locked_) {
        std::error_code ec;
        fs::remove(dir_ / ".lock", ec);
    }
}

fs::path RunDirectory::file(const std::string& relative) {
    const fs::path p = dir_ / relative;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    artifacts_.push_back(relative);
    return p;
}

void RunDirectory::note_timing(const std::string& key, double seconds) { timings_[key] = seconds; }

nlohmann::json RunDirectory::finish(const nlohmann::json& config, const std::string& input_digest, std::uint64_t seed) {
    std::sort(artifacts_.begin(), artifacts_.end());
    artifacts_.erase(std::unique(artifacts_.begin(), artifacts_.end()), artifacts_.end());
    for (const auto& a : artifacts_)
        if (!fs::exists(dir_ / a)) throw std::runtime_error("declared output was not produced: " + (dir_ / a).string());
    nlohmann::json manifest = {{"run_id", run_id_},
                               {"command", command_},
                               {"config", config},
                               {"input_digest", input_digest},
                               {"artifacts", artifacts_},
                               {"started_at", started_at_},
                               {"finished_at", utc_now()},
                               {"timings_s", timings_},
                               {"master_seed", seed}};
    write_json_file(dir_ / "run_manifest.json", manifest);
    std::error_code ec;
    fs::remove(dir_ / ".lock", ec);
    locked_ = false;
    return manifest;
}

fs::path runs_root() {
    const char* env = std::getenv("FMNET_RUNS_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path fresh_run_dir(const std::string& command) {
    const fs::path root = runs_root();
    for (int i = 1;; ++i) {
        std::ostringstream name;
        name << command << '-' << std::setw(3) << std::setfill('0') << i;
        if (!fs::exists(root / name.str())) return root / name.str();
    }
}

nlohmann::json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw MissingArtifact(p);
    return nlohmann::json::parse(in);
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

Network<float> load_network(const fs::path& stem, CheckpointMeta* meta_out) {
    if (stem.empty()) throw UsageError("--checkpoint is required");
    require_exists(fs::path(stem.string() + ".json"));
    require_exists(fs::path(stem.string() + ".bin"));
    const auto meta = read_checkpoint_meta(stem);
    Network<float> net(meta.kind);
    const auto loaded = load_checkpoint(net, stem);
    if (meta_out) *meta_out = loaded;
    return net;
}

// -------------------------------------------------------------- gen-data

nlohmann::json cmd_gen_data(const GenDataOptions& o) {
    if (!o.common.out) throw UsageError("gen-data: --out is required");
    DatasetConfig cfg = o.common.config ? DatasetConfig::from_json(read_json_file(*o.common.config)) : DatasetConfig{};
    if (o.common.seed) cfg.master_seed = *o.common.seed;
    if (o.profile) cfg.profile = CorruptionProfile::preset(*o.profile);
    if (o.pairs_per_activity && o.total) throw UsageError("gen-data: --pairs-per-activity and --total are exclusive");
    if (o.pairs_per_activity) {
        if (*o.pairs_per_activity < 1) throw UsageError("gen-data: --pairs-per-activity must be >= 1");
        cfg.total_pairs = *o.pairs_per_activity * kNumActivities;
    }
    if (o.total) {
        if (*o.total < 1) throw UsageError("gen-data: --total must be >= 1");
        cfg.total_pairs = *o.total;
    }
    if (o.previews) cfg.write_previews = true;
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    RunDirectory run(*o.common.out, "gen-data");
    const auto summary = generate_dataset(cfg, run.path());
    run.file("manifest.jsonl");
    run.file("dataset.json");
    for (int i = 0; i < cfg.total_pairs; ++i) {
        const auto spec = sample_spec(cfg, i);
        run.file("arrays/" + spec.id + ".sim.f32");
        run.file("arrays/" + spec.id + ".meas.f32");
        if (cfg.write_previews) run.file("previews/" + spec.id + ".png");
    }
    const std::string digest = dataset_digest(run.path());
    run.note_timing("generate", seconds_since(t0));
    run.finish(cfg.to_json(), "", cfg.master_seed);
    return {{"out", run.path().string()},
            {"profile", cfg.profile.name},
            {"dataset_digest", digest},
            {"summary", summary.to_json()}};
}

// ----------------------------------------------------------------- train

nlohmann::json cmd_train(const TrainOptions& o) {
    ModelKind kind;
    try {
        kind = model_kind_from_string(o.model);
    } catch (const std::exception&) {
        throw UsageError("train: --model must be fmnet, smnet or nonr");
    }
    static const std::set<std::string> phases = {"all", "1", "2", "3"};
    if (!phases.count(o.phase)) throw UsageError("train: --phase must be all, 1, 2 or 3");
    if (kind == ModelKind::smnet && o.phase != "all" && o.phase != "1")
        throw UsageError("train: smnet is single-phase; --phase " + o.phase + " does not exist for it");
    if (o.resume) require_exists(fs::path(o.resume->string() + ".json"));

    const Dataset ds = open_dataset(o.data);
    TrainConfig cfg = o.common.config ? TrainConfig::from_json(read_json_file(*o.common.config)) : TrainConfig{};
    if (o.common.seed) cfg.master_seed = *o.common.seed;
    cfg.validate();

    Trainer trainer(kind, cfg);
    if (o.resume) trainer.load(*o.resume);
    std::vector<int> todo;
    if (kind == ModelKind::smnet) {
        todo = {1};
    } else if (o.phase == "all") {
        for (int k = trainer.meta().phase_completed + 1; k <= 3; ++k) todo.push_back(k);
    } else {
        todo = {std::stoi(o.phase)};
    }

    RunDirectory run(o.common.out ? *o.common.out : fresh_run_dir("train"), "train");
    trainer.set_output_dir(run.path());
    const PairList train = ds.split(Split::train);
    const PairList test = ds.split(Split::test);
    trainer.set_validation(test);
    const bool quiet = o.common.quiet;
    trainer.set_epoch_callback([quiet](const nlohmann::json& line) { progress(quiet, line.dump()); });

    nlohmann::json reports = nlohmann::json::array();
    run.file("training_log.jsonl");
    for (int phase : todo) {
        PhaseReport rep;
        if (kind == ModelKind::smnet) rep = trainer.train_smnet(train);
        else if (phase == 1) rep = trainer.train_phase1(sims_of(train));
        else if (phase == 2) rep = trainer.train_phase2(train);
        else rep = trainer.train_phase3(meas_of(train), sims_of(train));
        run.note_timing("phase" + std::to_string(phase), rep.wall_seconds);
        run.file(rep.checkpoint + ".bin");
        run.file(rep.checkpoint + ".json");
        auto j = rep.to_json();
        j.erase("wall_seconds");
        write_json_file(run.file("phase" + std::to_string(phase) + "_report.json"), j);
        reports.push_back({{"phase", phase}, {"checkpoint", (run.path() / rep.checkpoint).string()}});
    }
    const std::string digest = dataset_digest(o.data);
    nlohmann::json snapshot = cfg.to_json();
    snapshot["model"] = to_string(kind);
    snapshot["phase"] = o.phase;
    snapshot["data"] = o.data.string();
    if (o.resume) snapshot["resume"] = o.resume->string();
    run.finish(snapshot, digest, cfg.master_seed);
    return {{"run_dir", run.path().string()}, {"model", to_string(kind)}, {"phases", reports}};
}

// --------------------------------------------------------------- enhance

nlohmann::json cmd_enhance(const EnhanceOptions& o) {
    CheckpointMeta meta;
    Network<float> net = load_network(o.checkpoint, &meta);
    const Dataset ds = open_dataset(o.data);
    PairList pairs;
    if (o.split == "all") {
        for (const auto& r : ds.records) pairs.push_back(&r);
    } else if (o.split == "train" || o.split == "test") {
        pairs = ds.split(split_from_string(o.split));
    } else {
        throw UsageError("enhance: --split must be train, test or all");
    }
    if (pairs.empty()) throw std::invalid_argument("enhance: no samples in split " + o.split);

    RunDirectory run(o.common.out ? *o.common.out : fresh_run_dir("enhance"), "enhance");
    const std::uint64_t seed = o.common.seed.value_or(meta.master_seed);
    const auto enhanced = enhance_all(net, meas_of(pairs), !o.sample, seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) write_f32(run.file("enhanced/" + pairs[i]->id + ".enh.f32"), enhanced[i].values);

    const PairList shown = one_per_activity(pairs, 2);
    std::vector<Spectrogram> shown_enh;
    for (const auto* p : shown) shown_enh.push_back(enhanced[std::find(pairs.begin(), pairs.end(), p) - pairs.begin()]);
    write_comparison_grid(run.file("grid.png"), shown, shown_enh);

    const std::string digest = dataset_digest(o.data);
    run.finish({{"checkpoint", o.checkpoint.string()}, {"data", o.data.string()}, {"split", o.split},
                {"deterministic", !o.sample}},
               digest, seed);
    return {{"run_dir", run.path().string()}, {"count", pairs.size()}, {"model", to_string(meta.kind)}};
}

// ------------------------------------------------------------------ eval

nlohmann::json cmd_eval(const EvalOptions& o) {
    CheckpointMeta meta;
    Network<float> net = load_network(o.checkpoint, &meta);
    const Dataset ds = open_dataset(o.data);
    const std::string digest = dataset_digest(o.data);
    const std::string model = to_string(meta.kind);
    const PairList test = ds.split(Split::test);

    std::optional<Dataset> ttw;
    std::string ttw_digest;
    if (o.ttw) {
        ttw = open_dataset(*o.ttw);
        ttw_digest = dataset_digest(*o.ttw);
    }

    RunDirectory run(o.common.out ? *o.common.out : fresh_run_dir("eval"), "eval");
    nlohmann::json out = {{"run_dir", run.path().string()}, {"model", model}};

    const auto metrics = eval_enhancement(test, net, model, corpus_id(ds, digest));
    write_json_file(run.file("metrics.json"), metrics.to_json());
    out["metrics"] = metrics.overall.ssim_enh_vs_sim;

    const auto kld = eval_latent_kld(test, net, model, corpus_id(ds, digest));
    write_json_file(run.file("kld.json"), kld.to_json());
    out["kld"] = kld.overall;

    if (ttw) {
        const PairList ttw_test = ttw->split(Split::test);
        const auto shift = eval_domain_shift(net, ttw_test, ttw->profile_name, model, corpus_id(*ttw, ttw_digest));
        write_json_file(run.file("domain_shift.json"), shift.to_json());
        out["domain_shift"] = shift.overall.ssim_enh_vs_meas.value_or(0.0);
    }

    if (o.latents) {
        const auto ex = export_latents(test, net, run.file("latents.csv"));
        run.file("latents_pca.csv");
        const auto [paired, unpaired] = ex.paired_vs_unpaired();
        const nlohmann::json summary = {{"rows", ex.ids.size()},
                                        {"cluster_separation", ex.cluster_separation()},
                                        {"mean_paired_distance", paired},
                                        {"mean_unpaired_distance", unpaired}};
        write_json_file(run.file("latents_summary.json"), summary);
        out["latents"] = summary;
    }

    const PairList shown = one_per_activity(test, 1);
    write_comparison_grid(run.file("comparison.png"), shown, enhance_all(net, meas_of(shown)));

    nlohmann::json snapshot = {{"checkpoint", o.checkpoint.string()}, {"data", o.data.string()}, {"latents", o.latents}};
    if (o.ttw) snapshot["ttw"] = o.ttw->string();
    run.finish(snapshot, ttw ? sha256_hex(digest + ttw_digest) : digest, meta.master_seed);
    return out;
}

// -------------------------------------------------------------- classify

nlohmann::json cmd_classify(const ClassifyOptions& o) {
    RegimeRequest req;
    if (o.regime == "all") {
        req.regimes.assign(kRegimes.begin(), kRegimes.end());
    } else if (std::find(kRegimes.begin(), kRegimes.end(), o.regime) != kRegimes.end()) {
        req.regimes = {o.regime};
    } else {
        throw UsageError("classify: --regime must be all, train_om_test_om, train_s_test_em or train_s_test_om");
    }
    if (o.sweep) req.sizes = kSweepSizes;
    if (o.common.config) req.config = ClassifierConfig::from_json(read_json_file(*o.common.config));
    if (o.common.seed) req.config.seed = *o.common.seed;

    const bool needs_fmnet = std::find(req.regimes.begin(), req.regimes.end(), "train_s_test_em") != req.regimes.end();
    std::optional<Network<float>> net;
    if (needs_fmnet) {
        if (!o.checkpoint) throw UsageError("classify: regime train_s_test_em needs --checkpoint");
        net.emplace(load_network(*o.checkpoint));
    }
    const Dataset ds = open_dataset(o.data);
    const std::string digest = dataset_digest(o.data);

    RunDirectory run(o.common.out ? *o.common.out : fresh_run_dir("classify"), "classify");
    const auto results = eval_regimes(net ? &*net : nullptr, ds, req);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : results) {
        arr.push_back(r.to_json());
        write_confusion_png(run.file("confusion_" + r.regime + "_" + std::to_string(r.train_size) + ".png"), r);
    }
    write_json_file(run.file("regimes.json"), arr);
    nlohmann::json snapshot = {{"data", o.data.string()}, {"regime", o.regime}, {"sweep", o.sweep},
                               {"classifier", req.config.to_json()}};
    if (o.checkpoint) snapshot["checkpoint"] = o.checkpoint->string();
    run.finish(snapshot, digest, req.config.seed);
    return {{"run_dir", run.path().string()}, {"results", arr.size()}};
}

// ---------------------------------------------------------------- report

namespace {

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    if (v != 0.0 && (std::abs(v) < 1e-3 || std::abs(v) >= 1e5)) os << std::scientific << std::setprecision(2) << v;
    else os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

struct Table {
    std::string caption;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::string markdown() const {
        std::ostringstream os;
        os << "**" << caption << "**\n\n|";
        for (const auto& h : header) os << ' ' << h << " |";
        os << "\n|";
        for (std::size_t i = 0; i < header.size(); ++i) os << " --- |";
        os << '\n';
        if (rows.empty()) {
            os << "| no data |";
            for (std::size_t i = 1; i < header.size(); ++i) os << " |";
            os << '\n';
        }
        for (const auto& r : rows) {
            os << '|';
            for (const auto& c : r) os << ' ' << c << " |";
            os << '\n';
        }
        return os.str();
    }
};

std::vector<std::string> activity_order() {
    std::vector<std::string> out;
    for (auto a : kActivities) out.push_back(to_string(a));
    out.push_back("overall");
    return out;
}

}  // namespace

nlohmann::json cmd_report(const ReportOptions& o) {
    if (o.inputs.empty()) throw UsageError("report: at least one --input run directory is required");
    std::vector<MetricsReport> metrics, shifts;
    std::vector<KldTable> klds;
    std::vector<RegimeResult> regimes;
    std::vector<fs::path> images;
    for (const auto& dir : o.inputs) {
        if (!fs::is_directory(dir)) throw MissingArtifact(dir);
        bool used = false;
        if (fs::exists(dir / "metrics.json")) metrics.push_back(MetricsReport::from_json(read_json_file(dir / "metrics.json"))), used = true;
        if (fs::exists(dir / "kld.json")) klds.push_back(KldTable::from_json(read_json_file(dir / "kld.json"))), used = true;
        if (fs::exists(dir / "domain_shift.json"))
            shifts.push_back(MetricsReport::from_json(read_json_file(dir / "domain_shift.json"))), used = true;
        if (fs::exists(dir / "regimes.json")) {
            for (const auto& r : read_json_file(dir / "regimes.json")) regimes.push_back(RegimeResult::from_json(r));
            used = true;
        }
        if (!used) throw MissingArtifact(dir / "metrics.json");
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".png") found.push_back(e.path());
        std::sort(found.begin(), found.end());
        images.insert(images.end(), found.begin(), found.end());
    }

    RunDirectory run(o.common.out ? *o.common.out : fresh_run_dir("report"), "report");
    const auto acts = activity_order();

    Table pixel{"Pixel loss and SSIM before and after using different networks", {"Activity", "n",
                "Pixel loss (meas)", "SSIM (meas)"}, {}};
    for (const auto& m : metrics) {
        pixel.header.push_back("Pixel loss (" + m.model + ")");
        pixel.header.push_back("SSIM (" + m.model + ")");
    }
    if (!metrics.empty())
        for (const auto& a : acts) {
            const MetricsRow* base = nullptr;
            try {
                base = &metrics.front().row(a);
            } catch (const std::out_of_range&) {
                continue;
            }
            std::vector<std::string> row = {a, std::to_string(base->count), fmt(base->pixel_loss_meas_vs_sim),
                                             fmt(base->ssim_meas_vs_sim)};
            for (const auto& m : metrics) {
                const auto& r = m.row(a);
                row.push_back(fmt(r.pixel_loss_enh_vs_sim));
                row.push_back(fmt(r.ssim_enh_vs_sim));
            }
            pixel.rows.push_back(row);
        }

    Table kld{"KLD comparison between networks (mean over 2048 latent dimensions)", {"Activity"}, {}};
    for (const auto& k : klds) kld.header.push_back(k.model + (k.surrogate ? " (sq. distance)" : ""));
    if (!klds.empty())
        for (const auto& a : acts) {
            std::vector<std::string> row = {a};
            bool any = false;
            for (const auto& k : klds) {
                if (a == "overall") {
                    row.push_back(fmt(k.overall));
                    any = true;
                    continue;
                }
                try {
                    row.push_back(fmt(k.value(a)));
                    any = true;
                } catch (const std::out_of_range&) {
                    row.push_back("-");
                }
            }
            if (any) kld.rows.push_back(row);
        }

    Table ssim_cmp{"SSIM comparison of three networks on the through-wall corpus", {"Activity"}, {}};
    for (const auto& s : shifts) {
        ssim_cmp.header.push_back("SSIM(enh, meas) " + s.model);
        ssim_cmp.header.push_back("SSIM(enh, clean) " + s.model);
    }
    if (!shifts.empty())
        for (const auto& a : acts) {
            std::vector<std::string> row = {a};
            try {
                for (const auto& s : shifts) {
                    const auto& r = s.row(a);
                    row.push_back(fmt(r.ssim_enh_vs_meas.value_or(0.0)));
                    row.push_back(fmt(r.ssim_enh_vs_sim));
                }
            } catch (const std::out_of_range&) {
                continue;
            }
            ssim_cmp.rows.push_back(row);
        }

    Table cls{"The classification results comparison of three training schemes", {"Training size"}, {}};
    std::vector<std::string> regime_cols;
    std::set<int> sizes;
    for (const auto& r : regimes) {
        if (std::find(regime_cols.begin(), regime_cols.end(), r.regime) == regime_cols.end()) regime_cols.push_back(r.regime);
        sizes.insert(r.train_size);
    }
    for (const auto& c : regime_cols) cls.header.push_back(c);
    for (int size : sizes) {
        std::vector<std::string> row = {std::to_string(size)};
        for (const auto& c : regime_cols) {
            std::string cell = "-";
            for (const auto& r : regimes)
                if (r.regime == c && r.train_size == size) cell = fmt(100.0 * r.accuracy, 1) + "%";
            row.push_back(cell);
        }
        cls.rows.push_back(row);
    }

    std::ostringstream md;
    md << "# FMNet evaluation report\n\n";
    for (const auto* t : {&pixel, &kld, &ssim_cmp, &cls}) md << t->markdown() << '\n';
    md << "## Figures\n\n";
    nlohmann::json figures = nlohmann::json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string name = "figures/" + std::to_string(i) + "_" + images[i].filename().string();
        fs::copy_file(images[i], run.file(name), fs::copy_options::overwrite_existing);
        md << "![" << images[i].parent_path().filename().string() << '/' << images[i].filename().string() << "](" << name
           << ")\n\n";
        figures.push_back(name);
    }
    {
        std::ofstream out(run.file("report.md"));
        out << md.str();
    }
    nlohmann::json doc = {{"tables", nlohmann::json::array()}, {"figures", figures}};
    for (const auto* t : {&pixel, &kld, &ssim_cmp, &cls})
        doc["tables"].push_back({{"caption", t->caption}, {"header", t->header}, {"rows", t->rows}});
    write_json_file(run.file("report.json"), doc);

    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& d : o.inputs) inputs.push_back(d.string());
    run.finish({{"inputs", inputs}}, "", 0);
    return {{"run_dir", run.path().string()}, {"tables", 4}, {"figures", figures.size()}};
}

}  // namespace fmnet
