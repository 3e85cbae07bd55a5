// fmnet command-line front end.

#include "fmnet/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace fmnet;

int fail(const std::string& type, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", {{"type", type}, {"message", message}}}}.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FMNet micro-Doppler enhancement toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    CommonOptions common;
    std::string config, out;
    std::uint64_t seed = 0;
    app.add_option("--config", config, "JSON configuration file");
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--out", out, "Output directory");
    app.add_flag("--quiet", common.quiet, "Suppress progress output");

    GenDataOptions gen;
    std::string profile;
    int per_activity = 0, total = 0;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a paired simulated/measured corpus");
    gen_cmd->fallthrough();
    gen_cmd->add_option("--profile", profile, "Corruption profile")->check(CLI::IsMember({"los", "ttw", "identity"}));
    gen_cmd->add_option("--pairs-per-activity", per_activity, "Pairs per activity (total = 6x)");
    gen_cmd->add_option("--total", total, "Exact pair count, allocated round-robin");
    gen_cmd->add_flag("--previews", gen.previews, "Write PNG previews");

    TrainOptions train;
    std::string resume, train_data;
    auto* train_cmd = app.add_subcommand("train", "Train fmnet, smnet or nonr");
    train_cmd->fallthrough();
    train_cmd->add_option("--model", train.model, "fmnet|smnet|nonr");
    train_cmd->add_option("--phase", train.phase, "all|1|2|3");
    train_cmd->add_option("--data", train_data, "Dataset directory")->required();
    train_cmd->add_option("--resume", resume, "Checkpoint stem to continue from");

    EnhanceOptions enh;
    std::string enh_ckpt, enh_data;
    auto* enh_cmd = app.add_subcommand("enhance", "Enhance measured spectrograms");
    enh_cmd->fallthrough();
    enh_cmd->add_option("--checkpoint", enh_ckpt, "Checkpoint stem")->required();
    enh_cmd->add_option("--data", enh_data, "Dataset directory")->required();
    enh_cmd->add_option("--split", enh.split, "train|test|all");
    enh_cmd->add_flag("--sample", enh.sample, "Decode a posterior sample instead of the mean");

    EvalOptions ev;
    std::string ev_ckpt, ev_data, ev_ttw;
    bool no_latents = false;
    auto* eval_cmd = app.add_subcommand("eval", "Enhancement, latent KLD and domain-shift metrics");
    eval_cmd->fallthrough();
    eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint stem")->required();
    eval_cmd->add_option("--data", ev_data, "Dataset directory")->required();
    eval_cmd->add_option("--ttw", ev_ttw, "Through-wall dataset directory");
    eval_cmd->add_flag("--no-latents", no_latents, "Skip the latent CSV export");

    ClassifyOptions cls;
    std::string cls_ckpt, cls_data;
    auto* cls_cmd = app.add_subcommand("classify", "Run the classification regimes");
    cls_cmd->fallthrough();
    cls_cmd->add_option("--checkpoint", cls_ckpt, "FMNet checkpoint stem (enhanced regime)");
    cls_cmd->add_option("--data", cls_data, "Dataset directory")->required();
    cls_cmd->add_option("--regime", cls.regime, "all|train_om_test_om|train_s_test_em|train_s_test_om");
    cls_cmd->add_flag("--sweep", cls.sweep, "Sweep training-set sizes");

    ReportOptions rep;
    std::vector<std::string> inputs;
    auto* rep_cmd = app.add_subcommand("report", "Collate eval/classify runs into one document");
    rep_cmd->fallthrough();
    rep_cmd->add_option("--input", inputs, "Run directory (repeatable)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    if (!config.empty()) common.config = config;
    if (app.count("--seed")) common.seed = seed;
    if (!out.empty()) common.out = out;

    try {
        nlohmann::json result;
        if (*gen_cmd) {
            gen.common = common;
            if (!profile.empty()) gen.profile = profile;
            if (gen_cmd->count("--pairs-per-activity")) gen.pairs_per_activity = per_activity;
            if (gen_cmd->count("--total")) gen.total = total;
            result = cmd_gen_data(gen);
        } else if (*train_cmd) {
            train.common = common;
            train.data = train_data;
            if (!resume.empty()) train.resume = resume;
            result = cmd_train(train);
        } else if (*enh_cmd) {
            enh.common = common;
            enh.checkpoint = enh_ckpt;
            enh.data = enh_data;
            result = cmd_enhance(enh);
        } else if (*eval_cmd) {
            ev.common = common;
            ev.checkpoint = ev_ckpt;
            ev.data = ev_data;
            if (!ev_ttw.empty()) ev.ttw = ev_ttw;
            ev.latents = !no_latents;
            result = cmd_eval(ev);
        } else if (*cls_cmd) {
            cls.common = common;
            if (!cls_ckpt.empty()) cls.checkpoint = cls_ckpt;
            cls.data = cls_data;
            result = cmd_classify(cls);
        } else if (*rep_cmd) {
            rep.common = common;
            for (const auto& i : inputs) rep.inputs.emplace_back(i);
            result = cmd_report(rep);
        }
        std::cout << result.dump(2) << std::endl;
        return 0;
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 2);
    } catch (const MissingArtifact& e) {
        return fail("missing_artifact", e.what(), 1);
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what(), 1);
    } catch (const TrainingDiverged& e) {
        return fail("diverged", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
}
