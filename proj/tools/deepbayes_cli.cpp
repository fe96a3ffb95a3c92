#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deepbayes/errors.hpp"
#include "deepbayes/harness.hpp"
#include "deepbayes/log.hpp"

namespace {

// Exit codes: 0 ok, 1 runtime failure, 2 usage/unknown subcommand,
// 3 malformed config, 4 missing or corrupt input artifact.
constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitArtifact = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

deepbayes::ExperimentConfig load_config(const CommonArgs& args) {
    if (args.config_path.empty()) {
        throw deepbayes::ConfigError("--config is required");
    }
    deepbayes::ExperimentConfig config =
        deepbayes::ExperimentConfig::from_file(args.config_path);
    if (args.seed.has_value()) config.seed = *args.seed;
    return config;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config) {
    auto* opt = cmd->add_option("--config", args.config_path,
                                "experiment config JSON");
    if (needs_config) opt->required();
    cmd->add_option("--out", args.out_dir, "artifact output directory");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--jobs", args.jobs, "parallel cells (attack stage)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deep generative classifier laboratory"};
    app.require_subcommand(1);
    CommonArgs args;

    auto* cmd_train = app.add_subcommand("train", "train configured models");
    add_common(cmd_train, args, true);
    auto* cmd_calibrate =
        app.add_subcommand("calibrate", "calibrate detection thresholds");
    add_common(cmd_calibrate, args, true);
    auto* cmd_attack =
        app.add_subcommand("attack", "craft adversarial batches");
    add_common(cmd_attack, args, true);
    auto* cmd_detect =
        app.add_subcommand("detect", "score crafted batches with detectors");
    add_common(cmd_detect, args, true);
    auto* cmd_evaluate =
        app.add_subcommand("evaluate", "compute the metrics report");
    add_common(cmd_evaluate, args, true);
    auto* cmd_transfer =
        app.add_subcommand("transfer", "re-evaluate batches across models");
    add_common(cmd_transfer, args, true);
    auto* cmd_report =
        app.add_subcommand("report", "regenerate report CSVs from artifacts");
    add_common(cmd_report, args, true);

    auto* cmd_demo = app.add_subcommand(
        "two-rings-demo", "decision/rejection grids for the analytic model");
    CommonArgs demo_args;
    std::uint64_t demo_seed = 1;
    cmd_demo->add_option("--seed", demo_seed, "demo seed");
    cmd_demo->add_option("--out", demo_args.out_dir, "output directory")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        // CLI11 returns 0 for --help; anything else is a usage error.
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (cmd_demo->parsed()) {
            deepbayes::TwoRingsSpec spec;  // repo-default ring geometry
            deepbayes::run_two_rings_demo(spec, demo_seed, demo_args.out_dir);
            return kExitOk;
        }
        const deepbayes::ExperimentConfig config = load_config(args);
        if (cmd_train->parsed()) {
            deepbayes::run_train(config, args.out_dir);
        } else if (cmd_calibrate->parsed()) {
            deepbayes::run_calibrate(config, args.out_dir);
        } else if (cmd_attack->parsed()) {
            deepbayes::run_attack(config, args.out_dir, args.jobs);
        } else if (cmd_detect->parsed()) {
            deepbayes::run_detect(config, args.out_dir);
        } else if (cmd_evaluate->parsed()) {
            deepbayes::run_evaluate(config, args.out_dir);
        } else if (cmd_transfer->parsed()) {
            deepbayes::run_transfer(config, args.out_dir);
        } else if (cmd_report->parsed()) {
            deepbayes::run_report(config, args.out_dir);
        }
        return kExitOk;
    } catch (const deepbayes::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const deepbayes::ArtifactError& e) {
        std::fprintf(stderr, "artifact error: %s\n", e.what());
        return kExitArtifact;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitFailure;
    }
}
