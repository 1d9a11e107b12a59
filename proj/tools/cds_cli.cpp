#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "cds/cli.hpp"

namespace {

int dispatch(const std::function<void()>& body) {
    try {
        body();
        return cds::kExitOk;
    } catch (const cds::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return cds::kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cds::kExitRuntimeError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task offline RL on tabular MDPs: data generation, conservative"
                 " training with data sharing, evaluation and cross-run analysis."};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string data_dir;
    std::string run_dir;
    std::string strategy_name = "no-share";
    std::string eval_out;
    std::vector<std::string> run_dirs;
    std::vector<std::string> strategy_override;
    std::vector<std::uint64_t> seed_override;
    std::uint64_t seed = 1;
    int jobs = 1;

    CLI::App* gen = app.add_subcommand("generate-data", "Write per-task datasets for a config");
    gen->add_option("--config", config_path, "experiment config (JSON)")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "root seed for all generation randomness");

    CLI::App* train = app.add_subcommand("train", "Train one (strategy, seed) run");
    train->add_option("--config", config_path, "experiment config (JSON)")->required();
    train->add_option("--data", data_dir, "directory holding task_<i>.ds files")->required();
    train->add_option("--strategy", strategy_name, "sharing strategy tag");
    train->add_option("--seed", seed, "root seed for training randomness");
    train->add_option("--out", out_dir, "run directory to write")->required();

    CLI::App* eval = app.add_subcommand("evaluate", "Re-evaluate a stored policy exactly");
    eval->add_option("--config", config_path, "experiment config (JSON)")->required();
    eval->add_option("--run", run_dir, "run directory holding policy.json")->required();
    eval->add_option("--out", eval_out, "output file (default <run>/evaluation.json)");

    CLI::App* analyze = app.add_subcommand("analyze", "Compare strategies across run directories");
    analyze->add_option("--config", config_path, "experiment config (JSON)")->required();
    analyze->add_option("--runs", run_dirs, "run directories")->required()->expected(-1);
    analyze->add_option("--out", out_dir, "output directory")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "Run every (strategy, seed) cell of a config");
    sweep->add_option("--config", config_path, "experiment config (JSON)")->required();
    sweep->add_option("--out", out_dir, "output directory")->required();
    sweep->add_option("--jobs", jobs, "cells to run in parallel");
    sweep->add_option("--seed", seed_override, "seed list overriding the config");
    sweep->add_option("--strategy", strategy_override, "strategy list overriding the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cds::kExitOk : cds::kExitConfigError;
    }

    if (gen->parsed())
        return dispatch([&] { cds::cmd_generate_data(cds::load_config(config_path), out_dir, seed); });

    if (train->parsed())
        return dispatch([&] {
            const cds::ExperimentConfig config = cds::load_config(config_path);
            cds::SharingStrategy strategy;
            try {
                strategy = cds::parse_strategy(strategy_name);
            } catch (const std::invalid_argument& e) {
                throw cds::ConfigError(e.what());
            }
            cds::cmd_train(config, data_dir, strategy, seed, out_dir);
        });

    if (eval->parsed())
        return dispatch([&] {
            const std::string out = eval_out.empty() ? run_dir + "/evaluation.json" : eval_out;
            cds::cmd_evaluate(cds::load_config(config_path), run_dir, out);
        });

    if (analyze->parsed())
        return dispatch([&] { cds::cmd_analyze(cds::load_config(config_path), run_dirs, out_dir); });

    if (sweep->parsed()) {
        int failures = 0;
        const int code = dispatch([&] {
            cds::SweepOptions options;
            options.seeds = seed_override;
            options.strategies = strategy_override;
            options.jobs = jobs;
            failures = cds::cmd_sweep(cds::load_config(config_path), out_dir, options).failures;
        });
        if (code != cds::kExitOk) return code;
        if (failures > 0) {
            std::cerr << "error: " << failures << " sweep cell(s) failed; see sweep.json\n";
            return cds::kExitRuntimeError;
        }
        return cds::kExitOk;
    }

    return cds::kExitConfigError;
}
