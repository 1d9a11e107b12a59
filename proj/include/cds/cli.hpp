#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cds/analysis.hpp"
#include "cds/dataset.hpp"
#include "cds/envs.hpp"
#include "cds/offline_learner.hpp"
#include "cds/sharing.hpp"
#include "cds/training.hpp"

namespace cds {

/// Anything wrong with the experiment description itself: unreadable file,
/// malformed JSON, unknown or missing fields, values that fail validation.
/// The command-line tool maps this to exit code 2; runtime faults exit 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct DatasetRecipe {
    index_t task = 0;
    DatasetQuality quality = DatasetQuality::Medium;
    std::size_t size = 0;
    std::uint64_t seed = 0;  // 0: derive from the run seed by task-named substream
};

/// One exploration corpus divided among the tasks instead of per-task logging.
struct SplitRecipe {
    DatasetQuality mode = DatasetQuality::UndirectedSplit;
    int episodes = 0;
    index_t horizon = 0;
};

struct ExperimentConfig {
    std::string name;
    std::string env_kind;  // "corridor" or "grid"
    CorridorTriTaskSpec corridor;
    MultiGoalGridSpec grid;
    bool use_split = false;
    std::vector<DatasetRecipe> recipes;
    SplitRecipe split;
    std::vector<SharingStrategy> strategies;
    LearnerConfig learner;  // discount and r_max are resolved from the environment
    std::vector<std::uint64_t> eval_seeds;
    BoundConstants constants;
    scalar_t r_max_override = 0.0;  // 0: use the environment's reward bound
};

/// Validates the whole document up front: unknown keys, missing fields, and
/// out-of-range values all throw ConfigError naming the offending field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

MultiTaskMdp build_environment(const ExperimentConfig& config);

/// Learner settings with environment-derived fields (discount, reward bound)
/// filled in; this is the configuration a run actually uses.
LearnerConfig resolved_learner(const ExperimentConfig& config, const MultiTaskMdp& mdp);

/// Attaches the environment's default skill grouping where the strategy needs one.
SharingStrategy resolve_strategy(const SharingStrategy& strategy, const ExperimentConfig& config);

/// Per-task datasets per the config's recipes (or its exploration split), all
/// randomness drawn from named substreams of `seed`.
std::vector<TaskDataset> generate_datasets(const ExperimentConfig& config, const MultiTaskMdp& mdp,
                                           std::uint64_t seed);

/// Writes task_<i>.ds files plus data_manifest.json.
void cmd_generate_data(const ExperimentConfig& config, const std::string& out_dir,
                       std::uint64_t seed);

/// Trains one (strategy, seed) cell on datasets read from `data_dir` and
/// writes qtable.json, policy.json, training.csv, bound.json and
/// run_manifest.json into `out_dir`.
void cmd_train(const ExperimentConfig& config, const std::string& data_dir,
               const SharingStrategy& strategy, std::uint64_t seed, const std::string& out_dir);

/// Re-evaluates a stored policy against the exact environment; writes per-task
/// returns and optimality gaps to `out_path`.
void cmd_evaluate(const ExperimentConfig& config, const std::string& run_dir,
                  const std::string& out_path);

/// Cross-run comparison: reads each run directory, medians per strategy,
/// writes comparison.csv / comparison.json (two or more strategies) and
/// bounds.json, re-checking the bound composition identity on the way.
void cmd_analyze(const ExperimentConfig& config, const std::vector<std::string>& run_dirs,
                 const std::string& out_dir);

struct SweepOptions {
    std::vector<std::uint64_t> seeds;     // empty: the config's evaluation seeds
    std::vector<std::string> strategies;  // empty: the config's strategy list
    int jobs = 1;
};

struct SweepCell {
    std::string strategy;
    std::uint64_t seed = 0;
    std::vector<scalar_t> j;   // per task, final round
    std::vector<scalar_t> kl;  // per task, final round
    std::string error;         // empty on success
};

struct SweepAggregate {
    std::string strategy;
    index_t task = 0;
    int n = 0;  // successful cells
    scalar_t j_mean = 0.0;
    scalar_t j_ci95 = 0.0;  // 1.96 * sd / sqrt(n), sample sd
    scalar_t j_median = 0.0;
    scalar_t kl_mean = 0.0;
    scalar_t kl_ci95 = 0.0;
    scalar_t kl_median = 0.0;
};

struct SweepReport {
    std::vector<SweepCell> cells;  // strategy-major, seed-minor
    std::vector<SweepAggregate> aggregates;
    std::vector<scalar_t> j_star;  // per task
    int failures = 0;
};

/// Runs every (strategy, seed) cell, `jobs` at a time; datasets are generated
/// once per seed and shared across strategies.  Failed cells are recorded and
/// the sweep continues.  Writes data/, cells/, cells.csv, sweep.csv, sweep.json.
SweepReport cmd_sweep(const ExperimentConfig& config, const std::string& out_dir,
                      const SweepOptions& options = {});

}  // namespace cds
