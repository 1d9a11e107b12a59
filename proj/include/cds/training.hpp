#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "cds/offline_learner.hpp"
#include "cds/sharing.hpp"

namespace cds {

struct TrainingLogRow {
    int round = 0;
    index_t task = 0;
    std::size_t dataset_size = 0;     // |D_i^eff| after this round's rebuild
    scalar_t admitted_fraction = 0.0; // admission-weighted share of offered candidates; 0 if none
    scalar_t j_eval = 0.0;            // true-MDP return of the policy after this round's sweeps
    scalar_t kl_div = 0.0;            // KL(pi || effective behavior), pool-state weighted

    friend bool operator==(const TrainingLogRow&, const TrainingLogRow&) = default;
};

struct TrainResult {
    ConservativeQTable table;         // learned Q
    ConservativeQTable shared_view;   // table the sharing rules consume; the KL-penalized one for Brac
    TabularPolicy policy;
    std::vector<TrainingLogRow> log;  // one row per (round, task)
    std::vector<EffectiveDataset> effective;  // pools used in the final round
    AdaptiveTemperature temperature;  // weighted-CDS state after the last rebuild
    BracResult brac;                  // extras of the final fitting block (Brac runs only)
};

/**
 * Alternates data sharing and conservative fitting: each round rebuilds every
 * task's pool from the current value table (the freshly initialized one on
 * round zero), then runs up to cfg.rebuild_every warm-started sweeps, for
 * cfg.iterations sweeps overall.  Evaluation and divergence are logged after
 * each round's sweeps.  All randomness (batch sampling, the weighted-sharing
 * coin) is drawn from named substreams of `seed`, so equal inputs give
 * bit-identical results.
 */
TrainResult train_multitask(const MultiTaskMdp& mdp, const std::vector<TaskDataset>& raw,
                            const SharingStrategy& strategy, const LearnerConfig& cfg,
                            std::uint64_t seed);

void write_training_csv(std::ostream& out, const std::vector<TrainingLogRow>& log);

/// Inverse of write_training_csv; throws std::invalid_argument on a foreign
/// header or malformed row.
std::vector<TrainingLogRow> read_training_csv(std::istream& in);

}  // namespace cds
