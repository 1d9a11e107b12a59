#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cds/effective_dataset.hpp"
#include "cds/mdp.hpp"

namespace cds {

enum class MuMode { Uniform, SoftmaxQ, CurrentPolicy };
enum class LearnerKind { Cql, Brac };
enum class WeightRule { RelabeledOnly, RelabeledPlusHalfOriginal };

/// Count-ratio behavior policy.  Rows are exact count fractions on observed
/// states and all-zero on unobserved ones (never imputed); `observed` tells
/// them apart.
struct EmpiricalBehaviorPolicy {
    std::vector<matrix_t> probs;   // per task, S x A
    std::vector<matrix_t> counts;  // per task, S x A (integral values)
    std::vector<std::vector<std::uint8_t>> observed;  // per task, S flags

    bool is_observed(index_t task, index_t s) const {
        return observed[static_cast<std::size_t>(task)][static_cast<std::size_t>(s)] != 0;
    }
};

struct ConservativeQTable {
    std::vector<matrix_t> q;  // per task, S x A
    scalar_t beta = 0.0;
    scalar_t alpha = 0.0;
    MuMode mu_mode = MuMode::SoftmaxQ;

    index_t num_tasks() const { return static_cast<index_t>(q.size()); }
};

struct LearnerConfig {
    scalar_t learning_rate = 0.5;
    int iterations = 200;           // sweeps per fitting call
    scalar_t beta = 1.0;            // out-of-distribution penalty coefficient
    scalar_t alpha = 1.0;           // KL coefficient of the divergence-penalized learner
    LearnerKind learner = LearnerKind::Cql;
    MuMode mu_mode = MuMode::SoftmaxQ;
    scalar_t policy_temperature = 0.2;  // 0 = greedy extraction
    index_t batch_per_task = 128;   // stratified batch size; 0 = full-batch sweeps
    WeightRule weight_rule = WeightRule::RelabeledOnly;
    int rebuild_every = 10;         // learner sweeps between data-sharing rebuilds
    scalar_t kl_max = 20.0;         // per-state clamp for out-of-support KL
    scalar_t q_cap_margin = 1.0;
    scalar_t r_max = 1.0;
    scalar_t discount = 0.9;
};

/// Throws std::invalid_argument naming the first offending field.
void validate_config(const LearnerConfig& cfg);

EmpiricalBehaviorPolicy estimate_behavior_policy(const std::vector<EffectiveDataset>& datasets,
                                                 index_t num_states, index_t num_actions);
EmpiricalBehaviorPolicy estimate_behavior_policy(const std::vector<TaskDataset>& datasets,
                                                 index_t num_states, index_t num_actions);

/// Softmax of Q at `temperature`; the 0 limit is greedy with lowest-index ties.
TabularPolicy extract_policy(const ConservativeQTable& table, scalar_t temperature);

/**
 * Penalized fitted Q iteration.  Each sweep backs up sample targets
 * r + gamma * E_{a'~pi} Q(s',a') under the currently extracted policy and
 * moves observed entries toward the stationary point of the penalized loss,
 * which subtracts beta * (m(s) mu(a|s) / W(s,a) - 1) from the backup (m and W
 * are weighted state / state-action visit masses).  Actions unseen at a
 * visited state sink toward the value floor -r_max/(1-gamma).  A batch engine
 * enables stratified sampling (half original, half shared data); without one
 * the sweep is full-batch and deterministic.  Any entry past
 * r_max/(1-gamma) + margin raises std::runtime_error.
 */
ConservativeQTable cql_fitted_iteration(index_t num_states, index_t num_actions,
                                        const std::vector<EffectiveDataset>& datasets,
                                        const LearnerConfig& cfg,
                                        std::mt19937_64* batch_rng = nullptr,
                                        const ConservativeQTable* warm_start = nullptr);

struct BracResult {
    ConservativeQTable table;
    std::vector<matrix_t> conservative_q;  // Q - alpha * KL(pi || empirical behavior) at s
    std::vector<vector_t> kl;              // per task, per state
    std::vector<std::vector<std::uint8_t>> kl_clamped;  // states where the clamp fired
};

/// Fitted Q iteration on divergence-penalized targets
/// r + gamma * (E_{a'~pi} Q(s',a') - alpha * KL(pi || behavior)(s')), with the
/// per-state KL clamped at kl_max (flagged) wherever pi leaves the observed
/// support.  The divergence cap accounts for the penalty's extra range.
BracResult brac_fitted_iteration(index_t num_states, index_t num_actions,
                                 const std::vector<EffectiveDataset>& datasets,
                                 const LearnerConfig& cfg,
                                 std::mt19937_64* batch_rng = nullptr,
                                 const ConservativeQTable* warm_start = nullptr);

}  // namespace cds
