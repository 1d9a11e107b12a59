#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cds/effective_dataset.hpp"
#include "cds/mdp.hpp"
#include "cds/offline_learner.hpp"

namespace cds {

/// Chi-square-type distance sum_x p(x) (p(x)/q(x) - 1).  Throws when q lacks
/// support somewhere p has mass; zero-mass p entries contribute nothing.
scalar_t d_cql(const vector_t& p, const vector_t& q);

/// Half L1 distance between two distributions.
scalar_t d_tv(const vector_t& p, const vector_t& q);

/// Uniform mass mixed into every behavior row before divergences are taken,
/// so logged policies with thin support never blow up a report.
constexpr scalar_t kBehaviorSmoothing = 1e-6;

/// Behavior row with eps uniform mass blended in and renormalized.  A row the
/// data never visited (all zeros) comes out exactly uniform.
vector_t smoothed_row(const matrix_t& behavior_probs, index_t s, scalar_t eps = kBehaviorSmoothing);

struct DivergenceReport {
    scalar_t average = 0.0;  // weighting-averaged per_state
    vector_t per_state;      // KL(pi(.|s) || smoothed behavior(.|s))
    OccupancyMeasure weighting;
    scalar_t smoothing = kBehaviorSmoothing;
};

/// Per-state KL between a policy and the (smoothed) behavior estimate,
/// averaged under the given state weighting.  The weighting is the caller's
/// choice: dataset_state_distribution for a data-weighted view, or
/// state_occupancy of the policy itself.
DivergenceReport kl_policy_divergence(const TabularPolicy& policy,
                                      const EmpiricalBehaviorPolicy& behavior,
                                      const OccupancyMeasure& occupancy, index_t task,
                                      scalar_t eps = kBehaviorSmoothing);

/// Normalized state-visit frequencies of a pool.  Counts are raw sample
/// counts; soft admission weights do not change what was logged.
OccupancyMeasure dataset_state_distribution(const EffectiveDataset& data, index_t num_states);

struct BoundConstants {
    scalar_t c_sample = 1.0;
    scalar_t alpha = 1.0;
    scalar_t smoothing = kBehaviorSmoothing;
};

/**
 * Safe-policy-improvement bound pieces for one task: J(pi) >= J(behavior) -
 * zeta.  The sampling term averages sqrt((D(s)+1)/n(s)) under the trained
 * policy's occupancy in the empirical MDP of the pool and is infinite if that
 * occupancy touches a state with no samples; the improvement term compares
 * the two behavior policies in the real MDP.  zeta is assembled exactly as
 * sampling_error_term - (divergence_bonus + improvement_term_a).
 */
struct BoundReport {
    scalar_t sampling_error_term = 0.0;
    scalar_t divergence_bonus = 0.0;   // alpha * epsilon
    scalar_t improvement_term_a = 0.0; // J(effective behavior) - J(own behavior)
    scalar_t zeta = 0.0;
    scalar_t epsilon = 0.0;            // occupancy-averaged per-state distance
    scalar_t j_policy = 0.0;           // true-MDP return of the evaluated policy
    scalar_t j_behavior_eff = 0.0;     // true-MDP return of the pooled-data behavior
    scalar_t j_behavior_own = 0.0;     // true-MDP return of the own-data behavior
    scalar_t c_sample = 1.0;
    scalar_t alpha = 1.0;
    scalar_t r_max = 0.0;
    scalar_t gamma = 0.0;
    scalar_t smoothing = kBehaviorSmoothing;
    std::vector<std::int64_t> counts;  // pool visits per base-MDP state
    vector_t per_state_d;              // chi-square distance per empirical state
    OccupancyMeasure weighting;        // trained policy's empirical-MDP occupancy
};

BoundReport spi_bound(const MultiTaskMdp& mdp, index_t task, const TabularPolicy& pi_star,
                      const EmpiricalBehaviorPolicy& behavior_eff,
                      const EmpiricalBehaviorPolicy& behavior_own, const EffectiveDataset& eff,
                      const BoundConstants& constants = {});

struct Lemma1Entry {
    scalar_t alpha = 0.0;
    scalar_t tv_term = 0.0;    // C * R_max / (1 - gamma) * D_TV
    scalar_t cql_bonus = 0.0;  // alpha * D_CQL
    bool condition_met = false;
    bool premise_met = false;  // the learner's improvement inequality at this alpha
    bool checked = false;      // both of the above
    bool pass = false;         // vacuous when not checked
};

struct Lemma1Report {
    scalar_t d_tv = 0.0;       // between pi and the effective behavior, occupancy-averaged
    scalar_t d_cql_avg = 0.0;
    scalar_t j_pi = 0.0;            // empirical-MDP returns
    scalar_t j_behavior_eff = 0.0;
    scalar_t j_behavior_own = 0.0;
    scalar_t improvement = 0.0;     // j_behavior_eff - j_behavior_own
    scalar_t c = 0.0;
    scalar_t r_max = 0.0;
    std::vector<Lemma1Entry> entries;
    bool all_pass = true;
};

/**
 * For each alpha: once C R_max/(1-gamma) D_TV <= alpha D_CQL and the pool's
 * own improvement inequality J(pi) - alpha D_CQL >= J(own behavior) both
 * hold, the effective behavior must beat the own behavior on the pool's
 * empirical MDP.  Every return here is an exact empirical-MDP evaluation;
 * divergences are averaged under pi's empirical occupancy.  c <= 0 picks the
 * tightest constant that makes the chain a theorem, 2/(1-gamma).
 */
Lemma1Report check_lemma1(const MultiTaskMdp& mdp, index_t task, const EffectiveDataset& eff,
                          const TabularPolicy& pi, const EmpiricalBehaviorPolicy& behavior_eff,
                          const EmpiricalBehaviorPolicy& behavior_own,
                          const std::vector<scalar_t>& alpha_grid, scalar_t c = 0.0,
                          scalar_t smoothing = kBehaviorSmoothing);

struct Lemma2Report {
    scalar_t lhs = 0.0;         // E_d[sqrt((D(s)+1)/n(s))]
    scalar_t rhs = 0.0;         // sqrt(1+eps) * sqrt(E_d[1/n(s)])
    scalar_t rhs_stated = 0.0;  // sqrt(1+eps) * E_d[sqrt(1/n(s))]
    scalar_t epsilon = 0.0;
    bool pass = false;               // lhs <= rhs * (1 + 1e-12)
    bool stated_form_holds = false;  // lhs <= rhs_stated * (1 + 1e-12)
};

/**
 * Cauchy-Schwarz control of shift-inflated sampling error.  `rhs` keeps the
 * count average inside the square root, which is what Cauchy-Schwarz actually
 * yields, so pass can never be false for valid inputs.  `rhs_stated` moves
 * the expectation outside the root; that expression is smaller (L1 vs L2
 * mean) and genuinely undershoots lhs when the distances concentrate on
 * thinly sampled states, so it is reported but not asserted.
 *
 * Requires sum_s d(s) D(s) <= eps, D >= 0, d a distribution, and positive
 * counts wherever d has mass.
 */
Lemma2Report check_lemma2(const vector_t& d, const vector_t& d_values,
                          const std::vector<std::int64_t>& counts, scalar_t epsilon);

struct StrategySummary {
    std::string strategy;
    std::vector<scalar_t> j_per_task;
    std::vector<scalar_t> kl_per_task;
};

/// Side-by-side per-task returns and divergences, one column pair per
/// strategy, plus arithmetic cross-task means.  Column order = input order.
struct ScenarioReport {
    std::vector<std::string> strategies;
    std::vector<std::vector<scalar_t>> j_cols;   // [strategy][task]
    std::vector<std::vector<scalar_t>> kl_cols;  // [strategy][task]
    std::vector<scalar_t> j_avg;
    std::vector<scalar_t> kl_avg;
};

/// Needs at least two runs with matching task counts.
ScenarioReport scenario_report(const std::vector<StrategySummary>& runs);

void write_scenario_csv(std::ostream& out, const ScenarioReport& report);
std::string scenario_report_json(const ScenarioReport& report);

}  // namespace cds
