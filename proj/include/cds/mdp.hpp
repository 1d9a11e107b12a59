#pragma once

#include <string>
#include <vector>

#include "cds/transition.hpp"
#include "cds/types.hpp"

namespace cds {

/**
 * Finite MDP with one shared transition function and one reward table per
 * task.  Transition rows are stored dense, row `s * num_actions + a` holding
 * the distribution over successor states.
 *
 * Episode convention: a state flagged terminal for a task yields exactly one
 * more reward step (any action), after which the episode ends.  Solvers cut
 * the discounted continuation after that step; occupancy measures treat
 * terminal states as absorbing so that the state distribution keeps unit mass.
 */
struct MultiTaskMdp {
    index_t num_states = 0;
    index_t num_actions = 0;
    index_t num_tasks = 0;
    matrix_t transition;                         // (S*A) x S
    std::vector<matrix_t> rewards;               // per task, S x A
    scalar_t discount = 0.0;
    vector_t initial_dist;                       // S
    std::vector<std::vector<std::uint8_t>> terminal;  // per task, S flags

    auto transition_row(index_t s, index_t a) const {
        return transition.row(s * num_actions + a);
    }
    bool is_terminal(index_t task, index_t s) const {
        return terminal[static_cast<std::size_t>(task)][static_cast<std::size_t>(s)] != 0;
    }
    scalar_t reward(index_t task, index_t s, index_t a) const {
        return rewards[static_cast<std::size_t>(task)](s, a);
    }
    scalar_t max_abs_reward() const;
};

/// Stochastic task-conditioned policy; one S x A row-stochastic matrix per task.
struct TabularPolicy {
    std::vector<matrix_t> probs;

    auto row(index_t task, index_t s) const { return probs[static_cast<std::size_t>(task)].row(s); }
    static TabularPolicy uniform(index_t num_tasks, index_t num_states, index_t num_actions);
};

/// Discounted state-visitation distribution for one task, normalized by (1 - discount).
struct OccupancyMeasure {
    index_t task = 0;
    vector_t dist;
};

/// Optimal-control solution for one task.
struct OptimalSolution {
    matrix_t q;        // S x A
    vector_t v;        // S
    scalar_t j = 0.0;  // expected discounted return from the initial distribution
};

/// Structural checks.  Returns human-readable violations (empty means valid):
/// row-stochastic transition rows, a valid initial distribution, discount in
/// [0, 1), and consistent shapes.
std::vector<std::string> validate(const MultiTaskMdp& mdp);

/// State values of a fixed policy, solved exactly via a dense linear system.
vector_t policy_values_linear(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task);

/// State values of a fixed policy via fixed-point iteration to `tol` (sup norm).
vector_t policy_values_iterative(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task,
                                 scalar_t tol = 1e-10, index_t max_iters = 2'000'000);

/// Expected discounted return of `policy` on `task` from the initial
/// distribution.  Uses the linear solver up to 500 states, iteration beyond.
scalar_t evaluate_policy(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task);

/// Discounted, (1-gamma)-normalized state occupancy of `policy` on `task`.
OccupancyMeasure state_occupancy(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task);

/// Optimal Q/V/J for one task via value iteration (sup-norm tolerance).
OptimalSolution solve_optimal(const MultiTaskMdp& mdp, index_t task, scalar_t tol = 1e-12,
                              index_t max_iters = 2'000'000);

/// Maximum-likelihood MDP from logged transitions.  Observed (s, a) pairs get
/// empirical successor frequencies; if any pair is unobserved, a zero-reward
/// absorbing fallback state is appended and unobserved pairs route to it.
MultiTaskMdp empirical_mdp(const std::vector<Transition>& data, const MultiTaskMdp& base);

/// JSON round-trip (versioned document; dense row-major transition array).
std::string mdp_to_json(const MultiTaskMdp& mdp);
MultiTaskMdp mdp_from_json(const std::string& text);

}  // namespace cds
