#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cds/dataset.hpp"
#include "cds/envs.hpp"
#include "cds/mdp.hpp"

namespace cds {

enum class BehaviorStage { Medium, Expert };

struct BehaviorTrainConfig {
    scalar_t epsilon = 0.3;        // exploration rate of the tabular Q-learner
    scalar_t learning_rate = 0.2;
    index_t horizon = 100;         // episode truncation during training
    int max_episodes = 20000;
    scalar_t expert_fraction = 0.95;   // greedy return target, as a fraction of optimal
    scalar_t medium_fraction = 0.5;
    scalar_t medium_band = 0.1;        // acceptable |J - medium_fraction*J*| / J*
    std::size_t min_buffer = 0;        // keep collecting with the frozen snapshot until this size
};

struct BehaviorResult {
    TabularPolicy policy;              // stage policy, replicated across task slots
    std::vector<Transition> replay;    // every environment step taken, in order
    scalar_t j_policy = 0.0;           // exact return of `policy` on the task
    scalar_t j_star = 0.0;
    int episodes = 0;                  // episodes consumed up to the snapshot
};

/**
 * Epsilon-greedy tabular Q-learning on one task.  Medium stops at the first
 * episode whose greedy return reaches 50% of optimal and returns a
 * greedy/uniform mixture tuned (by bisection) to land on that return level;
 * Expert trains to 95% of optimal and returns the pure greedy policy.  If the
 * replay buffer is still shorter than `min_buffer` at the snapshot, additional
 * episodes are collected with the frozen snapshot learner.
 */
BehaviorResult train_behavior(const MultiTaskMdp& mdp, index_t task, BehaviorStage stage,
                              std::uint64_t seed, const BehaviorTrainConfig& cfg = {});

/// Episodic rollouts truncated at `horizon`, cut to exactly `num_transitions` steps.
TaskDataset rollout_policy(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task,
                           std::size_t num_transitions, std::uint64_t seed, DatasetQuality quality,
                           const std::string& behavior_desc = "", index_t horizon = 100);

/// Whole trajectories, one vector per episode.  With `ignore_done` the walk
/// runs to the horizon regardless of terminal flags (undirected exploration).
std::vector<std::vector<Transition>> rollout_episodes(const MultiTaskMdp& mdp,
                                                      const TabularPolicy& policy, index_t task,
                                                      int num_episodes, index_t horizon,
                                                      std::uint64_t seed, bool ignore_done = false);

/// First `size` transitions of a medium-stage learner's replay buffer.
TaskDataset make_medium_replay(const MultiTaskMdp& mdp, index_t task, std::uint64_t seed,
                               std::size_t size, const BehaviorTrainConfig& cfg = {});

/// Same (s, a, s'); reward re-read from the target task's table, done flag
/// recomputed from the target task's terminal predicate, origin kept.
Transition relabel(const Transition& t, index_t target, const MultiTaskMdp& mdp);

/// Random equal partition of trajectories (sizes differ by at most one),
/// each part relabeled to its assigned task.
std::vector<TaskDataset> split_undirected(const std::vector<std::vector<Transition>>& trajectories,
                                          index_t num_tasks, const MultiTaskMdp& mdp,
                                          std::uint64_t seed);

/// Assign each trajectory to the task whose goal is Chebyshev-closest to the
/// trajectory's final state (ties to the lowest task id), then relabel.
std::vector<TaskDataset> split_directed(const std::vector<std::vector<Transition>>& trajectories,
                                        const MultiGoalGridSpec& spec, const MultiTaskMdp& mdp);

}  // namespace cds
