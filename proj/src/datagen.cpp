#include "cds/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cds/rng.hpp"

namespace cds {

namespace {

index_t greedy_action(const matrix_t& q, index_t s) {
    index_t best = 0;
    for (index_t a = 1; a < q.cols(); ++a)
        if (q(s, a) > q(s, best)) best = a;
    return best;
}

matrix_t greedy_rows(const matrix_t& q) {
    matrix_t probs = matrix_t::Zero(q.rows(), q.cols());
    for (index_t s = 0; s < q.rows(); ++s) probs(s, greedy_action(q, s)) = 1.0;
    return probs;
}

TabularPolicy replicate(const MultiTaskMdp& mdp, const matrix_t& rows) {
    TabularPolicy policy;
    policy.probs.assign(static_cast<std::size_t>(mdp.num_tasks), rows);
    return policy;
}

scalar_t j_of_rows(const MultiTaskMdp& mdp, index_t task, const matrix_t& rows) {
    return evaluate_policy(mdp, replicate(mdp, rows), task);
}

// One episode of epsilon-greedy acting; updates q in place unless frozen.
void run_episode(const MultiTaskMdp& mdp, index_t task, matrix_t& q, bool frozen,
                 const BehaviorTrainConfig& cfg, std::mt19937_64& g,
                 std::vector<Transition>& replay) {
    index_t s = sample_row(g, mdp.initial_dist);
    for (index_t step = 0; step < cfg.horizon; ++step) {
        const index_t a = uniform01(g) < cfg.epsilon ? uniform_index(g, mdp.num_actions)
                                                     : greedy_action(q, s);
        const scalar_t r = mdp.reward(task, s, a);
        const index_t s_next = sample_row(g, mdp.transition_row(s, a));
        const bool done = mdp.is_terminal(task, s);
        replay.push_back({s, a, r, s_next, done, task});
        if (!frozen) {
            const scalar_t target =
                done ? r : r + mdp.discount * q.row(s_next).maxCoeff();
            q(s, a) += cfg.learning_rate * (target - q(s, a));
        }
        if (done) break;
        s = s_next;
    }
}

matrix_t medium_mixture(const MultiTaskMdp& mdp, index_t task, const matrix_t& greedy,
                        scalar_t target, scalar_t band) {
    const matrix_t uniform =
        matrix_t::Constant(greedy.rows(), greedy.cols(), 1.0 / static_cast<scalar_t>(greedy.cols()));
    auto mix = [&](scalar_t lam) { return ((1.0 - lam) * greedy + lam * uniform).eval(); };

    const scalar_t j_uniform = j_of_rows(mdp, task, uniform);
    if (j_uniform >= target) {
        if (j_uniform <= target + band) return uniform;
        throw std::runtime_error("medium behavior unreachable: the uniform policy already exceeds the target return");
    }
    scalar_t lo = 0.0, hi = 1.0;  // J(lo) >= target > J(hi)
    for (int it = 0; it < 200; ++it) {
        const scalar_t mid = 0.5 * (lo + hi);
        if (j_of_rows(mdp, task, mix(mid)) >= target)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-12) break;
    }
    return mix(lo);
}

}  // namespace

BehaviorResult train_behavior(const MultiTaskMdp& mdp, index_t task, BehaviorStage stage,
                              std::uint64_t seed, const BehaviorTrainConfig& cfg) {
    const OptimalSolution opt = solve_optimal(mdp, task);
    const scalar_t target = opt.j * (stage == BehaviorStage::Expert ? cfg.expert_fraction
                                                                    : cfg.medium_fraction);

    auto g = substream(seed, "behavior", static_cast<std::uint64_t>(task));
    matrix_t q = matrix_t::Zero(mdp.num_states, mdp.num_actions);
    BehaviorResult result;
    result.j_star = opt.j;

    bool reached = false;
    for (int ep = 0; ep < cfg.max_episodes && !reached; ++ep) {
        run_episode(mdp, task, q, /*frozen=*/false, cfg, g, result.replay);
        result.episodes = ep + 1;
        reached = j_of_rows(mdp, task, greedy_rows(q)) >= target;
    }
    if (!reached)
        throw std::runtime_error("behavior training for task " + std::to_string(task) +
                                 " did not reach its return target within the episode cap");

    while (result.replay.size() < cfg.min_buffer)
        run_episode(mdp, task, q, /*frozen=*/true, cfg, g, result.replay);

    const matrix_t greedy = greedy_rows(q);
    matrix_t rows;
    if (stage == BehaviorStage::Expert) {
        rows = greedy;
    } else {
        rows = medium_mixture(mdp, task, greedy, target, cfg.medium_band * opt.j);
    }
    result.policy = replicate(mdp, rows);
    result.j_policy = evaluate_policy(mdp, result.policy, task);
    return result;
}

TaskDataset rollout_policy(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task,
                           std::size_t num_transitions, std::uint64_t seed, DatasetQuality quality,
                           const std::string& behavior_desc, index_t horizon) {
    TaskDataset data;
    data.task = task;
    data.manifest = {quality, seed, behavior_desc, num_transitions};
    data.transitions.reserve(num_transitions);

    auto g = substream(seed, "rollout", static_cast<std::uint64_t>(task));
    while (data.transitions.size() < num_transitions) {
        index_t s = sample_row(g, mdp.initial_dist);
        for (index_t step = 0; step < horizon && data.transitions.size() < num_transitions; ++step) {
            const index_t a = sample_row(g, policy.row(task, s));
            const index_t s_next = sample_row(g, mdp.transition_row(s, a));
            const bool done = mdp.is_terminal(task, s);
            data.transitions.push_back({s, a, mdp.reward(task, s, a), s_next, done, task});
            if (done) break;
            s = s_next;
        }
    }
    return data;
}

std::vector<std::vector<Transition>> rollout_episodes(const MultiTaskMdp& mdp,
                                                      const TabularPolicy& policy, index_t task,
                                                      int num_episodes, index_t horizon,
                                                      std::uint64_t seed, bool ignore_done) {
    std::vector<std::vector<Transition>> episodes;
    episodes.reserve(static_cast<std::size_t>(num_episodes));
    auto g = substream(seed, "episodes", static_cast<std::uint64_t>(task));
    for (int ep = 0; ep < num_episodes; ++ep) {
        std::vector<Transition> traj;
        index_t s = sample_row(g, mdp.initial_dist);
        for (index_t step = 0; step < horizon; ++step) {
            const index_t a = sample_row(g, policy.row(task, s));
            const index_t s_next = sample_row(g, mdp.transition_row(s, a));
            const bool done = !ignore_done && mdp.is_terminal(task, s);
            traj.push_back({s, a, mdp.reward(task, s, a), s_next, done, task});
            if (done) break;
            s = s_next;
        }
        episodes.push_back(std::move(traj));
    }
    return episodes;
}

TaskDataset make_medium_replay(const MultiTaskMdp& mdp, index_t task, std::uint64_t seed,
                               std::size_t size, const BehaviorTrainConfig& cfg) {
    const BehaviorResult trained = train_behavior(mdp, task, BehaviorStage::Medium, seed, cfg);
    if (trained.replay.size() < size)
        throw std::invalid_argument("replay buffer holds " + std::to_string(trained.replay.size()) +
                                    " transitions, requested " + std::to_string(size));
    TaskDataset data;
    data.task = task;
    data.manifest = {DatasetQuality::MediumReplay, seed,
                     "replay buffer of an epsilon-greedy learner stopped at 50% of optimal", size};
    data.transitions.assign(trained.replay.begin(),
                            trained.replay.begin() + static_cast<std::ptrdiff_t>(size));
    return data;
}

Transition relabel(const Transition& t, index_t target, const MultiTaskMdp& mdp) {
    Transition out = t;
    out.r = task_reward(mdp, target, t.s, t.a);
    out.done = mdp.is_terminal(target, t.s);
    return out;
}

namespace {

TaskDataset relabeled_bucket(const std::vector<const std::vector<Transition>*>& trajs, index_t task,
                             const MultiTaskMdp& mdp, DatasetQuality quality, std::uint64_t seed,
                             const std::string& desc) {
    TaskDataset data;
    data.task = task;
    for (const auto* traj : trajs)
        for (const Transition& t : *traj) {
            Transition r = relabel(t, task, mdp);
            r.origin_task = task;  // split data becomes the task's own data
            data.transitions.push_back(r);
        }
    data.manifest = {quality, seed, desc, data.transitions.size()};
    return data;
}

}  // namespace

std::vector<TaskDataset> split_undirected(const std::vector<std::vector<Transition>>& trajectories,
                                          index_t num_tasks, const MultiTaskMdp& mdp,
                                          std::uint64_t seed) {
    if (trajectories.empty()) throw std::invalid_argument("no trajectories to split");
    std::vector<std::size_t> order(trajectories.size());
    std::iota(order.begin(), order.end(), 0);
    auto g = substream(seed, "undirected-split");
    shuffle_indices(g, order);

    std::vector<std::vector<const std::vector<Transition>*>> buckets(
        static_cast<std::size_t>(num_tasks));
    for (std::size_t k = 0; k < order.size(); ++k)
        buckets[k % static_cast<std::size_t>(num_tasks)].push_back(&trajectories[order[k]]);

    std::vector<TaskDataset> out;
    for (index_t i = 0; i < num_tasks; ++i)
        out.push_back(relabeled_bucket(buckets[static_cast<std::size_t>(i)], i, mdp,
                                       DatasetQuality::UndirectedSplit, seed,
                                       "random equal trajectory split"));
    return out;
}

std::vector<TaskDataset> split_directed(const std::vector<std::vector<Transition>>& trajectories,
                                        const MultiGoalGridSpec& spec, const MultiTaskMdp& mdp) {
    if (trajectories.empty()) throw std::invalid_argument("no trajectories to split");
    const index_t num_tasks = static_cast<index_t>(spec.goals.size());
    std::vector<std::vector<const std::vector<Transition>*>> buckets(
        static_cast<std::size_t>(num_tasks));
    for (const auto& traj : trajectories) {
        if (traj.empty()) throw std::invalid_argument("cannot direct an empty trajectory");
        const Transition& last = traj.back();
        const index_t final_state = last.done ? last.s : last.s_next;
        index_t best = 0;
        for (index_t i = 1; i < num_tasks; ++i)
            if (goal_distance(spec, final_state, i) < goal_distance(spec, final_state, best))
                best = i;
        buckets[static_cast<std::size_t>(best)].push_back(&traj);
    }
    std::vector<TaskDataset> out;
    for (index_t i = 0; i < num_tasks; ++i)
        out.push_back(relabeled_bucket(buckets[static_cast<std::size_t>(i)], i, mdp,
                                       DatasetQuality::DirectedSplit, 0,
                                       "trajectories assigned to the nearest final-state goal"));
    return out;
}

}  // namespace cds
