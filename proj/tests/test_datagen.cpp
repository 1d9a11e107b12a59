#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "cds/datagen.hpp"
#include "cds/envs.hpp"

using namespace cds;

namespace {

MultiTaskMdp corridor() {
    CorridorTriTaskSpec spec;
    spec.length = 10;
    spec.slip = 0.1;
    return build_corridor_tritask(spec);
}

const index_t kFwd = static_cast<index_t>(CorridorTask::Forward);
const index_t kBwd = static_cast<index_t>(CorridorTask::Backward);

}  // namespace

TEST_CASE("relabel rewrites reward and done from the target task") {
    const MultiTaskMdp m = corridor();
    const Transition right_move{4, static_cast<index_t>(CorridorAction::Right), 1.0, 5, false, kFwd};

    const Transition same = relabel(right_move, kFwd, m);
    CHECK(same == right_move);

    const Transition flipped = relabel(right_move, kBwd, m);
    CHECK(flipped.r == 0.0);
    CHECK(flipped.s == right_move.s);
    CHECK(flipped.a == right_move.a);
    CHECK(flipped.s_next == right_move.s_next);
    CHECK(flipped.origin_task == kFwd);
    CHECK(relabel(flipped, kBwd, m) == flipped);  // idempotent

    MultiGoalGridSpec gspec;
    gspec.width = 5;
    gspec.height = 5;
    gspec.goals = {{4, 4}, {0, 4}, {4, 0}};
    const MultiTaskMdp grid = build_multigoal_grid(gspec);
    const index_t at_goal2 = grid_state(gspec, {4, 0});
    const Transition wander{at_goal2, 3, 0.0, at_goal2, false, 0};
    const Transition to_goal_task = relabel(wander, 2, grid);
    CHECK(to_goal_task.r == 1.0);
    CHECK(to_goal_task.done);
}

TEST_CASE("rollout_policy yields exactly the requested transitions with oracle rewards") {
    const MultiTaskMdp m = corridor();
    const TabularPolicy uniform = TabularPolicy::uniform(m.num_tasks, m.num_states, m.num_actions);

    const TaskDataset empty = rollout_policy(m, uniform, kFwd, 0, 7, DatasetQuality::Medium);
    CHECK(empty.transitions.empty());

    const TaskDataset data = rollout_policy(m, uniform, kFwd, 137, 7, DatasetQuality::Medium,
                                            "uniform walk", 20);
    CHECK(data.transitions.size() == 137);
    CHECK(data.manifest.size == 137);
    for (const Transition& t : data.transitions) {
        CHECK(t.r == task_reward(m, kFwd, t.s, t.a));
        CHECK(t.origin_task == kFwd);
        CHECK(!t.done);  // corridor tasks never terminate
    }

    const TaskDataset again = rollout_policy(m, uniform, kFwd, 137, 7, DatasetQuality::Medium,
                                             "uniform walk", 20);
    CHECK(again == data);
    const TaskDataset other = rollout_policy(m, uniform, kFwd, 137, 8, DatasetQuality::Medium,
                                             "uniform walk", 20);
    CHECK(other.transitions != data.transitions);
}

TEST_CASE("optimal-policy episodes on the grid all finish at the goal") {
    MultiGoalGridSpec spec;
    spec.width = 5;
    spec.height = 5;
    spec.goals = {{4, 4}};
    const MultiTaskMdp m = build_multigoal_grid(spec);

    const OptimalSolution opt = solve_optimal(m, 0);
    TabularPolicy greedy = TabularPolicy::uniform(m.num_tasks, m.num_states, m.num_actions);
    greedy.probs[0].setZero();
    for (index_t s = 0; s < m.num_states; ++s) {
        index_t best = 0;
        for (index_t a = 1; a < m.num_actions; ++a)
            if (opt.q(s, a) > opt.q(s, best)) best = a;
        greedy.probs[0](s, best) = 1.0;
    }

    const auto episodes = rollout_episodes(m, greedy, 0, 25, 50, 3);
    CHECK(episodes.size() == 25);
    for (const auto& traj : episodes) {
        REQUIRE(!traj.empty());
        CHECK(traj.back().done);
        CHECK(traj.back().r == 1.0);
        CHECK(goal_distance(spec, traj.back().s, 0) <= spec.goal_radius);
    }

    const auto walks = rollout_episodes(m, greedy, 0, 5, 50, 3, /*ignore_done=*/true);
    for (const auto& traj : walks) {
        CHECK(traj.size() == 50);
        for (const Transition& t : traj) CHECK(!t.done);
    }
}

TEST_CASE("behavior training hits the medium band and the expert target") {
    const MultiTaskMdp m = corridor();

    const BehaviorResult medium = train_behavior(m, kFwd, BehaviorStage::Medium, 11);
    CHECK(medium.j_policy >= 0.4 * medium.j_star);
    CHECK(medium.j_policy <= 0.6 * medium.j_star);
    CHECK(!medium.replay.empty());

    const BehaviorResult expert = train_behavior(m, kFwd, BehaviorStage::Expert, 11);
    CHECK(expert.j_policy >= 0.95 * expert.j_star);

    const BehaviorResult repeat = train_behavior(m, kFwd, BehaviorStage::Expert, 11);
    CHECK(repeat.replay == expert.replay);
    CHECK(repeat.j_policy == expert.j_policy);

    BehaviorTrainConfig strict;
    strict.max_episodes = 0;
    CHECK_THROWS_AS(train_behavior(m, kFwd, BehaviorStage::Expert, 11, strict), std::runtime_error);
}

TEST_CASE("medium-replay takes a prefix of the training buffer") {
    const MultiTaskMdp m = corridor();

    BehaviorTrainConfig cfg;
    cfg.min_buffer = 4000;
    const TaskDataset replay = make_medium_replay(m, kFwd, 21, 4000, cfg);
    CHECK(replay.transitions.size() == 4000);
    CHECK(replay.manifest.quality == DatasetQuality::MediumReplay);

    // Exploration leaves at least two actions behind in any frequently seen state.
    std::map<index_t, std::set<index_t>> actions_seen;
    std::map<index_t, int> visits;
    for (const Transition& t : replay.transitions) {
        actions_seen[t.s].insert(t.a);
        ++visits[t.s];
    }
    for (const auto& [s, count] : visits)
        if (count >= 50) CHECK(actions_seen[s].size() >= 2);

    // Without the padding option the natural buffer is what it is.
    const BehaviorResult bare = train_behavior(m, kFwd, BehaviorStage::Medium, 21);
    CHECK_THROWS_AS(make_medium_replay(m, kFwd, 21, bare.replay.size() + 1),
                    std::invalid_argument);
}

TEST_CASE("undirected split deals trajectories evenly and relabels them") {
    const MultiTaskMdp m = corridor();
    std::vector<std::vector<Transition>> trajs;
    for (index_t k = 0; k < 14; ++k)
        trajs.push_back({{k % m.num_states, static_cast<index_t>(CorridorAction::Right), 0.0,
                          std::min<index_t>(k % m.num_states + 1, 9), false, kFwd}});

    const auto parts = split_undirected(trajs, 3, m, 5);
    REQUIRE(parts.size() == 3);
    std::size_t total = 0;
    for (const TaskDataset& part : parts) {
        CHECK(part.manifest.quality == DatasetQuality::UndirectedSplit);
        total += part.transitions.size();
        for (const Transition& t : part.transitions) {
            CHECK(t.r == task_reward(m, part.task, t.s, t.a));
            CHECK(t.origin_task == part.task);
        }
        CHECK(part.transitions.size() >= 4);
        CHECK(part.transitions.size() <= 5);
    }
    CHECK(total == 14);

    // Union preserved: compare multisets of (s, a, s_next).
    std::multiset<std::tuple<index_t, index_t, index_t>> in, out;
    for (const auto& traj : trajs)
        for (const Transition& t : traj) in.insert({t.s, t.a, t.s_next});
    for (const auto& part : parts)
        for (const Transition& t : part.transitions) out.insert({t.s, t.a, t.s_next});
    CHECK(in == out);

    const auto same = split_undirected(trajs, 3, m, 5);
    for (std::size_t i = 0; i < parts.size(); ++i) CHECK(same[i] == parts[i]);

    CHECK_THROWS_AS(split_undirected({}, 3, m, 5), std::invalid_argument);
}

TEST_CASE("directed split routes by the goal nearest to the final state") {
    MultiGoalGridSpec spec;
    spec.width = 5;
    spec.height = 3;
    spec.goals = {{0, 0}, {4, 0}};
    spec.start = {2, 1};
    const MultiTaskMdp m = build_multigoal_grid(spec);

    auto one_step_to = [&](Cell c, bool done) {
        const index_t target = grid_state(spec, c);
        const index_t start = grid_state(spec, spec.start);
        return std::vector<Transition>{{done ? target : start, 0, 0.0, target, done, 0}};
    };

    const std::vector<std::vector<Transition>> trajs = {
        one_step_to({4, 1}, false),   // closer to goal 1
        one_step_to({0, 1}, false),   // closer to goal 0
        one_step_to({2, 2}, false),   // equidistant: tie to task 0
        one_step_to({4, 0}, true),    // done: final state is the source state
    };
    const auto parts = split_directed(trajs, spec, m);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].transitions.size() == 2);
    CHECK(parts[1].transitions.size() == 2);
    CHECK(parts[0].manifest.quality == DatasetQuality::DirectedSplit);

    // The done trajectory ends on goal 1 itself.
    bool found_goal_end = false;
    for (const Transition& t : parts[1].transitions)
        if (t.done && t.r == 1.0) found_goal_end = true;
    CHECK(found_goal_end);
}
