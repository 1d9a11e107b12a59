#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cds/datagen.hpp"
#include "cds/envs.hpp"
#include "cds/offline_learner.hpp"
#include "cds/rng.hpp"
#include "oracles.hpp"

using namespace cds;

namespace {

MultiTaskMdp corridor() {
    CorridorTriTaskSpec spec;
    spec.length = 10;
    spec.slip = 0.1;
    return build_corridor_tritask(spec);
}

std::vector<EffectiveDataset> corridor_pools(const MultiTaskMdp& m, std::size_t n) {
    const TabularPolicy uniform = TabularPolicy::uniform(m.num_tasks, m.num_states, m.num_actions);
    std::vector<EffectiveDataset> pools;
    for (index_t i = 0; i < m.num_tasks; ++i)
        pools.push_back(as_effective(
            rollout_policy(m, uniform, i, n, 40 + static_cast<std::uint64_t>(i),
                           DatasetQuality::Medium, "uniform walk", 25)));
    return pools;
}

LearnerConfig exact_config(scalar_t discount) {
    LearnerConfig cfg;
    cfg.learning_rate = 1.0;
    cfg.iterations = 340;
    cfg.beta = 0.0;
    cfg.alpha = 0.0;
    cfg.policy_temperature = 0.0;
    cfg.batch_per_task = 0;
    cfg.discount = discount;
    cfg.r_max = 1.0;
    return cfg;
}

scalar_t dataset_policy_value(const EffectiveDataset& data, const matrix_t& q, const matrix_t& pi) {
    scalar_t sum = 0.0;
    for (const Transition& t : data.transitions) sum += pi.row(t.s).dot(q.row(t.s));
    return sum / static_cast<scalar_t>(data.transitions.size());
}

scalar_t dataset_behavior_value(const EffectiveDataset& data, const matrix_t& q) {
    scalar_t sum = 0.0;
    for (const Transition& t : data.transitions) sum += q(t.s, t.a);
    return sum / static_cast<scalar_t>(data.transitions.size());
}

}  // namespace

TEST_CASE("config validation names the offending field") {
    LearnerConfig cfg;
    CHECK_NOTHROW(validate_config(cfg));
    cfg.batch_per_task = 3;
    CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("even"), std::invalid_argument);
    cfg = {};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("learning_rate"),
                         std::invalid_argument);
    cfg = {};
    cfg.discount = 1.0;
    CHECK_THROWS_WITH_AS(validate_config(cfg), doctest::Contains("discount"),
                         std::invalid_argument);
}

TEST_CASE("behavior policy estimation is exact count ratios") {
    std::vector<EffectiveDataset> datasets(1);
    datasets[0].task = 0;
    for (int k = 0; k < 3; ++k) datasets[0].transitions.push_back({0, 0, 0.0, 1, false, 0});
    datasets[0].transitions.push_back({0, 1, 0.0, 1, false, 0});
    datasets[0].weights.assign(4, 1.0);

    const EmpiricalBehaviorPolicy b = estimate_behavior_policy(datasets, 3, 2);
    CHECK(b.probs[0](0, 0) == 0.75);
    CHECK(b.probs[0](0, 1) == 0.25);
    CHECK(b.counts[0](0, 0) == 3.0);
    CHECK(b.is_observed(0, 0));
    CHECK(!b.is_observed(0, 2));
    CHECK(b.probs[0].row(2).sum() == 0.0);

    // A single-action dataset gives a degenerate row.
    std::vector<EffectiveDataset> lone(1);
    lone[0].transitions.push_back({1, 1, 0.0, 0, false, 0});
    lone[0].weights.assign(1, 1.0);
    CHECK(estimate_behavior_policy(lone, 3, 2).probs[0](1, 1) == 1.0);

    // Additive counts: new data at state 2 leaves row 0 untouched.
    datasets[0].transitions.push_back({2, 1, 0.0, 0, false, 1});
    datasets[0].weights.push_back(1.0);
    const EmpiricalBehaviorPolicy b2 = estimate_behavior_policy(datasets, 3, 2);
    CHECK(b2.probs[0].row(0) == b.probs[0].row(0));
    CHECK(b2.is_observed(0, 2));

    std::vector<EffectiveDataset> empty(1);
    CHECK_THROWS_WITH_AS(estimate_behavior_policy(empty, 3, 2), doctest::Contains("task 0"),
                         std::invalid_argument);
}

TEST_CASE("policy extraction: softmax rows, greedy limit, tie rule") {
    ConservativeQTable table;
    table.q.push_back(matrix_t::Zero(3, 3));
    table.q[0] << 1.0, 2.0, 3.0,
                  5.0, 5.0, 1.0,
                  2.0, 2.0, 2.0;

    const TabularPolicy soft = extract_policy(table, 1.0);
    CHECK(soft.probs[0].row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(soft.probs[0](0, 2) > soft.probs[0](0, 1));
    CHECK(soft.probs[0](2, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    const TabularPolicy nearly = extract_policy(table, 1e-8);
    CHECK(nearly.probs[0](0, 2) == doctest::Approx(1.0).epsilon(1e-9));

    const TabularPolicy greedy = extract_policy(table, 0.0);
    CHECK(greedy.probs[0](0, 2) == 1.0);
    CHECK(greedy.probs[0](1, 0) == 1.0);  // tie broken toward the lowest index
    CHECK(greedy.probs[0](2, 0) == 1.0);
}

TEST_CASE("zero-penalty learners recover the optimal table from exhaustive data") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        const oracle::RationalMdp rm = oracle::random_rational_mdp(seed, 12, 4, 2, seed % 2 == 1);
        std::vector<EffectiveDataset> pools;
        for (index_t i = 0; i < rm.mdp.num_tasks; ++i) {
            EffectiveDataset d;
            d.task = i;
            d.transitions = oracle::exhaustive_dataset(rm, i);
            d.weights.assign(d.transitions.size(), 1.0);
            pools.push_back(std::move(d));
        }
        const LearnerConfig cfg = exact_config(rm.mdp.discount);

        const ConservativeQTable cql =
            cql_fitted_iteration(rm.mdp.num_states, rm.mdp.num_actions, pools, cfg);
        const BracResult brac =
            brac_fitted_iteration(rm.mdp.num_states, rm.mdp.num_actions, pools, cfg);

        for (index_t i = 0; i < rm.mdp.num_tasks; ++i) {
            const auto v = oracle::value_iteration(rm.mdp, i);
            const auto q_star = oracle::optimal_q(rm.mdp, i, v);
            for (index_t s = 0; s < rm.mdp.num_states; ++s)
                for (index_t a = 0; a < rm.mdp.num_actions; ++a) {
                    const scalar_t truth = q_star[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
                    CHECK(cql.q[static_cast<std::size_t>(i)](s, a) == doctest::Approx(truth).epsilon(1e-6));
                    CHECK(brac.table.q[static_cast<std::size_t>(i)](s, a) ==
                          doctest::Approx(truth).epsilon(1e-6));
                    CHECK(brac.conservative_q[static_cast<std::size_t>(i)](s, a) ==
                          doctest::Approx(truth).epsilon(1e-6));  // alpha = 0
                }
        }
    }
}

TEST_CASE("uniform mu on uniform-count data cancels the penalty") {
    // Deterministic 5-state, 4-action ring; every pair appears exactly once.
    MultiTaskMdp m;
    m.num_states = 5;
    m.num_actions = 4;
    m.num_tasks = 1;
    m.discount = 0.9;
    m.transition = matrix_t::Zero(20, 5);
    m.rewards.push_back(matrix_t::Zero(5, 4));
    auto rng = substream(77, "ring");
    for (index_t s = 0; s < 5; ++s)
        for (index_t a = 0; a < 4; ++a) {
            m.transition(s * 4 + a, (s + a + 1) % 5) = 1.0;
            m.rewards[0](s, a) = uniform01(rng);
        }
    m.initial_dist = vector_t::Constant(5, 0.2);
    m.terminal.push_back(std::vector<std::uint8_t>(5, 0));

    std::vector<EffectiveDataset> pools(1);
    pools[0].task = 0;
    for (index_t s = 0; s < 5; ++s)
        for (index_t a = 0; a < 4; ++a)
            pools[0].transitions.push_back({s, a, m.rewards[0](s, a), (s + a + 1) % 5, false, 0});
    pools[0].weights.assign(20, 1.0);

    LearnerConfig plain;
    plain.beta = 0.0;
    plain.batch_per_task = 0;
    plain.learning_rate = 0.7;
    plain.iterations = 250;
    plain.policy_temperature = 0.3;
    plain.discount = 0.9;
    LearnerConfig penalized = plain;
    penalized.beta = 7.0;
    penalized.mu_mode = MuMode::Uniform;
    penalized.q_cap_margin = 8.0;

    const ConservativeQTable a = cql_fitted_iteration(5, 4, pools, plain);
    const ConservativeQTable b = cql_fitted_iteration(5, 4, pools, penalized);
    CHECK((a.q[0] - b.q[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stronger penalties never raise the learned policy's dataset value") {
    const MultiTaskMdp m = corridor();
    const auto pools = corridor_pools(m, 2500);

    LearnerConfig cfg;
    cfg.batch_per_task = 0;
    cfg.iterations = 150;
    cfg.learning_rate = 0.5;
    cfg.policy_temperature = 0.2;
    cfg.discount = m.discount;
    cfg.q_cap_margin = 2.0;

    scalar_t previous = 1e300;
    for (const scalar_t beta : {0.0, 0.3, 1.0}) {
        cfg.beta = beta;
        const ConservativeQTable table =
            cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg);
        const TabularPolicy pi = extract_policy(table, cfg.policy_temperature);
        scalar_t value = 0.0;
        for (index_t i = 0; i < m.num_tasks; ++i)
            value += dataset_policy_value(pools[static_cast<std::size_t>(i)],
                                          table.q[static_cast<std::size_t>(i)],
                                          pi.probs[static_cast<std::size_t>(i)]);
        CHECK(value <= previous + 1e-9);
        previous = value;
    }
}

TEST_CASE("penalized values undercut the data's own evaluation of the policy") {
    const MultiTaskMdp m = corridor();
    std::vector<EffectiveDataset> pools;
    pools.push_back(as_effective(make_medium_replay(m, 0, 21, 10000, [] {
        BehaviorTrainConfig c;
        c.min_buffer = 10000;
        return c;
    }())));
    {
        const BehaviorResult med = train_behavior(m, 1, BehaviorStage::Medium, 22);
        pools.push_back(as_effective(
            rollout_policy(m, med.policy, 1, 3000, 22, DatasetQuality::Medium, "", 100)));
        const BehaviorResult exp = train_behavior(m, 2, BehaviorStage::Expert, 23);
        pools.push_back(as_effective(
            rollout_policy(m, exp.policy, 2, 200, 23, DatasetQuality::Expert, "", 100)));
    }

    LearnerConfig cfg;
    cfg.batch_per_task = 0;
    cfg.iterations = 400;
    cfg.learning_rate = 0.5;
    cfg.policy_temperature = 0.2;
    cfg.mu_mode = MuMode::CurrentPolicy;  // penalty sampled from the evolving policy
    cfg.discount = m.discount;

    for (const scalar_t beta : {0.5, 1.0}) {
        cfg.beta = beta;
        const ConservativeQTable table =
            cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg);
        {
            // One extra sweep must barely move the table: the penalized
            // iteration has to settle at a fixed point, not orbit one.
            LearnerConfig probe = cfg;
            probe.iterations = cfg.iterations + 1;
            const ConservativeQTable next =
                cql_fitted_iteration(m.num_states, m.num_actions, pools, probe);
            scalar_t drift = 0.0;
            for (std::size_t i = 0; i < table.q.size(); ++i)
                drift = std::max(drift, (table.q[i] - next.q[i]).cwiseAbs().maxCoeff());
            CHECK(drift < 1e-6);
        }
        const TabularPolicy pi = extract_policy(table, cfg.policy_temperature);

        for (index_t i = 0; i < m.num_tasks; ++i) {
            const auto& pool = pools[static_cast<std::size_t>(i)];
            const MultiTaskMdp emp = empirical_mdp(pool.transitions, m);
            TabularPolicy padded =
                TabularPolicy::uniform(m.num_tasks, emp.num_states, m.num_actions);
            for (index_t s = 0; s < m.num_states; ++s)
                padded.probs[static_cast<std::size_t>(i)].row(s) =
                    pi.probs[static_cast<std::size_t>(i)].row(s);
            const vector_t u = policy_values_linear(emp, padded, i);

            std::vector<bool> visited(static_cast<std::size_t>(m.num_states), false);
            for (const Transition& t : pool.transitions) visited[static_cast<std::size_t>(t.s)] = true;
            scalar_t worst = -1e300;
            for (index_t s = 0; s < m.num_states; ++s) {
                if (!visited[static_cast<std::size_t>(s)]) continue;
                const scalar_t v_hat = pi.probs[static_cast<std::size_t>(i)].row(s).dot(
                    table.q[static_cast<std::size_t>(i)].row(s));
                worst = std::max(worst, v_hat - u(s));
            }
            CHECK(worst <= 1e-6);
        }
    }

    // Where the behavior already matches the extracted policy (narrow expert
    // data), penalization leaves no daylight between the two dataset values.
    cfg.beta = 1.0;
    const ConservativeQTable table =
        cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg);
    const TabularPolicy pi = extract_policy(table, cfg.policy_temperature);
    const scalar_t expert_gap = dataset_policy_value(pools[2], table.q[2], pi.probs[2]) -
                                dataset_behavior_value(pools[2], table.q[2]);
    CHECK(expert_gap <= 1e-6);
}

TEST_CASE("stratified batches are deterministic per seed") {
    const MultiTaskMdp m = corridor();
    const TabularPolicy uniform = TabularPolicy::uniform(m.num_tasks, m.num_states, m.num_actions);
    const TaskDataset own = rollout_policy(m, uniform, 0, 600, 7, DatasetQuality::Medium, "", 25);
    const TaskDataset other = rollout_policy(m, uniform, 1, 600, 8, DatasetQuality::Medium, "", 25);

    std::vector<EffectiveDataset> pools(1);
    pools[0].task = 0;
    for (const Transition& t : own.transitions) {
        pools[0].transitions.push_back(t);
        pools[0].weights.push_back(1.0);
    }
    for (const Transition& t : other.transitions) {
        Transition r = relabel(t, 0, m);
        pools[0].transitions.push_back(r);
        pools[0].weights.push_back(0.7);
    }

    LearnerConfig cfg;
    cfg.batch_per_task = 64;
    cfg.iterations = 60;
    cfg.discount = m.discount;
    cfg.q_cap_margin = 2.0;

    auto g1 = substream(99, "train");
    auto g2 = substream(99, "train");
    auto g3 = substream(100, "train");
    const ConservativeQTable a = cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg, &g1);
    const ConservativeQTable b = cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg, &g2);
    const ConservativeQTable c = cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg, &g3);
    CHECK(a.q[0] == b.q[0]);
    CHECK(a.q[0] != c.q[0]);
}

TEST_CASE("runaway values trip the divergence cap") {
    const MultiTaskMdp m = corridor();
    auto pools = corridor_pools(m, 800);
    LearnerConfig cfg = exact_config(m.discount);
    cfg.r_max = 0.05;  // pretends rewards are tiny, so the cap sits far below the true values
    CHECK_THROWS_WITH_AS(
        cql_fitted_iteration(m.num_states, m.num_actions, pools, cfg),
        doctest::Contains("cap"), std::runtime_error);
}

TEST_CASE("divergence-penalized learner: trivial-support and clamp behavior") {
    // Single-action chain: the policy always matches the behavior, KL = 0.
    MultiTaskMdp chain;
    chain.num_states = 3;
    chain.num_actions = 1;
    chain.num_tasks = 1;
    chain.discount = 0.8;
    chain.transition = matrix_t::Zero(3, 3);
    chain.transition(0, 1) = 1.0;
    chain.transition(1, 2) = 1.0;
    chain.transition(2, 2) = 1.0;
    chain.rewards.push_back(matrix_t::Zero(3, 1));
    chain.rewards[0] << 0.25, 0.5, 1.0;
    chain.initial_dist = vector_t::Zero(3);
    chain.initial_dist(0) = 1.0;
    chain.terminal.push_back(std::vector<std::uint8_t>(3, 0));

    std::vector<EffectiveDataset> pools(1);
    pools[0].task = 0;
    pools[0].transitions = {{0, 0, 0.25, 1, false, 0}, {1, 0, 0.5, 2, false, 0},
                            {2, 0, 1.0, 2, false, 0}};
    pools[0].weights.assign(3, 1.0);

    LearnerConfig cfg = exact_config(chain.discount);
    cfg.iterations = 200;
    LearnerConfig strong = cfg;
    strong.alpha = 5.0;

    const BracResult plain = brac_fitted_iteration(3, 1, pools, cfg);
    const BracResult reg = brac_fitted_iteration(3, 1, pools, strong);
    CHECK((plain.table.q[0] - reg.table.q[0]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((reg.conservative_q[0] - reg.table.q[0]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(reg.kl[0].maxCoeff() == 0.0);

    // A state that only ever appears as a successor gets flagged and clamped.
    std::vector<EffectiveDataset> dangling(1);
    dangling[0].task = 0;
    dangling[0].transitions = {{0, 0, 0.25, 2, false, 0}};
    dangling[0].weights.assign(1, 1.0);
    LearnerConfig pen = exact_config(chain.discount);
    pen.alpha = 0.5;
    pen.iterations = 50;
    const BracResult clamped = brac_fitted_iteration(3, 1, dangling, pen);
    CHECK(clamped.kl_clamped[0][2] == 1);
    CHECK(clamped.kl[0](2) == pen.kl_max);
    CHECK(clamped.kl_clamped[0][0] == 0);
    CHECK(clamped.conservative_q[0](2, 0) ==
          doctest::Approx(clamped.table.q[0](2, 0) - 0.5 * pen.kl_max).epsilon(1e-12));
}
