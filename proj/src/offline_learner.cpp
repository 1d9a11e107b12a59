#include "cds/offline_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cds/rng.hpp"

namespace cds {

void validate_config(const LearnerConfig& cfg) {
    if (!(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0))
        throw std::invalid_argument("learning_rate must lie in (0, 1]");
    if (cfg.iterations < 0) throw std::invalid_argument("iterations must be nonnegative");
    if (cfg.beta < 0.0) throw std::invalid_argument("beta must be nonnegative");
    if (cfg.alpha < 0.0) throw std::invalid_argument("alpha must be nonnegative");
    if (cfg.policy_temperature < 0.0)
        throw std::invalid_argument("policy_temperature must be nonnegative");
    if (cfg.mu_mode == MuMode::CurrentPolicy && cfg.beta > 0.0 && cfg.policy_temperature <= 0.0)
        throw std::invalid_argument(
            "policy_temperature must be positive when the penalty samples the current policy");
    if (cfg.batch_per_task < 0) throw std::invalid_argument("batch_per_task must be nonnegative");
    if (cfg.batch_per_task % 2 != 0)
        throw std::invalid_argument("batch_per_task must be even (half original, half shared)");
    if (cfg.rebuild_every <= 0) throw std::invalid_argument("rebuild_every must be positive");
    if (cfg.kl_max <= 0.0) throw std::invalid_argument("kl_max must be positive");
    if (cfg.q_cap_margin <= 0.0) throw std::invalid_argument("q_cap_margin must be positive");
    if (cfg.r_max <= 0.0) throw std::invalid_argument("r_max must be positive");
    if (!(cfg.discount >= 0.0 && cfg.discount < 1.0))
        throw std::invalid_argument("discount must lie in [0, 1)");
}

namespace {

EmpiricalBehaviorPolicy estimate_impl(const std::vector<const std::vector<Transition>*>& per_task,
                                      index_t num_states, index_t num_actions) {
    const std::size_t tasks = per_task.size();
    EmpiricalBehaviorPolicy out;
    out.probs.assign(tasks, matrix_t::Zero(num_states, num_actions));
    out.counts.assign(tasks, matrix_t::Zero(num_states, num_actions));
    out.observed.assign(tasks, std::vector<std::uint8_t>(static_cast<std::size_t>(num_states), 0));
    for (std::size_t i = 0; i < tasks; ++i) {
        if (per_task[i]->empty())
            throw std::invalid_argument("task " + std::to_string(i) + " has no data");
        for (const Transition& t : *per_task[i]) out.counts[i](t.s, t.a) += 1.0;
        for (index_t s = 0; s < num_states; ++s) {
            const scalar_t total = out.counts[i].row(s).sum();
            if (total > 0.0) {
                out.probs[i].row(s) = out.counts[i].row(s) / total;
                out.observed[i][static_cast<std::size_t>(s)] = 1;
            }
        }
    }
    return out;
}

matrix_t softmax_rows(const matrix_t& q, scalar_t temperature) {
    const index_t S = q.rows(), A = q.cols();
    matrix_t probs = matrix_t::Zero(S, A);
    for (index_t s = 0; s < S; ++s) {
        if (temperature <= 0.0) {
            index_t best = 0;
            for (index_t a = 1; a < A; ++a)
                if (q(s, a) > q(s, best)) best = a;
            probs(s, best) = 1.0;
        } else {
            const scalar_t top = q.row(s).maxCoeff();
            vector_t e(A);
            for (index_t a = 0; a < A; ++a) e(a) = std::exp((q(s, a) - top) / temperature);
            probs.row(s) = e.transpose() / e.sum();
        }
    }
    return probs;
}

// Batch of transition indices; empty request or missing engine means the full
// dataset.  Stratified draws take half from the task's own data and half from
// shared data, with replacement.
std::vector<std::size_t> pick_batch(const EffectiveDataset& data, index_t batch,
                                    std::mt19937_64* rng) {
    const std::size_t n = data.transitions.size();
    std::vector<std::size_t> idx;
    if (batch <= 0 || rng == nullptr || static_cast<std::size_t>(batch) >= n) {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), 0);
        return idx;
    }
    std::vector<std::size_t> own, shared;
    for (std::size_t k = 0; k < n; ++k)
        (data.transitions[k].origin_task == data.task ? own : shared).push_back(k);
    auto draw = [&](const std::vector<std::size_t>& pool, index_t want) {
        for (index_t j = 0; j < want; ++j)
            idx.push_back(pool[static_cast<std::size_t>(
                uniform_index(*rng, static_cast<index_t>(pool.size())))]);
    };
    if (own.empty())
        draw(shared, batch);
    else if (shared.empty())
        draw(own, batch);
    else {
        draw(own, batch / 2);
        draw(shared, batch - batch / 2);
    }
    return idx;
}

vector_t softmax_vec(const vector_t& q, scalar_t temperature) {
    const scalar_t top = q.maxCoeff();
    vector_t e = ((q.array() - top) / temperature).exp();
    return e / e.sum();
}

// Per-state penalized regression: minimizes over the observed coordinates
//   0.5 * sum_a W_a (Q_a - ybar_a)^2
//     + beta * m * (T_mu * logsumexp(Q / T_mu) - sum_a behavior_a Q_a),
// whose stationarity is Q_a = ybar_a - beta * (m * mu(Q)_a / W_a - 1) with
// mu = softmax(Q / T_mu).  Substituting mu(Q) lagged instead of solving makes
// the sweep oscillate whenever some behavior probability is tiny (the penalty
// slope is 1/behavior_a), so we solve the convex problem exactly with Newton.
// Unobserved coordinates stay pinned at their current (floor) values and only
// contribute mass to the softmax.
void solve_penalized_row(vector_t& q_row, const vector_t& ybar, const vector_t& w, scalar_t m,
                         scalar_t beta, scalar_t t_mu) {
    const index_t A = q_row.size();
    std::vector<index_t> obs;
    for (index_t a = 0; a < A; ++a)
        if (w(a) > 0.0) obs.push_back(a);
    const index_t n = static_cast<index_t>(obs.size());

    const auto objective = [&](const vector_t& q) {
        scalar_t val = 0.0;
        for (const index_t a : obs) val += 0.5 * w(a) * (q(a) - ybar(a)) * (q(a) - ybar(a));
        const scalar_t top = q.maxCoeff();
        const scalar_t lse = top + t_mu * std::log(((q.array() - top) / t_mu).exp().sum());
        val += beta * m * lse;
        for (const index_t a : obs) val -= beta * w(a) * q(a);
        return val;
    };

    scalar_t tol = beta * m;
    for (const index_t a : obs) tol = std::max(tol, w(a) * (std::abs(ybar(a)) + 1.0));
    tol *= 1e-12;

    for (int iter = 0; iter < 100; ++iter) {
        const vector_t mu = softmax_vec(q_row, t_mu);
        vector_t grad(n);
        for (index_t j = 0; j < n; ++j) {
            const index_t a = obs[static_cast<std::size_t>(j)];
            grad(j) = w(a) * (q_row(a) - ybar(a)) + beta * (m * mu(a) - w(a));
        }
        if (grad.cwiseAbs().maxCoeff() <= tol) break;

        matrix_t hess = matrix_t::Zero(n, n);
        for (index_t j = 0; j < n; ++j) {
            const index_t a = obs[static_cast<std::size_t>(j)];
            hess(j, j) = w(a) + beta * m * mu(a) / t_mu;
            for (index_t k = 0; k < n; ++k) {
                const index_t b = obs[static_cast<std::size_t>(k)];
                hess(j, k) -= beta * m * mu(a) * mu(b) / t_mu;
            }
        }
        const vector_t step = hess.llt().solve(-grad);

        const scalar_t base = objective(q_row);
        const scalar_t slope = grad.dot(step);
        scalar_t t = 1.0;
        vector_t candidate = q_row;
        for (int halving = 0; halving < 60; ++halving) {
            for (index_t j = 0; j < n; ++j)
                candidate(obs[static_cast<std::size_t>(j)]) =
                    q_row(obs[static_cast<std::size_t>(j)]) + t * step(j);
            if (objective(candidate) <= base + 1e-4 * t * slope) break;
            t *= 0.5;
        }
        q_row = candidate;
    }
}

void check_cap(const matrix_t& q, scalar_t cap, const char* learner) {
    if (q.hasNaN() || q.cwiseAbs().maxCoeff() > cap)
        throw std::runtime_error(std::string(learner) +
                                 " diverged: |Q| exceeded its cap of " + std::to_string(cap));
}

void cql_task_sweep(const EffectiveDataset& data, const LearnerConfig& cfg, matrix_t& q,
                    std::mt19937_64* rng) {
    const index_t S = q.rows(), A = q.cols();
    const matrix_t pi = softmax_rows(q, cfg.policy_temperature);
    const auto idx = pick_batch(data, cfg.batch_per_task, rng);

    matrix_t wsum = matrix_t::Zero(S, A), ysum = matrix_t::Zero(S, A);
    vector_t m = vector_t::Zero(S);
    for (const std::size_t k : idx) {
        const Transition& t = data.transitions[k];
        const scalar_t w = data.weights[k];
        const scalar_t cont = t.done ? 0.0 : pi.row(t.s_next).dot(q.row(t.s_next));
        const scalar_t y = t.r + cfg.discount * cont;
        wsum(t.s, t.a) += w;
        ysum(t.s, t.a) += w * y;
        m(t.s) += w;
    }

    // Support is a dataset property; a stratified batch missing an action
    // must not erase its value.
    matrix_t support = wsum;
    if (cfg.beta > 0.0 && cfg.batch_per_task > 0 &&
        static_cast<std::size_t>(cfg.batch_per_task) < data.transitions.size()) {
        support.setZero();
        for (std::size_t k = 0; k < data.transitions.size(); ++k)
            if (data.weights[k] > 0.0)
                support(data.transitions[k].s, data.transitions[k].a) = 1.0;
    }

    const scalar_t q_floor = -cfg.r_max / (1.0 - cfg.discount);
    // The penalty turns into a bonus (up to +beta) wherever the data supports
    // an action more than mu does, so penalized targets are clipped at the
    // optimal ceiling; a conservative estimate may never exceed it.
    const scalar_t q_ceil = cfg.r_max / (1.0 - cfg.discount);
    const scalar_t eta = cfg.learning_rate;
    for (index_t s = 0; s < S; ++s) {
        if (m(s) <= 0.0) continue;

        vector_t ybar = vector_t::Zero(A);
        for (index_t a = 0; a < A; ++a)
            if (wsum(s, a) > 0.0) ybar(a) = ysum(s, a) / wsum(s, a);

        if (cfg.beta <= 0.0) {
            for (index_t a = 0; a < A; ++a)
                if (wsum(s, a) > 0.0)
                    q(s, a) = std::max(q_floor, (1.0 - eta) * q(s, a) + eta * ybar(a));
            continue;
        }

        // Actions the data never takes at s sink to the floor before the
        // solve, so the penalty's softmax sees them with negligible mass.
        for (index_t a = 0; a < A; ++a)
            if (support(s, a) <= 0.0) q(s, a) = q_floor;

        if (cfg.mu_mode == MuMode::Uniform) {
            const scalar_t mu_a = 1.0 / static_cast<scalar_t>(A);
            for (index_t a = 0; a < A; ++a)
                if (wsum(s, a) > 0.0) {
                    const scalar_t target =
                        ybar(a) - cfg.beta * (m(s) * mu_a / wsum(s, a) - 1.0);
                    q(s, a) =
                        std::clamp((1.0 - eta) * q(s, a) + eta * target, q_floor, q_ceil);
                }
            continue;
        }

        const scalar_t t_mu =
            cfg.mu_mode == MuMode::SoftmaxQ ? 1.0 : cfg.policy_temperature;
        vector_t solved = q.row(s).transpose();
        solve_penalized_row(solved, ybar, wsum.row(s).transpose(), m(s), cfg.beta, t_mu);
        for (index_t a = 0; a < A; ++a)
            if (wsum(s, a) > 0.0)
                q(s, a) = std::clamp((1.0 - eta) * q(s, a) + eta * solved(a), q_floor, q_ceil);
    }
}

// Per-state KL(pi || behavior), clamped and flagged wherever pi puts mass
// outside the observed support (or the state was never observed at all).
void divergence_rows(const matrix_t& pi, const matrix_t& behavior,
                     const std::vector<std::uint8_t>& observed, scalar_t kl_max, vector_t& kl,
                     std::vector<std::uint8_t>& clamped) {
    const index_t S = pi.rows(), A = pi.cols();
    for (index_t s = 0; s < S; ++s) {
        if (!observed[static_cast<std::size_t>(s)]) {
            kl(s) = kl_max;
            clamped[static_cast<std::size_t>(s)] = 1;
            continue;
        }
        scalar_t sum = 0.0;
        bool out_of_support = false;
        for (index_t a = 0; a < A; ++a) {
            const scalar_t p = pi(s, a);
            if (p <= 0.0) continue;
            const scalar_t b = behavior(s, a);
            if (b <= 0.0) {
                out_of_support = true;
                break;
            }
            sum += p * std::log(p / b);
        }
        if (out_of_support || sum > kl_max) {
            kl(s) = kl_max;
            clamped[static_cast<std::size_t>(s)] = 1;
        } else {
            kl(s) = std::max(sum, 0.0);
            clamped[static_cast<std::size_t>(s)] = 0;
        }
    }
}

}  // namespace

EmpiricalBehaviorPolicy estimate_behavior_policy(const std::vector<EffectiveDataset>& datasets,
                                                 index_t num_states, index_t num_actions) {
    std::vector<const std::vector<Transition>*> per_task;
    for (const auto& d : datasets) per_task.push_back(&d.transitions);
    return estimate_impl(per_task, num_states, num_actions);
}

EmpiricalBehaviorPolicy estimate_behavior_policy(const std::vector<TaskDataset>& datasets,
                                                 index_t num_states, index_t num_actions) {
    std::vector<const std::vector<Transition>*> per_task;
    for (const auto& d : datasets) per_task.push_back(&d.transitions);
    return estimate_impl(per_task, num_states, num_actions);
}

TabularPolicy extract_policy(const ConservativeQTable& table, scalar_t temperature) {
    TabularPolicy pi;
    for (const matrix_t& q : table.q) pi.probs.push_back(softmax_rows(q, temperature));
    return pi;
}

ConservativeQTable cql_fitted_iteration(index_t num_states, index_t num_actions,
                                        const std::vector<EffectiveDataset>& datasets,
                                        const LearnerConfig& cfg, std::mt19937_64* batch_rng,
                                        const ConservativeQTable* warm_start) {
    validate_config(cfg);
    ConservativeQTable table;
    table.beta = cfg.beta;
    table.alpha = 0.0;
    table.mu_mode = cfg.mu_mode;
    if (warm_start != nullptr)
        table.q = warm_start->q;
    else
        table.q.assign(datasets.size(), matrix_t::Zero(num_states, num_actions));

    const scalar_t cap = cfg.r_max / (1.0 - cfg.discount) + cfg.q_cap_margin;
    for (int sweep = 0; sweep < cfg.iterations; ++sweep) {
        for (std::size_t i = 0; i < datasets.size(); ++i) {
            if (datasets[i].transitions.empty())
                throw std::invalid_argument("task " + std::to_string(i) + " has no data");
            cql_task_sweep(datasets[i], cfg, table.q[i], batch_rng);
            check_cap(table.q[i], cap, "penalized fitted Q");
        }
    }
    return table;
}

BracResult brac_fitted_iteration(index_t num_states, index_t num_actions,
                                 const std::vector<EffectiveDataset>& datasets,
                                 const LearnerConfig& cfg, std::mt19937_64* batch_rng,
                                 const ConservativeQTable* warm_start) {
    validate_config(cfg);
    const EmpiricalBehaviorPolicy behavior =
        estimate_behavior_policy(datasets, num_states, num_actions);

    BracResult result;
    result.table.beta = 0.0;
    result.table.alpha = cfg.alpha;
    result.table.mu_mode = cfg.mu_mode;
    if (warm_start != nullptr)
        result.table.q = warm_start->q;
    else
        result.table.q.assign(datasets.size(), matrix_t::Zero(num_states, num_actions));
    result.kl.assign(datasets.size(), vector_t::Zero(num_states));
    result.kl_clamped.assign(datasets.size(),
                             std::vector<std::uint8_t>(static_cast<std::size_t>(num_states), 0));

    const scalar_t cap =
        (cfg.r_max + cfg.alpha * cfg.kl_max) / (1.0 - cfg.discount) + cfg.q_cap_margin;
    for (int sweep = 0; sweep < cfg.iterations; ++sweep) {
        for (std::size_t i = 0; i < datasets.size(); ++i) {
            matrix_t& q = result.table.q[i];
            const matrix_t pi = softmax_rows(q, cfg.policy_temperature);
            divergence_rows(pi, behavior.probs[i], behavior.observed[i], cfg.kl_max,
                            result.kl[i], result.kl_clamped[i]);

            const auto idx = pick_batch(datasets[i], cfg.batch_per_task, batch_rng);
            matrix_t wsum = matrix_t::Zero(num_states, num_actions);
            matrix_t ysum = matrix_t::Zero(num_states, num_actions);
            for (const std::size_t k : idx) {
                const Transition& t = datasets[i].transitions[k];
                const scalar_t w = datasets[i].weights[k];
                const scalar_t cont =
                    t.done ? 0.0
                           : pi.row(t.s_next).dot(q.row(t.s_next)) - cfg.alpha * result.kl[i](t.s_next);
                const scalar_t y = t.r + cfg.discount * cont;
                wsum(t.s, t.a) += w;
                ysum(t.s, t.a) += w * y;
            }
            for (index_t s = 0; s < num_states; ++s)
                for (index_t a = 0; a < num_actions; ++a)
                    if (wsum(s, a) > 0.0)
                        q(s, a) = (1.0 - cfg.learning_rate) * q(s, a) +
                                  cfg.learning_rate * ysum(s, a) / wsum(s, a);
            check_cap(q, cap, "divergence-penalized fitted Q");
        }
    }

    // Conservative estimate under the final policy.
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const matrix_t pi = softmax_rows(result.table.q[i], cfg.policy_temperature);
        divergence_rows(pi, behavior.probs[i], behavior.observed[i], cfg.kl_max, result.kl[i],
                        result.kl_clamped[i]);
        matrix_t cons = result.table.q[i];
        for (index_t s = 0; s < num_states; ++s) cons.row(s).array() -= cfg.alpha * result.kl[i](s);
        result.conservative_q.push_back(std::move(cons));
    }
    return result;
}

}  // namespace cds
