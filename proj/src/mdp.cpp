#include "cds/mdp.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cds {

namespace {

constexpr scalar_t kStochasticTol = 1e-12;

// Policy-conditioned transition matrix P_pi (S x S) and reward vector r_pi.
void policy_kernel(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task,
                   matrix_t& p_pi, vector_t& r_pi) {
    const index_t s_count = mdp.num_states;
    const index_t a_count = mdp.num_actions;
    p_pi.setZero(s_count, s_count);
    r_pi.setZero(s_count);
    const matrix_t& pi = policy.probs[static_cast<std::size_t>(task)];
    const matrix_t& rew = mdp.rewards[static_cast<std::size_t>(task)];
    for (index_t s = 0; s < s_count; ++s) {
        for (index_t a = 0; a < a_count; ++a) {
            const scalar_t p = pi(s, a);
            if (p == 0.0) continue;
            p_pi.row(s) += p * mdp.transition_row(s, a);
            r_pi(s) += p * rew(s, a);
        }
    }
}

}  // namespace

scalar_t MultiTaskMdp::max_abs_reward() const {
    scalar_t m = 0.0;
    for (const matrix_t& r : rewards) m = std::max(m, r.cwiseAbs().maxCoeff());
    return m;
}

TabularPolicy TabularPolicy::uniform(index_t num_tasks, index_t num_states, index_t num_actions) {
    TabularPolicy p;
    p.probs.assign(static_cast<std::size_t>(num_tasks),
                   matrix_t::Constant(num_states, num_actions, 1.0 / static_cast<scalar_t>(num_actions)));
    return p;
}

std::vector<std::string> validate(const MultiTaskMdp& mdp) {
    std::vector<std::string> out;
    auto fail = [&out](const std::string& msg) { out.push_back(msg); };

    if (mdp.num_states <= 0) fail("num_states must be positive");
    if (mdp.num_actions <= 0) fail("num_actions must be positive");
    if (mdp.num_tasks <= 0) fail("num_tasks must be positive");
    if (!(mdp.discount >= 0.0 && mdp.discount < 1.0)) {
        std::ostringstream ss;
        ss << "discount " << mdp.discount << " outside [0, 1)";
        fail(ss.str());
    }
    if (!out.empty()) return out;

    if (mdp.transition.rows() != mdp.num_states * mdp.num_actions ||
        mdp.transition.cols() != mdp.num_states)
        fail("transition matrix has wrong shape");
    if (static_cast<index_t>(mdp.rewards.size()) != mdp.num_tasks)
        fail("rewards must hold one table per task");
    if (static_cast<index_t>(mdp.terminal.size()) != mdp.num_tasks)
        fail("terminal must hold one flag row per task");
    if (mdp.initial_dist.size() != mdp.num_states)
        fail("initial_dist has wrong length");
    if (!out.empty()) return out;

    for (index_t i = 0; i < mdp.num_tasks; ++i) {
        const matrix_t& r = mdp.rewards[static_cast<std::size_t>(i)];
        if (r.rows() != mdp.num_states || r.cols() != mdp.num_actions) {
            std::ostringstream ss;
            ss << "reward table for task " << i << " has wrong shape";
            fail(ss.str());
        } else if (!r.allFinite()) {
            std::ostringstream ss;
            ss << "reward table for task " << i << " contains non-finite entries";
            fail(ss.str());
        }
        if (static_cast<index_t>(mdp.terminal[static_cast<std::size_t>(i)].size()) != mdp.num_states) {
            std::ostringstream ss;
            ss << "terminal flags for task " << i << " have wrong length";
            fail(ss.str());
        }
    }

    for (index_t s = 0; s < mdp.num_states; ++s) {
        for (index_t a = 0; a < mdp.num_actions; ++a) {
            const auto row = mdp.transition_row(s, a);
            if (!row.allFinite() || row.minCoeff() < 0.0) {
                std::ostringstream ss;
                ss << "transition row (s=" << s << ", a=" << a << ") has negative or non-finite entries";
                fail(ss.str());
                continue;
            }
            const scalar_t sum = row.sum();
            if (std::abs(sum - 1.0) > kStochasticTol) {
                std::ostringstream ss;
                ss << "transition row (s=" << s << ", a=" << a << ") sums to " << sum;
                fail(ss.str());
            }
        }
    }

    if (mdp.initial_dist.minCoeff() < 0.0)
        fail("initial_dist has negative entries");
    else if (std::abs(mdp.initial_dist.sum() - 1.0) > kStochasticTol) {
        std::ostringstream ss;
        ss << "initial_dist sums to " << mdp.initial_dist.sum();
        fail(ss.str());
    }
    return out;
}

vector_t policy_values_linear(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task) {
    const index_t s_count = mdp.num_states;
    matrix_t p_pi;
    vector_t r_pi;
    policy_kernel(mdp, policy, task, p_pi, r_pi);

    matrix_t a = matrix_t::Identity(s_count, s_count);
    for (index_t s = 0; s < s_count; ++s) {
        if (!mdp.is_terminal(task, s)) a.row(s) -= mdp.discount * p_pi.row(s);
        // Terminal rows keep the identity: V(s) = r_pi(s), one final reward step.
    }
    return a.partialPivLu().solve(r_pi);
}

vector_t policy_values_iterative(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task,
                                 scalar_t tol, index_t max_iters) {
    const index_t s_count = mdp.num_states;
    matrix_t p_pi;
    vector_t r_pi;
    policy_kernel(mdp, policy, task, p_pi, r_pi);

    vector_t alive(s_count);
    for (index_t s = 0; s < s_count; ++s) alive(s) = mdp.is_terminal(task, s) ? 0.0 : 1.0;

    vector_t v = vector_t::Zero(s_count);
    for (index_t it = 0; it < max_iters; ++it) {
        vector_t next = r_pi + mdp.discount * (alive.array() * (p_pi * v).array()).matrix();
        const scalar_t diff = (next - v).cwiseAbs().maxCoeff();
        v.swap(next);
        if (diff <= tol) return v;
    }
    throw std::runtime_error("policy evaluation did not converge within the iteration cap");
}

scalar_t evaluate_policy(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task) {
    const vector_t v = mdp.num_states <= 500 ? policy_values_linear(mdp, policy, task)
                                             : policy_values_iterative(mdp, policy, task);
    return mdp.initial_dist.dot(v);
}

OccupancyMeasure state_occupancy(const MultiTaskMdp& mdp, const TabularPolicy& policy, index_t task) {
    const index_t s_count = mdp.num_states;
    matrix_t p_pi;
    vector_t r_pi;
    policy_kernel(mdp, policy, task, p_pi, r_pi);
    // Terminal states absorb so the discounted distribution keeps unit mass.
    for (index_t s = 0; s < s_count; ++s) {
        if (mdp.is_terminal(task, s)) {
            p_pi.row(s).setZero();
            p_pi(s, s) = 1.0;
        }
    }
    matrix_t a = matrix_t::Identity(s_count, s_count) - mdp.discount * p_pi.transpose();
    vector_t x = a.partialPivLu().solve(mdp.initial_dist);
    OccupancyMeasure occ;
    occ.task = task;
    occ.dist = (1.0 - mdp.discount) * x;
    return occ;
}

OptimalSolution solve_optimal(const MultiTaskMdp& mdp, index_t task, scalar_t tol, index_t max_iters) {
    const index_t s_count = mdp.num_states;
    const index_t a_count = mdp.num_actions;
    const matrix_t& rew = mdp.rewards[static_cast<std::size_t>(task)];

    vector_t v = vector_t::Zero(s_count);
    matrix_t q(s_count, a_count);
    for (index_t it = 0; it < max_iters; ++it) {
        for (index_t s = 0; s < s_count; ++s) {
            if (mdp.is_terminal(task, s)) {
                q.row(s) = rew.row(s);
            } else {
                for (index_t a = 0; a < a_count; ++a)
                    q(s, a) = rew(s, a) + mdp.discount * mdp.transition_row(s, a).dot(v);
            }
        }
        vector_t next = q.rowwise().maxCoeff();
        const scalar_t diff = (next - v).cwiseAbs().maxCoeff();
        v.swap(next);
        if (diff <= tol) {
            OptimalSolution sol;
            sol.q = q;
            sol.v = v;
            sol.j = mdp.initial_dist.dot(v);
            return sol;
        }
    }
    throw std::runtime_error("value iteration did not converge within the iteration cap");
}

MultiTaskMdp empirical_mdp(const std::vector<Transition>& data, const MultiTaskMdp& base) {
    if (data.empty()) throw std::invalid_argument("empirical_mdp: empty dataset");
    const index_t s_count = base.num_states;
    const index_t a_count = base.num_actions;

    matrix_t counts = matrix_t::Zero(s_count * a_count, s_count);
    for (const Transition& t : data) {
        if (t.s < 0 || t.s >= s_count || t.a < 0 || t.a >= a_count || t.s_next < 0 || t.s_next >= s_count)
            throw std::invalid_argument("empirical_mdp: transition indices out of range");
        counts(t.s * a_count + t.a, t.s_next) += 1.0;
    }

    bool all_observed = true;
    for (index_t row = 0; row < counts.rows(); ++row)
        if (counts.row(row).sum() == 0.0) { all_observed = false; break; }

    MultiTaskMdp out = base;
    if (all_observed) {
        for (index_t row = 0; row < counts.rows(); ++row)
            out.transition.row(row) = counts.row(row) / counts.row(row).sum();
        return out;
    }

    // Unobserved pairs fall back to an appended zero-reward absorbing state.
    const index_t s_ext = s_count + 1;
    const index_t sink = s_count;
    out.num_states = s_ext;
    out.transition = matrix_t::Zero(s_ext * a_count, s_ext);
    for (index_t s = 0; s < s_count; ++s) {
        for (index_t a = 0; a < a_count; ++a) {
            const auto src = counts.row(s * a_count + a);
            auto dst = out.transition.row(s * a_count + a);
            const scalar_t total = src.sum();
            if (total > 0.0)
                dst.head(s_count) = src / total;
            else
                dst(sink) = 1.0;
        }
    }
    for (index_t a = 0; a < a_count; ++a) out.transition(sink * a_count + a, sink) = 1.0;

    out.rewards.clear();
    out.terminal.clear();
    for (index_t i = 0; i < base.num_tasks; ++i) {
        matrix_t r = matrix_t::Zero(s_ext, a_count);
        r.topRows(s_count) = base.rewards[static_cast<std::size_t>(i)];
        out.rewards.push_back(std::move(r));
        std::vector<std::uint8_t> term = base.terminal[static_cast<std::size_t>(i)];
        term.push_back(0);
        out.terminal.push_back(std::move(term));
    }
    out.initial_dist = vector_t::Zero(s_ext);
    out.initial_dist.head(s_count) = base.initial_dist;
    return out;
}

std::string mdp_to_json(const MultiTaskMdp& mdp) {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["states"] = mdp.num_states;
    doc["actions"] = mdp.num_actions;
    doc["tasks"] = mdp.num_tasks;
    doc["discount"] = mdp.discount;

    std::vector<scalar_t> trans;
    trans.reserve(static_cast<std::size_t>(mdp.transition.size()));
    for (index_t r = 0; r < mdp.transition.rows(); ++r)
        for (index_t c = 0; c < mdp.transition.cols(); ++c) trans.push_back(mdp.transition(r, c));
    doc["transition"] = trans;

    std::vector<std::vector<scalar_t>> rewards;
    for (const matrix_t& table : mdp.rewards) {
        std::vector<scalar_t> flat;
        flat.reserve(static_cast<std::size_t>(table.size()));
        for (index_t r = 0; r < table.rows(); ++r)
            for (index_t c = 0; c < table.cols(); ++c) flat.push_back(table(r, c));
        rewards.push_back(std::move(flat));
    }
    doc["rewards"] = rewards;

    doc["initial_dist"] = std::vector<scalar_t>(mdp.initial_dist.data(),
                                                mdp.initial_dist.data() + mdp.initial_dist.size());
    std::vector<std::vector<int>> term;
    for (const auto& flags : mdp.terminal) term.emplace_back(flags.begin(), flags.end());
    doc["terminal"] = term;
    return doc.dump(2);
}

MultiTaskMdp mdp_from_json(const std::string& text) {
    const nlohmann::json doc = nlohmann::json::parse(text);
    if (!doc.contains("version") || doc["version"].get<int>() != 1)
        throw std::invalid_argument("mdp_from_json: unsupported document version");

    MultiTaskMdp mdp;
    mdp.num_states = doc.at("states").get<index_t>();
    mdp.num_actions = doc.at("actions").get<index_t>();
    mdp.num_tasks = doc.at("tasks").get<index_t>();
    mdp.discount = doc.at("discount").get<scalar_t>();

    const auto trans = doc.at("transition").get<std::vector<scalar_t>>();
    if (static_cast<index_t>(trans.size()) != mdp.num_states * mdp.num_actions * mdp.num_states)
        throw std::invalid_argument("mdp_from_json: transition array has wrong length");
    mdp.transition.resize(mdp.num_states * mdp.num_actions, mdp.num_states);
    std::size_t k = 0;
    for (index_t r = 0; r < mdp.transition.rows(); ++r)
        for (index_t c = 0; c < mdp.transition.cols(); ++c) mdp.transition(r, c) = trans[k++];

    for (const auto& flat_json : doc.at("rewards")) {
        const auto flat = flat_json.get<std::vector<scalar_t>>();
        if (static_cast<index_t>(flat.size()) != mdp.num_states * mdp.num_actions)
            throw std::invalid_argument("mdp_from_json: reward table has wrong length");
        matrix_t table(mdp.num_states, mdp.num_actions);
        k = 0;
        for (index_t r = 0; r < table.rows(); ++r)
            for (index_t c = 0; c < table.cols(); ++c) table(r, c) = flat[k++];
        mdp.rewards.push_back(std::move(table));
    }

    const auto init = doc.at("initial_dist").get<std::vector<scalar_t>>();
    mdp.initial_dist = Eigen::Map<const vector_t>(init.data(), static_cast<index_t>(init.size()));

    for (const auto& flags_json : doc.at("terminal")) {
        const auto flags = flags_json.get<std::vector<int>>();
        mdp.terminal.emplace_back(flags.begin(), flags.end());
    }

    const auto violations = validate(mdp);
    if (!violations.empty())
        throw std::invalid_argument("mdp_from_json: invalid document: " + violations.front());
    return mdp;
}

}  // namespace cds
