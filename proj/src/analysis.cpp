#include "cds/analysis.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "cds/text.hpp"

namespace cds {

namespace {

void check_same_size(const vector_t& p, const vector_t& q) {
    if (p.size() != q.size()) throw std::invalid_argument("distributions differ in length");
}

// Full policy over an (possibly extended) state space from a count-based
// estimate: observed states keep their count ratios, everything else is
// uniform.  Only `task`'s slice is meaningful.
TabularPolicy pad_behavior(const EmpiricalBehaviorPolicy& behavior, index_t task,
                           index_t num_tasks, index_t num_states, index_t num_actions) {
    TabularPolicy out = TabularPolicy::uniform(num_tasks, num_states, num_actions);
    const matrix_t& probs = behavior.probs[static_cast<std::size_t>(task)];
    for (index_t s = 0; s < probs.rows() && s < num_states; ++s)
        if (behavior.is_observed(task, s))
            out.probs[static_cast<std::size_t>(task)].row(s) = probs.row(s);
    return out;
}

TabularPolicy pad_policy(const TabularPolicy& policy, index_t task, index_t num_tasks,
                         index_t num_states, index_t num_actions) {
    TabularPolicy out = TabularPolicy::uniform(num_tasks, num_states, num_actions);
    const matrix_t& rows = policy.probs[static_cast<std::size_t>(task)];
    out.probs[static_cast<std::size_t>(task)].topRows(rows.rows()) = rows;
    return out;
}

}  // namespace

scalar_t d_cql(const vector_t& p, const vector_t& q) {
    check_same_size(p, q);
    scalar_t total = 0.0;
    for (index_t i = 0; i < p.size(); ++i) {
        if (p(i) == 0.0) continue;
        if (q(i) <= 0.0)
            throw std::invalid_argument("q has no support at index " + std::to_string(i) +
                                        " where p has mass");
        total += p(i) * (p(i) / q(i) - 1.0);
    }
    return total;
}

scalar_t d_tv(const vector_t& p, const vector_t& q) {
    check_same_size(p, q);
    return 0.5 * (p - q).cwiseAbs().sum();
}

vector_t smoothed_row(const matrix_t& behavior_probs, index_t s, scalar_t eps) {
    const vector_t row = behavior_probs.row(s).transpose();
    const scalar_t mass = row.sum() + eps * static_cast<scalar_t>(row.size());
    return (row.array() + eps).matrix() / mass;
}

DivergenceReport kl_policy_divergence(const TabularPolicy& policy,
                                      const EmpiricalBehaviorPolicy& behavior,
                                      const OccupancyMeasure& occupancy, index_t task,
                                      scalar_t eps) {
    const matrix_t& pi = policy.probs[static_cast<std::size_t>(task)];
    const matrix_t& b = behavior.probs[static_cast<std::size_t>(task)];
    if (pi.rows() != b.rows() || pi.cols() != b.cols())
        throw std::invalid_argument("policy and behavior shapes differ");
    if (occupancy.dist.size() != pi.rows())
        throw std::invalid_argument("weighting does not cover the state space");

    DivergenceReport report;
    report.smoothing = eps;
    report.weighting = occupancy;
    report.per_state = vector_t::Zero(pi.rows());
    for (index_t s = 0; s < pi.rows(); ++s) {
        const vector_t q = smoothed_row(b, s, eps);
        scalar_t kl = 0.0;
        for (index_t a = 0; a < pi.cols(); ++a)
            if (pi(s, a) > 0.0) kl += pi(s, a) * std::log(pi(s, a) / q(a));
        report.per_state(s) = kl;
        report.average += occupancy.dist(s) * kl;
    }
    return report;
}

OccupancyMeasure dataset_state_distribution(const EffectiveDataset& data, index_t num_states) {
    if (data.transitions.empty())
        throw std::invalid_argument("empty pool has no state distribution");
    OccupancyMeasure out;
    out.task = data.task;
    out.dist = vector_t::Zero(num_states);
    for (const Transition& t : data.transitions) out.dist(t.s) += 1.0;
    out.dist /= static_cast<scalar_t>(data.transitions.size());
    return out;
}

BoundReport spi_bound(const MultiTaskMdp& mdp, index_t task, const TabularPolicy& pi_star,
                      const EmpiricalBehaviorPolicy& behavior_eff,
                      const EmpiricalBehaviorPolicy& behavior_own, const EffectiveDataset& eff,
                      const BoundConstants& constants) {
    const index_t S = mdp.num_states, A = mdp.num_actions;
    const MultiTaskMdp emp = empirical_mdp(eff.transitions, mdp);
    const TabularPolicy padded = pad_policy(pi_star, task, mdp.num_tasks, emp.num_states, A);

    BoundReport report;
    report.c_sample = constants.c_sample;
    report.alpha = constants.alpha;
    report.smoothing = constants.smoothing;
    report.r_max = mdp.max_abs_reward();
    report.gamma = mdp.discount;
    report.weighting = state_occupancy(emp, padded, task);

    report.counts.assign(static_cast<std::size_t>(S), 0);
    for (const Transition& t : eff.transitions) ++report.counts[static_cast<std::size_t>(t.s)];

    report.per_state_d = vector_t::Zero(emp.num_states);
    for (index_t s = 0; s < S; ++s) {
        const vector_t q = smoothed_row(behavior_eff.probs[static_cast<std::size_t>(task)], s,
                                        constants.smoothing);
        report.per_state_d(s) =
            d_cql(padded.probs[static_cast<std::size_t>(task)].row(s).transpose(), q);
    }
    // Appended fallback states carry no data and no distance; only their
    // missing counts matter.

    const scalar_t inv_sq = 1.0 / ((1.0 - mdp.discount) * (1.0 - mdp.discount));
    scalar_t sampling = 0.0;
    for (index_t s = 0; s < emp.num_states; ++s) {
        const scalar_t w = report.weighting.dist(s);
        if (w <= 0.0) continue;
        const std::int64_t n = s < S ? report.counts[static_cast<std::size_t>(s)] : 0;
        if (n == 0) {
            sampling = std::numeric_limits<scalar_t>::infinity();
            break;
        }
        sampling += w * std::sqrt((report.per_state_d(s) + 1.0) / static_cast<scalar_t>(n));
        report.epsilon += w * report.per_state_d(s);
    }
    report.sampling_error_term = constants.c_sample * inv_sq * sampling;
    report.divergence_bonus = constants.alpha * report.epsilon;

    const TabularPolicy beta_eff = pad_behavior(behavior_eff, task, mdp.num_tasks, S, A);
    const TabularPolicy beta_own = pad_behavior(behavior_own, task, mdp.num_tasks, S, A);
    report.j_policy = evaluate_policy(mdp, pi_star, task);
    report.j_behavior_eff = evaluate_policy(mdp, beta_eff, task);
    report.j_behavior_own = evaluate_policy(mdp, beta_own, task);
    report.improvement_term_a = report.j_behavior_eff - report.j_behavior_own;

    report.zeta =
        report.sampling_error_term - (report.divergence_bonus + report.improvement_term_a);
    return report;
}

Lemma1Report check_lemma1(const MultiTaskMdp& mdp, index_t task, const EffectiveDataset& eff,
                          const TabularPolicy& pi, const EmpiricalBehaviorPolicy& behavior_eff,
                          const EmpiricalBehaviorPolicy& behavior_own,
                          const std::vector<scalar_t>& alpha_grid, scalar_t c,
                          scalar_t smoothing) {
    const index_t S = mdp.num_states, A = mdp.num_actions;
    const MultiTaskMdp emp = empirical_mdp(eff.transitions, mdp);
    const TabularPolicy padded = pad_policy(pi, task, mdp.num_tasks, emp.num_states, A);
    const TabularPolicy beta_eff = pad_behavior(behavior_eff, task, mdp.num_tasks, emp.num_states, A);
    const TabularPolicy beta_own = pad_behavior(behavior_own, task, mdp.num_tasks, emp.num_states, A);

    Lemma1Report report;
    report.r_max = mdp.max_abs_reward();
    report.c = c > 0.0 ? c : 2.0 / (1.0 - mdp.discount);

    const OccupancyMeasure occ = state_occupancy(emp, padded, task);
    const auto& pi_rows = padded.probs[static_cast<std::size_t>(task)];
    const auto& eff_rows = beta_eff.probs[static_cast<std::size_t>(task)];
    for (index_t s = 0; s < emp.num_states; ++s) {
        if (occ.dist(s) <= 0.0) continue;
        report.d_tv += occ.dist(s) * d_tv(pi_rows.row(s).transpose(), eff_rows.row(s).transpose());
        vector_t q = s < S ? smoothed_row(behavior_eff.probs[static_cast<std::size_t>(task)], s,
                                          smoothing)
                           : vector_t::Constant(A, 1.0 / static_cast<scalar_t>(A));
        report.d_cql_avg += occ.dist(s) * d_cql(pi_rows.row(s).transpose(), q);
    }

    report.j_pi = evaluate_policy(emp, padded, task);
    report.j_behavior_eff = evaluate_policy(emp, beta_eff, task);
    report.j_behavior_own = evaluate_policy(emp, beta_own, task);
    report.improvement = report.j_behavior_eff - report.j_behavior_own;

    for (const scalar_t alpha : alpha_grid) {
        Lemma1Entry entry;
        entry.alpha = alpha;
        entry.tv_term = report.c * report.r_max / (1.0 - mdp.discount) * report.d_tv;
        entry.cql_bonus = alpha * report.d_cql_avg;
        entry.condition_met = entry.tv_term <= entry.cql_bonus + 1e-12;
        entry.premise_met = report.j_pi - entry.cql_bonus >= report.j_behavior_own - 1e-9;
        entry.checked = entry.condition_met && entry.premise_met;
        entry.pass = !entry.checked || report.improvement >= -1e-9;
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(entry);
    }
    return report;
}

Lemma2Report check_lemma2(const vector_t& d, const vector_t& d_values,
                          const std::vector<std::int64_t>& counts, scalar_t epsilon) {
    if (d.size() != d_values.size() || static_cast<std::size_t>(d.size()) != counts.size())
        throw std::invalid_argument("state vectors differ in length");
    if (std::abs(d.sum() - 1.0) > 1e-9 || d.minCoeff() < 0.0)
        throw std::invalid_argument("weighting is not a distribution");
    scalar_t mean = 0.0;
    for (index_t s = 0; s < d.size(); ++s) {
        if (d_values(s) < 0.0) throw std::invalid_argument("negative distance");
        if (d(s) > 0.0 && counts[static_cast<std::size_t>(s)] <= 0)
            throw std::invalid_argument("zero count on a weighted state");
        mean += d(s) * d_values(s);
    }
    if (mean > epsilon * (1.0 + 1e-12) + 1e-15)
        throw std::invalid_argument("mean distance exceeds epsilon");

    Lemma2Report report;
    report.epsilon = epsilon;
    scalar_t inv_count_mean = 0.0;
    for (index_t s = 0; s < d.size(); ++s) {
        if (d(s) <= 0.0) continue;
        const scalar_t n = static_cast<scalar_t>(counts[static_cast<std::size_t>(s)]);
        report.lhs += d(s) * std::sqrt((d_values(s) + 1.0) / n);
        report.rhs_stated += d(s) * std::sqrt(1.0 / n);
        inv_count_mean += d(s) / n;
    }
    report.rhs = std::sqrt(1.0 + epsilon) * std::sqrt(inv_count_mean);
    report.rhs_stated *= std::sqrt(1.0 + epsilon);
    report.pass = report.lhs <= report.rhs * (1.0 + 1e-12);
    report.stated_form_holds = report.lhs <= report.rhs_stated * (1.0 + 1e-12);
    return report;
}

ScenarioReport scenario_report(const std::vector<StrategySummary>& runs) {
    if (runs.size() < 2) throw std::invalid_argument("need at least two strategies to compare");
    const std::size_t tasks = runs.front().j_per_task.size();
    ScenarioReport report;
    for (const StrategySummary& run : runs) {
        if (run.j_per_task.size() != tasks || run.kl_per_task.size() != tasks)
            throw std::invalid_argument("strategy '" + run.strategy +
                                        "' reports a different task count");
        report.strategies.push_back(run.strategy);
        report.j_cols.push_back(run.j_per_task);
        report.kl_cols.push_back(run.kl_per_task);
        scalar_t j_sum = 0.0, kl_sum = 0.0;
        for (std::size_t i = 0; i < tasks; ++i) {
            j_sum += run.j_per_task[i];
            kl_sum += run.kl_per_task[i];
        }
        report.j_avg.push_back(j_sum / static_cast<scalar_t>(tasks));
        report.kl_avg.push_back(kl_sum / static_cast<scalar_t>(tasks));
    }
    return report;
}

void write_scenario_csv(std::ostream& out, const ScenarioReport& report) {
    out << "task";
    for (const std::string& name : report.strategies) out << ',' << name << "_J," << name << "_KL";
    out << '\n';
    const std::size_t tasks = report.j_cols.empty() ? 0 : report.j_cols.front().size();
    for (std::size_t t = 0; t < tasks; ++t) {
        out << t;
        for (std::size_t k = 0; k < report.strategies.size(); ++k)
            out << ',' << format_double(report.j_cols[k][t]) << ','
                << format_double(report.kl_cols[k][t]);
        out << '\n';
    }
    out << "avg";
    for (std::size_t k = 0; k < report.strategies.size(); ++k)
        out << ',' << format_double(report.j_avg[k]) << ',' << format_double(report.kl_avg[k]);
    out << '\n';
}

std::string scenario_report_json(const ScenarioReport& report) {
    nlohmann::json doc;
    doc["strategies"] = nlohmann::json::array();
    for (std::size_t k = 0; k < report.strategies.size(); ++k) {
        nlohmann::json entry;
        entry["name"] = report.strategies[k];
        entry["j_per_task"] = report.j_cols[k];
        entry["kl_per_task"] = report.kl_cols[k];
        entry["j_avg"] = report.j_avg[k];
        entry["kl_avg"] = report.kl_avg[k];
        doc["strategies"].push_back(entry);
    }
    return doc.dump(2);
}

}  // namespace cds
