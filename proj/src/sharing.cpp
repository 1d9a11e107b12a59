#include "cds/sharing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "cds/datagen.hpp"
#include "cds/rng.hpp"
#include "cds/text.hpp"

namespace cds {

namespace {

constexpr scalar_t kNoDelta = std::numeric_limits<scalar_t>::quiet_NaN();

void check_k(scalar_t k) {
    if (!(k >= 0.0 && k <= 100.0))
        throw std::invalid_argument("percentile k must lie in [0, 100]");
}

}  // namespace

SharingStrategy parse_strategy(const std::string& text) {
    SharingStrategy s;
    std::string head = text;
    std::string arg;
    const std::size_t colon = text.find(':');
    if (colon != std::string::npos) {
        head = text.substr(0, colon);
        arg = text.substr(colon + 1);
    }

    if (head == "no-share") s.kind = SharingKind::NoShare;
    else if (head == "share-all") s.kind = SharingKind::ShareAll;
    else if (head == "skill") s.kind = SharingKind::Skill;
    else if (head == "hipi") s.kind = SharingKind::Hipi;
    else if (head == "cds-basic") s.kind = SharingKind::CdsBasic;
    else if (head == "cds-quantile") s.kind = SharingKind::CdsQuantile;
    else if (head == "cds-weighted") s.kind = SharingKind::CdsWeighted;
    else
        throw std::invalid_argument(
            "unknown sharing strategy '" + text +
            "' (expected no-share, share-all, skill, hipi, cds-basic, cds-quantile[:k], "
            "cds-weighted[:k])");

    if (!arg.empty()) {
        if (s.kind != SharingKind::CdsQuantile && s.kind != SharingKind::CdsWeighted)
            throw std::invalid_argument("strategy '" + head + "' takes no argument");
        s.k = parse_double(arg);
        check_k(s.k);
    } else if (colon != std::string::npos) {
        throw std::invalid_argument("empty argument in strategy '" + text + "'");
    }
    return s;
}

std::string strategy_name(const SharingStrategy& strategy) {
    switch (strategy.kind) {
        case SharingKind::NoShare: return "no-share";
        case SharingKind::ShareAll: return "share-all";
        case SharingKind::Skill: return "skill";
        case SharingKind::Hipi: return "hipi";
        case SharingKind::CdsBasic: return "cds-basic";
        case SharingKind::CdsQuantile: return "cds-quantile:" + format_double(strategy.k);
        case SharingKind::CdsWeighted: return "cds-weighted:" + format_double(strategy.k);
    }
    throw std::logic_error("unhandled sharing kind");
}

scalar_t percentile(std::vector<scalar_t> values, scalar_t k) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty list");
    check_k(k);
    std::sort(values.begin(), values.end());
    std::size_t idx = 0;
    if (k > 0.0) {
        const scalar_t rank = std::ceil(k * static_cast<scalar_t>(values.size()) / 100.0);
        idx = static_cast<std::size_t>(rank) - 1;
    }
    return values[idx];
}

scalar_t cds_delta_quantile(const ConservativeQTable& q, const Transition& t, index_t target,
                            const std::vector<Transition>& d_target, scalar_t k) {
    if (d_target.empty())
        throw std::invalid_argument("quantile rule needs a nonempty target dataset");
    const matrix_t& qi = q.q.at(static_cast<std::size_t>(target));
    std::vector<scalar_t> values;
    values.reserve(d_target.size());
    for (const Transition& u : d_target) values.push_back(qi(u.s, u.a));
    return qi(t.s, t.a) - percentile(std::move(values), k);
}

scalar_t cds_delta_basic(const ConservativeQTable& q, const TabularPolicy& policy,
                         const Transition& t, index_t target,
                         const std::vector<Transition>& d_target) {
    if (d_target.empty())
        throw std::invalid_argument("basic rule needs a nonempty target dataset");
    const matrix_t& qi = q.q.at(static_cast<std::size_t>(target));
    const matrix_t& pi = policy.probs.at(static_cast<std::size_t>(target));

    // Dataset term: average policy value minus average taken-action value.
    // Averaging Q(s, a) over the dataset's pairs equals the nested expectation
    // over its state marginal and empirical action conditional.
    scalar_t policy_sum = 0.0, data_sum = 0.0;
    for (const Transition& u : d_target) {
        policy_sum += pi.row(u.s).dot(qi.row(u.s));
        data_sum += qi(u.s, u.a);
    }
    const scalar_t n = static_cast<scalar_t>(d_target.size());
    const scalar_t dataset_term = (policy_sum - data_sum) / n;

    const scalar_t candidate_term = pi.row(t.s).dot(qi.row(t.s)) - qi(t.s, t.a);
    return dataset_term - candidate_term;
}

AdaptiveTemperature make_temperature(index_t num_tasks, const SharingStrategy& strategy) {
    if (!(strategy.tau_min > 0.0) || strategy.tau_max < strategy.tau_min)
        throw std::invalid_argument("temperature bounds must satisfy 0 < tau_min <= tau_max");
    if (!(strategy.tau_decay >= 0.0 && strategy.tau_decay < 1.0))
        throw std::invalid_argument("temperature decay must lie in [0, 1)");
    AdaptiveTemperature t;
    t.decay = strategy.tau_decay;
    t.tau_min = strategy.tau_min;
    t.tau_max = strategy.tau_max;
    t.tau.assign(static_cast<std::size_t>(num_tasks),
                 std::clamp(1.0, strategy.tau_min, strategy.tau_max));
    return t;
}

scalar_t cds_weight(scalar_t delta, const AdaptiveTemperature& tau, index_t task) {
    const scalar_t t = tau.tau.at(static_cast<std::size_t>(task));
    return 1.0 / (1.0 + std::exp(-delta / t));
}

void update_temperature(AdaptiveTemperature& tau, const std::vector<scalar_t>& delta_batch,
                        index_t task) {
    if (delta_batch.empty()) return;
    scalar_t mean = 0.0;
    for (const scalar_t d : delta_batch) mean += std::abs(d);
    mean /= static_cast<scalar_t>(delta_batch.size());
    scalar_t& t = tau.tau.at(static_cast<std::size_t>(task));
    t = std::clamp(tau.decay * t + (1.0 - tau.decay) * mean, tau.tau_min, tau.tau_max);
}

index_t hipi_route(const ConservativeQTable& q, const Transition& t) {
    index_t best = 0;
    for (index_t i = 1; i < static_cast<index_t>(q.q.size()); ++i)
        if (q.q[static_cast<std::size_t>(i)](t.s, t.a) > q.q[static_cast<std::size_t>(best)](t.s, t.a))
            best = i;
    return best;
}

bool skill_route(const SkillTag& tags, index_t origin, index_t target) {
    return tags.same_skill(origin, target);
}

EffectiveDataset build_effective_dataset(const SharingStrategy& strategy,
                                         const ConservativeQTable& q,
                                         const std::vector<TaskDataset>& raw, index_t target,
                                         const MultiTaskMdp& mdp, const BuildOptions& opts) {
    if (target < 0 || static_cast<std::size_t>(target) >= raw.size())
        throw std::invalid_argument("target task out of range");
    for (std::size_t j = 0; j < raw.size(); ++j)
        if (raw[j].task != static_cast<index_t>(j))
            throw std::invalid_argument("raw datasets must be ordered by task id");
    check_k(strategy.k);

    const bool weighted = strategy.kind == SharingKind::CdsWeighted;
    const bool quantile_like = weighted || strategy.kind == SharingKind::CdsQuantile;
    if (strategy.kind == SharingKind::CdsBasic && opts.policy == nullptr)
        throw std::invalid_argument("basic rule needs the current policy");
    if (strategy.kind == SharingKind::Skill &&
        strategy.skills.skill_of_task.size() < raw.size())
        throw std::invalid_argument("skill tags must label every task");

    const std::vector<Transition>& own = raw[static_cast<std::size_t>(target)].transitions;

    // The quantile threshold over the task's own data is shared by every
    // candidate, so hoist it out of the loop.
    scalar_t threshold = 0.0;
    if (quantile_like) {
        if (own.empty())
            throw std::invalid_argument("quantile rule needs a nonempty target dataset");
        const matrix_t& qi = q.q.at(static_cast<std::size_t>(target));
        std::vector<scalar_t> values;
        values.reserve(own.size());
        for (const Transition& u : own) values.push_back(qi(u.s, u.a));
        threshold = percentile(std::move(values), strategy.k);
    }
    const auto quantile_delta = [&](const Transition& t) {
        return q.q.at(static_cast<std::size_t>(target))(t.s, t.a) - threshold;
    };

    AdaptiveTemperature local = make_temperature(static_cast<index_t>(raw.size()), strategy);
    AdaptiveTemperature& temperature = opts.temperature != nullptr ? *opts.temperature : local;
    std::vector<scalar_t> delta_batch;

    EffectiveDataset out;
    out.task = target;

    bool weight_own = false;
    if (weighted && opts.weight_rule == WeightRule::RelabeledPlusHalfOriginal) {
        if (opts.coin == nullptr)
            throw std::invalid_argument("weighting the original data needs a seed stream");
        weight_own = uniform01(*opts.coin) < 0.5;
    }

    for (std::size_t idx = 0; idx < own.size(); ++idx) {
        const Transition& t = own[idx];
        scalar_t w = 1.0;
        if (weight_own) {
            const scalar_t delta = quantile_delta(t);
            w = cds_weight(delta, temperature, target);
            delta_batch.push_back(delta);
            if (opts.audit != nullptr)
                opts.audit->push_back({idx, target, target, delta, w, true});
        }
        out.transitions.push_back(t);
        out.weights.push_back(w);
    }

    std::size_t stream_index = 0;
    for (std::size_t j = 0; j < raw.size(); ++j) {
        if (static_cast<index_t>(j) == target) continue;
        if (strategy.kind == SharingKind::NoShare) continue;
        for (const Transition& t : raw[j].transitions) {
            const std::size_t idx = stream_index++;
            scalar_t delta = kNoDelta;
            scalar_t w = 1.0;
            bool admit = false;
            switch (strategy.kind) {
                case SharingKind::ShareAll:
                    admit = true;
                    break;
                case SharingKind::Skill:
                    admit = skill_route(strategy.skills, static_cast<index_t>(j), target);
                    break;
                case SharingKind::Hipi:
                    admit = hipi_route(q, t) == target;
                    break;
                case SharingKind::CdsBasic:
                    delta = cds_delta_basic(q, *opts.policy, t, target, own);
                    admit = delta >= 0.0;
                    break;
                case SharingKind::CdsQuantile:
                    delta = quantile_delta(t);
                    admit = delta >= 0.0;
                    break;
                case SharingKind::CdsWeighted:
                    delta = quantile_delta(t);
                    w = cds_weight(delta, temperature, target);
                    delta_batch.push_back(delta);
                    admit = true;
                    break;
                case SharingKind::NoShare:
                    break;
            }
            if (opts.audit != nullptr)
                opts.audit->push_back({idx, static_cast<index_t>(j), target, delta, w, admit});
            if (!admit) continue;
            out.transitions.push_back(relabel(t, target, mdp));
            out.weights.push_back(w);
        }
    }

    if (weighted) update_temperature(temperature, delta_batch, target);
    return out;
}

void write_admission_csv(std::ostream& out, const std::vector<AdmissionRecord>& records) {
    out << "index,origin,target,delta,weight,admitted\n";
    for (const AdmissionRecord& r : records) {
        out << r.index << ',' << r.origin << ',' << r.target << ',';
        if (!std::isnan(r.delta)) out << format_double(r.delta);
        out << ',' << format_double(r.weight) << ',' << (r.admitted ? 1 : 0) << '\n';
    }
}

}  // namespace cds
