#pragma once

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "cds/dataset.hpp"
#include "cds/effective_dataset.hpp"
#include "cds/envs.hpp"
#include "cds/mdp.hpp"
#include "cds/offline_learner.hpp"

namespace cds {

enum class SharingKind { NoShare, ShareAll, Skill, Hipi, CdsBasic, CdsQuantile, CdsWeighted };

/// How transitions from other tasks enter a task's training pool.
///
/// `k` is the percentile threshold used by the quantile rules.  `skills` is
/// consulted only by Skill routing and must label every task.  The tau_*
/// fields parameterize the adaptive temperature of weighted sharing.
struct SharingStrategy {
    SharingKind kind = SharingKind::NoShare;
    scalar_t k = 90.0;
    SkillTag skills;
    scalar_t tau_min = 1.0;
    scalar_t tau_max = 50.0;
    scalar_t tau_decay = 0.995;
};

/// Parses "no-share", "share-all", "skill", "hipi", "cds-basic",
/// "cds-quantile[:k]" and "cds-weighted[:k]".  Skill tags are not encoded in
/// the text form; callers attach them afterwards.
SharingStrategy parse_strategy(const std::string& text);
std::string strategy_name(const SharingStrategy& strategy);

/// Nearest-rank percentile: sorts ascending and returns the element at index
/// ceil(k/100 * n) - 1, index 0 for k = 0.  k must lie in [0, 100].
scalar_t percentile(std::vector<scalar_t> values, scalar_t k);

/// Quantile rule: how far the candidate's Q sits above the k-th percentile of
/// Q over the target task's own data.  Admission is delta >= 0.
scalar_t cds_delta_quantile(const ConservativeQTable& q, const Transition& t, index_t target,
                            const std::vector<Transition>& d_target, scalar_t k);

/// Regularizer-difference rule: (dataset-average policy advantage over the
/// data's empirical action choice) minus (the same quantity at the candidate).
scalar_t cds_delta_basic(const ConservativeQTable& q, const TabularPolicy& policy,
                         const Transition& t, index_t target,
                         const std::vector<Transition>& d_target);

/// Per-task sharing temperature, tracked as a clipped running average of the
/// admission deltas seen so far.
struct AdaptiveTemperature {
    std::vector<scalar_t> tau;
    scalar_t decay = 0.995;
    scalar_t tau_min = 1.0;
    scalar_t tau_max = 50.0;
};

AdaptiveTemperature make_temperature(index_t num_tasks, const SharingStrategy& strategy);

/// Logistic weight sigma(delta / tau_task), strictly inside (0, 1).
scalar_t cds_weight(scalar_t delta, const AdaptiveTemperature& tau, index_t task);

/// tau_task <- clip(decay * tau_task + (1 - decay) * mean|delta|).  An empty
/// batch leaves the temperature untouched.
void update_temperature(AdaptiveTemperature& tau, const std::vector<scalar_t>& delta_batch,
                        index_t task);

/// Task whose Q-value for (s, a) is highest; ties go to the lowest task id.
index_t hipi_route(const ConservativeQTable& q, const Transition& t);

/// True when origin and target belong to the same skill group.
bool skill_route(const SkillTag& tags, index_t origin, index_t target);

/// One sharing decision, in candidate-stream order (tasks ascending, original
/// order within each task; weighted originals are indexed within their own
/// dataset).  delta is NaN for strategies that never compute one.
struct AdmissionRecord {
    std::size_t index = 0;
    index_t origin = 0;
    index_t target = 0;
    scalar_t delta = 0.0;
    scalar_t weight = 1.0;
    bool admitted = false;
};

struct BuildOptions {
    const TabularPolicy* policy = nullptr;       // required by the basic rule
    AdaptiveTemperature* temperature = nullptr;  // weighted sharing: read, then updated
    std::mt19937_64* coin = nullptr;             // weighted sharing's original-data coin
    WeightRule weight_rule = WeightRule::RelabeledOnly;
    std::vector<AdmissionRecord>* audit = nullptr;
};

/// Assembles task `target`'s training pool: its own data always enters (at
/// weight 1 under every hard strategy), and every transition of every other
/// task is relabeled and admitted per the strategy.  Weighted sharing admits
/// all candidates at weight sigma(delta/tau) and, under the plus-original
/// rule, flips one coin per build deciding whether the task's own data is
/// self-weighted the same way; it then folds this build's deltas into the
/// temperature.
EffectiveDataset build_effective_dataset(const SharingStrategy& strategy,
                                         const ConservativeQTable& q,
                                         const std::vector<TaskDataset>& raw, index_t target,
                                         const MultiTaskMdp& mdp, const BuildOptions& opts = {});

void write_admission_csv(std::ostream& out, const std::vector<AdmissionRecord>& records);

}  // namespace cds
