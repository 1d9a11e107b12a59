#pragma once

#include <vector>

#include "cds/dataset.hpp"
#include "cds/transition.hpp"

namespace cds {

/**
 * A task's training pool after data sharing: its own transitions plus whatever
 * was admitted from other tasks, all relabeled to `task`.  `weights` runs
 * parallel to `transitions`; hard admission uses weight 1, soft admission a
 * value in (0, 1).  `origin_task` on each transition records provenance.
 */
struct EffectiveDataset {
    index_t task = 0;
    std::vector<Transition> transitions;
    std::vector<scalar_t> weights;

    bool operator==(const EffectiveDataset&) const = default;
};

inline EffectiveDataset as_effective(const TaskDataset& d) {
    return {d.task, d.transitions, std::vector<scalar_t>(d.transitions.size(), 1.0)};
}

}  // namespace cds
