#pragma once

#include "cds/types.hpp"

namespace cds {

/// One logged environment step.  `done` marks the final step of an episode
/// (the step taken from a task-terminal state).  `origin_task` records which
/// task's behavior produced the step and survives relabeling.
struct Transition {
    index_t s = 0;
    index_t a = 0;
    scalar_t r = 0.0;
    index_t s_next = 0;
    bool done = false;
    index_t origin_task = 0;

    friend bool operator==(const Transition&, const Transition&) = default;
};

}  // namespace cds
