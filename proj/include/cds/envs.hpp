#pragma once

#include <string>
#include <vector>

#include "cds/mdp.hpp"
#include "cds/types.hpp"

namespace cds {

// ---------------------------------------------------------------------------
// Corridor with three tasks over one shared dynamics.
//
// States are cells 0..length-1.  Actions: left, right, hop, stay.  Left/right
// move one cell (clamped at the walls) and succeed with probability 1 - slip,
// staying put otherwise; hop and stay never move.  Tasks: `forward` pays +1
// for each rightward move taken off the right wall, `backward` mirrors it,
// `jump` pays +1 for each hop executed at the designated jump cell.  No state
// is terminal.  Episodes start at the middle cell.
// ---------------------------------------------------------------------------

enum class CorridorAction : index_t { Left = 0, Right = 1, Hop = 2, Stay = 3 };
enum class CorridorTask : index_t { Forward = 0, Backward = 1, Jump = 2 };

struct CorridorTriTaskSpec {
    index_t length = 12;
    scalar_t slip = 0.1;
    index_t jump_cell = -1;  // negative: use length / 2
    scalar_t discount = 0.9;
};

MultiTaskMdp build_corridor_tritask(const CorridorTriTaskSpec& spec);

// ---------------------------------------------------------------------------
// Multi-goal grid: one goal cell per task, shared king-move dynamics.
//
// Actions are the eight king moves; moving into a wall or off the grid leaves
// the position unchanged.  A state within Chebyshev distance `goal_radius` of
// task i's goal is terminal for task i and pays +1 under every action (the
// arrival step collects it, then the episode ends).  Every goal must be
// reachable from the start cell; construction fails otherwise.
// ---------------------------------------------------------------------------

struct Cell {
    index_t x = 0;
    index_t y = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct MultiGoalGridSpec {
    index_t width = 7;
    index_t height = 5;
    std::vector<Cell> walls;
    std::vector<Cell> goals;
    index_t goal_radius = 1;
    Cell start{0, 0};
    scalar_t discount = 0.95;
};

MultiTaskMdp build_multigoal_grid(const MultiGoalGridSpec& spec);

/// Traversable cells in state-id order (row-major over non-wall cells).
std::vector<Cell> grid_cells(const MultiGoalGridSpec& spec);

/// State id of a cell, or -1 if the cell is a wall or out of bounds.
index_t grid_state(const MultiGoalGridSpec& spec, Cell c);

/// Chebyshev distance from a state to a task's goal cell.
index_t goal_distance(const MultiGoalGridSpec& spec, index_t state, index_t task);

// ---------------------------------------------------------------------------

/// Deterministic reward lookup used when relabeling data between tasks.
/// Throws std::out_of_range for invalid indices.
scalar_t task_reward(const MultiTaskMdp& mdp, index_t task, index_t s, index_t a);

/// Task-to-skill-label map used by the skill-gated sharing rule.
struct SkillTag {
    std::vector<std::string> skill_of_task;
    bool same_skill(index_t a, index_t b) const {
        return skill_of_task.at(static_cast<std::size_t>(a)) ==
               skill_of_task.at(static_cast<std::size_t>(b));
    }
};

/// Corridor default: the two locomotion tasks share a skill, jump stands alone.
SkillTag corridor_skills();

/// Grid default: tasks are grouped by the half of the grid their goal lies in.
SkillTag grid_skills(const MultiGoalGridSpec& spec);

}  // namespace cds
