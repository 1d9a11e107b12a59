#include "cds/envs.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <stdexcept>

namespace cds {

namespace {

// King moves in a fixed order; action index = position in this list.
constexpr index_t kKingMoves[8][2] = {
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1},
};

index_t chebyshev(Cell a, Cell b) {
    return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

bool in_bounds(const MultiGoalGridSpec& spec, Cell c) {
    return c.x >= 0 && c.x < spec.width && c.y >= 0 && c.y < spec.height;
}

bool is_wall(const MultiGoalGridSpec& spec, Cell c) {
    return std::find(spec.walls.begin(), spec.walls.end(), c) != spec.walls.end();
}

}  // namespace

MultiTaskMdp build_corridor_tritask(const CorridorTriTaskSpec& spec) {
    if (spec.length < 3) throw std::invalid_argument("corridor length must be at least 3");
    if (!(spec.slip >= 0.0 && spec.slip < 1.0))
        throw std::invalid_argument("corridor slip must lie in [0, 1)");
    if (!(spec.discount >= 0.0 && spec.discount < 1.0))
        throw std::invalid_argument("corridor discount must lie in [0, 1)");
    const index_t length = spec.length;
    const index_t jump_cell = spec.jump_cell < 0 ? length / 2 : spec.jump_cell;
    if (jump_cell >= length) throw std::invalid_argument("corridor jump cell out of range");

    constexpr index_t a_count = 4;
    MultiTaskMdp m;
    m.num_states = length;
    m.num_actions = a_count;
    m.num_tasks = 3;
    m.discount = spec.discount;
    m.transition = matrix_t::Zero(length * a_count, length);

    for (index_t s = 0; s < length; ++s) {
        const index_t left = std::max<index_t>(0, s - 1);
        const index_t right = std::min<index_t>(length - 1, s + 1);
        auto move_row = [&](index_t a, index_t target) {
            auto row = m.transition.row(s * a_count + a);
            row(target) += 1.0 - spec.slip;
            row(s) += spec.slip;
        };
        move_row(static_cast<index_t>(CorridorAction::Left), left);
        move_row(static_cast<index_t>(CorridorAction::Right), right);
        m.transition(s * a_count + static_cast<index_t>(CorridorAction::Hop), s) = 1.0;
        m.transition(s * a_count + static_cast<index_t>(CorridorAction::Stay), s) = 1.0;
    }

    matrix_t fwd = matrix_t::Zero(length, a_count);
    matrix_t bwd = matrix_t::Zero(length, a_count);
    matrix_t jmp = matrix_t::Zero(length, a_count);
    for (index_t s = 0; s < length; ++s) {
        if (s < length - 1) fwd(s, static_cast<index_t>(CorridorAction::Right)) = 1.0;
        if (s > 0) bwd(s, static_cast<index_t>(CorridorAction::Left)) = 1.0;
    }
    jmp(jump_cell, static_cast<index_t>(CorridorAction::Hop)) = 1.0;
    m.rewards = {std::move(fwd), std::move(bwd), std::move(jmp)};

    m.terminal.assign(3, std::vector<std::uint8_t>(static_cast<std::size_t>(length), 0));
    m.initial_dist = vector_t::Zero(length);
    m.initial_dist(length / 2) = 1.0;
    return m;
}

std::vector<Cell> grid_cells(const MultiGoalGridSpec& spec) {
    std::vector<Cell> cells;
    for (index_t y = 0; y < spec.height; ++y)
        for (index_t x = 0; x < spec.width; ++x) {
            const Cell c{x, y};
            if (!is_wall(spec, c)) cells.push_back(c);
        }
    return cells;
}

index_t grid_state(const MultiGoalGridSpec& spec, Cell c) {
    if (!in_bounds(spec, c) || is_wall(spec, c)) return -1;
    index_t id = 0;
    for (index_t y = 0; y < spec.height; ++y)
        for (index_t x = 0; x < spec.width; ++x) {
            const Cell cur{x, y};
            if (is_wall(spec, cur)) continue;
            if (cur == c) return id;
            ++id;
        }
    return -1;
}

index_t goal_distance(const MultiGoalGridSpec& spec, index_t state, index_t task) {
    const auto cells = grid_cells(spec);
    if (state < 0 || state >= static_cast<index_t>(cells.size()))
        throw std::out_of_range("goal_distance: state out of range");
    if (task < 0 || task >= static_cast<index_t>(spec.goals.size()))
        throw std::out_of_range("goal_distance: task out of range");
    return chebyshev(cells[static_cast<std::size_t>(state)], spec.goals[static_cast<std::size_t>(task)]);
}

MultiTaskMdp build_multigoal_grid(const MultiGoalGridSpec& spec) {
    if (spec.width < 1 || spec.height < 1) throw std::invalid_argument("grid dimensions must be positive");
    if (spec.goals.empty()) throw std::invalid_argument("grid needs at least one goal");
    if (spec.goal_radius < 0) throw std::invalid_argument("grid goal radius must be nonnegative");
    if (!(spec.discount >= 0.0 && spec.discount < 1.0))
        throw std::invalid_argument("grid discount must lie in [0, 1)");
    if (!in_bounds(spec, spec.start) || is_wall(spec, spec.start))
        throw std::invalid_argument("grid start cell is a wall or out of bounds");
    for (std::size_t i = 0; i < spec.goals.size(); ++i) {
        if (!in_bounds(spec, spec.goals[i]) || is_wall(spec, spec.goals[i])) {
            std::ostringstream ss;
            ss << "grid goal " << i << " is a wall or out of bounds";
            throw std::invalid_argument(ss.str());
        }
    }

    const auto cells = grid_cells(spec);
    const index_t s_count = static_cast<index_t>(cells.size());
    constexpr index_t a_count = 8;

    // Reachability sweep from the start cell.
    std::vector<std::uint8_t> seen(cells.size(), 0);
    std::deque<Cell> queue{spec.start};
    seen[static_cast<std::size_t>(grid_state(spec, spec.start))] = 1;
    while (!queue.empty()) {
        const Cell cur = queue.front();
        queue.pop_front();
        for (const auto& mv : kKingMoves) {
            const Cell nxt{cur.x + mv[0], cur.y + mv[1]};
            const index_t id = grid_state(spec, nxt);
            if (id >= 0 && !seen[static_cast<std::size_t>(id)]) {
                seen[static_cast<std::size_t>(id)] = 1;
                queue.push_back(nxt);
            }
        }
    }
    for (std::size_t i = 0; i < spec.goals.size(); ++i) {
        if (!seen[static_cast<std::size_t>(grid_state(spec, spec.goals[i]))]) {
            std::ostringstream ss;
            ss << "grid goal " << i << " is unreachable from the start cell";
            throw std::invalid_argument(ss.str());
        }
    }

    MultiTaskMdp m;
    m.num_states = s_count;
    m.num_actions = a_count;
    m.num_tasks = static_cast<index_t>(spec.goals.size());
    m.discount = spec.discount;
    m.transition = matrix_t::Zero(s_count * a_count, s_count);
    for (index_t s = 0; s < s_count; ++s) {
        const Cell cur = cells[static_cast<std::size_t>(s)];
        for (index_t a = 0; a < a_count; ++a) {
            const Cell nxt{cur.x + kKingMoves[a][0], cur.y + kKingMoves[a][1]};
            index_t target = grid_state(spec, nxt);
            if (target < 0) target = s;  // blocked moves stay put
            m.transition(s * a_count + a, target) = 1.0;
        }
    }

    for (index_t task = 0; task < m.num_tasks; ++task) {
        matrix_t table = matrix_t::Zero(s_count, a_count);
        std::vector<std::uint8_t> term(static_cast<std::size_t>(s_count), 0);
        for (index_t s = 0; s < s_count; ++s) {
            if (chebyshev(cells[static_cast<std::size_t>(s)], spec.goals[static_cast<std::size_t>(task)]) <=
                spec.goal_radius) {
                table.row(s).setConstant(1.0);
                term[static_cast<std::size_t>(s)] = 1;
            }
        }
        m.rewards.push_back(std::move(table));
        m.terminal.push_back(std::move(term));
    }

    m.initial_dist = vector_t::Zero(s_count);
    m.initial_dist(grid_state(spec, spec.start)) = 1.0;
    return m;
}

scalar_t task_reward(const MultiTaskMdp& mdp, index_t task, index_t s, index_t a) {
    if (task < 0 || task >= mdp.num_tasks) throw std::out_of_range("task_reward: task out of range");
    if (s < 0 || s >= mdp.num_states) throw std::out_of_range("task_reward: state out of range");
    if (a < 0 || a >= mdp.num_actions) throw std::out_of_range("task_reward: action out of range");
    return mdp.reward(task, s, a);
}

SkillTag corridor_skills() { return SkillTag{{"locomotion", "locomotion", "jump"}}; }

SkillTag grid_skills(const MultiGoalGridSpec& spec) {
    SkillTag tags;
    for (const Cell& g : spec.goals)
        tags.skill_of_task.push_back(g.x * 2 < spec.width ? "reach-left" : "reach-right");
    return tags;
}

}  // namespace cds
