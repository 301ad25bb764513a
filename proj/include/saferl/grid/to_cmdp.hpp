#pragma once

#include <vector>

#include "saferl/cmdp/model.hpp"
#include "saferl/core/errors.hpp"
#include "saferl/grid/gridworld.hpp"

namespace saferl::grid {

// Exact tabular model of a static grid: states are cells, the kernel folds
// the delta-noise and border clamping, c(x,a) = 1 - 1000 * P(goal | x,a),
// d(x) = 1 on obstacle cells. The episode cap is not modeled, so undiscounted
// returns only exist for goal-reaching policies.
inline cmdp::CmdpModel grid_to_cmdp(const GridSpec& spec, const std::vector<Cell>& obstacles, double gamma,
                                    double d0) {
  spec.validate();
  if (spec.dynamic) throw ValidationError("grid_to_cmdp: dynamic obstacles have no tabular representation");
  if (spec.cells() > 100) throw SizeError("grid_to_cmdp: grid too large for tabular conversion");

  std::size_t n = spec.cells();
  cmdp::CmdpModel m = cmdp::CmdpModel::empty(n, kNumActions);
  m.gamma = gamma;
  m.start = spec.index(spec.start);
  m.d0 = d0;
  std::size_t goal = spec.index(spec.goal);
  m.terminal[goal] = true;
  for (Cell c : obstacles) m.d[spec.index(c)] = 1.0;

  for (std::size_t idx = 0; idx < n; ++idx) {
    Cell at = spec.cell_at(idx);
    for (std::size_t a = 0; a < kNumActions; ++a) {
      if (idx == goal) {
        m.p(idx, a, idx) = 1.0;
        continue;
      }
      // commanded displacement keeps 1 - delta; each direction gets delta/4
      auto land = [&](std::size_t applied, double mass) {
        Cell d = displacement(applied);
        std::size_t nx = spec.index(spec.clamp({at.row + d.row, at.col + d.col}));
        m.p(idx, a, nx) += mass;
      };
      land(a, 1.0 - spec.delta);
      for (std::size_t dir = 0; dir < 4; ++dir) land(dir, spec.delta / 4.0);
      m.cost(idx, a) = 1.0 - 1000.0 * m.p(idx, a, goal);
    }
  }
  m.validate();
  return m;
}

inline cmdp::CmdpModel grid_to_cmdp(const GridWorld& world, double gamma, double d0) {
  return grid_to_cmdp(world.spec(), world.initial_obstacles(), gamma, d0);
}

}  // namespace saferl::grid
