#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tensor.hpp"

namespace saferl::grid {

enum class ObsMode { discrete, image, partial };

inline const char* obs_mode_name(ObsMode m) {
  switch (m) {
    case ObsMode::discrete: return "discrete";
    case ObsMode::image: return "image";
    case ObsMode::partial: return "partial";
  }
  throw ParameterError("unknown observation mode");
}

inline ObsMode parse_obs_mode(const std::string& s) {
  if (s == "discrete") return ObsMode::discrete;
  if (s == "image") return ObsMode::image;
  if (s == "partial") return ObsMode::partial;
  throw ValidationError("unknown observation mode: " + s);
}

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

// action order: up, down, left, right, stay
constexpr std::size_t kNumActions = 5;
constexpr std::size_t kStayAction = 4;

inline Cell displacement(std::size_t action) {
  switch (action) {
    case 0: return {-1, 0};
    case 1: return {1, 0};
    case 2: return {0, -1};
    case 3: return {0, 1};
    case 4: return {0, 0};
  }
  throw ParameterError("action index out of range");
}

struct GridSpec {
  std::size_t width = 5;
  std::size_t height = 5;
  double rho = 0.0;
  std::vector<Cell> obstacles;   // explicit layout, used when explicit_layout is set
  bool explicit_layout = false;
  Cell start{0, 0};
  Cell goal{4, 4};
  double delta = 0.0;
  bool dynamic = false;
  std::size_t dynamic_count = 0;
  ObsMode mode = ObsMode::discrete;
  std::size_t window_w = 5;  // lateral extent of the partial window
  std::size_t window_h = 8;  // forward extent of the partial window
  std::size_t episode_cap = 100;

  std::size_t cells() const { return width * height; }
  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.col >= 0 && c.row < static_cast<int>(height) && c.col < static_cast<int>(width);
  }
  std::size_t index(Cell c) const { return static_cast<std::size_t>(c.row) * width + static_cast<std::size_t>(c.col); }
  Cell cell_at(std::size_t idx) const {
    return {static_cast<int>(idx / width), static_cast<int>(idx % width)};
  }
  Cell clamp(Cell c) const {
    c.row = std::max(0, std::min(c.row, static_cast<int>(height) - 1));
    c.col = std::max(0, std::min(c.col, static_cast<int>(width) - 1));
    return c;
  }

  void validate() const {
    if (width == 0 || height == 0) throw ValidationError("grid needs positive width and height");
    if (cells() < 2) throw ValidationError("grid needs at least two cells");
    if (!in_bounds(start) || !in_bounds(goal)) throw ValidationError("start and goal must lie inside the grid");
    if (start == goal) throw ValidationError("start and goal must differ");
    if (!(rho >= 0.0) || rho >= 1.0) throw ValidationError("obstacle density must lie in [0, 1)");
    if (!(delta >= 0.0) || delta >= 1.0) throw ValidationError("noise level must lie in [0, 1)");
    if (episode_cap == 0) throw ValidationError("episode cap must be positive");
    if (mode == ObsMode::partial && (window_w == 0 || window_h == 0)) {
      throw ValidationError("partial window needs positive extents");
    }
    for (std::size_t i = 0; i < obstacles.size(); ++i) {
      Cell c = obstacles[i];
      if (!in_bounds(c)) throw ValidationError("obstacle outside the grid");
      if (c == start || c == goal) throw ValidationError("obstacles may not sit on start or goal");
      for (std::size_t j = i + 1; j < obstacles.size(); ++j) {
        if (obstacles[j] == c) throw ValidationError("duplicate obstacle cell");
      }
    }
    if (dynamic && explicit_layout && obstacles.size() != dynamic_count) {
      throw ValidationError("dynamic obstacle count disagrees with the explicit layout");
    }
  }
};

struct GridState {
  Cell agent;
  std::vector<Cell> obstacles;
  std::size_t steps = 0;
  bool terminal = false;
};

struct Observation {
  ObsMode mode = ObsMode::discrete;
  nn::Tensor payload;
};

struct StepResult {
  Observation obs;
  double cost = 0.0;
  double constraint_cost = 0.0;
  bool reward_event = false;
  bool terminal = false;
};

// uniform over the in-bounds 4-neighbors
inline Cell random_neighbor(Cell c, const GridSpec& spec, RngStream& rng) {
  Cell options[4];
  std::size_t n = 0;
  for (std::size_t dir = 0; dir < 4; ++dir) {
    Cell d = displacement(dir);
    Cell nc{c.row + d.row, c.col + d.col};
    if (spec.in_bounds(nc)) options[n++] = nc;
  }
  if (n == 0) return c;  // 1x1 grid cannot happen past validate(), kept for safety
  return options[rng.uniform_int(n)];
}

// Window cells are agent + j*forward + (i - center)*lateral, forward being the
// facing direction and lateral its quarter turn; cells off the grid read 0.
inline Observation observe(const GridSpec& spec, const GridState& st, std::size_t facing) {
  Observation obs;
  obs.mode = spec.mode;
  switch (spec.mode) {
    case ObsMode::discrete: {
      obs.payload = nn::Tensor::zeros({spec.cells()});
      obs.payload.data[spec.index(st.agent)] = 1.0;
      return obs;
    }
    case ObsMode::image: {
      obs.payload = nn::Tensor::zeros({3, spec.height, spec.width});
      std::size_t plane = spec.cells();
      obs.payload.data[spec.index(st.agent)] = 1.0;
      for (Cell c : st.obstacles) obs.payload.data[plane + spec.index(c)] = 1.0;
      obs.payload.data[2 * plane + spec.index(spec.goal)] = 1.0;
      return obs;
    }
    case ObsMode::partial: {
      std::size_t w = spec.window_w, h = spec.window_h;
      obs.payload = nn::Tensor::zeros({3, w, h});
      Cell f = displacement(facing);
      Cell l{-f.col, f.row};
      int center = static_cast<int>(w - 1) / 2;
      obs.payload.data[static_cast<std::size_t>(center) * h] = 1.0;  // agent plane, lateral center, forward 0
      for (std::size_t i = 0; i < w; ++i) {
        for (std::size_t j = 0; j < h; ++j) {
          int di = static_cast<int>(i) - center;
          int dj = static_cast<int>(j);
          Cell world{st.agent.row + dj * f.row + di * l.row, st.agent.col + dj * f.col + di * l.col};
          if (!spec.in_bounds(world)) continue;
          std::size_t at = i * h + j;
          for (Cell c : st.obstacles) {
            if (c == world) obs.payload.data[w * h + at] = 1.0;
          }
          if (world == spec.goal) obs.payload.data[2 * w * h + at] = 1.0;
        }
      }
      return obs;
    }
  }
  throw ParameterError("unknown observation mode");
}

class GridWorld {
 public:
  GridWorld(GridSpec spec, std::uint64_t seed)
      : spec_(std::move(spec)),
        seed_(seed),
        noise_(seed, streams::env_noise),
        move_(seed, streams::obstacle_move) {
    spec_.validate();
    generate_layout();
    reset();
  }

  // restart the episode on the same layout; per-episode child streams keep
  // each episode reproducible regardless of how long the previous one ran
  Observation reset() {
    ++episode_;
    noise_ = RngStream(seed_, streams::env_noise).child(episode_);
    move_ = RngStream(seed_, streams::obstacle_move).child(episode_);
    state_.agent = spec_.start;
    state_.obstacles = initial_obstacles_;
    state_.steps = 0;
    state_.terminal = false;
    facing_ = 1;  // down
    last_applied_ = kStayAction;
    return observe(spec_, state_, facing_);
  }

  StepResult step(std::size_t action) {
    if (action >= kNumActions) throw ParameterError("action index out of range");
    if (state_.terminal) throw UsageError("step called on a finished episode");

    std::size_t applied = action;
    if (spec_.delta > 0.0 && noise_.uniform() < spec_.delta) {
      applied = noise_.uniform_int(4);  // noise never commands stay
    }
    last_applied_ = applied;
    if (applied < 4) facing_ = applied;

    Cell d = displacement(applied);
    state_.agent = spec_.clamp({state_.agent.row + d.row, state_.agent.col + d.col});
    state_.steps += 1;

    StepResult out;
    out.cost = 1.0;
    if (state_.agent == spec_.goal) {
      out.cost -= 1000.0;
      out.reward_event = true;
      state_.terminal = true;
    } else if (spec_.dynamic) {
      for (Cell& c : state_.obstacles) c = random_neighbor(c, spec_, move_);
    }
    // a hit is end-of-step co-location, so a simultaneous swap passes through
    for (Cell c : state_.obstacles) {
      if (c == state_.agent) out.constraint_cost = 1.0;
    }
    if (!state_.terminal && state_.steps >= spec_.episode_cap) state_.terminal = true;
    out.terminal = state_.terminal;
    out.obs = observe(spec_, state_, facing_);
    return out;
  }

  const GridSpec& spec() const { return spec_; }
  const GridState& state() const { return state_; }
  const std::vector<Cell>& initial_obstacles() const { return initial_obstacles_; }
  std::size_t facing() const { return facing_; }
  std::size_t last_applied_move() const { return last_applied_; }
  std::size_t episode() const { return episode_; }

 private:
  void generate_layout() {
    std::size_t count;
    if (spec_.explicit_layout) {
      initial_obstacles_ = spec_.obstacles;
      return;
    }
    if (spec_.dynamic) {
      count = spec_.dynamic_count;
    } else {
      count = static_cast<std::size_t>(std::llround(spec_.rho * static_cast<double>(spec_.cells() - 2)));
    }
    std::vector<Cell> free_cells;
    for (std::size_t idx = 0; idx < spec_.cells(); ++idx) {
      Cell c = spec_.cell_at(idx);
      if (c == spec_.start || c == spec_.goal) continue;
      free_cells.push_back(c);
    }
    if (count > free_cells.size()) throw GenerationError("grid too small for the requested obstacle count");
    RngStream layout(seed_, streams::env_layout);
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t j = i + layout.uniform_int(free_cells.size() - i);
      std::swap(free_cells[i], free_cells[j]);
      initial_obstacles_.push_back(free_cells[i]);
    }
  }

  GridSpec spec_;
  std::uint64_t seed_;
  std::vector<Cell> initial_obstacles_;
  GridState state_;
  std::size_t facing_ = 1;
  std::size_t last_applied_ = kStayAction;
  std::uint64_t episode_ = 0;
  RngStream noise_;
  RngStream move_;
};

}  // namespace saferl::grid
