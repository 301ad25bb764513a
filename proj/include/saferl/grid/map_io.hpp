#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "saferl/core/errors.hpp"
#include "saferl/core/format.hpp"
#include "saferl/grid/gridworld.hpp"

namespace saferl::grid {

// Plain-text maps: a fixed header, then height rows of width characters.
// '.' free, '#' obstacle, 'S' start, 'G' goal. Loading then saving a saved
// map reproduces it byte for byte.
inline void write_map(const GridSpec& spec, const std::vector<Cell>& obstacles, std::ostream& out) {
  out << "saferl-grid 1\n";
  out << "width " << spec.width << "\n";
  out << "height " << spec.height << "\n";
  out << "delta " << format_double(spec.delta) << "\n";
  out << "rho " << format_double(spec.rho) << "\n";
  out << "mode " << obs_mode_name(spec.mode) << "\n";
  out << "window " << spec.window_w << " " << spec.window_h << "\n";
  out << "dynamic " << (spec.dynamic ? 1 : 0) << "\n";
  out << "dynamic_count " << spec.dynamic_count << "\n";
  out << "cap " << spec.episode_cap << "\n";
  out << "map\n";
  for (std::size_t r = 0; r < spec.height; ++r) {
    for (std::size_t c = 0; c < spec.width; ++c) {
      Cell cell{static_cast<int>(r), static_cast<int>(c)};
      char ch = '.';
      for (Cell o : obstacles) {
        if (o == cell) ch = '#';
      }
      if (cell == spec.start) ch = 'S';
      if (cell == spec.goal) ch = 'G';
      out << ch;
    }
    out << "\n";
  }
}

inline void save_map(const GridSpec& spec, const std::vector<Cell>& obstacles, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open map file for writing: " + path);
  write_map(spec, obstacles, out);
}

inline GridSpec read_map(std::istream& in) {
  auto next_line = [&in]() {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("map file: unexpected end of input");
    return line;
  };
  auto expect_kv = [&](const std::string& key) {
    std::string line = next_line();
    if (line.rfind(key + " ", 0) != 0) throw ValidationError("map file: expected '" + key + "' line");
    return line.substr(key.size() + 1);
  };

  if (next_line() != "saferl-grid 1") throw ValidationError("unrecognized map header");
  GridSpec spec;
  spec.width = static_cast<std::size_t>(parse_int(expect_kv("width")));
  spec.height = static_cast<std::size_t>(parse_int(expect_kv("height")));
  spec.delta = parse_double(expect_kv("delta"));
  spec.rho = parse_double(expect_kv("rho"));
  spec.mode = parse_obs_mode(expect_kv("mode"));
  std::istringstream win(expect_kv("window"));
  std::string ww, wh;
  if (!(win >> ww >> wh)) throw ValidationError("map file: malformed window line");
  spec.window_w = static_cast<std::size_t>(parse_int(ww));
  spec.window_h = static_cast<std::size_t>(parse_int(wh));
  spec.dynamic = parse_int(expect_kv("dynamic")) != 0;
  spec.dynamic_count = static_cast<std::size_t>(parse_int(expect_kv("dynamic_count")));
  spec.episode_cap = static_cast<std::size_t>(parse_int(expect_kv("cap")));
  if (next_line() != "map") throw ValidationError("map file: expected map block");

  bool saw_start = false, saw_goal = false;
  for (std::size_t r = 0; r < spec.height; ++r) {
    std::string row = next_line();
    if (row.size() != spec.width) throw ValidationError("map file: row width mismatch");
    for (std::size_t c = 0; c < spec.width; ++c) {
      Cell cell{static_cast<int>(r), static_cast<int>(c)};
      switch (row[c]) {
        case '.': break;
        case '#': spec.obstacles.push_back(cell); break;
        case 'S':
          if (saw_start) throw ValidationError("map file: more than one start cell");
          spec.start = cell;
          saw_start = true;
          break;
        case 'G':
          if (saw_goal) throw ValidationError("map file: more than one goal cell");
          spec.goal = cell;
          saw_goal = true;
          break;
        default: throw ValidationError(std::string("map file: unknown cell character '") + row[c] + "'");
      }
    }
  }
  if (!saw_start || !saw_goal) throw ValidationError("map file: needs exactly one start and one goal");
  spec.explicit_layout = true;
  spec.validate();
  return spec;
}

inline GridSpec load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open map file: " + path);
  return read_map(in);
}

}  // namespace saferl::grid
