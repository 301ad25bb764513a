#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/format.hpp"

namespace saferl::cmdp {

// Tabular constrained MDP: transition kernel P(x'|x,a), stage cost c(x,a),
// state constraint cost d(x), start state, constraint budget d0, discount.
// Terminal states are absorbing with zero costs.
struct CmdpModel {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> P;        // [x][a][x']
  std::vector<double> c;        // [x][a]
  std::vector<double> d;        // [x]
  std::vector<bool> terminal;   // [x]
  double gamma = 0.99;
  std::size_t start = 0;
  double d0 = 0.0;

  double p(std::size_t x, std::size_t a, std::size_t nx) const {
    return P[(x * num_actions + a) * num_states + nx];
  }
  double& p(std::size_t x, std::size_t a, std::size_t nx) {
    return P[(x * num_actions + a) * num_states + nx];
  }
  double cost(std::size_t x, std::size_t a) const { return c[x * num_actions + a]; }
  double& cost(std::size_t x, std::size_t a) { return c[x * num_actions + a]; }

  static CmdpModel empty(std::size_t states, std::size_t actions) {
    CmdpModel m;
    m.num_states = states;
    m.num_actions = actions;
    m.P.assign(states * actions * states, 0.0);
    m.c.assign(states * actions, 0.0);
    m.d.assign(states, 0.0);
    m.terminal.assign(states, false);
    return m;
  }

  void validate() const {
    if (num_states == 0 || num_actions == 0) throw ValidationError("cmdp needs at least one state and action");
    if (P.size() != num_states * num_actions * num_states || c.size() != num_states * num_actions ||
        d.size() != num_states || terminal.size() != num_states) {
      throw ValidationError("cmdp array sizes do not match |X|, |A|");
    }
    if (start >= num_states) throw ValidationError("cmdp start state out of range");
    if (!(gamma > 0.0) || gamma > 1.0) throw ValidationError("cmdp discount must lie in (0, 1]");
    if (!std::isfinite(d0)) throw ValidationError("cmdp budget d0 must be finite");
    for (std::size_t x = 0; x < num_states; ++x) {
      if (!std::isfinite(d[x]) || d[x] < 0.0) throw ValidationError("constraint costs must be finite and non-negative");
      for (std::size_t a = 0; a < num_actions; ++a) {
        if (!std::isfinite(cost(x, a))) throw ValidationError("stage costs must be finite");
        double row = 0.0;
        for (std::size_t nx = 0; nx < num_states; ++nx) {
          double v = p(x, a, nx);
          if (!std::isfinite(v) || v < -1e-12) throw ValidationError("transition probabilities must be non-negative");
          row += v;
        }
        if (std::abs(row - 1.0) > 1e-9) {
          throw ValidationError("transition row for state " + std::to_string(x) + " action " + std::to_string(a) +
                                " sums to " + format_double(row));
        }
      }
      if (terminal[x]) {
        if (d[x] != 0.0) throw ValidationError("terminal states must carry zero constraint cost");
        for (std::size_t a = 0; a < num_actions; ++a) {
          if (cost(x, a) != 0.0) throw ValidationError("terminal states must carry zero stage cost");
          for (std::size_t nx = 0; nx < num_states; ++nx) {
            double expect = nx == x ? 1.0 : 0.0;
            if (std::abs(p(x, a, nx) - expect) > 1e-12) {
              throw ValidationError("terminal state " + std::to_string(x) + " must be absorbing");
            }
          }
        }
      }
    }
  }

  std::vector<std::size_t> transient_states() const {
    std::vector<std::size_t> out;
    for (std::size_t x = 0; x < num_states; ++x) {
      if (!terminal[x]) out.push_back(x);
    }
    return out;
  }
};

// Stochastic policy table pi(a|x).
struct PolicyTable {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> pi;  // [x][a]

  double prob(std::size_t x, std::size_t a) const { return pi[x * num_actions + a]; }
  double& prob(std::size_t x, std::size_t a) { return pi[x * num_actions + a]; }

  static PolicyTable uniform(std::size_t states, std::size_t actions) {
    PolicyTable t;
    t.num_states = states;
    t.num_actions = actions;
    t.pi.assign(states * actions, 1.0 / static_cast<double>(actions));
    return t;
  }

  static PolicyTable deterministic(std::size_t states, std::size_t actions, const std::vector<std::size_t>& act) {
    PolicyTable t;
    t.num_states = states;
    t.num_actions = actions;
    t.pi.assign(states * actions, 0.0);
    for (std::size_t x = 0; x < states; ++x) t.prob(x, act[x]) = 1.0;
    return t;
  }

  void validate() const {
    if (pi.size() != num_states * num_actions) throw ValidationError("policy table size mismatch");
    for (std::size_t x = 0; x < num_states; ++x) {
      double row = 0.0;
      for (std::size_t a = 0; a < num_actions; ++a) {
        double v = prob(x, a);
        if (!std::isfinite(v) || v < -1e-12) throw ValidationError("policy probabilities must be non-negative");
        row += v;
      }
      if (std::abs(row - 1.0) > 1e-9) {
        throw ValidationError("policy row for state " + std::to_string(x) + " sums to " + format_double(row));
      }
    }
  }
};

// ---- plain-text serialization (exact round-trip) ----

inline void write_cmdp(const CmdpModel& m, std::ostream& out) {
  out << "saferl-cmdp 1\n";
  out << "states " << m.num_states << "\n";
  out << "actions " << m.num_actions << "\n";
  out << "gamma " << format_double(m.gamma) << "\n";
  out << "start " << m.start << "\n";
  out << "d0 " << format_double(m.d0) << "\n";
  out << "terminals";
  for (std::size_t x = 0; x < m.num_states; ++x) {
    if (m.terminal[x]) out << " " << x;
  }
  out << "\n";
  out << "P\n";
  for (std::size_t x = 0; x < m.num_states; ++x) {
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      for (std::size_t nx = 0; nx < m.num_states; ++nx) {
        if (nx) out << " ";
        out << format_double(m.p(x, a, nx));
      }
      out << "\n";
    }
  }
  out << "c\n";
  for (std::size_t x = 0; x < m.num_states; ++x) {
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      if (a) out << " ";
      out << format_double(m.cost(x, a));
    }
    out << "\n";
  }
  out << "d\n";
  for (std::size_t x = 0; x < m.num_states; ++x) {
    if (x) out << " ";
    out << format_double(m.d[x]);
  }
  out << "\n";
}

inline void save_cmdp(const CmdpModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open cmdp file for writing: " + path);
  write_cmdp(m, out);
}

inline CmdpModel read_cmdp(std::istream& in) {
  auto next_line = [&in]() {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("cmdp file truncated");
    return line;
  };
  auto expect_kv = [&](const std::string& key) {
    std::string line = next_line();
    if (line.rfind(key + " ", 0) != 0) throw ValidationError("cmdp file: expected '" + key + "', got '" + line + "'");
    return line.substr(key.size() + 1);
  };

  if (next_line() != "saferl-cmdp 1") throw ValidationError("unrecognized cmdp header");
  std::size_t states = static_cast<std::size_t>(parse_int(expect_kv("states")));
  std::size_t actions = static_cast<std::size_t>(parse_int(expect_kv("actions")));
  CmdpModel m = CmdpModel::empty(states, actions);
  m.gamma = parse_double(expect_kv("gamma"));
  m.start = static_cast<std::size_t>(parse_int(expect_kv("start")));
  m.d0 = parse_double(expect_kv("d0"));

  std::string tline = next_line();
  if (tline.rfind("terminals", 0) != 0) throw ValidationError("cmdp file: expected terminals line");
  {
    std::istringstream ts(tline.substr(9));
    std::size_t idx;
    while (ts >> idx) {
      if (idx >= states) throw ValidationError("terminal index out of range");
      m.terminal[idx] = true;
    }
  }

  if (next_line() != "P") throw ValidationError("cmdp file: expected P block");
  for (std::size_t x = 0; x < states; ++x) {
    for (std::size_t a = 0; a < actions; ++a) {
      std::istringstream row(next_line());
      std::string tok;
      for (std::size_t nx = 0; nx < states; ++nx) {
        if (!(row >> tok)) throw ValidationError("cmdp P row too short");
        m.p(x, a, nx) = parse_double(tok);
      }
    }
  }
  if (next_line() != "c") throw ValidationError("cmdp file: expected c block");
  for (std::size_t x = 0; x < states; ++x) {
    std::istringstream row(next_line());
    std::string tok;
    for (std::size_t a = 0; a < actions; ++a) {
      if (!(row >> tok)) throw ValidationError("cmdp c row too short");
      m.cost(x, a) = parse_double(tok);
    }
  }
  if (next_line() != "d") throw ValidationError("cmdp file: expected d block");
  {
    std::istringstream row(next_line());
    std::string tok;
    for (std::size_t x = 0; x < states; ++x) {
      if (!(row >> tok)) throw ValidationError("cmdp d row too short");
      m.d[x] = parse_double(tok);
    }
  }
  m.validate();
  return m;
}

inline CmdpModel load_cmdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cmdp file: " + path);
  return read_cmdp(in);
}

}  // namespace saferl::cmdp
