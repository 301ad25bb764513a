#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "saferl/cmdp.hpp"
#include "saferl/grid.hpp"

using namespace saferl;
using namespace saferl::grid;

namespace {

GridSpec small_spec() {
  GridSpec spec;
  spec.width = 3;
  spec.height = 3;
  spec.start = {0, 0};
  spec.goal = {2, 2};
  spec.explicit_layout = true;
  spec.obstacles = {{1, 1}};
  spec.delta = 0.0;
  return spec;
}

// expected stage cost of landing, E[d(x') | x, a], straight from the kernel
std::vector<double> landing_cost_table(const cmdp::CmdpModel& m) {
  std::vector<double> h(m.num_states * m.num_actions, 0.0);
  for (std::size_t x = 0; x < m.num_states; ++x) {
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      for (std::size_t nx = 0; nx < m.num_states; ++nx) h[x * m.num_actions + a] += m.p(x, a, nx) * m.d[nx];
    }
  }
  return h;
}

}  // namespace

TEST_CASE("obstacle counts follow the density rule") {
  GridSpec spec;
  spec.width = 10;
  spec.height = 10;
  spec.start = {0, 0};
  spec.goal = {9, 9};
  spec.rho = 0.3;
  GridWorld world(spec, 7);
  CHECK(world.initial_obstacles().size() == 29);  // round(0.3 * 98)

  for (Cell c : world.initial_obstacles()) {
    CHECK(spec.in_bounds(c));
    CHECK_FALSE(c == spec.start);
    CHECK_FALSE(c == spec.goal);
  }
  // distinct cells
  auto obs = world.initial_obstacles();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t j = i + 1; j < obs.size(); ++j) CHECK_FALSE(obs[i] == obs[j]);
  }

  spec.rho = 0.0;
  CHECK(GridWorld(spec, 7).initial_obstacles().empty());

  spec.rho = 0.3;
  GridWorld again(spec, 7);
  CHECK(again.initial_obstacles() == world.initial_obstacles());
  GridWorld other(spec, 8);
  CHECK_FALSE(other.initial_obstacles() == world.initial_obstacles());

  GridSpec tiny;
  tiny.width = 4;
  tiny.height = 4;
  tiny.start = {0, 0};
  tiny.goal = {3, 3};
  tiny.dynamic = true;
  tiny.dynamic_count = 100;
  CHECK_THROWS_AS(GridWorld(tiny, 1), GenerationError);
}

TEST_CASE("spec validation rejects malformed layouts") {
  GridSpec spec = small_spec();
  CHECK_NOTHROW(spec.validate());

  GridSpec bad = spec;
  bad.goal = bad.start;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.obstacles = {{0, 0}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.obstacles = {{1, 1}, {1, 1}};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.delta = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.rho = -0.1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = spec;
  bad.goal = {5, 5};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("step semantics on a noise-free grid") {
  GridWorld world(small_spec(), 3);
  // clamp: moving up from the top row stays put, still costs a step
  auto r = world.step(0);
  CHECK(world.state().agent == Cell{0, 0});
  CHECK(r.cost == 1.0);
  CHECK(r.constraint_cost == 0.0);
  CHECK_FALSE(r.terminal);

  // pass through the obstacle: d = 1, movement unhindered
  world.step(1);  // (1,0)
  r = world.step(3);  // lands on (1,1), the obstacle
  CHECK(world.state().agent == Cell{1, 1});
  CHECK(r.constraint_cost == 1.0);
  CHECK(r.cost == 1.0);

  // reach the goal: net cost 1 - 1000, terminal, reward event
  world.step(1);  // (2,1)
  r = world.step(3);  // (2,2) goal
  CHECK(r.cost == -999.0);
  CHECK(r.reward_event);
  CHECK(r.terminal);
  CHECK_THROWS_AS(world.step(4), UsageError);

  // undiscounted episode cost so far: 4 steps + goal bonus
  // supervised by the harness convention return = -sum(c) = 1000 - steps

  // episode cap: always-stay accrues cost 1 per step and ends without reward
  GridSpec capped = small_spec();
  capped.episode_cap = 7;
  GridWorld lazy(capped, 3);
  double total = 0.0;
  for (int i = 0; i < 7; ++i) {
    auto s = lazy.step(kStayAction);
    total += s.cost;
    CHECK_FALSE(s.reward_event);
    if (i < 6) CHECK_FALSE(s.terminal);
    else CHECK(s.terminal);
  }
  CHECK(total == 7.0);

  CHECK_THROWS_AS(lazy.step(9), ParameterError);
}

TEST_CASE("noise replaces the command at the documented rate") {
  GridSpec spec;
  spec.width = 5;
  spec.height = 5;
  spec.start = {2, 2};
  spec.goal = {4, 4};
  spec.delta = 0.2;
  spec.episode_cap = 30000;
  spec.explicit_layout = true;

  // commanding stay: any applied direction is a replacement, rate = delta
  GridWorld env(spec, 11);
  int replaced = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    env.step(kStayAction);
    if (env.last_applied_move() != kStayAction) ++replaced;
    if (env.state().terminal) env.reset();
  }
  double freq = static_cast<double>(replaced) / n;
  double sigma = std::sqrt(0.2 * 0.8 / n);
  CHECK(std::abs(freq - 0.2) < 4.0 * sigma);

  // commanding a direction: the noise draw repeats it 1/4 of the time
  GridWorld env2(spec, 12);
  replaced = 0;
  for (int i = 0; i < n; ++i) {
    env2.step(0);
    if (env2.last_applied_move() != 0) ++replaced;
    if (env2.state().terminal) env2.reset();
  }
  freq = static_cast<double>(replaced) / n;
  double p = 0.2 * 0.75;
  sigma = std::sqrt(p * (1.0 - p) / n);
  CHECK(std::abs(freq - p) < 4.0 * sigma);
}

TEST_CASE("dynamic obstacles move uniformly over in-bounds neighbors") {
  GridSpec spec;
  spec.width = 5;
  spec.height = 5;
  spec.start = {0, 0};
  spec.goal = {4, 4};
  RngStream rng(21, streams::test);

  std::map<std::pair<int, int>, int> corner_counts;
  for (int i = 0; i < 2000; ++i) {
    Cell c = random_neighbor({0, 0}, spec, rng);
    corner_counts[{c.row, c.col}]++;
  }
  REQUIRE(corner_counts.size() == 2);
  CHECK(corner_counts[{0, 1}] > 800);
  CHECK(corner_counts[{1, 0}] > 800);

  std::map<std::pair<int, int>, int> mid_counts;
  for (int i = 0; i < 2000; ++i) {
    Cell c = random_neighbor({2, 2}, spec, rng);
    mid_counts[{c.row, c.col}]++;
  }
  REQUIRE(mid_counts.size() == 4);
  for (auto& [cell, count] : mid_counts) CHECK((count > 400 && count < 600));
}

TEST_CASE("hits are end-of-step co-location, so swaps pass through") {
  // 1x3 corridor: the obstacle must vacate (0,1) as the agent enters it
  GridSpec spec;
  spec.width = 3;
  spec.height = 1;
  spec.start = {0, 0};
  spec.goal = {0, 2};
  spec.dynamic = true;
  spec.dynamic_count = 1;
  spec.explicit_layout = true;
  spec.obstacles = {{0, 1}};

  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    GridWorld env(spec, seed);
    auto r = env.step(3);
    CHECK(env.state().agent == Cell{0, 1});
    CHECK(r.constraint_cost == 0.0);
    CHECK(env.state().obstacles.size() == 1);
  }
}

TEST_CASE("observations expose exactly what each mode promises") {
  GridSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.start = {1, 1};  // agent index 5
  spec.goal = {3, 3};
  spec.explicit_layout = true;
  spec.obstacles = {{0, 2}};

  GridState st;
  st.agent = {1, 1};
  st.obstacles = spec.obstacles;

  SECTION("discrete one-hot") {
    auto obs = observe(spec, st, 1);
    REQUIRE(obs.payload.shape == std::vector<std::size_t>{16});
    for (std::size_t i = 0; i < 16; ++i) CHECK(obs.payload.data[i] == (i == 5 ? 1.0 : 0.0));
  }

  SECTION("image planes") {
    spec.mode = ObsMode::image;
    auto obs = observe(spec, st, 1);
    REQUIRE(obs.payload.shape == std::vector<std::size_t>{3, 4, 4});
    double agent_sum = 0.0, obstacle_sum = 0.0, goal_sum = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      agent_sum += obs.payload.data[i];
      obstacle_sum += obs.payload.data[16 + i];
      goal_sum += obs.payload.data[32 + i];
      CHECK((obs.payload.data[i] == 0.0 || obs.payload.data[i] == 1.0));
    }
    CHECK(agent_sum == 1.0);
    CHECK(obs.payload.data[5] == 1.0);
    CHECK(obstacle_sum == 1.0);
    CHECK(obs.payload.data[16 + 2] == 1.0);
    CHECK(goal_sum == 1.0);
    CHECK(obs.payload.data[32 + 15] == 1.0);
  }

  SECTION("partial window rotates with the facing direction") {
    GridSpec p;
    p.width = 6;
    p.height = 6;
    p.start = {2, 2};
    p.goal = {2, 5};
    p.explicit_layout = true;
    p.obstacles = {{1, 4}};
    p.mode = ObsMode::partial;

    GridState at;
    at.agent = {2, 2};
    at.obstacles = p.obstacles;

    auto right = observe(p, at, 3);
    REQUIRE(right.payload.shape == std::vector<std::size_t>{3, 5, 8});
    CHECK(right.payload.data[2 * 8 + 0] == 1.0);              // agent: lateral center, forward 0
    CHECK(right.payload.data[40 + 3 * 8 + 2] == 1.0);         // obstacle (1,4) at i=3, j=2
    CHECK(right.payload.data[80 + 2 * 8 + 3] == 1.0);         // goal (2,5) at i=2, j=3
    double sum = 0.0;
    for (double v : right.payload.data) sum += v;
    CHECK(sum == 3.0);

    auto down = observe(p, at, 1);
    double behind = 0.0;
    for (std::size_t i = 40; i < 80; ++i) behind += down.payload.data[i];
    CHECK(behind == 0.0);  // the obstacle at (1,4) sits behind a down-facing agent
  }

  SECTION("partial window at the corner reads zero off-grid") {
    GridSpec p;
    p.width = 6;
    p.height = 6;
    p.start = {0, 0};
    p.goal = {2, 5};
    p.explicit_layout = true;
    p.obstacles = {{0, 1}};
    p.mode = ObsMode::partial;

    GridState at;
    at.agent = {0, 0};
    at.obstacles = p.obstacles;
    auto up = observe(p, at, 0);  // facing up: almost everything is off-grid
    double sum = 0.0;
    for (double v : up.payload.data) sum += v;
    CHECK(up.payload.data[2 * 8 + 0] == 1.0);  // agent marker always present
    CHECK(up.payload.data[40 + 1 * 8 + 0] == 1.0);  // obstacle (0,1) behind the facing axis
    CHECK(sum == 2.0);
  }
}

TEST_CASE("partial window tracks the last applied move during play") {
  GridSpec spec;
  spec.width = 6;
  spec.height = 6;
  spec.start = {2, 2};
  spec.goal = {5, 5};
  spec.explicit_layout = true;
  spec.obstacles = {{2, 4}};
  spec.mode = ObsMode::partial;

  GridWorld env(spec, 5);
  CHECK(env.facing() == 1);  // starts facing down
  auto r = env.step(3);      // move right to (2,3); obstacle (2,4) dead ahead
  CHECK(env.facing() == 3);
  CHECK(r.obs.payload.data[40 + 2 * 8 + 1] == 1.0);
  env.step(kStayAction);     // stay keeps the facing
  CHECK(env.facing() == 3);
}

TEST_CASE("down-facing obstacle appears where the window expects it") {
  GridSpec p;
  p.width = 6;
  p.height = 6;
  p.start = {2, 2};
  p.goal = {2, 5};
  p.explicit_layout = true;
  p.obstacles = {{4, 1}};
  p.mode = ObsMode::partial;
  GridState at;
  at.agent = {2, 2};
  at.obstacles = p.obstacles;
  auto down = observe(p, at, 1);
  // facing down: forward j follows rows, lateral i follows columns
  CHECK(down.payload.data[40 + 1 * 8 + 2] == 1.0);
}

TEST_CASE("map files round-trip byte-exactly") {
  GridSpec spec;
  spec.width = 6;
  spec.height = 5;
  spec.start = {0, 1};
  spec.goal = {4, 5};
  spec.delta = 0.05;
  spec.rho = 0.2;
  spec.mode = ObsMode::image;
  spec.explicit_layout = true;
  spec.obstacles = {{1, 1}, {3, 4}, {2, 0}};

  std::ostringstream first;
  write_map(spec, spec.obstacles, first);
  std::istringstream in(first.str());
  GridSpec loaded = read_map(in);
  CHECK(loaded.width == spec.width);
  CHECK(loaded.height == spec.height);
  CHECK(loaded.delta == spec.delta);
  CHECK(loaded.rho == spec.rho);
  CHECK(loaded.mode == spec.mode);
  CHECK(loaded.start == spec.start);
  CHECK(loaded.goal == spec.goal);
  CHECK(loaded.obstacles.size() == 3);
  CHECK(loaded.explicit_layout);

  std::ostringstream second;
  write_map(loaded, loaded.obstacles, second);
  CHECK(first.str() == second.str());

  // a generated layout survives the same trip
  GridSpec dense;
  dense.width = 7;
  dense.height = 7;
  dense.start = {0, 0};
  dense.goal = {6, 6};
  dense.rho = 0.25;
  GridWorld world(dense, 99);
  std::ostringstream gen1, gen2;
  write_map(dense, world.initial_obstacles(), gen1);
  std::istringstream genin(gen1.str());
  GridSpec genspec = read_map(genin);
  write_map(genspec, genspec.obstacles, gen2);
  CHECK(gen1.str() == gen2.str());

  std::istringstream bad1("saferl-grid 2\n");
  CHECK_THROWS_AS(read_map(bad1), ValidationError);
  std::string two_starts =
      "saferl-grid 1\nwidth 3\nheight 1\ndelta 0\nrho 0\nmode discrete\nwindow 5 8\n"
      "dynamic 0\ndynamic_count 0\ncap 100\nmap\nSSG\n";
  std::istringstream bad2(two_starts);
  CHECK_THROWS_AS(read_map(bad2), ValidationError);
  std::string weird_char =
      "saferl-grid 1\nwidth 3\nheight 1\ndelta 0\nrho 0\nmode discrete\nwindow 5 8\n"
      "dynamic 0\ndynamic_count 0\ncap 100\nmap\nS?G\n";
  std::istringstream bad3(weird_char);
  CHECK_THROWS_AS(read_map(bad3), ValidationError);
}

TEST_CASE("tabular conversion folds noise and clamping exactly") {
  GridSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.start = {0, 0};
  spec.goal = {3, 3};
  spec.explicit_layout = true;
  spec.obstacles = {{1, 1}, {2, 3}};
  spec.delta = 0.05;

  auto m = grid_to_cmdp(spec, spec.obstacles, 0.99, 1.0);
  CHECK(m.num_states == 16);
  CHECK(m.num_actions == 5);
  CHECK(m.start == 0);
  CHECK(m.terminal[15]);
  CHECK(m.d[spec.index({1, 1})] == 1.0);
  CHECK(m.d[spec.index({2, 3})] == 1.0);

  // interior cell (1,2) commanding up: 0.95 + 0.0125 up, 0.0125 the rest
  std::size_t x = spec.index({1, 2});
  CHECK(m.p(x, 0, spec.index({0, 2})) == Catch::Approx(0.9625).margin(1e-15));
  CHECK(m.p(x, 0, spec.index({2, 2})) == Catch::Approx(0.0125).margin(1e-15));
  CHECK(m.p(x, 0, spec.index({1, 1})) == Catch::Approx(0.0125).margin(1e-15));
  CHECK(m.p(x, 0, spec.index({1, 3})) == Catch::Approx(0.0125).margin(1e-15));
  CHECK(m.p(x, 0, x) == 0.0);

  // corner (0,0) commanding up: up and left both clamp home
  CHECK(m.p(0, 0, 0) == Catch::Approx(0.975).margin(1e-15));
  CHECK(m.p(0, 0, spec.index({1, 0})) == Catch::Approx(0.0125).margin(1e-15));
  CHECK(m.p(0, 0, spec.index({0, 1})) == Catch::Approx(0.0125).margin(1e-15));

  // commanding stay: 0.95 home, 0.0125 per direction
  CHECK(m.p(x, 4, x) == Catch::Approx(0.95).margin(1e-15));

  // cost folds the goal bonus
  std::size_t near_goal = spec.index({2, 3});
  CHECK(m.cost(near_goal, 1) == Catch::Approx(1.0 - 1000.0 * 0.9625).margin(1e-12));

  // noise-free rows are one-hot
  spec.delta = 0.0;
  auto crisp = grid_to_cmdp(spec, spec.obstacles, 1.0, 0.0);
  for (std::size_t s = 0; s < crisp.num_states; ++s) {
    for (std::size_t a = 0; a < crisp.num_actions; ++a) {
      int ones = 0;
      for (std::size_t nx = 0; nx < crisp.num_states; ++nx) {
        if (crisp.p(s, a, nx) == 1.0) ++ones;
      }
      CHECK(ones == 1);
    }
  }

  GridSpec dyn = spec;
  dyn.dynamic = true;
  dyn.dynamic_count = 3;
  dyn.explicit_layout = false;
  dyn.obstacles.clear();
  CHECK_THROWS_AS(grid_to_cmdp(dyn, {}, 0.99, 1.0), ValidationError);
  GridSpec huge = spec;
  huge.width = 11;
  huge.height = 11;
  huge.goal = {10, 10};
  huge.obstacles.clear();
  CHECK_THROWS_AS(grid_to_cmdp(huge, {}, 0.99, 1.0), SizeError);
}

TEST_CASE("simulated returns match the tabular model for a random policy") {
  GridSpec spec;
  spec.width = 4;
  spec.height = 4;
  spec.start = {0, 0};
  spec.goal = {3, 3};
  spec.explicit_layout = true;
  spec.obstacles = {{1, 1}, {2, 3}};
  spec.delta = 0.1;
  spec.episode_cap = 400;

  double gamma = 0.9;
  auto m = grid_to_cmdp(spec, spec.obstacles, gamma, 1.0);
  auto uniform = cmdp::PolicyTable::uniform(m.num_states, m.num_actions);
  double expect_c = cmdp::policy_return(m, uniform, m.c, gamma)[m.start];
  double expect_d = cmdp::policy_return(m, uniform, landing_cost_table(m), gamma)[m.start];

  RngStream actions(31, streams::test);
  const int episodes = 20000;
  double sum_c = 0.0, sum_c2 = 0.0, sum_d = 0.0, sum_d2 = 0.0;
  GridWorld env(spec, 17);
  for (int e = 0; e < episodes; ++e) {
    env.reset();
    double disc = 1.0, ec = 0.0, ed = 0.0;
    while (!env.state().terminal) {
      auto r = env.step(actions.uniform_int(kNumActions));
      ec += disc * r.cost;
      ed += disc * r.constraint_cost;
      disc *= gamma;
    }
    sum_c += ec;
    sum_c2 += ec * ec;
    sum_d += ed;
    sum_d2 += ed * ed;
  }
  double mean_c = sum_c / episodes;
  double mean_d = sum_d / episodes;
  double se_c = std::sqrt((sum_c2 / episodes - mean_c * mean_c) / episodes);
  double se_d = std::sqrt((sum_d2 / episodes - mean_d * mean_d) / episodes);
  CHECK(std::abs(mean_c - expect_c) < 3.0 * se_c);
  CHECK(std::abs(mean_d - expect_d) < 3.0 * se_d);
}

TEST_CASE("environments replay bit-exactly and conserve their pieces") {
  GridSpec spec;
  spec.width = 6;
  spec.height = 6;
  spec.start = {0, 0};
  spec.goal = {5, 5};
  spec.delta = 0.15;
  spec.dynamic = true;
  spec.dynamic_count = 4;
  spec.mode = ObsMode::image;

  GridWorld a(spec, 123), b(spec, 123);
  RngStream script(33, streams::test);
  for (int episode = 0; episode < 3; ++episode) {
    auto oa = a.reset();
    auto ob = b.reset();
    CHECK(oa.payload.data == ob.payload.data);
    while (!a.state().terminal) {
      std::size_t act = script.uniform_int(kNumActions);
      auto ra = a.step(act);
      auto rb = b.step(act);
      CHECK(ra.cost == rb.cost);
      CHECK(ra.constraint_cost == rb.constraint_cost);
      CHECK(ra.obs.payload.data == rb.obs.payload.data);
      CHECK(a.state().agent == b.state().agent);
      CHECK(a.state().obstacles == b.state().obstacles);
      CHECK(a.state().obstacles.size() == 4);
      // exactly one agent marker in the image plane
      double agent_sum = 0.0;
      for (std::size_t i = 0; i < 36; ++i) agent_sum += ra.obs.payload.data[i];
      CHECK(agent_sum == 1.0);
    }
  }
}
