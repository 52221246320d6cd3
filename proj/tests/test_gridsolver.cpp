#include <catch2/catch_amalgamated.hpp>

#include "hjr/gridsolver.hpp"
#include "testutil.hpp"

using namespace hjr;
using Catch::Approx;

namespace {

double disturbance_exact(double x, double time_to_go) {
  return std::max(std::abs(x) - time_to_go, 0.0) - 0.25;
}

double max_error_1d(const ValueGrid& g, double time_to_go) {
  double worst = 0.0;
  for (int i = 0; i < g.axis(0).count; ++i) {
    const double x = g.axis(0).coord(i);
    worst = std::max(worst, std::abs(g.values()[static_cast<std::size_t>(i)] - disturbance_exact(x, time_to_go)));
  }
  return worst;
}

}  // namespace

TEST_CASE("1d disturbance game matches the closed form") {
  Integrator1D sys(Integrator1D::Kind::Disturbance, 0.5);
  SolveOptions opt;
  opt.resolution = {801};  // dx = 0.0025
  auto grids = solve(sys, opt);
  REQUIRE(grids.size() == 1);
  CHECK(max_error_1d(grids[0], 0.5) <= 0.02);
  CHECK(grids[0].interpolate(std::vector<double>{0.6}) == Approx(-0.15).margin(0.01));
}

TEST_CASE("1d control game stays on the target function") {
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  SolveOptions opt;
  opt.resolution = {401};
  auto grids = solve(sys, opt);
  double worst = 0.0;
  for (int i = 0; i < 401; ++i) {
    const double x = grids[0].axis(0).coord(i);
    worst = std::max(worst, std::abs(grids[0].values()[static_cast<std::size_t>(i)] - (std::abs(x) - 0.25)));
  }
  CHECK(worst <= 0.02);
}

TEST_CASE("halving the spacing strictly reduces the disturbance-game error") {
  Integrator1D sys(Integrator1D::Kind::Disturbance, 0.5);
  std::vector<double> errs;
  for (int count : {201, 401, 801}) {
    SolveOptions opt;
    opt.resolution = {count};
    errs.push_back(max_error_1d(solve(sys, opt)[0], 0.5));
  }
  CHECK(errs[1] < errs[0]);
  CHECK(errs[2] < errs[1]);
}

TEST_CASE("clamp, monotonicity, and exact terminal condition") {
  Integrator1D sys(Integrator1D::Kind::Disturbance, 0.5);
  SolveOptions opt;
  opt.resolution = {201};
  opt.snapshot_times = {0.0, 0.2, 0.35, 0.5};
  auto grids = solve(sys, opt);
  REQUIRE(grids.size() == 4);
  CHECK(grids[0].time() == 0.0);
  CHECK(grids[3].time() == 0.5);
  for (const ValueGrid& g : grids)
    for (int i = 0; i < 201; ++i) {
      const double x = g.axis(0).coord(i);
      REQUIRE(g.values()[static_cast<std::size_t>(i)] <= sys.target(std::span<const double>(&x, 1)) + 1e-12);
    }
  for (std::size_t s = 1; s < grids.size(); ++s)
    for (std::size_t i = 0; i < grids[s].node_count(); ++i)
      REQUIRE(grids[s - 1].values()[i] <= grids[s].values()[i] + 1e-9);
  for (int i = 0; i < 201; ++i) {
    const double x = grids[3].axis(0).coord(i);
    REQUIRE(grids[3].values()[static_cast<std::size_t>(i)] == sys.target(std::span<const double>(&x, 1)));
  }
}

TEST_CASE("interpolation is exact at nodes and on linear fields") {
  ValueGrid g({{0.0, 1.0, 5, false}, {-1.0, 1.0, 9, false}}, 0.0);
  const double a0 = 1.7, a1 = -0.6, c = 0.25;
  std::vector<int> idx(2);
  std::vector<double> x(2);
  for (std::size_t node = 0; node < g.node_count(); ++node) {
    g.unflatten(node, idx);
    g.node_coords(idx, x);
    g.values()[node] = a0 * x[0] + a1 * x[1] + c;
  }
  for (std::size_t node = 0; node < g.node_count(); ++node) {
    g.unflatten(node, idx);
    g.node_coords(idx, x);
    REQUIRE(g.interpolate(x) == g.values()[node]);
  }
  Rng rng(1);
  std::vector<double> grad(2);
  for (int i = 0; i < 100; ++i) {
    x[0] = rng.uniform(0.0, 1.0);
    x[1] = rng.uniform(-1.0, 1.0);
    REQUIRE(g.interpolate(x) == Approx(a0 * x[0] + a1 * x[1] + c).margin(1e-12));
    g.gradient(x, grad);
    REQUIRE(grad[0] == Approx(a0).margin(1e-12));
    REQUIRE(grad[1] == Approx(a1).margin(1e-12));
  }
  // midpoint of two nodes in the fast axis
  ValueGrid line({{0.0, 1.0, 3, false}}, 0.0);
  line.values()[0] = 2.0;
  line.values()[1] = 5.0;
  line.values()[2] = 11.0;
  CHECK(line.interpolate(std::vector<double>{0.25}) == Approx(3.5));
}

TEST_CASE("gradient error on curved fields is second order at interior nodes") {
  const int count = 21;
  ValueGrid g({{-1.0, 1.0, count, false}}, 0.0);
  const double h = g.axis(0).spacing();
  for (int i = 0; i < count; ++i) {
    const double x = g.axis(0).coord(i);
    g.values()[static_cast<std::size_t>(i)] = x * x * x;
  }
  std::vector<double> grad(1);
  for (int i = 2; i < count - 2; ++i) {
    const double x = g.axis(0).coord(i);
    g.gradient(std::vector<double>{x}, grad);
    REQUIRE(std::abs(grad[0] - 3.0 * x * x) == Approx(h * h).margin(1e-10));
  }
  // quadratic and constant fields
  for (int i = 0; i < count; ++i) {
    const double x = g.axis(0).coord(i);
    g.values()[static_cast<std::size_t>(i)] = x * x;
  }
  for (int i = 1; i < count - 1; ++i) {
    const double x = g.axis(0).coord(i);
    g.gradient(std::vector<double>{x}, grad);
    REQUIRE(std::abs(grad[0] - 2.0 * x) <= h * h);
  }
  for (auto& v : g.values()) v = 3.14;
  for (int i = 0; i < count; ++i) {
    g.gradient(std::vector<double>{g.axis(0).coord(i)}, grad);
    REQUIRE(grad[0] == 0.0);
  }
}

TEST_CASE("periodic axes wrap in interpolation and differencing") {
  const int count = 12;
  ValueGrid g({{-kPi, kPi, count, true}}, 0.0);
  for (int i = 0; i < count; ++i)
    g.values()[static_cast<std::size_t>(i)] = std::sin(g.axis(0).coord(i));
  // query between the last node and the wrapped first node: the last node
  // sits at pi - h, so pi - 0.25h is 0.75h beyond it
  const double h = g.axis(0).spacing();
  const double xq = kPi - 0.25 * h;
  const double expect =
      0.25 * g.values()[count - 1] + 0.75 * g.values()[0];
  CHECK(g.interpolate(std::vector<double>{xq}) == Approx(expect).margin(1e-12));
  CHECK(g.interpolate(std::vector<double>{xq + 2 * kPi}) == Approx(expect).margin(1e-12));
  std::vector<double> grad(1);
  g.gradient(std::vector<double>{g.axis(0).coord(0)}, grad);
  const double expect_cd = (g.values()[1] - g.values()[count - 1]) / (2.0 * h);
  CHECK(grad[0] == Approx(expect_cd).margin(1e-14));
}

TEST_CASE("out-of-box queries are rejected on bounded axes") {
  ValueGrid g({{0.0, 1.0, 5, false}}, 0.0);
  CHECK_THROWS_AS(g.interpolate(std::vector<double>{1.5}), std::invalid_argument);
  CHECK_THROWS_AS(g.interpolate(std::vector<double>{-0.1}), std::invalid_argument);
  CHECK_NOTHROW(g.interpolate(std::vector<double>{1.0}));
}

TEST_CASE("solver validates dimensionality and resolution") {
  ThreeVehicle9D big;
  SolveOptions opt;
  opt.resolution = std::vector<int>(9, 5);
  CHECK_THROWS_WITH(solve(big, opt), Catch::Matchers::ContainsSubstring("at most 4"));
  Air3D air;
  SolveOptions bad;
  bad.resolution = {21, 21};
  CHECK_THROWS_AS(solve(air, bad), std::invalid_argument);
  bad.resolution = {21, 21, 2};
  CHECK_THROWS_AS(solve(air, bad), std::invalid_argument);
}

TEST_CASE("air3d reference solve has a growing tube below the target function") {
  Air3D sys;
  SolveOptions opt;
  opt.resolution = {21, 21, 21};
  opt.snapshot_times = {0.0, 0.5, 1.0};
  ThreadPool pool(1);
  opt.pool = &pool;
  auto grids = solve(sys, opt);
  REQUIRE(grids.size() == 3);
  const ValueGrid& terminal = grids[2];
  const ValueGrid& mid = grids[1];
  const ValueGrid& start = grids[0];

  std::vector<int> idx(3);
  std::vector<double> x(3);
  std::size_t sub_terminal = 0, sub_start = 0;
  for (std::size_t node = 0; node < start.node_count(); ++node) {
    start.unflatten(node, idx);
    start.node_coords(idx, x);
    REQUIRE(start.values()[node] <= sys.target(x) + 1e-12);
    REQUIRE(start.values()[node] <= mid.values()[node] + 1e-9);
    REQUIRE(mid.values()[node] <= terminal.values()[node] + 1e-9);
    if (terminal.values()[node] <= 0.0) ++sub_terminal;
    if (start.values()[node] <= 0.0) ++sub_start;
  }
  CHECK(sub_start > sub_terminal);
  CHECK(sub_start < start.node_count() * 9 / 10);
  CHECK(start.interpolate(std::vector<double>{0.0, 0.0, kPi / 2}) < 0.0);
}

TEST_CASE("reach-avoid solve with an inactive obstacle equals the plain solve") {
  auto base = std::make_shared<Integrator1D>(Integrator1D::Kind::Disturbance, 0.5);
  hjrtest::ObstacleShim shim(base, -1e9);
  SolveOptions opt;
  opt.resolution = {201};
  opt.snapshot_times = {0.0, 0.25, 0.5};
  auto plain = solve(*base, opt);
  auto brat = solve(shim, opt);
  REQUIRE(plain.size() == brat.size());
  for (std::size_t s = 0; s < plain.size(); ++s)
    for (std::size_t i = 0; i < plain[s].node_count(); ++i)
      REQUIRE(brat[s].values()[i] == Approx(plain[s].values()[i]).margin(1e-12));
}

TEST_CASE("grid files round-trip bit-exactly") {
  hjrtest::TempDir tmp("hjr-grid");
  Air3D sys;
  SolveOptions opt;
  opt.resolution = {7, 7, 7};
  opt.snapshot_times = {0.8};
  opt.t_final = 0.8;
  auto grids = solve(sys, opt);
  const auto path = tmp.path() / "g.vg";
  grids[0].save(path);
  ValueGrid loaded = ValueGrid::load(path);
  REQUIRE(loaded.dim() == 3);
  CHECK(loaded.time() == grids[0].time());
  CHECK(loaded.system_name() == "air3d");
  CHECK(loaded.axis(2).periodic);
  for (std::size_t i = 0; i < grids[0].node_count(); ++i)
    REQUIRE(loaded.values()[i] == grids[0].values()[i]);
}
