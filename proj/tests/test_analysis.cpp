#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "hjr/analysis.hpp"
#include "testutil.hpp"

using namespace hjr;
using Catch::Approx;

namespace {

/// Network that outputs exactly `c` everywhere: all weights zero, output bias c.
NetworkParams constant_net(int input_dim, double c) {
  NetworkParams p(input_dim, 1, 4, 30.0);
  p.bias(1)[0] = c;
  return p;
}

ValueGrid constant_grid(double c, double time = 0.0) {
  ValueGrid g({{-1.0, 1.0, 5, false}, {-1.0, 1.0, 5, false}}, time);
  for (double& v : g.values()) v = c;
  return g;
}

}  // namespace

TEST_CASE("mse is zero on agreement and the squared offset on constant shifts") {
  NormalizationMap map;
  map.center = {0.0, 0.0};
  map.halfwidth = {1.0, 1.0};
  map.horizon = 1.0;
  ValueGrid g = constant_grid(0.4);
  CHECK(mse(constant_net(3, 0.4), map, g) == Approx(0.0).margin(1e-28));
  CHECK(mse(constant_net(3, 0.4 + 0.05), map, g) == Approx(0.0025).margin(1e-12));
  CHECK_THROWS_AS(mse(constant_net(4, 0.0), map, g), std::invalid_argument);
}

TEST_CASE("volume error counts sign disagreements over all nodes") {
  NormalizationMap map;
  map.center = {0.0, 0.0};
  map.halfwidth = {1.0, 1.0};
  map.horizon = 1.0;
  ValueGrid g = constant_grid(0.5);
  CHECK(brt_volume_error(constant_net(3, 0.5), map, g) == 0.0);
  CHECK(brt_volume_error(constant_net(3, -0.5), map, g) == 100.0);

  // half the nodes flipped
  std::size_t half = g.node_count() / 2;
  for (std::size_t i = 0; i < half; ++i) g.values()[i] = -0.5;
  const double expect = 100.0 * static_cast<double>(half) / static_cast<double>(g.node_count());
  CHECK(brt_volume_error(constant_net(3, 0.5), map, g) == Approx(expect).margin(1e-12));
}

TEST_CASE("system name guard") {
  CHECK_NOTHROW(require_same_system("air3d", "air3d"));
  CHECK_NOTHROW(require_same_system("", "air3d"));
  CHECK_THROWS_AS(require_same_system("air3d", "joint6d"), std::invalid_argument);
}

TEST_CASE("slice export layout") {
  hjrtest::ConstantSource src(3, 0.7, {-2.0, 2.0});
  std::ostringstream out;
  export_slice(src, std::vector<double>{0, 0, 0}, 0, 1, 3, 0.0, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "x0,x1,value,in_brt");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    std::getline(cells, cell, ',');
    std::getline(cells, cell, ',');
    CHECK(std::stod(cell) == Approx(0.7).margin(1e-15));
    CHECK(line.back() == '0');  // positive value, not in the tube
  }
  CHECK(rows == 9);

  CHECK_THROWS_AS(export_slice(src, std::vector<double>{0, 0, 0}, 1, 1, 3, 0.0, out),
                  std::invalid_argument);
  CHECK_THROWS_AS(export_slice(src, std::vector<double>{0, 0, 0}, 0, 5, 3, 0.0, out),
                  std::invalid_argument);
}

TEST_CASE("grid-backed slices reproduce interpolation exactly") {
  ValueGrid g({{-1.0, 1.0, 5, false}, {-1.0, 1.0, 5, false}}, 0.0);
  Rng rng(3);
  for (double& v : g.values()) v = rng.uniform(-1, 1);
  GridValueSource src({g});
  std::ostringstream out;
  export_slice(src, std::vector<double>{0, 0}, 0, 1, 5, 0.0, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  std::vector<int> idx(2);
  int row = 0;
  while (std::getline(in, line)) {
    idx[0] = row / 5;
    idx[1] = row % 5;
    const double stored = g.values()[g.flat_index(idx)];
    std::istringstream cells(line);
    std::string cell;
    std::getline(cells, cell, ',');
    std::getline(cells, cell, ',');
    std::getline(cells, cell, ',');
    CHECK(std::stod(cell) == Approx(stored).margin(1e-15));
    ++row;
  }
  CHECK(row == 25);
}

TEST_CASE("pairwise union takes the minimum over the three relative games") {
  Air3D air;
  SolveOptions opt;
  opt.resolution = {21, 21, 21};
  auto grids = solve(air, opt);
  GridValueSource rel_grid(std::move(grids));
  const ValueSource& rel = rel_grid;  // match the implementation's dispatch path

  Rng rng(17);
  ThreeVehicle9D joint;
  for (int trial = 0; trial < 50; ++trial) {
    auto x = hjrtest::random_state(joint, rng);
    const double u = pairwise_union_value(rel, x, 0.0);
    std::array<double, 3> v;
    std::array<double, 3> relstate;
    pair_relative_state(std::span<const double>(x.data(), 3), std::span<const double>(x.data() + 6, 3), relstate);
    v[0] = rel.value(relstate, 0.0);
    pair_relative_state(std::span<const double>(x.data() + 3, 3), std::span<const double>(x.data() + 6, 3), relstate);
    v[1] = rel.value(relstate, 0.0);
    pair_relative_state(std::span<const double>(x.data(), 3), std::span<const double>(x.data() + 3, 3), relstate);
    v[2] = rel.value(relstate, 0.0);
    REQUIRE(u == std::min({v[0], v[1], v[2]}));
  }

  // a pair already in collision sits inside the tube
  std::vector<double> hit{0.1, 0.0, 0.5, 0.2, 0.1, -0.3, 0.15, 0.05, 2.0};
  CHECK(pairwise_union_value(rel, hit, 0.0) <= 0.0);

  // all pairs far apart and diverging stay clear
  std::vector<double> clear{-0.9, -0.9, -3 * kPi / 4, 0.9, -0.9, -kPi / 4, 0.0, 0.9, kPi / 2};
  CHECK(pairwise_union_value(rel, clear, 0.0) > 0.0);

  CHECK_THROWS_AS(pairwise_union_value(rel, std::vector<double>{0, 0, 0}, 0.0), std::invalid_argument);
}
