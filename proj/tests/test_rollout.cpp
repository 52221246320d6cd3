#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "hjr/rollout.hpp"
#include "testutil.hpp"

using namespace hjr;
using Catch::Approx;

namespace {

class ZeroSystem final : public System {
 public:
  ZeroSystem() : System(make_spec()) {}

 protected:
  void flow_impl(const double*, const double*, const double*, double* dx) const override {
    dx[0] = 0.0;
    dx[1] = 0.0;
  }
  double target_impl(const double* x) const override { return std::hypot(x[0], x[1]) - 0.25; }
  void affine_impl(const double*, AffineFlow&) const override {}

 private:
  static Spec make_spec() {
    Spec s;
    s.name = "zero2d";
    s.domain = {{-1, 1}, {-1, 1}};
    s.horizon = 1.0;
    return s;
  }
};

GridValueSource solved_1d_control() {
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  SolveOptions opt;
  opt.resolution = {201};
  std::vector<double> snaps;
  for (int i = 0; i <= 10; ++i) snaps.push_back(0.05 * i);
  opt.snapshot_times = snaps;
  return GridValueSource(solve(sys, opt));
}

}  // namespace

TEST_CASE("zero dynamics give a constant trajectory") {
  ZeroSystem sys;
  hjrtest::ConstantSource src(2, 1.0);
  RolloutOptions opt;
  opt.dt = 0.1;
  Trajectory traj = simulate_optimal(sys, src, std::vector<double>{0.5, 0.25}, opt);
  REQUIRE(traj.sample_count() == 11);
  for (std::size_t k = 0; k < traj.sample_count(); ++k) {
    CHECK(traj.state(k)[0] == 0.5);
    CHECK(traj.state(k)[1] == 0.25);
  }
  CHECK_FALSE(traj.exited_domain);
  // constant trajectory payoff equals the target value there
  CHECK(traj.payoff == Approx(std::hypot(0.5, 0.25) - 0.25).margin(1e-15));
  CHECK(payoff(traj, sys) == traj.payoff);
}

TEST_CASE("rk4 integrates constant-input linear dynamics exactly") {
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  hjrtest::ConstantSource src(1, 1.0);
  FilterPolicy nominal = FilterPolicy::constant({0.5});
  nominal.epsilon = -std::numeric_limits<double>::infinity();
  RolloutOptions opt;
  opt.dt = 0.01;
  opt.duration = 0.5;
  Trajectory traj = simulate_filtered(sys, src, nominal, std::vector<double>{-0.4}, opt);
  REQUIRE(traj.sample_count() == 51);
  for (std::size_t k = 0; k < traj.sample_count(); ++k) {
    const double t = 0.01 * static_cast<double>(k);
    REQUIRE(traj.state(k)[0] == Approx(-0.4 + 0.5 * t).margin(1e-12));
  }
  // a never-activating margin reproduces the nominal control exactly
  for (std::size_t k = 0; k < traj.overridden.size(); ++k) {
    REQUIRE(traj.overridden[k] == 0);
    REQUIRE(traj.controls[k] == 0.5);
  }
}

TEST_CASE("an always-active margin reproduces optimal play") {
  GridValueSource src = solved_1d_control();
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  FilterPolicy policy = FilterPolicy::constant({-1.0});
  policy.epsilon = std::numeric_limits<double>::infinity();
  RolloutOptions opt;
  opt.dt = 0.01;
  Trajectory filt = simulate_filtered(sys, src, policy, std::vector<double>{0.5}, opt);
  Trajectory best = simulate_optimal(sys, src, std::vector<double>{0.5}, opt);
  REQUIRE(filt.sample_count() == best.sample_count());
  for (std::size_t k = 0; k < filt.sample_count(); ++k)
    REQUIRE(filt.state(k)[0] == best.state(k)[0]);
  for (std::size_t k = 0; k < filt.overridden.size(); ++k) {
    REQUIRE(filt.overridden[k] == 1);
    REQUIRE(filt.controls[k] == best.controls[k]);
  }
}

TEST_CASE("a matching nominal controller is indistinguishable from optimal play") {
  GridValueSource src = solved_1d_control();
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  // from x > 0 the escape control is +1 throughout
  FilterPolicy policy = FilterPolicy::constant({1.0});
  policy.epsilon = 0.0;
  RolloutOptions opt;
  opt.dt = 0.01;
  opt.duration = 0.4;
  Trajectory filt = simulate_filtered(sys, src, policy, std::vector<double>{0.4}, opt);
  Trajectory best = simulate_optimal(sys, src, std::vector<double>{0.4}, opt);
  REQUIRE(filt.sample_count() == best.sample_count());
  for (std::size_t k = 0; k < filt.sample_count(); ++k)
    REQUIRE(filt.state(k)[0] == best.state(k)[0]);
}

TEST_CASE("the filter overrides a hostile nominal at the margin and keeps the state safe") {
  GridValueSource src = solved_1d_control();
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  FilterPolicy policy = FilterPolicy::constant({-1.0});  // drives toward the target set
  policy.epsilon = 0.05;
  RolloutOptions opt;
  opt.dt = 0.005;
  Trajectory traj = simulate_filtered(sys, src, policy, std::vector<double>{0.5}, opt);
  CHECK(traj.payoff > 0.0);  // never enters |x| <= 0.25
  bool any_override = false, any_nominal = false;
  for (std::uint8_t f : traj.overridden) (f ? any_override : any_nominal) = true;
  CHECK(any_override);
  CHECK(any_nominal);
  // hovers near the margin boundary |x| = 0.3
  CHECK(traj.state(traj.sample_count() - 1)[0] == Approx(0.3).margin(0.03));
}

TEST_CASE("trajectories truncate with a flag when leaving the domain") {
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  hjrtest::ConstantSource src(1, 1.0);
  FilterPolicy nominal = FilterPolicy::constant({1.0});
  nominal.epsilon = -std::numeric_limits<double>::infinity();
  RolloutOptions opt;
  opt.dt = 0.01;
  opt.duration = 0.5;
  Trajectory traj = simulate_filtered(sys, src, nominal, std::vector<double>{0.9}, opt);
  CHECK(traj.exited_domain);
  CHECK(traj.sample_count() < 51);
  CHECK(traj.state(traj.sample_count() - 1)[0] <= 1.0);
}

TEST_CASE("payoff dips negative when the trajectory crosses the target") {
  GridValueSource src = solved_1d_control();
  Integrator1D sys(Integrator1D::Kind::Control, 0.5);
  FilterPolicy policy = FilterPolicy::constant({-1.0});
  policy.epsilon = -std::numeric_limits<double>::infinity();  // filter disabled
  RolloutOptions opt;
  opt.dt = 0.01;
  Trajectory traj = simulate_filtered(sys, src, policy, std::vector<double>{0.4}, opt);
  CHECK(traj.payoff < 0.0);
}

TEST_CASE("air3d optimal play is consistent with the grid oracle value") {
  Air3D sys;
  SolveOptions opt;
  opt.resolution = {31, 31, 31};
  std::vector<double> snaps;
  for (int i = 0; i <= 20; ++i) snaps.push_back(0.05 * i);
  opt.snapshot_times = snaps;
  GridValueSource src(solve(sys, opt));

  Rng rng(31);
  RolloutOptions ro;
  ro.dt = 0.01;
  int consistent = 0, total = 0;
  for (int trial = 0; trial < 25; ++trial) {
    auto x0 = hjrtest::random_state(sys, rng);
    const double v0 = src.value(x0, 0.0);
    Trajectory traj = simulate_optimal(sys, src, x0, ro);
    if (traj.exited_domain) continue;
    ++total;
    if (std::abs(traj.payoff - v0) <= 0.1) ++consistent;
    // value non-decreasing along optimal play, up to a tolerance sized for
    // this deliberately coarse grid (the acceptance suite runs 61^3 at 0.05)
    for (double v : traj.values) REQUIRE(v >= v0 - 0.13);
  }
  REQUIRE(total >= 10);
  CHECK(consistent >= total * 9 / 10);
}

TEST_CASE("trajectory csv has the documented columns") {
  ZeroSystem sys;
  hjrtest::ConstantSource src(2, 1.0);
  RolloutOptions opt;
  opt.dt = 0.25;
  Trajectory traj = simulate_optimal(sys, src, std::vector<double>{0.1, 0.2}, opt);
  std::ostringstream out;
  write_trajectory_csv(traj, out);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,x0,x1,value,overridden,min_pairwise_distance");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);

  Air3D air;
  hjrtest::ConstantSource src3(3, 1.0);
  Trajectory t3 = simulate_optimal(air, src3, std::vector<double>{0.5, 0.5, 0.0}, opt);
  std::ostringstream out3;
  write_trajectory_csv(t3, out3);
  std::istringstream in3(out3.str());
  std::getline(in3, header);
  CHECK(header == "t,x0,x1,x2,u0,d0,value,overridden,min_pairwise_distance");
  std::getline(in3, line);
  // pairwise distance column is populated for the pursuit game
  CHECK(line.substr(line.rfind(',') + 1).size() > 0);
}
