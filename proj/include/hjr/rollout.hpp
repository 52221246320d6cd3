#pragma once

#include <iomanip>
#include <ostream>

#include "hjr/value_source.hpp"

namespace hjr {

// Closed-loop trajectory under zero-order-hold inputs. Row k of `states`
// pairs with times[k] and values[k]; controls/disturbances row k is the input
// applied over [times[k], times[k+1]).
struct Trajectory {
  std::vector<double> times;
  std::vector<double> states;
  std::vector<double> controls;
  std::vector<double> disturbances;
  std::vector<double> values;
  std::vector<std::uint8_t> overridden;
  std::vector<double> pairwise;  // NaN when the system defines no pairwise distance
  double payoff = 0.0;
  bool exited_domain = false;
  int state_dim = 0, control_dim = 0, disturbance_dim = 0;

  std::size_t sample_count() const { return times.size(); }
  std::span<const double> state(std::size_t k) const {
    return {states.data() + k * static_cast<std::size_t>(state_dim), static_cast<std::size_t>(state_dim)};
  }
};

struct RolloutOptions {
  double t0 = 0.0;
  double dt = 0.01;
  double duration = -1.0;  // defaults to horizon - t0
};

/// Nominal controller plus the activation margin: the optimal safety control
/// replaces the nominal one whenever the value drops to epsilon or below.
struct FilterPolicy {
  std::function<void(double t, std::span<const double> x, std::span<double> u)> nominal;
  double epsilon = 0.0;

  static FilterPolicy constant(std::vector<double> u) {
    FilterPolicy p;
    p.nominal = [u = std::move(u)](double, std::span<const double>, std::span<double> out) {
      std::copy(u.begin(), u.end(), out.begin());
    };
    return p;
  }

  /// Zero-order-hold schedule over (time, control) knots sorted by time.
  static FilterPolicy scripted(std::vector<std::pair<double, std::vector<double>>> knots) {
    if (knots.empty()) throw std::invalid_argument("scripted policy needs at least one knot");
    std::sort(knots.begin(), knots.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    FilterPolicy p;
    p.nominal = [knots = std::move(knots)](double t, std::span<const double>, std::span<double> out) {
      std::size_t i = 0;
      while (i + 1 < knots.size() && knots[i + 1].first <= t) ++i;
      std::copy(knots[i].second.begin(), knots[i].second.end(), out.begin());
    };
    return p;
  }
};

namespace detail {

inline void rk4_step(const System& sys, std::span<const double> x, std::span<const double> u,
                     std::span<const double> d, double dt, std::span<double> out) {
  const std::size_t n = x.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  sys.flow(x, u, d, k1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  sys.flow(tmp, u, d, k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  sys.flow(tmp, u, d, k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
  sys.flow(tmp, u, d, k4);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

inline Trajectory simulate(const System& sys, const ValueSource& source, const FilterPolicy* policy,
                           std::span<const double> x0, const RolloutOptions& opt) {
  if (source.state_dim() != sys.state_dim())
    throw std::invalid_argument("value source and system disagree on state dimension");
  if (!(opt.dt > 0.0)) throw std::invalid_argument("rollout dt must be positive");
  const int n = sys.state_dim(), nu = sys.control_dim(), nd = sys.disturbance_dim();
  const double duration = opt.duration >= 0.0 ? opt.duration : sys.horizon() - opt.t0;
  const std::size_t steps = static_cast<std::size_t>(std::llround(duration / opt.dt));

  Trajectory traj;
  traj.state_dim = n;
  traj.control_dim = nu;
  traj.disturbance_dim = nd;

  std::vector<double> x(x0.begin(), x0.end());
  sys.wrap_state(x);
  if (!sys.inside_domain(x)) throw std::invalid_argument("rollout start outside domain");
  std::vector<double> grad(static_cast<std::size_t>(n)), u(static_cast<std::size_t>(nu)),
      uopt(static_cast<std::size_t>(nu)), d(static_cast<std::size_t>(nd)), next(static_cast<std::size_t>(n));
  AffineFlow work;

  auto record_state = [&](double t) {
    traj.times.push_back(t);
    traj.states.insert(traj.states.end(), x.begin(), x.end());
    traj.values.push_back(source.value(x, t));
    auto pd = sys.pairwise_distance(x);
    traj.pairwise.push_back(pd ? *pd : std::numeric_limits<double>::quiet_NaN());
  };

  record_state(opt.t0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = opt.t0 + static_cast<double>(k) * opt.dt;
    source.spatial_grad(x, t, grad);
    optimal_inputs(sys, x, grad, uopt, d, work);
    bool safety_active = true;
    if (policy && policy->nominal) {
      const double v = traj.values.back();
      if (v > policy->epsilon) {
        policy->nominal(t, x, u);
        for (int j = 0; j < nu; ++j) {
          const Interval& iv = sys.control_bounds()[static_cast<std::size_t>(j)];
          u[static_cast<std::size_t>(j)] = std::clamp(u[static_cast<std::size_t>(j)], iv.lo, iv.hi);
        }
        safety_active = false;
      } else {
        u = uopt;
      }
    } else {
      u = uopt;
    }
    traj.controls.insert(traj.controls.end(), u.begin(), u.end());
    traj.disturbances.insert(traj.disturbances.end(), d.begin(), d.end());
    traj.overridden.push_back(safety_active ? 1 : 0);

    rk4_step(sys, x, u, d, opt.dt, next);
    sys.wrap_state(next);
    if (!sys.inside_domain(next)) {
      traj.exited_domain = true;
      break;
    }
    x = next;
    record_state(opt.t0 + static_cast<double>(k + 1) * opt.dt);
  }

  double pay = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traj.sample_count(); ++k)
    pay = std::min(pay, sys.target(traj.state(k)));
  traj.payoff = pay;
  return traj;
}

}  // namespace detail

/// Optimal play for both sides: at every step the control and disturbance
/// realize the Hamiltonian at the value source's spatial gradient, integrated
/// with RK4 under zero-order hold. Truncates (with a flag) if the state
/// leaves the domain box.
inline Trajectory simulate_optimal(const System& sys, const ValueSource& source,
                                   std::span<const double> x0, const RolloutOptions& opt = {}) {
  return detail::simulate(sys, source, nullptr, x0, opt);
}

/// Least-restrictive filter: plays the nominal control while V(x, t) stays
/// above the margin and substitutes the optimal safety control otherwise.
/// The disturbance plays its optimal input throughout.
inline Trajectory simulate_filtered(const System& sys, const ValueSource& source,
                                    const FilterPolicy& policy, std::span<const double> x0,
                                    const RolloutOptions& opt = {}) {
  return detail::simulate(sys, source, &policy, x0, opt);
}

/// Realized payoff: the minimum of the target function over the stored states.
inline double payoff(const Trajectory& traj, const System& sys) {
  if (traj.sample_count() == 0) throw std::invalid_argument("payoff of an empty trajectory");
  double pay = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traj.sample_count(); ++k)
    pay = std::min(pay, sys.target(traj.state(k)));
  return pay;
}

/// CSV rows: t, state, applied control/disturbance (blank on the final row),
/// value, overridden flag, min pairwise distance (blank when undefined).
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
  out << "t";
  for (int i = 0; i < traj.state_dim; ++i) out << ",x" << i;
  for (int i = 0; i < traj.control_dim; ++i) out << ",u" << i;
  for (int i = 0; i < traj.disturbance_dim; ++i) out << ",d" << i;
  out << ",value,overridden,min_pairwise_distance\n";
  out << std::setprecision(17);
  for (std::size_t k = 0; k < traj.sample_count(); ++k) {
    out << traj.times[k];
    for (int i = 0; i < traj.state_dim; ++i)
      out << ',' << traj.states[k * static_cast<std::size_t>(traj.state_dim) + static_cast<std::size_t>(i)];
    const bool has_inputs = k < traj.overridden.size();
    for (int i = 0; i < traj.control_dim; ++i) {
      out << ',';
      if (has_inputs) out << traj.controls[k * static_cast<std::size_t>(traj.control_dim) + static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < traj.disturbance_dim; ++i) {
      out << ',';
      if (has_inputs) out << traj.disturbances[k * static_cast<std::size_t>(traj.disturbance_dim) + static_cast<std::size_t>(i)];
    }
    out << ',' << traj.values[k] << ',';
    if (has_inputs) out << static_cast<int>(traj.overridden[k]);
    out << ',';
    if (!std::isnan(traj.pairwise[k])) out << traj.pairwise[k];
    out << '\n';
  }
}

}  // namespace hjr
