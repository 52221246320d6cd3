#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <optional>
#include <span>
#include <sstream>

#include "hjr/common.hpp"

namespace hjr {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// AvoidTarget: the control maximizes the min-over-time payoff, the
/// disturbance minimizes it. ReachTarget swaps the roles.
enum class Orientation { AvoidTarget, ReachTarget };

/// Input-affine decomposition f(x,u,d) = drift(x) + Bu(x) u + Bd(x) d.
/// Bu and Bd are stored column-major: column j holds input j's direction.
struct AffineFlow {
  std::vector<double> drift;
  std::vector<double> bu;
  std::vector<double> bd;
};

// A dynamical system with box-bounded inputs on a rectangular domain. All
// operations are pure; a System is safe to share across threads.
class System {
 public:
  struct Spec {
    std::string name;
    std::vector<Interval> domain;
    std::vector<Interval> control_bounds;
    std::vector<Interval> disturbance_bounds;
    std::vector<int> periodic_dims;
    Orientation orientation = Orientation::AvoidTarget;
    double horizon = 1.0;
  };

  virtual ~System() = default;

  const std::string& name() const { return spec_.name; }
  int state_dim() const { return static_cast<int>(spec_.domain.size()); }
  int control_dim() const { return static_cast<int>(spec_.control_bounds.size()); }
  int disturbance_dim() const { return static_cast<int>(spec_.disturbance_bounds.size()); }
  const std::vector<Interval>& domain() const { return spec_.domain; }
  const std::vector<Interval>& control_bounds() const { return spec_.control_bounds; }
  const std::vector<Interval>& disturbance_bounds() const { return spec_.disturbance_bounds; }
  Orientation orientation() const { return spec_.orientation; }
  double horizon() const { return spec_.horizon; }
  bool periodic(int dim) const { return periodic_mask_[static_cast<std::size_t>(dim)]; }
  const std::vector<int>& periodic_dims() const { return spec_.periodic_dims; }
  virtual bool has_obstacle() const { return false; }

  /// Wraps periodic coordinates into their domain interval, in place.
  void wrap_state(std::span<double> x) const {
    for (int d : spec_.periodic_dims) {
      const Interval& iv = spec_.domain[static_cast<std::size_t>(d)];
      x[static_cast<std::size_t>(d)] = wrap_periodic(x[static_cast<std::size_t>(d)], iv.lo, iv.width());
    }
  }

  bool inside_domain(std::span<const double> x) const {
    for (int i = 0; i < state_dim(); ++i) {
      if (periodic(i)) continue;
      if (!spec_.domain[static_cast<std::size_t>(i)].contains(x[static_cast<std::size_t>(i)])) return false;
    }
    return true;
  }

  void flow(std::span<const double> x, std::span<const double> u, std::span<const double> d,
            std::span<double> dx) const {
    check_state(x);
    check_inputs(u, d);
    if (dx.size() != static_cast<std::size_t>(state_dim()))
      throw std::invalid_argument(name() + ": flow output has wrong dimension");
    std::array<double, kMaxDim> w;
    wrap_into(x, w);
    flow_impl(w.data(), u.data(), d.data(), dx.data());
  }

  double target(std::span<const double> x) const {
    check_state(x);
    std::array<double, kMaxDim> w;
    wrap_into(x, w);
    return target_impl(w.data());
  }

  /// Obstacle function g; super-zero level set is the unsafe set. Systems
  /// without state constraints report "absent" rather than a fabricated value.
  std::optional<double> obstacle(std::span<const double> x) const {
    check_state(x);
    if (!has_obstacle()) return std::nullopt;
    std::array<double, kMaxDim> w;
    wrap_into(x, w);
    return obstacle_impl(w.data());
  }

  void affine_flow(std::span<const double> x, AffineFlow& out) const {
    check_state(x);
    const std::size_t n = static_cast<std::size_t>(state_dim());
    out.drift.assign(n, 0.0);
    out.bu.assign(n * static_cast<std::size_t>(control_dim()), 0.0);
    out.bd.assign(n * static_cast<std::size_t>(disturbance_dim()), 0.0);
    std::array<double, kMaxDim> w;
    wrap_into(x, w);
    affine_impl(w.data(), out);
  }

  /// Minimum pairwise vehicle distance for multi-vehicle systems, when defined.
  virtual std::optional<double> pairwise_distance(std::span<const double>) const { return std::nullopt; }

  static constexpr int kMaxDim = 16;

 protected:
  explicit System(Spec spec) : spec_(std::move(spec)) {
    validate();
    periodic_mask_.assign(spec_.domain.size(), false);
    for (int d : spec_.periodic_dims) periodic_mask_[static_cast<std::size_t>(d)] = true;
  }

  virtual void flow_impl(const double* x, const double* u, const double* d, double* dx) const = 0;
  virtual double target_impl(const double* x) const = 0;
  virtual double obstacle_impl(const double*) const { return 0.0; }
  virtual void affine_impl(const double* x, AffineFlow& out) const = 0;

 private:
  void wrap_into(std::span<const double> x, std::array<double, kMaxDim>& w) const {
    std::copy(x.begin(), x.end(), w.begin());
    wrap_state(std::span<double>(w.data(), x.size()));
  }

  void check_state(std::span<const double> x) const {
    if (x.size() != static_cast<std::size_t>(state_dim()))
      throw std::invalid_argument(name() + ": state has dimension " + std::to_string(x.size()) +
                                  ", expected " + std::to_string(state_dim()));
  }

  void check_inputs(std::span<const double> u, std::span<const double> d) const {
    if (u.size() != static_cast<std::size_t>(control_dim()) ||
        d.size() != static_cast<std::size_t>(disturbance_dim()))
      throw std::invalid_argument(name() + ": input has wrong dimension");
    for (std::size_t j = 0; j < u.size(); ++j)
      if (!spec_.control_bounds[j].contains(u[j]))
        throw std::invalid_argument(name() + ": control " + std::to_string(j) + " outside bounds");
    for (std::size_t k = 0; k < d.size(); ++k)
      if (!spec_.disturbance_bounds[k].contains(d[k]))
        throw std::invalid_argument(name() + ": disturbance " + std::to_string(k) + " outside bounds");
  }

  void validate() const {
    if (spec_.name.empty()) throw std::invalid_argument("system name must be non-empty");
    if (spec_.domain.empty()) throw std::invalid_argument(spec_.name + ": empty domain");
    if (spec_.domain.size() > kMaxDim) throw std::invalid_argument(spec_.name + ": too many dimensions");
    auto check_ivs = [&](const std::vector<Interval>& ivs, const char* what) {
      for (const Interval& iv : ivs) {
        if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
          throw std::invalid_argument(spec_.name + ": non-finite " + what + " interval");
        if (iv.lo > iv.hi) throw std::invalid_argument(spec_.name + ": inverted " + what + " interval");
      }
    };
    check_ivs(spec_.domain, "domain");
    check_ivs(spec_.control_bounds, "control");
    check_ivs(spec_.disturbance_bounds, "disturbance");
    for (int d : spec_.periodic_dims) {
      if (d < 0 || d >= static_cast<int>(spec_.domain.size()))
        throw std::invalid_argument(spec_.name + ": periodic dim out of range");
      if (std::abs(spec_.domain[static_cast<std::size_t>(d)].width() - 2.0 * kPi) > 1e-9)
        throw std::invalid_argument(spec_.name + ": periodic dim " + std::to_string(d) +
                                    " must span exactly 2*pi");
    }
    if (!(spec_.horizon > 0.0)) throw std::invalid_argument(spec_.name + ": horizon must be positive");
  }

  Spec spec_;
  std::vector<bool> periodic_mask_;
};

// ---------------------------------------------------------------------------
// Hamiltonians and optimal inputs.
//
// All shipped systems are input-affine with box bounds, so each scalar input
// optimizes the inner product at a bound endpoint chosen by the sign of its
// gradient coefficient. Ties break to the lower endpoint.
// ---------------------------------------------------------------------------

namespace detail {

inline double endpoint_max(double coef, const Interval& iv) {
  return std::max(coef * iv.lo, coef * iv.hi);
}
inline double endpoint_min(double coef, const Interval& iv) {
  return std::min(coef * iv.lo, coef * iv.hi);
}

}  // namespace detail

/// Closed-form Hamiltonian from the system's affine decomposition:
/// max over u, min over d of <grad, f(x,u,d)> when the control maximizes
/// (AvoidTarget); min over u, max over d when it minimizes (ReachTarget).
inline double hamiltonian_analytic(const System& sys, std::span<const double> x,
                                   std::span<const double> grad, AffineFlow& work) {
  sys.affine_flow(x, work);
  const std::size_t n = static_cast<std::size_t>(sys.state_dim());
  if (grad.size() != n) throw std::invalid_argument(sys.name() + ": gradient has wrong dimension");
  const bool control_max = sys.orientation() == Orientation::AvoidTarget;
  double h = dot(grad, work.drift);
  for (int j = 0; j < sys.control_dim(); ++j) {
    double c = dot(grad, std::span<const double>(work.bu.data() + static_cast<std::size_t>(j) * n, n));
    const Interval& iv = sys.control_bounds()[static_cast<std::size_t>(j)];
    h += control_max ? detail::endpoint_max(c, iv) : detail::endpoint_min(c, iv);
  }
  for (int k = 0; k < sys.disturbance_dim(); ++k) {
    double c = dot(grad, std::span<const double>(work.bd.data() + static_cast<std::size_t>(k) * n, n));
    const Interval& iv = sys.disturbance_bounds()[static_cast<std::size_t>(k)];
    h += control_max ? detail::endpoint_min(c, iv) : detail::endpoint_max(c, iv);
  }
  return h;
}

inline double hamiltonian_analytic(const System& sys, std::span<const double> x,
                                   std::span<const double> grad) {
  AffineFlow work;
  return hamiltonian_analytic(sys, x, grad, work);
}

/// Exhaustive oracle: evaluates <grad, f> at every corner of the control and
/// disturbance boxes and returns the exact max-min (or min-max). Independent
/// of the affine decomposition; calls flow() directly.
inline double hamiltonian_bruteforce(const System& sys, std::span<const double> x,
                                     std::span<const double> grad) {
  const int nu = sys.control_dim(), nd = sys.disturbance_dim();
  const std::size_t n = static_cast<std::size_t>(sys.state_dim());
  if (grad.size() != n) throw std::invalid_argument(sys.name() + ": gradient has wrong dimension");
  const bool control_max = sys.orientation() == Orientation::AvoidTarget;
  std::vector<double> u(static_cast<std::size_t>(nu)), d(static_cast<std::size_t>(nd)), f(n);
  double outer = 0.0;
  bool outer_set = false;
  for (std::uint32_t mu = 0; mu < (1u << nu); ++mu) {
    for (int j = 0; j < nu; ++j) {
      const Interval& iv = sys.control_bounds()[static_cast<std::size_t>(j)];
      u[static_cast<std::size_t>(j)] = (mu >> j) & 1u ? iv.hi : iv.lo;
    }
    double inner = 0.0;
    bool inner_set = false;
    for (std::uint32_t md = 0; md < (1u << nd); ++md) {
      for (int k = 0; k < nd; ++k) {
        const Interval& iv = sys.disturbance_bounds()[static_cast<std::size_t>(k)];
        d[static_cast<std::size_t>(k)] = (md >> k) & 1u ? iv.hi : iv.lo;
      }
      sys.flow(x, u, d, f);
      double v = dot(grad, f);
      if (!inner_set || (control_max ? v < inner : v > inner)) {
        inner = v;
        inner_set = true;
      }
    }
    if (!outer_set || (control_max ? inner > outer : inner < outer)) {
      outer = inner;
      outer_set = true;
    }
  }
  return outer;
}

/// Arg-max/arg-min input pair realizing the analytic Hamiltonian. Ties (zero
/// gradient coefficient) break to the lower bound endpoint.
inline void optimal_inputs(const System& sys, std::span<const double> x, std::span<const double> grad,
                           std::span<double> u_out, std::span<double> d_out, AffineFlow& work) {
  sys.affine_flow(x, work);
  const std::size_t n = static_cast<std::size_t>(sys.state_dim());
  if (grad.size() != n) throw std::invalid_argument(sys.name() + ": gradient has wrong dimension");
  if (u_out.size() != static_cast<std::size_t>(sys.control_dim()) ||
      d_out.size() != static_cast<std::size_t>(sys.disturbance_dim()))
    throw std::invalid_argument(sys.name() + ": optimal input output has wrong dimension");
  const bool control_max = sys.orientation() == Orientation::AvoidTarget;
  for (int j = 0; j < sys.control_dim(); ++j) {
    double c = dot(grad, std::span<const double>(work.bu.data() + static_cast<std::size_t>(j) * n, n));
    const Interval& iv = sys.control_bounds()[static_cast<std::size_t>(j)];
    bool take_hi = control_max ? (c > 0.0) : (c < 0.0);
    u_out[static_cast<std::size_t>(j)] = take_hi ? iv.hi : iv.lo;
  }
  for (int k = 0; k < sys.disturbance_dim(); ++k) {
    double c = dot(grad, std::span<const double>(work.bd.data() + static_cast<std::size_t>(k) * n, n));
    const Interval& iv = sys.disturbance_bounds()[static_cast<std::size_t>(k)];
    bool take_hi = control_max ? (c < 0.0) : (c > 0.0);
    d_out[static_cast<std::size_t>(k)] = take_hi ? iv.hi : iv.lo;
  }
}

struct OptimalInputs {
  std::vector<double> control, disturbance;
};

inline OptimalInputs optimal_inputs(const System& sys, std::span<const double> x,
                                    std::span<const double> grad) {
  OptimalInputs out;
  out.control.resize(static_cast<std::size_t>(sys.control_dim()));
  out.disturbance.resize(static_cast<std::size_t>(sys.disturbance_dim()));
  AffineFlow work;
  optimal_inputs(sys, x, grad, out.control, out.disturbance, work);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark systems.
// ---------------------------------------------------------------------------

/// Pursuit-evasion in the evader's frame: state (relative x, relative y,
/// relative heading). The evader's turn rate is the control, the pursuer's
/// the disturbance; collision is relative position within `collision_radius`.
struct Air3DParams {
  double evader_speed = 0.75;
  double pursuer_speed = 0.75;
  double max_turn_rate = 3.0;
  double collision_radius = 0.25;
  double horizon = 1.0;
  double position_bound = 1.0;
};

class Air3D final : public System {
 public:
  explicit Air3D(Air3DParams p = {}) : System(make_spec(p)), p_(p) {
    if (!(p.evader_speed > 0) || !(p.pursuer_speed > 0) || !(p.max_turn_rate > 0) ||
        !(p.collision_radius > 0))
      throw std::invalid_argument("air3d: parameters must be strictly positive");
  }

  const Air3DParams& params() const { return p_; }

  std::optional<double> pairwise_distance(std::span<const double> x) const override {
    return std::hypot(x[0], x[1]);
  }

 protected:
  void flow_impl(const double* x, const double* u, const double* d, double* dx) const override {
    const double we = u[0], wp = d[0];
    dx[0] = -p_.evader_speed + p_.pursuer_speed * std::cos(x[2]) + we * x[1];
    dx[1] = p_.pursuer_speed * std::sin(x[2]) - we * x[0];
    dx[2] = wp - we;
  }

  double target_impl(const double* x) const override {
    return std::hypot(x[0], x[1]) - p_.collision_radius;
  }

  void affine_impl(const double* x, AffineFlow& out) const override {
    out.drift[0] = -p_.evader_speed + p_.pursuer_speed * std::cos(x[2]);
    out.drift[1] = p_.pursuer_speed * std::sin(x[2]);
    out.drift[2] = 0.0;
    out.bu[0] = x[1];
    out.bu[1] = -x[0];
    out.bu[2] = -1.0;
    out.bd[0] = 0.0;
    out.bd[1] = 0.0;
    out.bd[2] = 1.0;
  }

 private:
  static Spec make_spec(const Air3DParams& p) {
    Spec s;
    s.name = "air3d";
    double b = p.position_bound;
    s.domain = {{-b, b}, {-b, b}, {-kPi, kPi}};
    s.control_bounds = {{-p.max_turn_rate, p.max_turn_rate}};
    s.disturbance_bounds = {{-p.max_turn_rate, p.max_turn_rate}};
    s.periodic_dims = {2};
    s.orientation = Orientation::AvoidTarget;
    s.horizon = p.horizon;
    return s;
  }

  Air3DParams p_;
};

/// The same pursuit-evasion game in the joint state space of both vehicles:
/// (x0..x2) pursuer pose, (x3..x5) evader pose. Control is the evader's turn
/// rate, disturbance the pursuer's.
struct Joint6DParams {
  double evader_speed = 0.75;
  double pursuer_speed = 0.75;
  double max_turn_rate = 3.0;
  double collision_radius = 0.25;
  double horizon = 1.0;
  double position_bound = 1.0;
};

class JointPursuit6D final : public System {
 public:
  explicit JointPursuit6D(Joint6DParams p = {}) : System(make_spec(p)), p_(p) {}

  const Joint6DParams& params() const { return p_; }

  std::optional<double> pairwise_distance(std::span<const double> x) const override {
    return std::hypot(x[0] - x[3], x[1] - x[4]);
  }

 protected:
  void flow_impl(const double* x, const double* u, const double* d, double* dx) const override {
    dx[0] = p_.pursuer_speed * std::cos(x[2]);
    dx[1] = p_.pursuer_speed * std::sin(x[2]);
    dx[2] = d[0];
    dx[3] = p_.evader_speed * std::cos(x[5]);
    dx[4] = p_.evader_speed * std::sin(x[5]);
    dx[5] = u[0];
  }

  double target_impl(const double* x) const override {
    return std::hypot(x[0] - x[3], x[1] - x[4]) - p_.collision_radius;
  }

  void affine_impl(const double* x, AffineFlow& out) const override {
    out.drift[0] = p_.pursuer_speed * std::cos(x[2]);
    out.drift[1] = p_.pursuer_speed * std::sin(x[2]);
    out.drift[3] = p_.evader_speed * std::cos(x[5]);
    out.drift[4] = p_.evader_speed * std::sin(x[5]);
    out.bu[5] = 1.0;
    out.bd[2] = 1.0;
  }

 private:
  static Spec make_spec(const Joint6DParams& p) {
    Spec s;
    s.name = "joint6d";
    double b = p.position_bound;
    s.domain = {{-b, b}, {-b, b}, {-kPi, kPi}, {-b, b}, {-b, b}, {-kPi, kPi}};
    s.control_bounds = {{-p.max_turn_rate, p.max_turn_rate}};
    s.disturbance_bounds = {{-p.max_turn_rate, p.max_turn_rate}};
    s.periodic_dims = {2, 5};
    s.orientation = Orientation::AvoidTarget;
    s.horizon = p.horizon;
    return s;
  }

  Joint6DParams p_;
};

/// Two evaders and one pursuer in the joint 9D state space:
/// (x0..x2) evader 1, (x3..x5) evader 2, (x6..x8) pursuer. The evaders' turn
/// rates are two independent controls; the pursuer's turn rate is the
/// disturbance. Collision is any pair closer than `collision_radius`.
struct ThreeVehicle9DParams {
  double evader_speed = 0.75;
  double pursuer_speed = 0.75;
  double max_turn_rate = 3.0;
  double collision_radius = 0.25;
  double horizon = 1.0;
  double position_bound = 1.0;
};

class ThreeVehicle9D final : public System {
 public:
  explicit ThreeVehicle9D(ThreeVehicle9DParams p = {}) : System(make_spec(p)), p_(p) {}

  const ThreeVehicle9DParams& params() const { return p_; }

  std::optional<double> pairwise_distance(std::span<const double> x) const override {
    return min_pairwise(x.data());
  }

 protected:
  void flow_impl(const double* x, const double* u, const double* d, double* dx) const override {
    dx[0] = p_.evader_speed * std::cos(x[2]);
    dx[1] = p_.evader_speed * std::sin(x[2]);
    dx[2] = u[0];
    dx[3] = p_.evader_speed * std::cos(x[5]);
    dx[4] = p_.evader_speed * std::sin(x[5]);
    dx[5] = u[1];
    dx[6] = p_.pursuer_speed * std::cos(x[8]);
    dx[7] = p_.pursuer_speed * std::sin(x[8]);
    dx[8] = d[0];
  }

  double target_impl(const double* x) const override {
    return min_pairwise(x) - p_.collision_radius;
  }

  void affine_impl(const double* x, AffineFlow& out) const override {
    out.drift[0] = p_.evader_speed * std::cos(x[2]);
    out.drift[1] = p_.evader_speed * std::sin(x[2]);
    out.drift[3] = p_.evader_speed * std::cos(x[5]);
    out.drift[4] = p_.evader_speed * std::sin(x[5]);
    out.drift[6] = p_.pursuer_speed * std::cos(x[8]);
    out.drift[7] = p_.pursuer_speed * std::sin(x[8]);
    out.bu[2] = 1.0;       // column 0: evader 1 turn rate
    out.bu[9 + 5] = 1.0;   // column 1: evader 2 turn rate
    out.bd[8] = 1.0;
  }

 private:
  static double min_pairwise(const double* x) {
    double d12 = std::hypot(x[0] - x[3], x[1] - x[4]);
    double d1p = std::hypot(x[0] - x[6], x[1] - x[7]);
    double d2p = std::hypot(x[3] - x[6], x[4] - x[7]);
    return std::min({d12, d1p, d2p});
  }

  static Spec make_spec(const ThreeVehicle9DParams& p) {
    Spec s;
    s.name = "three_vehicle9d";
    double b = p.position_bound;
    Interval pos{-b, b}, ang{-kPi, kPi};
    s.domain = {pos, pos, ang, pos, pos, ang, pos, pos, ang};
    s.control_bounds = {{-p.max_turn_rate, p.max_turn_rate}, {-p.max_turn_rate, p.max_turn_rate}};
    s.disturbance_bounds = {{-p.max_turn_rate, p.max_turn_rate}};
    s.periodic_dims = {2, 5, 8};
    s.orientation = Orientation::AvoidTarget;
    s.horizon = p.horizon;
    return s;
  }

  ThreeVehicle9DParams p_;
};

/// Two kinematic cars negotiating a passage around a stranded vehicle.
/// Per vehicle i: (x, y, heading, speed, steering angle) at indices 5i..5i+4.
/// Controls are both cars' acceleration and steering rate (cooperative reach
/// game, no disturbance). The target is both cars inside their goal boxes;
/// the obstacle is any vehicle-vehicle or vehicle-curb clearance violation.
struct NarrowPassageParams {
  double vehicle_length = 2.0;
  double vehicle_radius = 1.0;
  Interval accel_bounds{-2.0, 2.0};
  Interval steer_rate_bounds{-1.0, 1.0};
  std::array<Interval, 2> target1{{{4.0, 7.5}, {-3.0, -0.6}}};
  std::array<Interval, 2> target2{{{-7.5, -4.0}, {0.6, 3.0}}};
  double curb_y = 3.6;  // road occupies |y| < curb_y
  std::array<double, 2> stranded_position{0.0, -1.8};
  double stranded_radius = 1.0;
  double horizon = 4.0;
  double x_bound = 8.0;
  Interval speed_bounds{0.0, 4.0};
  double max_steer = 0.6;
  Orientation orientation = Orientation::ReachTarget;
};

/// Signed distance from a point to an axis-aligned box (negative inside).
inline double box_signed_distance(double px, double py, const std::array<Interval, 2>& box) {
  double qx = std::max(box[0].lo - px, px - box[0].hi);
  double qy = std::max(box[1].lo - py, py - box[1].hi);
  double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
  double inside = std::min(std::max(qx, qy), 0.0);
  return outside + inside;
}

class NarrowPassage10D final : public System {
 public:
  explicit NarrowPassage10D(NarrowPassageParams p = {}) : System(make_spec(p)), p_(p) {
    if (!(p.vehicle_length > 0) || !(p.vehicle_radius > 0) || !(p.stranded_radius > 0))
      throw std::invalid_argument("narrow_passage10d: geometry must be strictly positive");
    for (const auto& t : {p.target1, p.target2}) {
      if (t[0].lo < -p.x_bound || t[0].hi > p.x_bound || t[1].lo < -p.curb_y || t[1].hi > p.curb_y)
        throw std::invalid_argument("narrow_passage10d: target box outside domain");
    }
  }

  const NarrowPassageParams& params() const { return p_; }
  bool has_obstacle() const override { return true; }

  std::optional<double> pairwise_distance(std::span<const double> x) const override {
    double d12 = std::hypot(x[0] - x[5], x[1] - x[6]);
    double d1s = std::hypot(x[0] - p_.stranded_position[0], x[1] - p_.stranded_position[1]);
    double d2s = std::hypot(x[5] - p_.stranded_position[0], x[6] - p_.stranded_position[1]);
    return std::min({d12, d1s, d2s});
  }

 protected:
  void flow_impl(const double* x, const double* u, const double* d, double* dx) const override {
    (void)d;
    for (int i = 0; i < 2; ++i) {
      const double* xi = x + 5 * i;
      double* dxi = dx + 5 * i;
      const double a = u[2 * i], psidot = u[2 * i + 1];
      dxi[0] = xi[3] * std::cos(xi[2]);
      dxi[1] = xi[3] * std::sin(xi[2]);
      dxi[2] = xi[3] * std::tan(xi[4]) / p_.vehicle_length;
      dxi[3] = a;
      dxi[4] = psidot;
    }
  }

  double target_impl(const double* x) const override {
    double d1 = box_signed_distance(x[0], x[1], p_.target1);
    double d2 = box_signed_distance(x[5], x[6], p_.target2);
    return std::max(d1, d2);
  }

  double obstacle_impl(const double* x) const override {
    double d12 = std::hypot(x[0] - x[5], x[1] - x[6]) - 2.0 * p_.vehicle_radius;
    double d1s = std::hypot(x[0] - p_.stranded_position[0], x[1] - p_.stranded_position[1]) -
                 (p_.vehicle_radius + p_.stranded_radius);
    double d2s = std::hypot(x[5] - p_.stranded_position[0], x[6] - p_.stranded_position[1]) -
                 (p_.vehicle_radius + p_.stranded_radius);
    double margin = p_.curb_y - p_.vehicle_radius;
    double c1 = margin - std::abs(x[1]);
    double c2 = margin - std::abs(x[6]);
    return -std::min({d12, d1s, d2s, c1, c2});
  }

  void affine_impl(const double* x, AffineFlow& out) const override {
    for (int i = 0; i < 2; ++i) {
      const double* xi = x + 5 * i;
      out.drift[5 * i + 0] = xi[3] * std::cos(xi[2]);
      out.drift[5 * i + 1] = xi[3] * std::sin(xi[2]);
      out.drift[5 * i + 2] = xi[3] * std::tan(xi[4]) / p_.vehicle_length;
      out.bu[static_cast<std::size_t>(2 * i) * 10 + static_cast<std::size_t>(5 * i + 3)] = 1.0;
      out.bu[static_cast<std::size_t>(2 * i + 1) * 10 + static_cast<std::size_t>(5 * i + 4)] = 1.0;
    }
  }

 private:
  static Spec make_spec(const NarrowPassageParams& p) {
    Spec s;
    s.name = "narrow_passage10d";
    Interval xi{-p.x_bound, p.x_bound}, yi{-p.curb_y, p.curb_y}, ang{-kPi, kPi};
    Interval steer{-p.max_steer, p.max_steer};
    s.domain = {xi, yi, ang, p.speed_bounds, steer, xi, yi, ang, p.speed_bounds, steer};
    s.control_bounds = {p.accel_bounds, p.steer_rate_bounds, p.accel_bounds, p.steer_rate_bounds};
    s.periodic_dims = {2, 7};
    s.orientation = p.orientation;
    s.horizon = p.horizon;
    return s;
  }

  NarrowPassageParams p_;
};

/// 1D single integrator with target |x| <= 0.25, used as a closed-form test
/// system. Kind::Control: dx = u (the controller can always escape, so the
/// value equals the target function). Kind::Disturbance: dx = d (value
/// max(|x| - time_to_go, 0) - 0.25).
class Integrator1D final : public System {
 public:
  enum class Kind { Control, Disturbance };

  explicit Integrator1D(Kind kind, double horizon = 0.5,
                        Orientation orientation = Orientation::AvoidTarget)
      : System(make_spec(kind, horizon, orientation)), kind_(kind) {}

  Kind kind() const { return kind_; }

 protected:
  void flow_impl(const double*, const double* u, const double* d, double* dx) const override {
    dx[0] = kind_ == Kind::Control ? u[0] : d[0];
  }

  double target_impl(const double* x) const override { return std::abs(x[0]) - 0.25; }

  void affine_impl(const double*, AffineFlow& out) const override {
    if (kind_ == Kind::Control)
      out.bu[0] = 1.0;
    else
      out.bd[0] = 1.0;
  }

 private:
  static Spec make_spec(Kind kind, double horizon, Orientation orientation) {
    Spec s;
    s.name = kind == Kind::Control ? "integrator1d_control" : "integrator1d_disturbance";
    s.domain = {{-1.0, 1.0}};
    if (kind == Kind::Control)
      s.control_bounds = {{-1.0, 1.0}};
    else
      s.disturbance_bounds = {{-1.0, 1.0}};
    s.orientation = orientation;
    s.horizon = horizon;
    return s;
  }

  Kind kind_;
};

/// Maps an (evader pose, pursuer pose) pair into the evader-centered relative
/// frame used by the 3D pursuit game. Kept out of line so every caller shares
/// one instruction sequence and pairwise comparisons stay bit-identical.
#if defined(__GNUC__)
[[gnu::noinline]]
#endif
inline void pair_relative_state(std::span<const double> evader_pose,
                                std::span<const double> pursuer_pose, std::span<double> rel) {
  const double dx = pursuer_pose[0] - evader_pose[0];
  const double dy = pursuer_pose[1] - evader_pose[1];
  const double c = std::cos(evader_pose[2]), s = std::sin(evader_pose[2]);
  rel[0] = c * dx + s * dy;
  rel[1] = -s * dx + c * dy;
  rel[2] = wrap_periodic(pursuer_pose[2] - evader_pose[2], -kPi, 2.0 * kPi);
}

}  // namespace hjr
