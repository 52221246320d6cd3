#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hjr/parallel.hpp"
#include "hjr/systems.hpp"

namespace hjr {

struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  int count = 2;
  bool periodic = false;

  /// Node spacing. Periodic axes cover [lo, hi) with `count` nodes; bounded
  /// axes include both endpoints.
  double spacing() const { return (hi - lo) / (periodic ? count : count - 1); }
  double coord(int i) const { return lo + i * spacing(); }
};

// Discretized value function on a rectangular grid, row-major with the last
// axis fastest. Supports up to 4 state dimensions.
class ValueGrid {
 public:
  ValueGrid(std::vector<GridAxis> axes, double time)
      : axes_(std::move(axes)), time_(time) {
    if (axes_.empty() || axes_.size() > 4)
      throw std::invalid_argument("value grid supports 1 to 4 dimensions");
    std::size_t n = 1;
    for (const GridAxis& a : axes_) {
      if (a.count < 3) throw std::invalid_argument("value grid needs at least 3 nodes per dimension");
      if (!(a.hi > a.lo)) throw std::invalid_argument("value grid axis has empty extent");
      n *= static_cast<std::size_t>(a.count);
    }
    values_.assign(n, 0.0);
    strides_.assign(axes_.size(), 1);
    for (int d = static_cast<int>(axes_.size()) - 2; d >= 0; --d)
      strides_[static_cast<std::size_t>(d)] =
          strides_[static_cast<std::size_t>(d) + 1] * static_cast<std::size_t>(axes_[static_cast<std::size_t>(d) + 1].count);
  }

  int dim() const { return static_cast<int>(axes_.size()); }
  const std::vector<GridAxis>& axes() const { return axes_; }
  const GridAxis& axis(int d) const { return axes_[static_cast<std::size_t>(d)]; }
  std::size_t node_count() const { return values_.size(); }
  std::size_t stride(int d) const { return strides_[static_cast<std::size_t>(d)]; }
  double time() const { return time_; }
  void set_time(double t) { time_ = t; }
  const std::string& system_name() const { return system_name_; }
  void set_system_name(std::string name) { system_name_ = std::move(name); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::size_t flat_index(std::span<const int> idx) const {
    std::size_t f = 0;
    for (int d = 0; d < dim(); ++d) f += static_cast<std::size_t>(idx[static_cast<std::size_t>(d)]) * strides_[static_cast<std::size_t>(d)];
    return f;
  }

  void unflatten(std::size_t flat, std::span<int> idx) const {
    for (int d = 0; d < dim(); ++d) {
      idx[static_cast<std::size_t>(d)] = static_cast<int>(flat / strides_[static_cast<std::size_t>(d)]);
      flat %= strides_[static_cast<std::size_t>(d)];
    }
  }

  void node_coords(std::span<const int> idx, std::span<double> x) const {
    for (int d = 0; d < dim(); ++d)
      x[static_cast<std::size_t>(d)] = axes_[static_cast<std::size_t>(d)].coord(idx[static_cast<std::size_t>(d)]);
  }

  /// Multilinear interpolation; exact at nodes. Out-of-box queries on
  /// non-periodic axes are rejected (beyond a tiny rounding slack).
  double interpolate(std::span<const double> x) const {
    int base[4];
    double frac[4];
    locate(x, base, frac);
    const int d = dim();
    double acc = 0.0;
    for (int corner = 0; corner < (1 << d); ++corner) {
      double w = 1.0;
      std::size_t f = 0;
      for (int a = 0; a < d; ++a) {
        const GridAxis& ax = axes_[static_cast<std::size_t>(a)];
        int i = base[a];
        if ((corner >> a) & 1) {
          w *= frac[a];
          i = ax.periodic ? (i + 1) % ax.count : i + 1;
        } else {
          w *= 1.0 - frac[a];
        }
        f += static_cast<std::size_t>(i) * strides_[static_cast<std::size_t>(a)];
      }
      acc += w * values_[f];
    }
    return acc;
  }

  /// Spatial gradient: central differences at nodes (one-sided at bounded
  /// edges via linear ghost extrapolation), multilinearly interpolated.
  void gradient(std::span<const double> x, std::span<double> out) const {
    int base[4];
    double frac[4];
    locate(x, base, frac);
    const int d = dim();
    for (int a = 0; a < d; ++a) out[static_cast<std::size_t>(a)] = 0.0;
    int idx[4];
    for (int corner = 0; corner < (1 << d); ++corner) {
      double w = 1.0;
      for (int a = 0; a < d; ++a) {
        const GridAxis& ax = axes_[static_cast<std::size_t>(a)];
        int i = base[a];
        if ((corner >> a) & 1) {
          w *= frac[a];
          i = ax.periodic ? (i + 1) % ax.count : i + 1;
        } else {
          w *= 1.0 - frac[a];
        }
        idx[a] = i;
      }
      for (int a = 0; a < d; ++a)
        out[static_cast<std::size_t>(a)] += w * node_central_diff(idx, a);
    }
  }

  /// Central difference along `axis` at a node, honoring periodic wrap and
  /// ghost extrapolation at bounded edges.
  double node_central_diff(std::span<const int> idx, int axis) const {
    const GridAxis& ax = axes_[static_cast<std::size_t>(axis)];
    const std::size_t f = flat_index(idx);
    const std::size_t st = strides_[static_cast<std::size_t>(axis)];
    const int i = idx[static_cast<std::size_t>(axis)];
    double vp, vm;
    if (ax.periodic) {
      std::size_t fp = i + 1 == ax.count ? f - static_cast<std::size_t>(ax.count - 1) * st : f + st;
      std::size_t fm = i == 0 ? f + static_cast<std::size_t>(ax.count - 1) * st : f - st;
      vp = values_[fp];
      vm = values_[fm];
    } else {
      const double v0 = values_[f];
      vp = i + 1 < ax.count ? values_[f + st] : 2.0 * v0 - values_[f - st];
      vm = i > 0 ? values_[f - st] : 2.0 * v0 - values_[f + st];
    }
    return (vp - vm) / (2.0 * ax.spacing());
  }

  // --- file format: magic, little-endian u32 JSON header length, JSON header,
  // raw float64 little-endian node values in row-major order ---

  void save(const std::filesystem::path& path) const {
    nlohmann::json hdr;
    hdr["format"] = "hjr-grid";
    hdr["version"] = 1;
    hdr["dim"] = dim();
    hdr["time"] = time_;
    if (!system_name_.empty()) hdr["system"] = system_name_;
    for (const GridAxis& a : axes_) {
      hdr["lo"].push_back(a.lo);
      hdr["hi"].push_back(a.hi);
      hdr["count"].push_back(a.count);
      hdr["periodic"].push_back(a.periodic);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_blob(out, kMagic, hdr.dump(), values_);
  }

  static ValueGrid load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json hdr = read_header(in, kMagic, path.string());
    std::vector<GridAxis> axes;
    for (std::size_t d = 0; d < hdr.at("lo").size(); ++d) {
      axes.push_back({hdr.at("lo")[d], hdr.at("hi")[d], hdr.at("count")[d], hdr.at("periodic")[d]});
    }
    ValueGrid g(std::move(axes), hdr.at("time").get<double>());
    if (hdr.contains("system")) g.set_system_name(hdr.at("system").get<std::string>());
    in.read(reinterpret_cast<char*>(g.values_.data()),
            static_cast<std::streamsize>(g.values_.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path.string() + ": truncated grid payload");
    return g;
  }

  static constexpr char kMagic[9] = "HJRGRID1";

  static void write_blob(std::ofstream& out, const char* magic, const std::string& header,
                         std::span<const double> payload) {
    out.write(magic, 8);
    std::uint32_t len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
  }

  static nlohmann::json read_header(std::ifstream& in, const char* magic, const std::string& what) {
    char got[8];
    in.read(got, 8);
    if (!in || std::memcmp(got, magic, 8) != 0)
      throw std::runtime_error(what + ": not a recognized file (bad magic)");
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string buf(len, '\0');
    in.read(buf.data(), len);
    if (!in) throw std::runtime_error(what + ": truncated header");
    return nlohmann::json::parse(buf);
  }

 private:
  void locate(std::span<const double> x, int* base, double* frac) const {
    if (x.size() != static_cast<std::size_t>(dim()))
      throw std::invalid_argument("grid query has wrong dimension");
    for (int a = 0; a < dim(); ++a) {
      const GridAxis& ax = axes_[static_cast<std::size_t>(a)];
      double v = x[static_cast<std::size_t>(a)];
      if (ax.periodic) {
        v = wrap_periodic(v, ax.lo, ax.hi - ax.lo);
        double f = (v - ax.lo) / ax.spacing();
        int i = static_cast<int>(f);
        if (i >= ax.count) i = ax.count - 1;
        base[a] = i;
        frac[a] = f - i;
      } else {
        const double slack = 1e-9 * (ax.hi - ax.lo);
        if (v < ax.lo - slack || v > ax.hi + slack)
          throw std::invalid_argument("grid query outside box on non-periodic dimension " +
                                      std::to_string(a));
        double f = (v - ax.lo) / ax.spacing();
        int i = static_cast<int>(f);
        if (i < 0) i = 0;
        if (i > ax.count - 2) i = ax.count - 2;
        base[a] = i;
        frac[a] = std::clamp(f - i, 0.0, 1.0);
      }
    }
  }

  std::vector<GridAxis> axes_;
  std::vector<double> values_;
  std::vector<std::size_t> strides_;
  double time_ = 0.0;
  std::string system_name_;
};

struct SolveOptions {
  std::vector<int> resolution;         // nodes per dimension
  double t_final = 0.0;
  std::vector<double> snapshot_times;  // defaults to {t_final}; each in [t_final, horizon]
  double cfl = 0.5;
  ThreadPool* pool = nullptr;
};

namespace detail {

/// Per-node dissipation coefficients: alpha[node*n + i] is the max of |f_i|
/// over the input-box corners at that node. These dominate |dH/dp_i| locally,
/// which is what the monotone-scheme argument needs, while smearing kinks far
/// less than a grid-global constant would.
inline std::vector<double> lf_dissipation_bounds(const System& sys, const ValueGrid& grid,
                                                 ThreadPool* pool) {
  const int n = sys.state_dim();
  const int nu = sys.control_dim(), nd = sys.disturbance_dim();
  std::vector<double> alpha(grid.node_count() * static_cast<std::size_t>(n), 0.0);
  auto scan = [&](int, std::size_t begin, std::size_t end) {
    std::vector<double> u(static_cast<std::size_t>(nu)), d(static_cast<std::size_t>(nd)),
        f(static_cast<std::size_t>(n)), x(static_cast<std::size_t>(n));
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (std::size_t node = begin; node < end; ++node) {
      grid.unflatten(node, idx);
      grid.node_coords(idx, x);
      double* a = alpha.data() + node * static_cast<std::size_t>(n);
      for (std::uint32_t mu = 0; mu < (1u << nu); ++mu) {
        for (int j = 0; j < nu; ++j)
          u[static_cast<std::size_t>(j)] =
              (mu >> j) & 1u ? sys.control_bounds()[static_cast<std::size_t>(j)].hi
                             : sys.control_bounds()[static_cast<std::size_t>(j)].lo;
        for (std::uint32_t md = 0; md < (1u << nd); ++md) {
          for (int k = 0; k < nd; ++k)
            d[static_cast<std::size_t>(k)] =
                (md >> k) & 1u ? sys.disturbance_bounds()[static_cast<std::size_t>(k)].hi
                               : sys.disturbance_bounds()[static_cast<std::size_t>(k)].lo;
          sys.flow(x, u, d, f);
          for (int i = 0; i < n; ++i)
            a[i] = std::max(a[i], std::abs(f[static_cast<std::size_t>(i)]));
        }
      }
    }
  };
  if (pool)
    pool->parallel_ranges(grid.node_count(), scan);
  else
    scan(0, 0, grid.node_count());
  return alpha;
}

}  // namespace detail

/// First-order Lax-Friedrichs solver for the terminal-value game inequality.
/// Marches V backward from the horizon with
///   V(x, t - dt) = min(l(x), V(x, t) + dt * H_lf(x)),
/// where H_lf is the analytic Hamiltonian at central-difference gradients plus
/// grid-global dissipation, and dt obeys CFL `cfl`. Systems with an obstacle
/// additionally clamp up to g(x) each step and start from max(l, g).
/// Returns one grid per requested snapshot time, in ascending time order.
inline std::vector<ValueGrid> solve(const System& sys, const SolveOptions& opt) {
  const int n = sys.state_dim();
  if (n > 4)
    throw std::invalid_argument(sys.name() + ": grid solver supports at most 4 state dimensions, got " +
                                std::to_string(n));
  if (static_cast<int>(opt.resolution.size()) != n)
    throw std::invalid_argument("resolution must list one node count per state dimension");
  for (int c : opt.resolution)
    if (c < 3) throw std::invalid_argument("grid resolution must be at least 3 nodes per dimension");
  const double T = sys.horizon();
  if (opt.t_final < 0.0 || opt.t_final > T)
    throw std::invalid_argument("t_final must lie within [0, horizon]");

  std::vector<double> snapshots = opt.snapshot_times;
  if (snapshots.empty()) snapshots.push_back(opt.t_final);
  for (double s : snapshots)
    if (s < opt.t_final - 1e-12 || s > T + 1e-12)
      throw std::invalid_argument("snapshot time outside [t_final, horizon]");
  std::sort(snapshots.begin(), snapshots.end(), std::greater<double>());
  snapshots.erase(std::unique(snapshots.begin(), snapshots.end()), snapshots.end());

  std::vector<GridAxis> axes;
  for (int i = 0; i < n; ++i) {
    const Interval& iv = sys.domain()[static_cast<std::size_t>(i)];
    axes.push_back({iv.lo, iv.hi, opt.resolution[static_cast<std::size_t>(i)], sys.periodic(i)});
  }
  ValueGrid grid(axes, T);
  grid.set_system_name(sys.name());
  const std::size_t nodes = grid.node_count();
  const bool brat = sys.has_obstacle();

  // Terminal data and per-node clamp fields.
  std::vector<double> lvals(nodes), gvals(brat ? nodes : 0);
  {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::vector<double> x(static_cast<std::size_t>(n));
    for (std::size_t node = 0; node < nodes; ++node) {
      grid.unflatten(node, idx);
      grid.node_coords(idx, x);
      lvals[node] = sys.target(x);
      if (brat) gvals[node] = *sys.obstacle(x);
    }
  }
  std::span<double> v = grid.values();
  for (std::size_t i = 0; i < nodes; ++i)
    v[i] = brat ? std::max(lvals[i], gvals[i]) : lvals[i];

  std::vector<double> alpha = detail::lf_dissipation_bounds(sys, grid, opt.pool);
  double rate = 0.0;
  {
    std::vector<double> amax(static_cast<std::size_t>(n), 0.0);
    for (std::size_t node = 0; node < nodes; ++node)
      for (int i = 0; i < n; ++i)
        amax[static_cast<std::size_t>(i)] =
            std::max(amax[static_cast<std::size_t>(i)], alpha[node * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)]);
    for (int i = 0; i < n; ++i) rate += amax[static_cast<std::size_t>(i)] / grid.axis(i).spacing();
  }
  const double dt_max = rate > 0.0 ? opt.cfl / rate : std::numeric_limits<double>::infinity();

  std::vector<double> next(nodes);
  std::vector<ValueGrid> out;

  auto step = [&](double s) {
    auto kernel = [&](int, std::size_t begin, std::size_t end) {
      std::vector<int> idx(static_cast<std::size_t>(n));
      std::vector<double> x(static_cast<std::size_t>(n)), grad(static_cast<std::size_t>(n));
      AffineFlow work;
      std::span<const double> cur = grid.values();
      for (std::size_t node = begin; node < end; ++node) {
        grid.unflatten(node, idx);
        grid.node_coords(idx, x);
        double diss = 0.0;
        for (int a = 0; a < n; ++a) {
          const GridAxis& ax = grid.axis(a);
          const std::size_t st = grid.stride(a);
          const int i = idx[static_cast<std::size_t>(a)];
          double vp, vm;
          const double v0 = cur[node];
          if (ax.periodic) {
            vp = cur[i + 1 == ax.count ? node - static_cast<std::size_t>(ax.count - 1) * st : node + st];
            vm = cur[i == 0 ? node + static_cast<std::size_t>(ax.count - 1) * st : node - st];
          } else {
            // Constant-extrapolated ghosts keep the update monotone at the
            // boundary; combined with the dissipation term they reproduce the
            // one-sided difference exactly when information flows outward.
            vp = i + 1 < ax.count ? cur[node + st] : v0;
            vm = i > 0 ? cur[node - st] : v0;
          }
          grad[static_cast<std::size_t>(a)] = (vp - vm) / (2.0 * ax.spacing());
          diss += alpha[static_cast<std::size_t>(a)] * (vp - 2.0 * v0 + vm) / (2.0 * ax.spacing());
        }
        double h = hamiltonian_analytic(sys, x, grad, work);
        double cand = std::min(lvals[node], cur[node] + s * (h + diss));
        if (brat) cand = std::max(cand, gvals[node]);
        next[node] = cand;
      }
    };
    if (opt.pool)
      opt.pool->parallel_ranges(nodes, kernel);
    else
      kernel(0, 0, nodes);
    std::copy(next.begin(), next.end(), grid.values().begin());
  };

  double t = T;
  for (double target_t : snapshots) {
    while (t > target_t) {
      double s = std::min(dt_max, t - target_t);
      step(s);
      t -= s;
      if (t - target_t < 1e-15 * T) t = target_t;
    }
    grid.set_time(target_t);
    out.push_back(grid);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace hjr
