#pragma once

#include <iomanip>
#include <ostream>

#include "hjr/value_source.hpp"

namespace hjr {

inline void require_same_system(const std::string& a, const std::string& b) {
  if (!a.empty() && !b.empty() && a != b)
    throw std::invalid_argument("system mismatch: '" + a + "' vs '" + b + "'");
}

/// Mean squared error between the network and a grid, evaluated at every grid
/// node at the grid's time stamp. Inputs go through the network's own
/// normalization; values are compared raw.
inline double mse(const NetworkParams& params, const NormalizationMap& map, const ValueGrid& grid,
                  ThreadPool* pool = nullptr) {
  if (params.input_dim() != grid.dim() + 1)
    throw std::invalid_argument("network and grid disagree on state dimension");
  if (map.state_dim() != grid.dim())
    throw std::invalid_argument("normalization map and grid disagree on state dimension");
  const int workers = pool ? pool->worker_count() : 1;
  std::vector<double> partial(static_cast<std::size_t>(workers), 0.0);
  const double that = map.normalize_time(grid.time());
  auto kernel = [&](int w, std::size_t begin, std::size_t end) {
    std::vector<int> idx(static_cast<std::size_t>(grid.dim()));
    std::vector<double> x(static_cast<std::size_t>(grid.dim()));
    std::vector<double> input(static_cast<std::size_t>(grid.dim()) + 1);
    double acc = 0.0;
    for (std::size_t node = begin; node < end; ++node) {
      grid.unflatten(node, idx);
      grid.node_coords(idx, x);
      map.normalize_state(x, std::span<double>(input.data(), x.size()));
      input[x.size()] = that;
      const double diff = forward(params, input) - grid.values()[node];
      acc += diff * diff;
    }
    partial[static_cast<std::size_t>(w)] += acc;
  };
  if (pool)
    pool->parallel_ranges(grid.node_count(), kernel);
  else
    kernel(0, 0, grid.node_count());
  double sum = 0.0;
  for (double p : partial) sum += p;
  return sum / static_cast<double>(grid.node_count());
}

/// Percentage of grid nodes whose tube membership (sign of V <= 0) disagrees
/// between the network and the grid. The denominator is the total node count.
inline double brt_volume_error(const NetworkParams& params, const NormalizationMap& map,
                               const ValueGrid& grid, ThreadPool* pool = nullptr) {
  if (params.input_dim() != grid.dim() + 1)
    throw std::invalid_argument("network and grid disagree on state dimension");
  const int workers = pool ? pool->worker_count() : 1;
  std::vector<std::size_t> partial(static_cast<std::size_t>(workers), 0);
  const double that = map.normalize_time(grid.time());
  auto kernel = [&](int w, std::size_t begin, std::size_t end) {
    std::vector<int> idx(static_cast<std::size_t>(grid.dim()));
    std::vector<double> x(static_cast<std::size_t>(grid.dim()));
    std::vector<double> input(static_cast<std::size_t>(grid.dim()) + 1);
    std::size_t acc = 0;
    for (std::size_t node = begin; node < end; ++node) {
      grid.unflatten(node, idx);
      grid.node_coords(idx, x);
      map.normalize_state(x, std::span<double>(input.data(), x.size()));
      input[x.size()] = that;
      const bool net_in = forward(params, input) <= 0.0;
      const bool grid_in = grid.values()[node] <= 0.0;
      if (net_in != grid_in) ++acc;
    }
    partial[static_cast<std::size_t>(w)] += acc;
  };
  if (pool)
    pool->parallel_ranges(grid.node_count(), kernel);
  else
    kernel(0, 0, grid.node_count());
  std::size_t mism = 0;
  for (std::size_t p : partial) mism += p;
  return 100.0 * static_cast<double>(mism) / static_cast<double>(grid.node_count());
}

/// Writes a 2D slice of the value function as CSV: header row, then
/// resolution^2 rows of (free-dim-1, free-dim-2, value, in_brt). The free
/// dimensions sweep their domain intervals inclusively; all other dimensions
/// are held at `base_state`.
inline void export_slice(const ValueSource& source, std::span<const double> base_state, int free0,
                         int free1, int resolution, double t, std::ostream& out) {
  const int n = source.state_dim();
  if (base_state.size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("slice base state has wrong dimension");
  if (free0 < 0 || free0 >= n || free1 < 0 || free1 >= n || free0 == free1)
    throw std::invalid_argument("slice needs two distinct in-range free dimensions");
  if (resolution < 2) throw std::invalid_argument("slice resolution must be at least 2");
  std::vector<double> x(base_state.begin(), base_state.end());
  const Interval d0 = source.domain(free0), d1 = source.domain(free1);
  out << "x" << free0 << ",x" << free1 << ",value,in_brt\n";
  out << std::setprecision(17);
  for (int i = 0; i < resolution; ++i) {
    x[static_cast<std::size_t>(free0)] = d0.lo + (d0.hi - d0.lo) * i / (resolution - 1);
    for (int j = 0; j < resolution; ++j) {
      x[static_cast<std::size_t>(free1)] = d1.lo + (d1.hi - d1.lo) * j / (resolution - 1);
      const double v = source.value(x, t);
      out << x[static_cast<std::size_t>(free0)] << ',' << x[static_cast<std::size_t>(free1)] << ',' << v
          << ',' << (v <= 0.0 ? 1 : 0) << '\n';
    }
  }
}

/// Approximates the three-vehicle game value at a joint 9D state by the union
/// of the pairwise tubes: each vehicle pair maps into the 3D relative frame,
/// the relative value function is evaluated there, and the minimum over the
/// three pairs is returned (union of sub-zero sets = pointwise min).
inline double pairwise_union_value(const ValueSource& relative3d, std::span<const double> joint9,
                                   double t) {
  if (relative3d.state_dim() != 3)
    throw std::invalid_argument("pairwise union needs a 3D relative value source");
  if (joint9.size() != 9) throw std::invalid_argument("pairwise union needs a 9D joint state");
  const std::span<const double> e1 = joint9.subspan(0, 3);
  const std::span<const double> e2 = joint9.subspan(3, 3);
  const std::span<const double> p = joint9.subspan(6, 3);
  std::array<double, 3> rel;
  double best = std::numeric_limits<double>::infinity();
  const std::array<std::pair<std::span<const double>, std::span<const double>>, 3> pairs = {
      {{e1, p}, {e2, p}, {e1, e2}}};
  for (const auto& [ev, pu] : pairs) {
    pair_relative_state(ev, pu, rel);
    best = std::min(best, relative3d.value(rel, t));
  }
  return best;
}

}  // namespace hjr
