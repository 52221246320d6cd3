#pragma once

#include "hjr/gridsolver.hpp"
#include "hjr/valuenet.hpp"

namespace hjr {

// Uniform view over a time-varying value function, backed by either a stack
// of solved grids or a trained network. Queries clamp time into the covered
// range.
class ValueSource {
 public:
  virtual ~ValueSource() = default;
  virtual int state_dim() const = 0;
  virtual Interval domain(int dim) const = 0;
  virtual double value(std::span<const double> x, double t) const = 0;
  virtual void spatial_grad(std::span<const double> x, double t, std::span<double> out) const = 0;
  virtual std::string system_name() const { return {}; }
};

/// Linear-in-time interpolation between grid snapshots; spatial queries on
/// non-periodic axes are clamped into the box (boundary extrapolation), which
/// keeps rollouts and projections defined near the domain edge.
class GridValueSource final : public ValueSource {
 public:
  explicit GridValueSource(std::vector<ValueGrid> slices) : slices_(std::move(slices)) {
    if (slices_.empty()) throw std::invalid_argument("grid value source needs at least one slice");
    std::sort(slices_.begin(), slices_.end(),
              [](const ValueGrid& a, const ValueGrid& b) { return a.time() < b.time(); });
    for (std::size_t i = 1; i < slices_.size(); ++i) {
      if (slices_[i].dim() != slices_[0].dim())
        throw std::invalid_argument("grid slices disagree on dimension");
      if (slices_[i].time() <= slices_[i - 1].time() + 1e-15)
        throw std::invalid_argument("grid slices must have distinct times");
    }
  }

  int state_dim() const override { return slices_[0].dim(); }
  Interval domain(int dim) const override {
    const GridAxis& a = slices_[0].axis(dim);
    return {a.lo, a.hi};
  }
  std::string system_name() const override { return slices_[0].system_name(); }
  const std::vector<ValueGrid>& slices() const { return slices_; }

  double value(std::span<const double> x, double t) const override {
    std::array<double, System::kMaxDim> q;
    clamp_into_box(x, q);
    std::span<const double> xs(q.data(), x.size());
    auto [i0, i1, w] = bracket(t);
    double v0 = slices_[i0].interpolate(xs);
    if (i0 == i1) return v0;
    return (1.0 - w) * v0 + w * slices_[i1].interpolate(xs);
  }

  void spatial_grad(std::span<const double> x, double t, std::span<double> out) const override {
    std::array<double, System::kMaxDim> q;
    clamp_into_box(x, q);
    std::span<const double> xs(q.data(), x.size());
    auto [i0, i1, w] = bracket(t);
    slices_[i0].gradient(xs, out);
    if (i0 == i1) return;
    std::array<double, System::kMaxDim> g1;
    slices_[i1].gradient(xs, std::span<double>(g1.data(), x.size()));
    for (std::size_t d = 0; d < x.size(); ++d) out[d] = (1.0 - w) * out[d] + w * g1[d];
  }

 private:
  void clamp_into_box(std::span<const double> x, std::array<double, System::kMaxDim>& q) const {
    for (std::size_t d = 0; d < x.size(); ++d) {
      const GridAxis& a = slices_[0].axis(static_cast<int>(d));
      q[d] = a.periodic ? x[d] : std::clamp(x[d], a.lo, a.hi);
    }
  }

  std::tuple<std::size_t, std::size_t, double> bracket(double t) const {
    if (slices_.size() == 1 || t <= slices_.front().time()) return {0, 0, 0.0};
    if (t >= slices_.back().time()) return {slices_.size() - 1, slices_.size() - 1, 0.0};
    std::size_t hi = 1;
    while (slices_[hi].time() < t) ++hi;
    const std::size_t lo = hi - 1;
    const double w = (t - slices_[lo].time()) / (slices_[hi].time() - slices_[lo].time());
    return {lo, hi, w};
  }

  std::vector<ValueGrid> slices_;
};

/// Trained-network view; clamps time into [0, horizon] and evaluates
/// gradients in physical coordinates through the normalization map.
class NetworkValueSource final : public ValueSource {
 public:
  NetworkValueSource(NetworkParams params, NormalizationMap map, std::string system_name = {})
      : params_(std::move(params)), map_(std::move(map)), system_(std::move(system_name)) {
    if (params_.input_dim() != map_.state_dim() + 1)
      throw std::invalid_argument("network input dimension does not match normalization map");
  }

  explicit NetworkValueSource(Checkpoint ck)
      : NetworkValueSource(std::move(ck.params), std::move(ck.map), std::move(ck.system_name)) {}

  int state_dim() const override { return map_.state_dim(); }
  Interval domain(int dim) const override {
    const std::size_t d = static_cast<std::size_t>(dim);
    return {map_.center[d] - map_.halfwidth[d], map_.center[d] + map_.halfwidth[d]};
  }
  std::string system_name() const override { return system_; }
  const NetworkParams& params() const { return params_; }
  const NormalizationMap& map() const { return map_; }

  double value(std::span<const double> x, double t) const override {
    return physical_gradients(params_, map_, x, clamp_time(t)).value;
  }

  void spatial_grad(std::span<const double> x, double t, std::span<double> out) const override {
    PhysicalGrads g = physical_gradients(params_, map_, x, clamp_time(t));
    std::copy(g.dx.begin(), g.dx.end(), out.begin());
  }

 private:
  double clamp_time(double t) const { return std::clamp(t, 0.0, map_.horizon); }

  NetworkParams params_;
  NormalizationMap map_;
  std::string system_;
};

}  // namespace hjr
