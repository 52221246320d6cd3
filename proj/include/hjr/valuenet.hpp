#pragma once

#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "hjr/gridsolver.hpp"
#include "hjr/parallel.hpp"
#include "hjr/systems.hpp"

namespace hjr {

enum class Activation { Sine, ReLU, Tanh, Sigmoid };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Sine: return "sine";
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "sine") return Activation::Sine;
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "' (expected sine|relu|tanh|sigmoid)");
}

namespace detail {

// a = sigma(u), d1 = sigma'(u), d2 = sigma''(u). ReLU uses subgradient 0 at
// the kink.
inline void activation_eval(Activation act, double u, double& a, double& d1, double& d2) {
  a = d1 = d2 = 0.0;
  switch (act) {
    case Activation::Sine:
#if defined(__GLIBC__)
      ::sincos(u, &a, &d1);
#else
      a = std::sin(u);
      d1 = std::cos(u);
#endif
      d2 = -a;
      break;
    case Activation::ReLU:
      a = u > 0.0 ? u : 0.0;
      d1 = u > 0.0 ? 1.0 : 0.0;
      d2 = 0.0;
      break;
    case Activation::Tanh:
      a = std::tanh(u);
      d1 = 1.0 - a * a;
      d2 = -2.0 * a * d1;
      break;
    case Activation::Sigmoid:
      a = 1.0 / (1.0 + std::exp(-u));
      d1 = a * (1.0 - a);
      d2 = d1 * (1.0 - 2.0 * a);
      break;
  }
}

}  // namespace detail

// Fully-connected scalar-output network: hidden layers apply sigma(omega * z)
// with omega = omega0 on the first layer and 1 afterwards; the output layer is
// linear. Parameters live in one flat 64-bit array in layer order (weights
// row-major [out][in], then biases), which is also the checkpoint payload.
class NetworkParams {
 public:
  NetworkParams(int input_dim, int hidden_layers, int hidden_width, double omega0,
                Activation activation = Activation::Sine)
      : input_dim_(input_dim),
        hidden_layers_(hidden_layers),
        hidden_width_(hidden_width),
        omega0_(omega0),
        activation_(activation) {
    if (input_dim < 1 || hidden_layers < 1 || hidden_width < 1)
      throw std::invalid_argument("network dimensions must be positive");
    if (!(omega0 > 0.0)) throw std::invalid_argument("omega0 must be positive");
    std::size_t off = 0;
    for (int l = 0; l <= hidden_layers_; ++l) {
      w_off_.push_back(off);
      off += static_cast<std::size_t>(layer_out(l)) * static_cast<std::size_t>(layer_in(l));
      b_off_.push_back(off);
      off += static_cast<std::size_t>(layer_out(l));
    }
    data_.assign(off, 0.0);
  }

  /// Seeded initialization: first-layer entries uniform in
  /// [-1/fan_in, 1/fan_in), deeper layers (output included) uniform in
  /// [-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0); biases share their
  /// layer's range. Deterministic in `seed`.
  static NetworkParams init(std::uint64_t seed, int input_dim, int hidden_layers, int hidden_width,
                            double omega0, Activation activation = Activation::Sine) {
    NetworkParams p(input_dim, hidden_layers, hidden_width, omega0, activation);
    p.seed_ = seed;
    Rng rng = Rng::derive(seed, 0x6e657469ull);  // init stream
    for (int l = 0; l <= hidden_layers; ++l) {
      const double fan_in = static_cast<double>(p.layer_in(l));
      const double r = l == 0 ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / omega0;
      for (double& w : p.weight(l)) w = rng.uniform(-r, r);
      for (double& b : p.bias(l)) b = rng.uniform(-r, r);
    }
    return p;
  }

  int input_dim() const { return input_dim_; }
  int hidden_layers() const { return hidden_layers_; }
  int hidden_width() const { return hidden_width_; }
  double omega0() const { return omega0_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  int layer_count() const { return hidden_layers_ + 1; }
  int layer_in(int l) const { return l == 0 ? input_dim_ : hidden_width_; }
  int layer_out(int l) const { return l == hidden_layers_ ? 1 : hidden_width_; }
  double layer_omega(int l) const { return l == 0 ? omega0_ : 1.0; }

  std::span<double> weight(int l) {
    return {data_.data() + w_off_[static_cast<std::size_t>(l)],
            static_cast<std::size_t>(layer_out(l)) * static_cast<std::size_t>(layer_in(l))};
  }
  std::span<const double> weight(int l) const {
    return {data_.data() + w_off_[static_cast<std::size_t>(l)],
            static_cast<std::size_t>(layer_out(l)) * static_cast<std::size_t>(layer_in(l))};
  }
  std::span<double> bias(int l) {
    return {data_.data() + b_off_[static_cast<std::size_t>(l)], static_cast<std::size_t>(layer_out(l))};
  }
  std::span<const double> bias(int l) const {
    return {data_.data() + b_off_[static_cast<std::size_t>(l)], static_cast<std::size_t>(layer_out(l))};
  }

  std::size_t weight_offset(int l) const { return w_off_[static_cast<std::size_t>(l)]; }
  std::size_t bias_offset(int l) const { return b_off_[static_cast<std::size_t>(l)]; }
  std::size_t param_count() const { return data_.size(); }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  bool same_shape(const NetworkParams& o) const {
    return input_dim_ == o.input_dim_ && hidden_layers_ == o.hidden_layers_ &&
           hidden_width_ == o.hidden_width_;
  }

 private:
  int input_dim_, hidden_layers_, hidden_width_;
  double omega0_;
  Activation activation_;
  std::uint64_t seed_ = 0;
  std::vector<double> data_;
  std::vector<std::size_t> w_off_, b_off_;
};

/// Per-dimension affine map taking physical states into [-1, 1] and physical
/// time t into normalized time-to-go (T - t) / T in [0, 1].
struct NormalizationMap {
  std::vector<double> center, halfwidth;
  double horizon = 1.0;

  static NormalizationMap for_system(const System& sys) {
    NormalizationMap m;
    for (const Interval& iv : sys.domain()) {
      m.center.push_back(iv.mid());
      m.halfwidth.push_back(0.5 * iv.width());
    }
    m.horizon = sys.horizon();
    m.validate();
    return m;
  }

  void validate() const {
    if (center.size() != halfwidth.size())
      throw std::invalid_argument("normalization map: center/halfwidth size mismatch");
    for (double s : halfwidth)
      if (!(s > 0.0)) throw std::invalid_argument("normalization map: halfwidth must be positive");
    if (!(horizon > 0.0)) throw std::invalid_argument("normalization map: horizon must be positive");
  }

  int state_dim() const { return static_cast<int>(center.size()); }

  void normalize_state(std::span<const double> x, std::span<double> xhat) const {
    for (std::size_t i = 0; i < center.size(); ++i) xhat[i] = (x[i] - center[i]) / halfwidth[i];
  }
  void denormalize_state(std::span<const double> xhat, std::span<double> x) const {
    for (std::size_t i = 0; i < center.size(); ++i) x[i] = center[i] + halfwidth[i] * xhat[i];
  }
  double normalize_time(double t) const { return (horizon - t) / horizon; }
  double denormalize_time(double that) const { return horizon * (1.0 - that); }
};

// ---------------------------------------------------------------------------
// Per-sample evaluation (used by tests, rollouts, and grid comparisons).
// ---------------------------------------------------------------------------

inline double forward(const NetworkParams& p, std::span<const double> input) {
  if (input.size() != static_cast<std::size_t>(p.input_dim()))
    throw std::invalid_argument("network input has wrong dimension");
  std::vector<double> a(input.begin(), input.end()), next;
  for (int l = 0; l < p.hidden_layers(); ++l) {
    const int in = p.layer_in(l), out = p.layer_out(l);
    const double omega = p.layer_omega(l);
    std::span<const double> w = p.weight(l), b = p.bias(l);
    next.assign(static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      double s = b[static_cast<std::size_t>(o)];
      const double* row = w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int k = 0; k < in; ++k) s += row[k] * a[static_cast<std::size_t>(k)];
      double av, d1, d2;
      detail::activation_eval(p.activation(), omega * s, av, d1, d2);
      next[static_cast<std::size_t>(o)] = av;
    }
    a.swap(next);
  }
  const int l = p.hidden_layers();
  std::span<const double> w = p.weight(l), b = p.bias(l);
  double v = b[0];
  for (int k = 0; k < p.layer_in(l); ++k) v += w[static_cast<std::size_t>(k)] * a[static_cast<std::size_t>(k)];
  if (!std::isfinite(v)) throw NumericalFault("network output is not finite");
  return v;
}

/// Value and exact derivatives with respect to every input coordinate,
/// computed by carrying per-input derivative channels through the layers.
inline double value_and_input_grads(const NetworkParams& p, std::span<const double> input,
                                    std::span<double> dinput) {
  const int m = p.input_dim();
  if (input.size() != static_cast<std::size_t>(m) || dinput.size() != static_cast<std::size_t>(m))
    throw std::invalid_argument("network input has wrong dimension");
  const int width = p.hidden_width();
  std::vector<double> a(input.begin(), input.end());
  std::vector<double> g(static_cast<std::size_t>(m) * static_cast<std::size_t>(m), 0.0);
  for (int j = 0; j < m; ++j) g[static_cast<std::size_t>(j) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] = 1.0;
  std::vector<double> na, ng;
  for (int l = 0; l < p.hidden_layers(); ++l) {
    const int in = p.layer_in(l), out = p.layer_out(l);
    const double omega = p.layer_omega(l);
    std::span<const double> w = p.weight(l), b = p.bias(l);
    na.assign(static_cast<std::size_t>(out), 0.0);
    ng.assign(static_cast<std::size_t>(m) * static_cast<std::size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
      const double* row = w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      double s = b[static_cast<std::size_t>(o)];
      for (int k = 0; k < in; ++k) s += row[k] * a[static_cast<std::size_t>(k)];
      double av, d1, d2;
      detail::activation_eval(p.activation(), omega * s, av, d1, d2);
      na[static_cast<std::size_t>(o)] = av;
      const double dscale = omega * d1;
      for (int j = 0; j < m; ++j) {
        const double* gj = g.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(in);
        double ps = 0.0;
        for (int k = 0; k < in; ++k) ps += row[k] * gj[k];
        ng[static_cast<std::size_t>(j) * static_cast<std::size_t>(out) + static_cast<std::size_t>(o)] = dscale * ps;
      }
    }
    a.swap(na);
    g.swap(ng);
  }
  const int l = p.hidden_layers();
  std::span<const double> w = p.weight(l), b = p.bias(l);
  double v = b[0];
  for (int k = 0; k < width; ++k) v += w[static_cast<std::size_t>(k)] * a[static_cast<std::size_t>(k)];
  for (int j = 0; j < m; ++j) {
    const double* gj = g.data() + static_cast<std::size_t>(j) * static_cast<std::size_t>(width);
    double s = 0.0;
    for (int k = 0; k < width; ++k) s += w[static_cast<std::size_t>(k)] * gj[k];
    dinput[static_cast<std::size_t>(j)] = s;
  }
  return v;
}

struct PhysicalGrads {
  double value = 0.0;
  double dt = 0.0;               // D_t V in physical time
  std::vector<double> dx;        // spatial gradient in physical coordinates
};

/// Chain rule bridging normalized network coordinates to physical ones:
/// dV/dx_i = (dV/dxhat_i) / halfwidth_i and D_t V = -(1/T) dV/dthat.
inline PhysicalGrads physical_gradients(const NetworkParams& p, const NormalizationMap& map,
                                        std::span<const double> x, double t) {
  const int n = map.state_dim();
  if (p.input_dim() != n + 1)
    throw std::invalid_argument("network input dimension does not match normalization map");
  std::vector<double> input(static_cast<std::size_t>(n) + 1);
  map.normalize_state(x, std::span<double>(input.data(), static_cast<std::size_t>(n)));
  input[static_cast<std::size_t>(n)] = map.normalize_time(t);
  std::vector<double> dinput(static_cast<std::size_t>(n) + 1);
  PhysicalGrads out;
  out.value = value_and_input_grads(p, input, dinput);
  out.dx.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.dx[static_cast<std::size_t>(i)] = dinput[static_cast<std::size_t>(i)] / map.halfwidth[static_cast<std::size_t>(i)];
  out.dt = -dinput[static_cast<std::size_t>(n)] / map.horizon;
  return out;
}

// ---------------------------------------------------------------------------
// Batched second-order engine: parameter gradients of losses that contain
// first-order input gradients of the network.
// ---------------------------------------------------------------------------

/// Per-sample residual contract. The callback receives the network value and
/// its normalized-coordinate gradients and fills in the per-sample loss, its
/// partial derivatives with respect to those quantities, and the h1/h2
/// diagnostics. `worker` identifies the calling worker for scratch lookup.
struct ResidualTerms {
  double loss = 0.0;
  double d_value = 0.0;
  double d_dtime = 0.0;  // partial w.r.t. dV/dthat
  double h1 = 0.0, h2 = 0.0;
};

using ResidualFn =
    std::function<void(int worker, std::size_t sample, double value, double dtime,
                       std::span<const double> dspace, ResidualTerms& terms, std::span<double> d_dspace)>;

struct BatchResult {
  double loss = 0.0;             // mean over samples
  std::vector<double> grad;      // d(mean loss)/d(theta), flat layout
  double h1_mean = 0.0, h2_mean = 0.0;
};

namespace detail {

constexpr int kBlock = 32;

// Hot kernels, kept as standalone functions so the vectorizer sees clean
// affine accesses.

/// out[b][:] += in_rows[b][k] * wt[k][:] for every row b. 4x4 register tiles
/// reuse each streamed wt panel across four output rows.
inline void gemm_axpy_rows(double* __restrict out, const double* __restrict in_rows,
                           const double* __restrict wt, int B, int in, int W) {
  int b = 0;
  for (; b + 4 <= B; b += 4) {
    double* __restrict o0 = out + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
    double* __restrict o1 = o0 + W;
    double* __restrict o2 = o1 + W;
    double* __restrict o3 = o2 + W;
    const double* a0 = in_rows + static_cast<std::size_t>(b) * static_cast<std::size_t>(in);
    const double* a1 = a0 + in;
    const double* a2 = a1 + in;
    const double* a3 = a2 + in;
    int k = 0;
    for (; k + 4 <= in; k += 4) {
      const double* __restrict w0 = wt + static_cast<std::size_t>(k) * static_cast<std::size_t>(W);
      const double* __restrict w1 = w0 + W;
      const double* __restrict w2 = w1 + W;
      const double* __restrict w3 = w2 + W;
      const double a00 = a0[k], a01 = a0[k + 1], a02 = a0[k + 2], a03 = a0[k + 3];
      const double a10 = a1[k], a11 = a1[k + 1], a12 = a1[k + 2], a13 = a1[k + 3];
      const double a20 = a2[k], a21 = a2[k + 1], a22 = a2[k + 2], a23 = a2[k + 3];
      const double a30 = a3[k], a31 = a3[k + 1], a32 = a3[k + 2], a33 = a3[k + 3];
      for (int o = 0; o < W; ++o) {
        const double wv0 = w0[o], wv1 = w1[o], wv2 = w2[o], wv3 = w3[o];
        o0[o] += a00 * wv0 + a01 * wv1 + a02 * wv2 + a03 * wv3;
        o1[o] += a10 * wv0 + a11 * wv1 + a12 * wv2 + a13 * wv3;
        o2[o] += a20 * wv0 + a21 * wv1 + a22 * wv2 + a23 * wv3;
        o3[o] += a30 * wv0 + a31 * wv1 + a32 * wv2 + a33 * wv3;
      }
    }
    for (; k < in; ++k) {
      const double* __restrict wrow = wt + static_cast<std::size_t>(k) * static_cast<std::size_t>(W);
      const double c0 = a0[k], c1 = a1[k], c2 = a2[k], c3 = a3[k];
      for (int o = 0; o < W; ++o) {
        const double wv = wrow[o];
        o0[o] += c0 * wv;
        o1[o] += c1 * wv;
        o2[o] += c2 * wv;
        o3[o] += c3 * wv;
      }
    }
  }
  for (; b < B; ++b) {
    double* __restrict orow = out + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
    const double* arow = in_rows + static_cast<std::size_t>(b) * static_cast<std::size_t>(in);
    for (int k = 0; k < in; ++k) {
      const double av = arow[k];
      const double* __restrict wrow = wt + static_cast<std::size_t>(k) * static_cast<std::size_t>(W);
      for (int o = 0; o < W; ++o) orow[o] += av * wrow[o];
    }
  }
}

/// accum[o][:] += sum_b coef[b][o] * rows[b][:]  (rank-B update of a weight
/// gradient, walked o-outer so each gradient row stays hot).
inline void accum_weight_grad(double* __restrict wg, const double* __restrict coef,
                              const double* __restrict rows, int B, int in, int W) {
  for (int o = 0; o < W; ++o) {
    double* __restrict wrow = wg + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
    int b = 0;
    for (; b + 4 <= B; b += 4) {
      const std::size_t base = static_cast<std::size_t>(b) * static_cast<std::size_t>(W) + static_cast<std::size_t>(o);
      const double c0 = coef[base];
      const double c1 = coef[base + static_cast<std::size_t>(W)];
      const double c2 = coef[base + 2 * static_cast<std::size_t>(W)];
      const double c3 = coef[base + 3 * static_cast<std::size_t>(W)];
      const double* __restrict r0 = rows + static_cast<std::size_t>(b) * static_cast<std::size_t>(in);
      const double* __restrict r1 = r0 + in;
      const double* __restrict r2 = r1 + in;
      const double* __restrict r3 = r2 + in;
      for (int k = 0; k < in; ++k) wrow[k] += c0 * r0[k] + c1 * r1[k] + c2 * r2[k] + c3 * r3[k];
    }
    for (; b < B; ++b) {
      const double c = coef[static_cast<std::size_t>(b) * static_cast<std::size_t>(W) + static_cast<std::size_t>(o)];
      const double* __restrict arow = rows + static_cast<std::size_t>(b) * static_cast<std::size_t>(in);
      for (int k = 0; k < in; ++k) wrow[k] += c * arow[k];
    }
  }
}

/// out[b][:] += sum_o coef[b][o] * w[o][:]  (adjoint propagation through W).
inline void backprop_rows(double* __restrict out, const double* __restrict coef,
                          const double* __restrict w, int B, int in, int W) {
  int b = 0;
  for (; b + 4 <= B; b += 4) {
    double* __restrict o0 = out + static_cast<std::size_t>(b) * static_cast<std::size_t>(in);
    double* __restrict o1 = o0 + in;
    double* __restrict o2 = o1 + in;
    double* __restrict o3 = o2 + in;
    const double* c0r = coef + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
    const double* c1r = c0r + W;
    const double* c2r = c1r + W;
    const double* c3r = c2r + W;
    int o = 0;
    for (; o + 4 <= W; o += 4) {
      const double* __restrict w0 = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      const double* __restrict w1 = w0 + in;
      const double* __restrict w2 = w1 + in;
      const double* __restrict w3 = w2 + in;
      const double c00 = c0r[o], c01 = c0r[o + 1], c02 = c0r[o + 2], c03 = c0r[o + 3];
      const double c10 = c1r[o], c11 = c1r[o + 1], c12 = c1r[o + 2], c13 = c1r[o + 3];
      const double c20 = c2r[o], c21 = c2r[o + 1], c22 = c2r[o + 2], c23 = c2r[o + 3];
      const double c30 = c3r[o], c31 = c3r[o + 1], c32 = c3r[o + 2], c33 = c3r[o + 3];
      for (int k = 0; k < in; ++k) {
        const double wv0 = w0[k], wv1 = w1[k], wv2 = w2[k], wv3 = w3[k];
        o0[k] += c00 * wv0 + c01 * wv1 + c02 * wv2 + c03 * wv3;
        o1[k] += c10 * wv0 + c11 * wv1 + c12 * wv2 + c13 * wv3;
        o2[k] += c20 * wv0 + c21 * wv1 + c22 * wv2 + c23 * wv3;
        o3[k] += c30 * wv0 + c31 * wv1 + c32 * wv2 + c33 * wv3;
      }
    }
    for (; o < W; ++o) {
      const double* __restrict wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      const double cc0 = c0r[o], cc1 = c1r[o], cc2 = c2r[o], cc3 = c3r[o];
      for (int k = 0; k < in; ++k) {
        const double wv = wrow[k];
        o0[k] += cc0 * wv;
        o1[k] += cc1 * wv;
        o2[k] += cc2 * wv;
        o3[k] += cc3 * wv;
      }
    }
  }
  for (; b < B; ++b) {
    double* __restrict orow = out + static_cast<std::size_t>(b) * static_cast<std::size_t>(in);
    const double* crow = coef + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
    for (int o = 0; o < W; ++o) {
      const double c = crow[o];
      const double* __restrict wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      for (int k = 0; k < in; ++k) orow[k] += c * wrow[k];
    }
  }
}

inline void mul_rows(double* __restrict out, const double* __restrict a,
                     const double* __restrict b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

inline void fma_rows(double* __restrict out, const double* __restrict a,
                     const double* __restrict b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

/// Four simultaneous dot products of `row` against w rows 0..3 of wt-layout
/// data; used for the scalar output head.
inline void dot4(const double* __restrict a, const double* __restrict b0,
                 const double* __restrict b1, const double* __restrict b2,
                 const double* __restrict b3, int n, double* __restrict out) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  for (int k = 0; k < n; ++k) {
    const double av = a[k];
    s0 += av * b0[k];
    s1 += av * b1[k];
    s2 += av * b2[k];
    s3 += av * b3[k];
  }
  out[0] = s0;
  out[1] = s1;
  out[2] = s2;
  out[3] = s3;
}

struct EngineBuffers {
  // Stage arrays for up to kBlock samples; layer l consumes A[l] and fills
  // A[l+1]. Channel arrays are [channel][sample][unit].
  std::vector<std::vector<double>> A, D, E, P, G;
  std::vector<double> value, vbar;
  std::vector<double> gch, gbar;    // [channel][sample]
  std::vector<double> aA, aG, aA2, aG2, sbar, pbar;
  std::vector<double> dspace, d_dspace;

  void size_for(const NetworkParams& p) {
    const std::size_t B = kBlock;
    const std::size_t W = static_cast<std::size_t>(p.hidden_width());
    const std::size_t m = static_cast<std::size_t>(p.input_dim());
    const int H = p.hidden_layers();
    A.assign(static_cast<std::size_t>(H) + 1, {});
    A[0].assign(B * m, 0.0);
    for (int l = 1; l <= H; ++l) A[static_cast<std::size_t>(l)].assign(B * W, 0.0);
    D.assign(static_cast<std::size_t>(H), std::vector<double>(B * W, 0.0));
    E.assign(static_cast<std::size_t>(H), std::vector<double>(B * W, 0.0));
    P.assign(static_cast<std::size_t>(H), std::vector<double>(m * B * W, 0.0));
    G.assign(static_cast<std::size_t>(H), std::vector<double>(m * B * W, 0.0));
    value.assign(B, 0.0);
    vbar.assign(B, 0.0);
    gch.assign(m * B, 0.0);
    gbar.assign(m * B, 0.0);
    aA.assign(B * W, 0.0);
    aG.assign(m * B * W, 0.0);
    aA2.assign(B * W, 0.0);
    aG2.assign(m * B * W, 0.0);
    sbar.assign(B * W, 0.0);
    pbar.assign(m * B * W, 0.0);
    dspace.assign(m, 0.0);
    d_dspace.assign(m, 0.0);
  }
};

}  // namespace detail

/// Mean loss over the batch and its gradient with respect to every parameter.
/// `inputs` is row-major [count][input_dim] in normalized coordinates with the
/// time channel last. Samples are processed in fixed-size blocks over a
/// deterministic worker partition; per-worker partial sums are combined in
/// worker order, so results are reproducible for a fixed worker count (and may
/// differ below ~1e-12 relative across worker counts). A non-finite per-sample
/// loss raises NumericalFault carrying the sample index.
inline BatchResult loss_param_grads(const NetworkParams& p, std::span<const double> inputs,
                                    std::size_t count, const ResidualFn& residual,
                                    ThreadPool* pool = nullptr) {
  const int m = p.input_dim();
  const int W = p.hidden_width();
  const int H = p.hidden_layers();
  if (inputs.size() != count * static_cast<std::size_t>(m))
    throw std::invalid_argument("batch input size does not match sample count");
  if (count == 0) throw std::invalid_argument("empty batch");

  // Transposed weights [in][out] for unit-contiguous forward loops.
  std::vector<std::vector<double>> wt(static_cast<std::size_t>(H) + 1);
  for (int l = 0; l <= H; ++l) {
    const int in = p.layer_in(l), out = p.layer_out(l);
    wt[static_cast<std::size_t>(l)].resize(static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
    std::span<const double> w = p.weight(l);
    for (int o = 0; o < out; ++o)
      for (int k = 0; k < in; ++k)
        wt[static_cast<std::size_t>(l)][static_cast<std::size_t>(k) * static_cast<std::size_t>(out) + static_cast<std::size_t>(o)] =
            w[static_cast<std::size_t>(o) * static_cast<std::size_t>(in) + static_cast<std::size_t>(k)];
  }

  const int workers = pool ? pool->worker_count() : 1;
  const std::size_t nblocks = (count + detail::kBlock - 1) / detail::kBlock;
  std::vector<std::vector<double>> wgrad(static_cast<std::size_t>(workers));
  std::vector<double> wloss(static_cast<std::size_t>(workers), 0.0),
      wh1(static_cast<std::size_t>(workers), 0.0), wh2(static_cast<std::size_t>(workers), 0.0);
  std::vector<std::ptrdiff_t> wfault(static_cast<std::size_t>(workers), -1);

  auto run = [&](int wk, std::size_t bstart, std::size_t bend) {
    detail::EngineBuffers buf;
    buf.size_for(p);
    std::vector<double>& grad = wgrad[static_cast<std::size_t>(wk)];
    grad.assign(p.param_count(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(count);

    for (std::size_t blk = bstart; blk < bend; ++blk) {
      const std::size_t s0 = blk * detail::kBlock;
      const int B = static_cast<int>(std::min<std::size_t>(detail::kBlock, count - s0));

      // ---- forward ----
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < m; ++j)
          buf.A[0][static_cast<std::size_t>(b) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] =
              inputs[(s0 + static_cast<std::size_t>(b)) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];

      for (int l = 0; l < H; ++l) {
        const int in = p.layer_in(l);
        const double omega = p.layer_omega(l);
        const double omega2 = omega * omega;
        std::span<const double> bias = p.bias(l);
        const double* wtl = wt[static_cast<std::size_t>(l)].data();
        const double* ain = buf.A[static_cast<std::size_t>(l)].data();
        double* aout = buf.A[static_cast<std::size_t>(l) + 1].data();
        double* dd = buf.D[static_cast<std::size_t>(l)].data();
        double* ee = buf.E[static_cast<std::size_t>(l)].data();
        double* pp = buf.P[static_cast<std::size_t>(l)].data();
        double* gg = buf.G[static_cast<std::size_t>(l)].data();
        const std::size_t bw = static_cast<std::size_t>(detail::kBlock) * static_cast<std::size_t>(W);

        // pre-activations into aout as scratch
        for (int b = 0; b < B; ++b) {
          double* __restrict srow = aout + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
          for (int o = 0; o < W; ++o) srow[o] = bias[static_cast<std::size_t>(o)];
        }
        detail::gemm_axpy_rows(aout, ain, wtl, B, in, W);
        // channels: P = G_in * W^T  (layer 0 uses identity channels)
        for (int j = 0; j < m; ++j) {
          double* pj = pp + static_cast<std::size_t>(j) * bw;
          if (l == 0) {
            const double* __restrict wrow = wtl + static_cast<std::size_t>(j) * static_cast<std::size_t>(W);
            for (int b = 0; b < B; ++b) {
              double* __restrict prow = pj + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
              for (int o = 0; o < W; ++o) prow[o] = wrow[o];
            }
          } else {
            const double* gin = buf.G[static_cast<std::size_t>(l) - 1].data() + static_cast<std::size_t>(j) * bw;
            std::fill(pj, pj + static_cast<std::size_t>(B) * static_cast<std::size_t>(W), 0.0);
            detail::gemm_axpy_rows(pj, gin, wtl, B, in, W);
          }
        }
        // nonlinearity and channel scaling
        const std::size_t rows = static_cast<std::size_t>(B) * static_cast<std::size_t>(W);
        for (std::size_t i = 0; i < rows; ++i) {
          double av, d1, d2;
          detail::activation_eval(p.activation(), omega * aout[i], av, d1, d2);
          aout[i] = av;
          dd[i] = omega * d1;
          ee[i] = omega2 * d2;
        }
        for (int j = 0; j < m; ++j)
          detail::mul_rows(gg + static_cast<std::size_t>(j) * bw, dd, pp + static_cast<std::size_t>(j) * bw, rows);
      }

      // output layer
      {
        std::span<const double> wo = p.weight(H);
        const double bo = p.bias(H)[0];
        const double* alast = buf.A[static_cast<std::size_t>(H)].data();
        const double* glast = buf.G[static_cast<std::size_t>(H) - 1].data();
        const std::size_t bw = static_cast<std::size_t>(detail::kBlock) * static_cast<std::size_t>(W);
        double dots[4];
        for (int b = 0; b < B; ++b) {
          const std::size_t row = static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
          const double* arow = alast + row;
          int j = 0;
          if (m >= 3) {
            // value plus the first three channels share one fused pass
            detail::dot4(wo.data(), arow, glast + row, glast + bw + row, glast + 2 * bw + row, W, dots);
            buf.value[static_cast<std::size_t>(b)] = bo + dots[0];
            for (j = 0; j < 3; ++j)
              buf.gch[static_cast<std::size_t>(j) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)] =
                  dots[j + 1];
          } else {
            double v = bo;
            for (int k = 0; k < W; ++k) v += wo[static_cast<std::size_t>(k)] * arow[k];
            buf.value[static_cast<std::size_t>(b)] = v;
          }
          for (; j < m; ++j) {
            const double* grow = glast + static_cast<std::size_t>(j) * bw + row;
            double s = 0.0;
            for (int k = 0; k < W; ++k) s += wo[static_cast<std::size_t>(k)] * grow[k];
            buf.gch[static_cast<std::size_t>(j) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)] = s;
          }
        }
      }

      // ---- residuals ----
      for (int b = 0; b < B; ++b) {
        const std::size_t sample = s0 + static_cast<std::size_t>(b);
        for (int j = 0; j + 1 < m; ++j)
          buf.dspace[static_cast<std::size_t>(j)] =
              buf.gch[static_cast<std::size_t>(j) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)];
        const double dtime = buf.gch[static_cast<std::size_t>(m - 1) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)];
        ResidualTerms terms;
        std::fill(buf.d_dspace.begin(), buf.d_dspace.end(), 0.0);
        residual(wk, sample, buf.value[static_cast<std::size_t>(b)], dtime,
                 std::span<const double>(buf.dspace.data(), static_cast<std::size_t>(m - 1)), terms,
                 std::span<double>(buf.d_dspace.data(), static_cast<std::size_t>(m - 1)));
        if (!std::isfinite(terms.loss)) {
          wfault[static_cast<std::size_t>(wk)] = static_cast<std::ptrdiff_t>(sample);
          return;
        }
        wloss[static_cast<std::size_t>(wk)] += terms.loss;
        wh1[static_cast<std::size_t>(wk)] += terms.h1;
        wh2[static_cast<std::size_t>(wk)] += terms.h2;
        buf.vbar[static_cast<std::size_t>(b)] = terms.d_value * inv_n;
        for (int j = 0; j + 1 < m; ++j)
          buf.gbar[static_cast<std::size_t>(j) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)] =
              buf.d_dspace[static_cast<std::size_t>(j)] * inv_n;
        buf.gbar[static_cast<std::size_t>(m - 1) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)] =
            terms.d_dtime * inv_n;
      }

      // ---- backward ----
      const std::size_t bw = static_cast<std::size_t>(detail::kBlock) * static_cast<std::size_t>(W);
      {
        std::span<const double> wo = p.weight(H);
        double* wog = grad.data() + p.weight_offset(H);
        double* bog = grad.data() + p.bias_offset(H);
        const double* alast = buf.A[static_cast<std::size_t>(H)].data();
        const double* glast = buf.G[static_cast<std::size_t>(H) - 1].data();
        for (int b = 0; b < B; ++b) {
          const double vb = buf.vbar[static_cast<std::size_t>(b)];
          const double* arow = alast + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
          double* aabar = buf.aA.data() + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
          bog[0] += vb;
          for (int k = 0; k < W; ++k) {
            wog[k] += vb * arow[k];
            aabar[k] = vb * wo[static_cast<std::size_t>(k)];
          }
          for (int j = 0; j < m; ++j) {
            const double gb = buf.gbar[static_cast<std::size_t>(j) * static_cast<std::size_t>(detail::kBlock) + static_cast<std::size_t>(b)];
            const double* grow = glast + static_cast<std::size_t>(j) * bw + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
            double* agbar = buf.aG.data() + static_cast<std::size_t>(j) * bw + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
            for (int k = 0; k < W; ++k) {
              wog[k] += gb * grow[k];
              agbar[k] = gb * wo[static_cast<std::size_t>(k)];
            }
          }
        }
      }

      for (int l = H - 1; l >= 0; --l) {
        const int in = p.layer_in(l);
        std::span<const double> w = p.weight(l);
        double* wg = grad.data() + p.weight_offset(l);
        double* bg = grad.data() + p.bias_offset(l);
        const double* dd = buf.D[static_cast<std::size_t>(l)].data();
        const double* ee = buf.E[static_cast<std::size_t>(l)].data();
        const double* pp = buf.P[static_cast<std::size_t>(l)].data();
        const double* ain = buf.A[static_cast<std::size_t>(l)].data();
        const std::size_t rows = static_cast<std::size_t>(B) * static_cast<std::size_t>(W);

        // s -> u = omega*s -> a = sigma(u), D = omega*sigma'(u):
        // da/ds = omega*sigma'(u) = dd, dD/ds = omega^2*sigma''(u) = ee.
        {
          double* __restrict sb = buf.sbar.data();
          std::fill(sb, sb + rows, 0.0);
          for (int j = 0; j < m; ++j)
            detail::fma_rows(sb, buf.aG.data() + static_cast<std::size_t>(j) * bw, pp + static_cast<std::size_t>(j) * bw, rows);
          const double* __restrict aabar = buf.aA.data();
          for (std::size_t i = 0; i < rows; ++i) sb[i] = aabar[i] * dd[i] + sb[i] * ee[i];
        }

        // bias and weight gradients from the activation path
        for (int b = 0; b < B; ++b) {
          const double* __restrict sb = buf.sbar.data() + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
          for (int o = 0; o < W; ++o) bg[o] += sb[o];
        }
        detail::accum_weight_grad(wg, buf.sbar.data(), ain, B, in, W);

        // channel path: pbar_j = D .* aG_j
        for (int j = 0; j < m; ++j) {
          double* pbj = buf.pbar.data() + static_cast<std::size_t>(j) * bw;
          detail::mul_rows(pbj, dd, buf.aG.data() + static_cast<std::size_t>(j) * bw, rows);
          if (l == 0) {
            // identity input channels: column j of the first weight gradient
            for (int b = 0; b < B; ++b) {
              const double* pb = pbj + static_cast<std::size_t>(b) * static_cast<std::size_t>(W);
              for (int o = 0; o < W; ++o)
                wg[static_cast<std::size_t>(o) * static_cast<std::size_t>(in) + static_cast<std::size_t>(j)] += pb[o];
            }
          } else {
            detail::accum_weight_grad(wg, pbj, buf.G[static_cast<std::size_t>(l) - 1].data() + static_cast<std::size_t>(j) * bw,
                                      B, in, W);
          }
        }

        if (l > 0) {
          const std::size_t prev_rows = static_cast<std::size_t>(B) * static_cast<std::size_t>(in);
          std::fill(buf.aA2.begin(), buf.aA2.begin() + static_cast<std::ptrdiff_t>(prev_rows), 0.0);
          detail::backprop_rows(buf.aA2.data(), buf.sbar.data(), w.data(), B, in, W);
          for (int j = 0; j < m; ++j) {
            double* agprev = buf.aG2.data() + static_cast<std::size_t>(j) * bw;
            std::fill(agprev, agprev + prev_rows, 0.0);
            detail::backprop_rows(agprev, buf.pbar.data() + static_cast<std::size_t>(j) * bw, w.data(), B, in, W);
          }
          buf.aA.swap(buf.aA2);
          buf.aG.swap(buf.aG2);
        }
      }
    }
  };

  if (pool)
    pool->parallel_ranges(nblocks, run);
  else
    run(0, 0, nblocks);

  for (int w = 0; w < workers; ++w)
    if (wfault[static_cast<std::size_t>(w)] >= 0)
      throw NumericalFault("non-finite loss at sample " + std::to_string(wfault[static_cast<std::size_t>(w)]),
                           wfault[static_cast<std::size_t>(w)]);

  BatchResult out;
  out.grad.assign(p.param_count(), 0.0);
  double loss = 0.0, h1 = 0.0, h2 = 0.0;
  for (int w = 0; w < workers; ++w) {
    if (wgrad[static_cast<std::size_t>(w)].empty()) continue;
    loss += wloss[static_cast<std::size_t>(w)];
    h1 += wh1[static_cast<std::size_t>(w)];
    h2 += wh2[static_cast<std::size_t>(w)];
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += wgrad[static_cast<std::size_t>(w)][i];
  }
  const double inv_n = 1.0 / static_cast<double>(count);
  out.loss = loss * inv_n;
  out.h1_mean = h1 * inv_n;
  out.h2_mean = h2 * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON metadata header followed by the flat little-endian
// parameter array in layer order. Round-trips are bit-exact.
// ---------------------------------------------------------------------------

struct Checkpoint {
  NetworkParams params;
  NormalizationMap map;
  std::string system_name;
  std::uint64_t iteration = 0;
};

inline void save_checkpoint(const std::filesystem::path& path, const NetworkParams& params,
                            const NormalizationMap& map, const std::string& system_name,
                            std::uint64_t iteration) {
  nlohmann::json hdr;
  hdr["format"] = "hjr-checkpoint";
  hdr["version"] = 1;
  hdr["input_dim"] = params.input_dim();
  hdr["hidden_layers"] = params.hidden_layers();
  hdr["hidden_width"] = params.hidden_width();
  hdr["omega0"] = params.omega0();
  hdr["activation"] = to_string(params.activation());
  hdr["seed"] = params.seed();
  hdr["iteration"] = iteration;
  hdr["system"] = system_name;
  hdr["normalization"] = {{"center", map.center}, {"halfwidth", map.halfwidth}, {"horizon", map.horizon}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  ValueGrid::write_blob(out, "HJRCKPT1", hdr.dump(), params.flat());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json hdr = ValueGrid::read_header(in, "HJRCKPT1", path.string());
  NetworkParams params(hdr.at("input_dim"), hdr.at("hidden_layers"), hdr.at("hidden_width"),
                       hdr.at("omega0"), activation_from_string(hdr.at("activation")));
  params.set_seed(hdr.at("seed").get<std::uint64_t>());
  in.read(reinterpret_cast<char*>(params.flat().data()),
          static_cast<std::streamsize>(params.param_count() * sizeof(double)));
  if (!in) throw std::runtime_error(path.string() + ": truncated parameter payload");
  NormalizationMap map;
  map.center = hdr.at("normalization").at("center").get<std::vector<double>>();
  map.halfwidth = hdr.at("normalization").at("halfwidth").get<std::vector<double>>();
  map.horizon = hdr.at("normalization").at("horizon");
  map.validate();
  return Checkpoint{std::move(params), std::move(map), hdr.value("system", std::string()),
                    hdr.at("iteration").get<std::uint64_t>()};
}

}  // namespace hjr
