#pragma once

#include <chrono>
#include <ostream>

#include "hjr/valuenet.hpp"

namespace hjr {

enum class LambdaPolicy { AutoBalance, Fixed };

struct TrainSchedule {
  int batch_size = 65000;
  int pretrain_iters = 10000;
  int curriculum_iters = 100000;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LambdaPolicy lambda_policy = LambdaPolicy::AutoBalance;
  double lambda_fixed = 1.0;
  double terminal_fraction = 0.1;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  int workers = 1;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("schedule: batch_size must be >= 1");
    if (pretrain_iters < 0 || curriculum_iters < 0)
      throw std::invalid_argument("schedule: iteration counts must be non-negative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("schedule: learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw std::invalid_argument("schedule: adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw std::invalid_argument("schedule: adam_eps must be positive");
    if (!(terminal_fraction >= 0.0 && terminal_fraction <= 1.0))
      throw std::invalid_argument("schedule: terminal_fraction must lie in [0, 1]");
    if (checkpoint_every < 1) throw std::invalid_argument("schedule: checkpoint_every must be >= 1");
  }
};

struct NetConfig {
  int hidden_layers = 3;
  int hidden_width = 512;
  double omega0 = 30.0;
  Activation activation = Activation::Sine;
};

enum class Phase { Pretrain, Curriculum };

struct Batch {
  std::vector<double> states;  // physical, row-major [size][state_dim]
  std::vector<double> times;   // physical
  std::vector<std::uint8_t> terminal;
  std::size_t size = 0;
  int state_dim = 0;

  std::span<const double> state(std::size_t i) const {
    return {states.data() + i * static_cast<std::size_t>(state_dim), static_cast<std::size_t>(state_dim)};
  }
};

/// Draws a training batch. States are uniform over the domain box. Pretraining
/// pins every sample at the terminal time; the curriculum phase pins a
/// `terminal_fraction` share and draws the rest uniformly over the trailing
/// time window that grows linearly with k (full horizon at k = K). The
/// terminal flag is true exactly when t equals the horizon.
inline Batch sample_batch(const TrainSchedule& sched, const System& sys, int k, Phase phase) {
  const int K = sched.curriculum_iters;
  if (k < 0 || (phase == Phase::Curriculum && k > K))
    throw std::invalid_argument("sample_batch: iteration index outside phase bounds");
  const std::size_t n = static_cast<std::size_t>(sys.state_dim());
  const std::size_t N = static_cast<std::size_t>(sched.batch_size);
  const double T = sys.horizon();
  Batch b;
  b.size = N;
  b.state_dim = static_cast<int>(n);
  b.states.resize(N * n);
  b.times.resize(N);
  b.terminal.resize(N);
  Rng rng = Rng::derive(sched.seed, phase == Phase::Pretrain ? 1 : 2, static_cast<std::uint64_t>(k));
  const double window = phase == Phase::Pretrain ? 0.0 : (K > 0 ? static_cast<double>(k) / K : 1.0);
  const std::size_t pinned =
      phase == Phase::Pretrain ? N : static_cast<std::size_t>(std::llround(sched.terminal_fraction * static_cast<double>(N)));
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t d = 0; d < n; ++d) {
      const Interval& iv = sys.domain()[d];
      b.states[i * n + d] = rng.uniform(iv.lo, iv.hi);
    }
    double t;
    if (i < pinned) {
      t = T;
    } else {
      const double that = rng.uniform(0.0, window);
      t = T * (1.0 - that);
    }
    b.times[i] = t;
    b.terminal[i] = t == T ? 1 : 0;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Variational-inequality residuals.
// ---------------------------------------------------------------------------

struct ResidualOutput {
  double h1 = 0.0;
  double h2 = 0.0;
};

namespace detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct ResidualWork {
  AffineFlow af;
  std::vector<double> ustar, dstar, fstar, grad_phys;
};

struct ResidualPartials {
  double h1 = 0.0, h2 = 0.0;
  double dh1_dvalue = 0.0;
  double dh2_dvalue = 0.0, dh2_ddt = 0.0;
};

// h1 = |V - l| (against max(l, g) for reach-avoid) on terminal samples;
// h2 = |min(D_t V + H, l - V)|, with reach-avoid wrapping the min in an outer
// max against g - V. Subgradients at ties: the min takes its first branch
// (the PDE), the outer max takes the obstacle branch; sgn(0) = 0 for |.|.
// dh2_dgrad gets sign * f(x, u*, d*) when the PDE branch is active (the
// envelope derivative of the Hamiltonian), zeros otherwise.
inline ResidualPartials residual_core(const System& sys, std::span<const double> x, double t,
                                      bool terminal, double value, double dt_value,
                                      std::span<const double> grad_phys, bool reach_avoid,
                                      ResidualWork& w, std::span<double> dh2_dgrad) {
  (void)t;
  ResidualPartials out;
  const double l = sys.target(x);
  double g = 0.0;
  if (reach_avoid) g = *sys.obstacle(x);
  if (terminal) {
    const double lterm = reach_avoid ? std::max(l, g) : l;
    out.h1 = std::abs(value - lterm);
    out.dh1_dvalue = sgn(value - lterm);
  }
  w.ustar.resize(static_cast<std::size_t>(sys.control_dim()));
  w.dstar.resize(static_cast<std::size_t>(sys.disturbance_dim()));
  w.fstar.resize(static_cast<std::size_t>(sys.state_dim()));
  optimal_inputs(sys, x, grad_phys, w.ustar, w.dstar, w.af);
  sys.flow(x, w.ustar, w.dstar, w.fstar);
  const double ham = dot(grad_phys, w.fstar);
  const double pde = dt_value + ham;
  const double freeze = l - value;
  const bool pde_branch = pde <= freeze;
  const double inner = pde_branch ? pde : freeze;
  bool obstacle_branch = false;
  double r = inner;
  if (reach_avoid) {
    const double obs = g - value;
    obstacle_branch = obs >= inner;
    if (obstacle_branch) r = obs;
  }
  out.h2 = std::abs(r);
  const double s = sgn(r);
  if (!dh2_dgrad.empty())
    for (double& v : dh2_dgrad) v = 0.0;
  if (obstacle_branch) {
    out.dh2_dvalue = -s;
  } else if (pde_branch) {
    out.dh2_ddt = s;
    if (!dh2_dgrad.empty())
      for (std::size_t i = 0; i < w.fstar.size(); ++i) dh2_dgrad[i] = s * w.fstar[i];
  } else {
    out.dh2_dvalue = -s;
  }
  return out;
}

}  // namespace detail

/// Residual terms of the backward-tube inequality at one sample, with
/// gradients already in physical coordinates. A sample is terminal exactly
/// when t equals the horizon.
inline ResidualOutput residual_brt(double value, double dt_value, std::span<const double> grad_x,
                                   const System& sys, std::span<const double> x, double t) {
  detail::ResidualWork w;
  auto p = detail::residual_core(sys, x, t, t == sys.horizon(), value, dt_value, grad_x, false, w, {});
  return {p.h1, p.h2};
}

/// Reach-avoid variant; requires a system with an obstacle function.
inline ResidualOutput residual_brat(double value, double dt_value, std::span<const double> grad_x,
                                    const System& sys, std::span<const double> x, double t) {
  if (!sys.has_obstacle())
    throw std::invalid_argument(sys.name() + ": reach-avoid residual needs an obstacle function");
  detail::ResidualWork w;
  auto p = detail::residual_core(sys, x, t, t == sys.horizon(), value, dt_value, grad_x, true, w, {});
  return {p.h1, p.h2};
}

/// Loss-balance weight from the first curriculum batch:
/// lambda = mean(h1) / (mean(h2) + 1e-12), clamped to [1e-2, 1e4]. An all-zero
/// h2 batch pins lambda at the upper clamp and reports a warning.
inline double auto_lambda(double h1_mean, double h2_mean, std::string* warning = nullptr) {
  constexpr double kLo = 1e-2, kHi = 1e4;
  if (h2_mean == 0.0) {
    if (warning) *warning = "auto lambda: h2 vanished on the balance batch, using upper clamp";
    return kHi;
  }
  return std::clamp(h1_mean / (h2_mean + 1e-12), kLo, kHi);
}

inline double auto_lambda(std::span<const double> h1_terms, std::span<const double> h2_terms,
                          std::string* warning = nullptr) {
  double s1 = 0.0, s2 = 0.0;
  for (double v : h1_terms) s1 += v;
  for (double v : h2_terms) s2 += v;
  const double n1 = h1_terms.empty() ? 1.0 : static_cast<double>(h1_terms.size());
  const double n2 = h2_terms.empty() ? 1.0 : static_cast<double>(h2_terms.size());
  return auto_lambda(s1 / n1, s2 / n2, warning);
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Standard Adam update with bias correction. A non-finite gradient entry
/// raises NumericalFault carrying the parameter index.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalFault("non-finite gradient at parameter " + std::to_string(i),
                           static_cast<std::ptrdiff_t>(i));
  st.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct LossLogRow {
  std::uint64_t iteration = 0;
  double h1 = 0.0, h2 = 0.0, lambda = 0.0, wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(std::uint64_t iteration, const NetworkParams&, const NormalizationMap&)> on_checkpoint;
  std::function<void(std::uint64_t iteration, const NetworkParams&, const NormalizationMap&)> on_diverged;
  std::ostream* info = nullptr;
};

struct TrainResult {
  NetworkParams params;
  NormalizationMap map;
  std::vector<LossLogRow> log;
  double lambda = 0.0;
};

/// Self-supervised training: pretraining fits the terminal condition with
/// lambda = 0, then curriculum training sweeps the sampled time window
/// backward from the horizon while minimizing mean(h1) + lambda * mean(h2).
/// Deterministic for a fixed (seed, schedule, worker count). On divergence
/// (non-finite loss or gradient) the last finite-loss parameters go to
/// `on_diverged` and the fault is rethrown.
inline TrainResult train(const System& sys, const TrainSchedule& sched, const NetConfig& net,
                         ThreadPool* pool = nullptr, const TrainHooks& hooks = {}) {
  sched.validate();
  const int n = sys.state_dim();
  const int m = n + 1;
  const std::size_t N = static_cast<std::size_t>(sched.batch_size);
  const bool reach_avoid = sys.has_obstacle();
  const double T = sys.horizon();

  NormalizationMap map = NormalizationMap::for_system(sys);
  NetworkParams params =
      NetworkParams::init(sched.seed, m, net.hidden_layers, net.hidden_width, net.omega0, net.activation);
  AdamState adam(params.param_count());
  NetworkParams last_good = params;

  const int workers = pool ? pool->worker_count() : 1;
  std::vector<detail::ResidualWork> work(static_cast<std::size_t>(workers));
  for (auto& w : work) w.grad_phys.resize(static_cast<std::size_t>(n));

  Batch batch;
  double lambda = 0.0;
  std::vector<double> inputs(N * static_cast<std::size_t>(m));

  ResidualFn residual = [&](int wk, std::size_t i, double value, double dtime,
                            std::span<const double> dspace, ResidualTerms& terms,
                            std::span<double> d_dspace) {
    detail::ResidualWork& w = work[static_cast<std::size_t>(wk)];
    for (int d = 0; d < n; ++d)
      w.grad_phys[static_cast<std::size_t>(d)] = dspace[static_cast<std::size_t>(d)] / map.halfwidth[static_cast<std::size_t>(d)];
    const double dtv = -dtime / T;
    auto part = detail::residual_core(sys, batch.state(i), batch.times[i], batch.terminal[i] != 0,
                                      value, dtv, w.grad_phys, reach_avoid, w, d_dspace);
    terms.loss = part.h1 + lambda * part.h2;
    terms.h1 = part.h1;
    terms.h2 = part.h2;
    terms.d_value = part.dh1_dvalue + lambda * part.dh2_dvalue;
    terms.d_dtime = lambda * part.dh2_ddt * (-1.0 / T);
    for (int d = 0; d < n; ++d)
      d_dspace[static_cast<std::size_t>(d)] =
          lambda * d_dspace[static_cast<std::size_t>(d)] / map.halfwidth[static_cast<std::size_t>(d)];
  };

  auto fill_inputs = [&]() {
    for (std::size_t i = 0; i < N; ++i) {
      map.normalize_state(batch.state(i),
                          std::span<double>(inputs.data() + i * static_cast<std::size_t>(m), static_cast<std::size_t>(n)));
      inputs[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(n)] = map.normalize_time(batch.times[i]);
    }
  };

  TrainResult result{std::move(params), map, {}, 0.0};
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const std::uint64_t total =
      static_cast<std::uint64_t>(sched.pretrain_iters) + static_cast<std::uint64_t>(sched.curriculum_iters);
  std::uint64_t done = 0, last_emitted = ~0ull;

  auto emit_checkpoint = [&](std::uint64_t iter) {
    if (hooks.on_checkpoint && iter != last_emitted) {
      hooks.on_checkpoint(iter, result.params, map);
      last_emitted = iter;
    }
  };

  auto one_iteration = [&]() {
    fill_inputs();
    BatchResult res = loss_param_grads(result.params, inputs, N, residual, pool);
    last_good = result.params;
    adam_step(result.params.flat(), res.grad, adam, sched.learning_rate, sched.adam_beta1,
              sched.adam_beta2, sched.adam_eps);
    ++done;
    result.log.push_back({done - 1, res.h1_mean, res.h2_mean, lambda, wall()});
    if (done % static_cast<std::uint64_t>(sched.checkpoint_every) == 0) emit_checkpoint(done);
    if (hooks.info && (done % 500 == 0 || done == total))
      (*hooks.info) << "iter " << done << "/" << total << "  h1 " << res.h1_mean << "  h2 "
                    << res.h2_mean << "  lambda " << lambda << "  wall " << wall() << "s\n";
    return res;
  };

  try {
    lambda = 0.0;
    for (int j = 0; j < sched.pretrain_iters; ++j) {
      batch = sample_batch(sched, sys, j, Phase::Pretrain);
      one_iteration();
    }
    for (int j = 0; j < sched.curriculum_iters; ++j) {
      batch = sample_batch(sched, sys, j + 1, Phase::Curriculum);
      if (j == 0) {
        if (sched.lambda_policy == LambdaPolicy::AutoBalance) {
          lambda = 0.0;
          fill_inputs();
          BatchResult probe = loss_param_grads(result.params, inputs, N, residual, pool);
          std::string warning;
          lambda = auto_lambda(probe.h1_mean, probe.h2_mean, &warning);
          if (!warning.empty() && hooks.info) (*hooks.info) << warning << "\n";
        } else {
          lambda = sched.lambda_fixed;
        }
        if (hooks.info) (*hooks.info) << "curriculum lambda = " << lambda << "\n";
      }
      one_iteration();
    }
  } catch (const NumericalFault&) {
    if (hooks.on_diverged) hooks.on_diverged(done, last_good, map);
    throw;
  }
  emit_checkpoint(done);
  result.lambda = lambda;
  return result;
}

}  // namespace hjr
