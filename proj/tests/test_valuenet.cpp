#include <catch2/catch_amalgamated.hpp>

#include "hjr/trainer.hpp"
#include "testutil.hpp"

using namespace hjr;
using Catch::Approx;

TEST_CASE("init is deterministic and respects the stated ranges") {
  auto a = NetworkParams::init(42, 4, 3, 128, 30.0);
  auto b = NetworkParams::init(42, 4, 3, 128, 30.0);
  REQUIRE(a.param_count() == b.param_count());
  for (std::size_t i = 0; i < a.param_count(); ++i) REQUIRE(a.flat()[i] == b.flat()[i]);
  auto c = NetworkParams::init(43, 4, 3, 128, 30.0);
  bool differs = false;
  for (std::size_t i = 0; i < a.param_count(); ++i)
    if (a.flat()[i] != c.flat()[i]) differs = true;
  CHECK(differs);

  const double r0 = 1.0 / 4.0;
  for (double w : a.weight(0)) REQUIRE(std::abs(w) <= r0);
  for (double w : a.bias(0)) REQUIRE(std::abs(w) <= r0);
  const double rd = std::sqrt(6.0 / 128.0) / 30.0;
  for (int l = 1; l <= 3; ++l) {
    for (double w : a.weight(l)) REQUIRE(std::abs(w) <= rd);
    for (double w : a.bias(l)) REQUIRE(std::abs(w) <= rd);
  }

  // the published architecture (3 hidden layers of 512) builds and chains
  auto big = NetworkParams::init(0, 4, 3, 512, 30.0);
  CHECK(big.layer_in(0) == 4);
  CHECK(big.layer_out(0) == 512);
  CHECK(big.layer_in(3) == 512);
  CHECK(big.layer_out(3) == 1);
}

TEST_CASE("forward of the zero network is the output bias") {
  NetworkParams p(3, 2, 8, 30.0);
  p.bias(2)[0] = 0.7;
  CHECK(forward(p, std::vector<double>{0.3, -0.4, 0.9}) == 0.7);
}

TEST_CASE("single-neuron network matches the symbolic formula") {
  NetworkParams p(3, 1, 1, 30.0);
  const double w1[3] = {0.3, -0.2, 0.5};
  const double b1 = 0.1, w2 = 1.3, b2 = -0.4, omega = 30.0;
  for (int j = 0; j < 3; ++j) p.weight(0)[static_cast<std::size_t>(j)] = w1[j];
  p.bias(0)[0] = b1;
  p.weight(1)[0] = w2;
  p.bias(1)[0] = b2;

  std::vector<double> z{0.2, 0.6, -0.3};
  const double pre = w1[0] * z[0] + w1[1] * z[1] + w1[2] * z[2] + b1;
  CHECK(forward(p, z) == Approx(b2 + w2 * std::sin(omega * pre)).margin(1e-15));

  std::vector<double> din(3);
  const double v = value_and_input_grads(p, z, din);
  CHECK(v == Approx(b2 + w2 * std::sin(omega * pre)).margin(1e-15));
  for (int j = 0; j < 3; ++j)
    CHECK(din[static_cast<std::size_t>(j)] ==
          Approx(w2 * omega * std::cos(omega * pre) * w1[j]).margin(1e-12));

  // all-zero weights: gradients vanish
  NetworkParams zero(3, 2, 4, 30.0);
  std::vector<double> dz(3);
  value_and_input_grads(zero, z, dz);
  for (double g : dz) CHECK(g == 0.0);
}

TEST_CASE("input gradients match central finite differences") {
  Rng rng(100);
  for (int trial = 0; trial < 25; ++trial) {
    auto p = NetworkParams::init(rng.next_u64(), 4, 2, 64, 30.0);
    for (int q = 0; q < 4; ++q) {
      std::vector<double> z{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(0, 1)};
      std::vector<double> din(4);
      value_and_input_grads(p, z, din);
      for (int j = 0; j < 4; ++j) {
        const double fd = hjrtest::fd_input_grad(p, z, j);
        REQUIRE(std::abs(din[static_cast<std::size_t>(j)] - fd) <= 1e-6 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST_CASE("smooth ablation activations also pass the finite-difference check") {
  Rng rng(7);
  for (Activation act : {Activation::Tanh, Activation::Sigmoid}) {
    auto p = NetworkParams::init(rng.next_u64(), 3, 2, 32, 1.0, act);
    for (int q = 0; q < 5; ++q) {
      std::vector<double> z{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)};
      std::vector<double> din(3);
      value_and_input_grads(p, z, din);
      for (int j = 0; j < 3; ++j) {
        const double fd = hjrtest::fd_input_grad(p, z, j);
        REQUIRE(std::abs(din[static_cast<std::size_t>(j)] - fd) <= 1e-6 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST_CASE("relu gradients agree with one-sided slopes away from kinks") {
  Rng rng(8);
  auto p = NetworkParams::init(1, 3, 2, 32, 1.0, Activation::ReLU);
  int checked = 0;
  for (int q = 0; q < 40 && checked < 15; ++q) {
    std::vector<double> z{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)};
    std::vector<double> din(3);
    value_and_input_grads(p, z, din);
    for (int j = 0; j < 3; ++j) {
      const double h = 1e-5;
      std::vector<double> zp = z, zm = z;
      zp[static_cast<std::size_t>(j)] += h;
      zm[static_cast<std::size_t>(j)] -= h;
      const double v0 = forward(p, z);
      const double sp = (forward(p, zp) - v0) / h, sm = (v0 - forward(p, zm)) / h;
      if (std::abs(sp - sm) > 1e-7) continue;  // kink inside the stencil
      REQUIRE(std::abs(din[static_cast<std::size_t>(j)] - 0.5 * (sp + sm)) <= 1e-6 * (1.0 + std::abs(sp)));
      ++checked;
    }
  }
  REQUIRE(checked >= 15);
}

TEST_CASE("loss equal to the value reduces to plain backpropagation") {
  auto p = NetworkParams::init(5, 4, 2, 16, 30.0);
  std::vector<double> input{0.3, -0.7, 0.2, 0.5};
  ResidualFn residual = [](int, std::size_t, double value, double, std::span<const double>,
                           ResidualTerms& t, std::span<double>) {
    t.loss = value;
    t.d_value = 1.0;
  };
  BatchResult res = loss_param_grads(p, input, 1, residual);
  CHECK(res.loss == Approx(forward(p, input)).margin(1e-14));
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.param_count(); i += 7) {
    NetworkParams pp = p, pm = p;
    pp.flat()[i] += h;
    pm.flat()[i] -= h;
    const double fd = (forward(pp, input) - forward(pm, input)) / (2.0 * h);
    REQUIRE(std::abs(res.grad[i] - fd) <= 1e-5 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("gradient-norm loss on the single-neuron net matches the hand derivation") {
  // V = b2 + w2 sin(omega (w . z + b1)); L = |grad_x V|^2 over spatial dims
  NetworkParams p(3, 1, 1, 30.0);
  const double w1[3] = {0.4, -0.3, 0.2};
  const double b1 = -0.2, w2 = 0.9, omega = 30.0;
  for (int j = 0; j < 3; ++j) p.weight(0)[static_cast<std::size_t>(j)] = w1[j];
  p.bias(0)[0] = b1;
  p.weight(1)[0] = w2;
  p.bias(1)[0] = 0.3;

  std::vector<double> z{0.25, -0.5, 0.75};
  ResidualFn residual = [](int, std::size_t, double, double, std::span<const double> dspace,
                           ResidualTerms& t, std::span<double> d_dspace) {
    for (std::size_t j = 0; j < dspace.size(); ++j) {
      t.loss += dspace[j] * dspace[j];
      d_dspace[j] = 2.0 * dspace[j];
    }
  };
  BatchResult res = loss_param_grads(p, z, 1, residual);

  const double pre = w1[0] * z[0] + w1[1] * z[1] + w1[2] * z[2] + b1;
  const double u = omega * pre;
  const double cs = std::cos(u), sn = std::sin(u);
  const double spatial2 = w1[0] * w1[0] + w1[1] * w1[1];
  // L = w2^2 omega^2 cos^2(u) (w1_x^2 + w1_y^2); time channel is z[2]
  CHECK(res.loss == Approx(w2 * w2 * omega * omega * cs * cs * spatial2).margin(1e-10));

  const double dL_dw2 = 2.0 * w2 * omega * omega * cs * cs * spatial2;
  const double dL_du = -2.0 * w2 * w2 * omega * omega * cs * sn * spatial2;
  const double dL_db1 = dL_du * omega;
  CHECK(res.grad[p.weight_offset(1)] == Approx(dL_dw2).margin(1e-9));
  CHECK(res.grad[p.bias_offset(0)] == Approx(dL_db1).margin(1e-9));
  for (int j = 0; j < 3; ++j) {
    const double via_u = dL_du * omega * z[static_cast<std::size_t>(j)];
    const double via_norm = j < 2 ? w2 * w2 * omega * omega * cs * cs * 2.0 * w1[j] : 0.0;
    CHECK(res.grad[p.weight_offset(0) + static_cast<std::size_t>(j)] ==
          Approx(via_u + via_norm).margin(1e-9));
  }
}

TEST_CASE("parameter gradients of a mixed residual match finite differences") {
  Rng rng(55);
  auto p = NetworkParams::init(rng.next_u64(), 4, 2, 24, 30.0);
  const std::size_t count = 12;
  std::vector<double> inputs(count * 4);
  for (double& v : inputs) v = rng.uniform(-1, 1);

  // depends nonlinearly on the value and every gradient channel
  ResidualFn residual = [](int, std::size_t, double value, double dtime,
                           std::span<const double> dspace, ResidualTerms& t,
                           std::span<double> d_dspace) {
    t.loss = value * value + 3.0 * dtime + std::sin(dspace[0]);
    t.d_value = 2.0 * value;
    t.d_dtime = 3.0;
    d_dspace[0] = std::cos(dspace[0]);
    for (std::size_t j = 1; j < dspace.size(); ++j) {
      t.loss += 0.5 * dspace[j] * dspace[j];
      d_dspace[j] = dspace[j];
    }
  };

  BatchResult res = loss_param_grads(p, inputs, count, residual);

  auto eval_loss = [&](const NetworkParams& q) {
    double total = 0.0;
    std::vector<double> din(4);
    for (std::size_t i = 0; i < count; ++i) {
      const double v = value_and_input_grads(q, std::span<const double>(inputs.data() + i * 4, 4), din);
      total += v * v + 3.0 * din[3] + std::sin(din[0]) + 0.5 * (din[1] * din[1] + din[2] * din[2]);
    }
    return total / static_cast<double>(count);
  };

  const double h = 1e-5;
  for (std::size_t i = 0; i < p.param_count(); i += 3) {
    NetworkParams pp = p, pm = p;
    pp.flat()[i] += h;
    pm.flat()[i] -= h;
    const double fd = (eval_loss(pp) - eval_loss(pm)) / (2.0 * h);
    REQUIRE(std::abs(res.grad[i] - fd) <= 1e-4 * (1.0 + std::abs(fd)));
  }
}

TEST_CASE("engine results are deterministic and partition-stable") {
  Rng rng(3);
  auto p = NetworkParams::init(1, 3, 2, 16, 30.0);
  const std::size_t count = 97;  // not a multiple of the block size
  std::vector<double> inputs(count * 3);
  for (double& v : inputs) v = rng.uniform(-1, 1);
  ResidualFn residual = [](int, std::size_t, double value, double dtime,
                           std::span<const double> dspace, ResidualTerms& t,
                           std::span<double> d_dspace) {
    t.loss = std::abs(value) + dtime * dtime + dspace[0] * dspace[0];
    t.d_value = value > 0 ? 1.0 : (value < 0 ? -1.0 : 0.0);
    t.d_dtime = 2.0 * dtime;
    d_dspace[0] = 2.0 * dspace[0];
  };
  BatchResult a = loss_param_grads(p, inputs, count, residual);
  BatchResult b = loss_param_grads(p, inputs, count, residual);
  REQUIRE(a.loss == b.loss);
  for (std::size_t i = 0; i < a.grad.size(); ++i) REQUIRE(a.grad[i] == b.grad[i]);

  ThreadPool pool(3);
  BatchResult c = loss_param_grads(p, inputs, count, residual, &pool);
  CHECK(std::abs(a.loss - c.loss) <= 1e-12 * (1.0 + std::abs(a.loss)));
  for (std::size_t i = 0; i < a.grad.size(); ++i)
    REQUIRE(std::abs(a.grad[i] - c.grad[i]) <= 1e-12 * (1.0 + std::abs(a.grad[i])));
}

TEST_CASE("non-finite per-sample loss reports the offending index") {
  auto p = NetworkParams::init(2, 3, 1, 8, 30.0);
  std::vector<double> inputs(40 * 3, 0.1);
  ResidualFn residual = [](int, std::size_t i, double value, double, std::span<const double>,
                           ResidualTerms& t, std::span<double>) {
    t.loss = i == 17 ? std::numeric_limits<double>::quiet_NaN() : value;
    t.d_value = 1.0;
  };
  try {
    loss_param_grads(p, inputs, 40, residual);
    FAIL("expected NumericalFault");
  } catch (const NumericalFault& e) {
    CHECK(e.index() == 17);
  }
}

TEST_CASE("physical gradients apply the chain rule") {
  auto p = NetworkParams::init(9, 2, 2, 24, 30.0);

  NormalizationMap ident;
  ident.center = {0.0};
  ident.halfwidth = {1.0};
  ident.horizon = 1.0;
  std::vector<double> x{0.37};
  const double t = 0.25;
  PhysicalGrads pg = physical_gradients(p, ident, x, t);
  std::vector<double> input{0.37, 0.75}, din(2);
  const double v = value_and_input_grads(p, input, din);
  CHECK(pg.value == v);
  CHECK(pg.dx[0] == din[0]);
  CHECK(pg.dt == -din[1]);

  NormalizationMap wide = ident;
  wide.halfwidth = {2.0};
  // same normalized query point: x = c + s*xhat
  std::vector<double> x2{0.74};
  PhysicalGrads pg2 = physical_gradients(p, wide, x2, t);
  CHECK(pg2.dx[0] == Approx(0.5 * pg.dx[0]).margin(1e-15));

  // finite differences in physical coordinates
  NormalizationMap map;
  map.center = {0.3};
  map.halfwidth = {1.7};
  map.horizon = 2.0;
  const double h = 1e-5;
  PhysicalGrads g0 = physical_gradients(p, map, std::vector<double>{0.9}, 0.6);
  const double fdx = (physical_gradients(p, map, std::vector<double>{0.9 + h}, 0.6).value -
                      physical_gradients(p, map, std::vector<double>{0.9 - h}, 0.6).value) /
                     (2 * h);
  const double fdt = (physical_gradients(p, map, std::vector<double>{0.9}, 0.6 + h).value -
                      physical_gradients(p, map, std::vector<double>{0.9}, 0.6 - h).value) /
                     (2 * h);
  CHECK(std::abs(g0.dx[0] - fdx) <= 1e-6 * (1.0 + std::abs(fdx)));
  CHECK(std::abs(g0.dt - fdt) <= 1e-6 * (1.0 + std::abs(fdt)));
}

TEST_CASE("normalization map round-trips") {
  Air3D sys;
  NormalizationMap map = NormalizationMap::for_system(sys);
  Rng rng(4);
  std::vector<double> x = hjrtest::random_state(sys, rng), xhat(3), back(3);
  map.normalize_state(x, xhat);
  for (double v : xhat) CHECK(std::abs(v) <= 1.0 + 1e-12);
  map.denormalize_state(xhat, back);
  for (int i = 0; i < 3; ++i)
    CHECK(back[static_cast<std::size_t>(i)] == Approx(x[static_cast<std::size_t>(i)]).margin(1e-12));
  CHECK(map.denormalize_time(map.normalize_time(0.37)) == Approx(0.37).margin(1e-12));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  hjrtest::TempDir tmp("hjr-ck");
  auto p = NetworkParams::init(99, 4, 3, 32, 30.0);
  Air3D sys;
  NormalizationMap map = NormalizationMap::for_system(sys);
  const auto path = tmp.path() / "net.ck";
  save_checkpoint(path, p, map, "air3d", 1234);
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.system_name == "air3d");
  CHECK(ck.iteration == 1234);
  CHECK(ck.params.seed() == 99);
  CHECK(ck.params.omega0() == 30.0);
  CHECK(ck.params.activation() == Activation::Sine);
  REQUIRE(ck.params.param_count() == p.param_count());
  for (std::size_t i = 0; i < p.param_count(); ++i) REQUIRE(ck.params.flat()[i] == p.flat()[i]);
  std::vector<double> z{0.1, 0.2, 0.3, 0.4};
  REQUIRE(forward(ck.params, z) == forward(p, z));
  for (int i = 0; i < 3; ++i) {
    CHECK(ck.map.center[static_cast<std::size_t>(i)] == map.center[static_cast<std::size_t>(i)]);
    CHECK(ck.map.halfwidth[static_cast<std::size_t>(i)] == map.halfwidth[static_cast<std::size_t>(i)]);
  }
}
