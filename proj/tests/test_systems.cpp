#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "koopgen/spectral.hpp"
#include "koopgen/systems.hpp"
#include "support/helpers.hpp"

using namespace koopgen;

TEST_CASE("slow_manifold: drift spectrum and decoupled decay") {
  auto sys = slow_manifold_plant(1.0, 5.0, 0.01, 0.0);
  const auto pairs = eigen_spectrum(sys.exact, Eigen::VectorXd::Zero(1));
  std::vector<double> re;
  for (const auto& p : pairs) re.push_back(p.lam.real());
  const std::vector<double> expected{-5.0, -3.0, -2.0, -1.0, 0.0};
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(re[i] == doctest::Approx(expected[i]));

  // x1(0) = 0, u = 0: x2 decays like exp(-beta t).
  Eigen::VectorXd x0(2);
  x0 << 0.0, 1.0;
  sys.plant.reset(x0);
  double t = 0.0;
  for (int l = 0; l < 100; ++l) {
    const Eigen::VectorXd y = sys.plant.step(Eigen::VectorXd::Zero(1));
    t += 0.01;
    CHECK(y(0) == doctest::Approx(std::exp(-5.0 * t)).epsilon(1e-6));
  }
}

TEST_CASE("slow_manifold: exact lifted simulation tracks RK4 to O(dt)") {
  const double dt = 0.005;
  auto sys = slow_manifold_plant(1.0, 5.0, dt, 0.0);
  std::mt19937_64 rng(6);
  Eigen::VectorXd x0(2);
  x0 << 0.6, -0.4;
  sys.plant.reset(x0);

  const int steps = static_cast<int>(5.0 / dt);
  const auto u_sig = input_piecewise_constant(1, 0.5, std::sqrt(5.0), 42, 5.0);
  const Eigen::MatrixXd inputs = u_sig.sample(steps, dt);

  Eigen::VectorXd z0(4);
  z0 << x0(1), x0(0), x0(0) * x0(0), x0(0) * x0(0) * x0(0);
  const auto sim = simulate(sys.exact, z0, inputs);

  double sup_gap = 0.0;
  for (int l = 0; l < steps; ++l) {
    sys.plant.step(inputs.col(l));
    sup_gap = std::max(sup_gap,
                       std::abs(sys.plant.state()(1) - sim.latents(0, l + 1)));
  }
  // Explicit Euler consistency: the gap scales with dt over a fixed horizon.
  CHECK(sup_gap < 60.0 * dt);
}

TEST_CASE("duffing: equilibria and linearization eigenvalues") {
  auto plant = duffing_plant();
  Eigen::VectorXd fixed(2);
  fixed << 1.0, 0.0;
  plant.reset(fixed);
  for (int l = 0; l < 50; ++l) plant.step(Eigen::VectorXd(0));
  CHECK((plant.state() - fixed).cwiseAbs().maxCoeff() < 1e-12);

  // Finite-difference Jacobians of the vector field at the fixed points.
  auto field = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd dx(2);
    dx(0) = x(1);
    dx(1) = -0.5 * x(1) + x(0) * (1.0 - x(0) * x(0));
    return dx;
  };
  auto jacobian_eigs = [&](const Eigen::VectorXd& x) {
    const double h = 1e-6;
    Eigen::MatrixXd jac(2, 2);
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      jac.col(j) = (field(xp) - field(xm)) / (2.0 * h);
    }
    return jac.eigenvalues();
  };

  const auto stable = jacobian_eigs(fixed);
  CHECK(stable(0).real() == doctest::Approx(-0.25).epsilon(1e-5));
  CHECK(std::abs(stable(0).imag()) ==
        doctest::Approx(std::sqrt(31.0) / 4.0).epsilon(1e-5));

  const auto saddle = jacobian_eigs(Eigen::VectorXd::Zero(2));
  std::vector<double> re{saddle(0).real(), saddle(1).real()};
  std::sort(re.begin(), re.end());
  CHECK(re[0] == doctest::Approx((-1.0 - std::sqrt(17.0)) / 4.0).epsilon(1e-5));
  CHECK(re[1] == doctest::Approx((-1.0 + std::sqrt(17.0)) / 4.0).epsilon(1e-5));
}

TEST_CASE("scalar bilinear plant: exact exponential responses") {
  ScalarBilinearPlant plant(0.01);
  plant.reset(1.0);
  for (int l = 0; l < 100; ++l) plant.step(Eigen::VectorXd::Constant(1, -1.0));
  CHECK(plant.observe()(0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  plant.reset(1.0);
  for (int l = 0; l < 100; ++l) plant.step(Eigen::VectorXd::Constant(1, 1.0));
  CHECK(plant.observe()(0) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
}

TEST_CASE("input_piecewise_constant: holds, zero sigma, reproducibility") {
  const auto zero = input_piecewise_constant(1, 0.5, 0.0, 3, 5.0);
  CHECK(zero.sample(100, 0.05).cwiseAbs().maxCoeff() == 0.0);

  const auto a = input_piecewise_constant(2, 0.5, std::sqrt(5.0), 11, 5.0);
  const auto b = input_piecewise_constant(2, 0.5, std::sqrt(5.0), 11, 5.0);
  const Eigen::MatrixXd sa = a.sample(100, 0.05);
  CHECK((sa - b.sample(100, 0.05)).cwiseAbs().maxCoeff() == 0.0);

  // Constant over each hold interval (0.5 / 0.05 = 10 samples).
  for (int i = 0; i < 10; ++i)
    for (int l = 10 * i; l < 10 * (i + 1); ++l)
      CHECK(sa(0, l) == sa(0, 10 * i));
  CHECK(sa(0, 0) != sa(0, 10));
}

TEST_CASE("input_smooth_spline: interpolation and the single-knot case") {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(2, -3.0);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(2, 3.0);
  const auto sig = input_smooth_spline(2, 0.5, 2.5, lo, hi, 17, 20.0);

  // Values stay bounded in a modest multiple of the box on the grid...
  const Eigen::MatrixXd samples = sig.sample(400, 0.05);
  CHECK(samples.cwiseAbs().maxCoeff() < 10.0);
  // ...and the signal is smooth: adjacent samples differ by O(dt).
  for (int l = 1; l < 400; ++l)
    CHECK((samples.col(l) - samples.col(l - 1)).cwiseAbs().maxCoeff() < 1.0);

  const auto constant = input_smooth_spline(1, 0.5, 2.5, lo.head(1), hi.head(1), 2, 0.0);
  const Eigen::MatrixXd cs = constant.sample(50, 0.1);
  for (int l = 0; l < 50; ++l) CHECK(cs(0, l) == cs(0, 0));
}

TEST_CASE("input_smooth_spline: reproduces knot values at knot times") {
  // One channel; rebuild the spline and check it interpolates its knots by
  // sampling exactly at the knot instants.
  Eigen::VectorXd lo(1), hi(1);
  lo << -3.0;
  hi << 3.0;
  const auto sig = input_smooth_spline(1, 0.5, 2.5, lo, hi, 99, 10.0);
  // Knot times are not exposed; instead verify the interpolation property
  // with a deterministic reconstruction: sample densely and confirm the
  // signal passes through local extrema smoothly (spline continuity), then
  // check eval at t=0 equals the first sampled value (t=0 is always a knot).
  CHECK(sig.eval(0.0)(0) == sig.sample(1, 0.1)(0, 0));
  // C1 smoothness: second differences remain bounded at the fine scale.
  const double h = 1e-3;
  for (double t = 0.2; t < 8.0; t += 0.37) {
    const double d2 = sig.eval(t + h)(0) - 2.0 * sig.eval(t)(0) + sig.eval(t - h)(0);
    CHECK(std::abs(d2) < 1e-3);
  }
}

TEST_CASE("dataset protocols: shapes and bitwise determinism") {
  const auto sm = dataset_protocol_slow_manifold(5);
  CHECK(sm.train.size() == 50);
  CHECK(sm.test.size() == 50);
  CHECK(sm.train.dt == 0.01);
  CHECK(sm.train.trajectories[0].length() == 249);
  CHECK(sm.test.trajectories[0].length() == 499);
  CHECK(sm.train.q == 1);
  CHECK(sm.train.p == 1);
  // Train is a prefix of test.
  CHECK((sm.train.trajectories[7].outputs -
         sm.test.trajectories[7].outputs.leftCols(250))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  const auto sm2 = dataset_protocol_slow_manifold(5);
  CHECK((sm.test.trajectories[3].outputs - sm2.test.trajectories[3].outputs)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((sm.test.trajectories[3].inputs - sm2.test.trajectories[3].inputs)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  const auto duf = dataset_protocol_duffing(5);
  CHECK(duf.train.size() == 50);
  CHECK(duf.train.trajectories[0].length() == 800);
  CHECK(duf.train.p == 2);
  CHECK(duf.train.q == 0);
  for (const auto& traj : duf.train.trajectories) {
    CHECK(traj.outputs.col(0).cwiseAbs().maxCoeff() <= 2.0);
  }
  const auto duf2 = dataset_protocol_duffing(5);
  CHECK((duf.test.trajectories[9].outputs - duf2.test.trajectories[9].outputs)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("relative_l2_error: closed forms and the naive-loop oracle") {
  Dataset truth;
  truth.dt = 0.1;
  truth.q = 0;
  truth.p = 1;
  Trajectory t;
  t.inputs.resize(0, 1);
  t.outputs = Eigen::MatrixXd::Zero(1, 2);
  t.outputs << 1.0, 2.0;
  truth.trajectories.push_back(t);

  // Perfect predictions.
  CHECK(relative_l2_error({t.outputs}, truth) == doctest::Approx(0.0));

  // yhat = 2y: each term contributes dt * 1.
  CHECK(relative_l2_error({2.0 * t.outputs}, truth) == doctest::Approx(0.2));

  // Random instance vs. naive double loop.
  std::mt19937_64 rng(9);
  Dataset rnd;
  rnd.dt = 0.05;
  rnd.q = 0;
  rnd.p = 3;
  std::vector<Eigen::MatrixXd> preds;
  double expected = 0.0;
  for (int m = 0; m < 4; ++m) {
    Trajectory tr;
    tr.inputs.resize(0, 6);
    tr.outputs = Eigen::MatrixXd::Random(3, 7);
    preds.push_back(Eigen::MatrixXd::Random(3, 7));
    for (int l = 0; l < 7; ++l)
      expected += (preds.back().col(l) - tr.outputs.col(l)).norm() /
                  tr.outputs.col(l).norm() * 0.05;
    rnd.trajectories.push_back(tr);
  }
  expected /= 4.0;
  CHECK(relative_l2_error(preds, rnd) == doctest::Approx(expected).epsilon(1e-12));

  // Zero-norm terms are skipped and counted; all-zero truth throws.
  Dataset zero = truth;
  zero.trajectories[0].outputs.setZero();
  int skipped = 0;
  CHECK_THROWS_AS(relative_l2_error({zero.trajectories[0].outputs}, zero, &skipped),
                  std::invalid_argument);
}

TEST_CASE("rk4: fourth-order convergence on a smooth interval") {
  auto field = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::VectorXd dx(2);
    dx(0) = x(1);
    dx(1) = -std::sin(x(0));
    return dx;
  };
  Eigen::VectorXd x0(2);
  x0 << 1.0, 0.0;
  const Eigen::VectorXd u(0);

  // Reference with a very fine step.
  const Eigen::VectorXd ref = rk4_step(field, x0, u, 1.0, 1024);
  const double err_coarse = (rk4_step(field, x0, u, 1.0, 8) - ref).norm();
  const double err_fine = (rk4_step(field, x0, u, 1.0, 16) - ref).norm();
  const double ratio = err_coarse / err_fine;
  CHECK(ratio > 10.0);
  CHECK(ratio < 24.0);
}
