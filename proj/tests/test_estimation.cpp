#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "koopgen/estimation.hpp"
#include "support/helpers.hpp"

using namespace koopgen;

namespace {

ModelParams scalar_params(double a, double sig_w, double sig_v, double mu0,
                          double sig0, double dt = 0.1) {
  ModelParams p;
  p.dt = dt;
  p.n = 1;
  p.q = 0;
  p.p = 1;
  Eigen::MatrixXd vt(2, 1);
  vt << 0.0, (a - 1.0) / dt;  // A = 1 + dt * vt(1,0) = a
  p.gen.push_back(vt);
  p.c0 = Eigen::VectorXd::Zero(1);
  p.sigma_w = Eigen::MatrixXd::Constant(1, 1, sig_w);
  p.sigma_v = Eigen::MatrixXd::Constant(1, 1, sig_v);
  p.mu0 = Eigen::VectorXd::Constant(1, mu0);
  p.sigma0 = Eigen::MatrixXd::Constant(1, 1, sig0);
  return p;
}

}  // namespace

TEST_CASE("kalman_forward: scalar conjugate-Gaussian update") {
  const auto params = scalar_params(1.0, 0.0, 1.0, 0.0, 1.0);
  Trajectory traj;
  traj.inputs.resize(0, 0);
  traj.outputs = Eigen::MatrixXd::Constant(1, 1, 2.0);

  const auto filt = kalman_forward(params, traj);
  CHECK(filt.mu_f[0](0) == doctest::Approx(1.0));
  CHECK(filt.sig_f[0](0, 0) == doctest::Approx(0.5));
  // loglik = log N(2; 0, 2)
  const double expected = -0.5 * (std::log(2.0 * std::acos(-1.0) * 2.0) + 4.0 / 2.0);
  CHECK(filt.loglik == doctest::Approx(expected));
}

TEST_CASE("kalman_forward: huge measurement noise ignores the data") {
  auto params = scalar_params(0.9, 0.01, 1e12, 0.3, 0.5);
  Trajectory traj;
  traj.inputs.resize(0, 6);
  traj.outputs = Eigen::MatrixXd::Random(1, 7) * 10.0;

  const auto filt = kalman_forward(params, traj);
  for (int l = 0; l <= 6; ++l)
    CHECK(filt.mu_f[static_cast<std::size_t>(l)](0) ==
          doctest::Approx(filt.mu_pred[static_cast<std::size_t>(l)](0)).epsilon(1e-9));
}

TEST_CASE("kalman_forward: filtered marginals match truncated dense conditioning") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 3);
    const int p = 1 + static_cast<int>(rng() % n);
    const int len = 1 + static_cast<int>(rng() % 4);
    const auto params = testing::random_params(rng, n, 1, p);
    const auto traj = testing::random_trajectory(rng, params, len);

    const auto filt = kalman_forward(params, traj);
    for (int l = 0; l <= len; ++l) {
      // Condition only on y_0..y_l by truncating the trajectory.
      Trajectory head;
      head.inputs = traj.inputs.leftCols(l);
      head.outputs = traj.outputs.leftCols(l + 1);
      const auto oracle = dense_posterior_oracle(params, head);
      CHECK((filt.mu_f[static_cast<std::size_t>(l)] - oracle.mu.back()).cwiseAbs().maxCoeff() <
            1e-8);
      CHECK((filt.sig_f[static_cast<std::size_t>(l)] - oracle.sig.back()).cwiseAbs().maxCoeff() <
            1e-8);
    }
  }
}

TEST_CASE("rts_smoother: trajectory with no future data equals the filter") {
  const auto params = scalar_params(0.8, 0.1, 0.2, 0.1, 0.7);
  Trajectory traj;
  traj.inputs.resize(0, 0);
  traj.outputs = Eigen::MatrixXd::Constant(1, 1, -0.4);
  const auto filt = kalman_forward(params, traj);
  const auto post = rts_smoother(params, traj, filt);
  CHECK(post.mu[0](0) == filt.mu_f[0](0));
  CHECK(post.sig[0](0, 0) == filt.sig_f[0](0, 0));
  CHECK(post.sig_cross.empty());
}

TEST_CASE("rts_smoother: recovers a noise-free latent trajectory") {
  std::mt19937_64 rng(99);
  auto params = testing::random_params(rng, 2, 1, 2);
  params.sigma_w.setZero();
  params.sigma_v = 1e-10 * Eigen::MatrixXd::Identity(2, 2);
  // Keep the dynamics stable so the latent path stays O(1).
  params.gen[0] *= 0.2;
  params.gen[1] *= 0.2;

  const Eigen::MatrixXd inputs = 0.5 * Eigen::MatrixXd::Random(1, 12);
  const Eigen::VectorXd z0 = testing::random_vector(rng, 2);
  const auto sim = simulate(params, z0, inputs);

  const auto filt = kalman_forward(params, sim.trajectory);
  const auto post = rts_smoother(params, sim.trajectory, filt);
  for (int l = 0; l <= 12; ++l)
    CHECK((post.mu[static_cast<std::size_t>(l)] - sim.latents.col(l)).cwiseAbs().maxCoeff() <
          1e-4);
}

TEST_CASE("rts_smoother: oracle equivalence over 100 random instances") {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 3);
    const int p = 1 + static_cast<int>(rng() % n);
    const int q = static_cast<int>(rng() % 2);
    const int len = 1 + static_cast<int>(rng() % 5);
    const auto params = testing::random_params(rng, n, q, p);
    const auto traj = testing::random_trajectory(rng, params, len);

    const auto filt = kalman_forward(params, traj);
    const auto post = rts_smoother(params, traj, filt);
    const auto oracle = dense_posterior_oracle(params, traj);

    for (int l = 0; l <= len; ++l) {
      worst = std::max(worst, (post.mu[static_cast<std::size_t>(l)] -
                               oracle.mu[static_cast<std::size_t>(l)])
                                  .cwiseAbs()
                                  .maxCoeff());
      worst = std::max(worst, (post.sig[static_cast<std::size_t>(l)] -
                               oracle.sig[static_cast<std::size_t>(l)])
                                  .cwiseAbs()
                                  .maxCoeff());
      if (l < len)
        worst = std::max(worst, (post.sig_cross[static_cast<std::size_t>(l)] -
                                 oracle.sig_cross[static_cast<std::size_t>(l)])
                                    .cwiseAbs()
                                    .maxCoeff());
      // Mandated symmetrization.
      const auto& s = post.sig[static_cast<std::size_t>(l)];
      CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("kalman_forward: loglik equals the dense joint log density") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 3);
    const int p = 1 + static_cast<int>(rng() % n);
    const int len = 1 + static_cast<int>(rng() % 5);
    const auto params = testing::random_params(rng, n, 0, p);
    const auto traj = testing::random_trajectory(rng, params, len);
    const auto filt = kalman_forward(params, traj);
    CHECK(filt.loglik ==
          doctest::Approx(dense_log_marginal(params, traj)).epsilon(1e-8));
  }
}

TEST_CASE("dense_posterior_oracle: conditioning order does not matter") {
  // Conditioning the joint Gaussian on a permutation of the observations
  // must give the same posterior; the permuted solve eliminates the
  // observations in a different order than the oracle's.
  std::mt19937_64 rng(42);
  const auto params = testing::random_params(rng, 2, 1, 1);
  const auto traj = testing::random_trajectory(rng, params, 4);
  const auto oracle = dense_posterior_oracle(params, traj);

  const int n = params.n, len = traj.length(), p = params.p;
  const int nz = (len + 1) * n, ny = (len + 1) * p;

  // Independent joint construction.
  const auto steps = step_matrices_for(params, traj.inputs);
  Eigen::VectorXd mz(nz);
  Eigen::MatrixXd pz = Eigen::MatrixXd::Zero(nz, nz);
  mz.head(n) = params.mu0;
  pz.topLeftCorner(n, n) = params.sigma0;
  for (int l = 0; l < len; ++l) {
    const auto& sm = steps[static_cast<std::size_t>(l)];
    mz.segment((l + 1) * n, n) = sm.A * mz.segment(l * n, n) + sm.b;
    for (int k = 0; k <= l; ++k) {
      pz.block((l + 1) * n, k * n, n, n) = sm.A * pz.block(l * n, k * n, n, n);
      pz.block(k * n, (l + 1) * n, n, n) =
          pz.block((l + 1) * n, k * n, n, n).transpose();
    }
    pz.block((l + 1) * n, (l + 1) * n, n, n) =
        params.sigma_w + sm.A * pz.block(l * n, l * n, n, n) * sm.A.transpose();
  }
  Eigen::MatrixXd cobs = Eigen::MatrixXd::Zero(ny, nz);
  Eigen::VectorXd my(ny), yv(ny);
  for (int l = 0; l <= len; ++l) {
    cobs.block(l * p, l * n, p, p).setIdentity();
    my.segment(l * p, p) = params.c0 + mz.segment(l * n, n).head(p);
    yv.segment(l * p, p) = traj.outputs.col(l);
  }
  Eigen::MatrixXd py = cobs * pz * cobs.transpose();
  for (int l = 0; l <= len; ++l) py.block(l * p, l * p, p, p) += params.sigma_v;
  Eigen::MatrixXd cross = pz * cobs.transpose();

  // Reverse the time order of the observations.
  Eigen::MatrixXd pm = Eigen::MatrixXd::Zero(ny, ny);
  for (int l = 0; l <= len; ++l)
    pm.block(l * p, (len - l) * p, p, p).setIdentity();

  const Eigen::MatrixXd py_perm = pm * py * pm.transpose();
  const Eigen::VectorXd rhs_perm = pm * (yv - my);
  const Eigen::MatrixXd cross_perm = cross * pm.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(py_perm);
  const Eigen::VectorXd mu_post = mz + cross_perm * ldlt.solve(rhs_perm);
  const Eigen::MatrixXd cov_post =
      pz - cross_perm * ldlt.solve(cross_perm.transpose());

  for (int l = 0; l <= len; ++l) {
    CHECK((oracle.mu[static_cast<std::size_t>(l)] - mu_post.segment(l * n, n))
              .cwiseAbs()
              .maxCoeff() < 1e-9);
    CHECK((oracle.sig[static_cast<std::size_t>(l)] -
           cov_post.block(l * n, l * n, n, n))
              .cwiseAbs()
              .maxCoeff() < 1e-9);
  }
}

TEST_CASE("dense_posterior_oracle: huge measurement noise returns the prior-propagated moments") {
  auto params = scalar_params(0.9, 0.05, 1e12, 0.4, 0.6);
  Trajectory traj;
  traj.inputs.resize(0, 3);
  traj.outputs = Eigen::MatrixXd::Random(1, 4);
  const auto oracle = dense_posterior_oracle(params, traj);
  double mean = 0.4, var = 0.6;
  for (int l = 0; l <= 3; ++l) {
    CHECK(oracle.mu[static_cast<std::size_t>(l)](0) == doctest::Approx(mean).epsilon(1e-6));
    CHECK(oracle.sig[static_cast<std::size_t>(l)](0, 0) == doctest::Approx(var).epsilon(1e-6));
    mean *= 0.9;
    var = 0.9 * 0.9 * var + 0.05;
  }
}

TEST_CASE("dense_posterior_oracle: enforces the size cap") {
  std::mt19937_64 rng(1);
  const auto params = testing::random_params(rng, 3, 0, 1);
  const auto traj = testing::random_trajectory(rng, params, 30);  // 31*3 > 64
  CHECK_THROWS_AS(dense_posterior_oracle(params, traj), std::invalid_argument);
}

TEST_CASE("rts_smoother: exactly singular predicted covariance throws") {
  // A = 0 and sigma_w = 0 make the one-step-ahead covariance exactly zero.
  auto params = scalar_params(0.0, 0.0, 1.0, 0.0, 1.0);
  Trajectory traj;
  traj.inputs.resize(0, 2);
  traj.outputs = Eigen::MatrixXd::Constant(1, 3, 1.0);
  const auto filt = kalman_forward(params, traj);
  CHECK_THROWS_AS(rts_smoother(params, traj, filt), NumericalError);
}
