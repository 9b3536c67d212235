#pragma once

// Shared test utilities: random problem instances and independent
// implementations of the decoupled maximization objectives, used as oracles
// against the closed-form updates.

#include <random>

#include "koopgen/em.hpp"
#include "koopgen/estimation.hpp"
#include "koopgen/model.hpp"

namespace koopgen::testing {

inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd r(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r(i, j) = gauss(rng);
  return scale * (r * r.transpose() / n + 0.2 * Eigen::MatrixXd::Identity(n, n));
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = gauss(rng);
  return v;
}

inline ModelParams random_params(std::mt19937_64& rng, int n, int q, int p,
                                 double dt = 0.1) {
  ModelParams params;
  params.dt = dt;
  params.n = n;
  params.q = q;
  params.p = p;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k <= q; ++k) {
    Eigen::MatrixXd vt(n + 1, n);
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j < n; ++j) vt(i, j) = gauss(rng);
    params.gen.push_back(vt);
  }
  params.c0 = random_vector(rng, p);
  params.sigma_w = random_spd(rng, n, 0.3);
  params.sigma_v = random_spd(rng, p, 0.5);
  params.mu0 = random_vector(rng, n);
  params.sigma0 = random_spd(rng, n);
  return params;
}

inline Trajectory random_trajectory(std::mt19937_64& rng, const ModelParams& params,
                                    int len) {
  Eigen::MatrixXd inputs(params.q, len);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < params.q; ++k)
    for (int l = 0; l < len; ++l) inputs(k, l) = gauss(rng);
  const Eigen::VectorXd z0 = random_vector(rng, params.n);
  return simulate(params, z0, inputs, rng()).trajectory;
}

inline Dataset random_dataset(std::mt19937_64& rng, const ModelParams& params,
                              int trajectories, int len) {
  Dataset d;
  d.dt = params.dt;
  d.q = params.q;
  d.p = params.p;
  for (int m = 0; m < trajectories; ++m)
    d.trajectories.push_back(random_trajectory(rng, params, len));
  return d;
}

inline double logdet_2pi(const Eigen::MatrixXd& s) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return logdet + static_cast<double>(s.rows()) * std::log(2.0 * std::acos(-1.0));
}

// Residual matrices of the three decoupled objectives, accumulated directly
// from their definitions (independent of MStepAccumulators).
inline Eigen::MatrixXd residual_w1(const std::vector<PosteriorMoments>& posts,
                                   const Eigen::VectorXd& mu0) {
  const int n = static_cast<int>(mu0.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (const auto& post : posts) {
    Eigen::VectorXd d = post.mu[0] - mu0;
    w += post.sig[0] + d * d.transpose();
  }
  return w;
}

inline Eigen::MatrixXd residual_w2(const Dataset& data,
                                   const std::vector<PosteriorMoments>& posts,
                                   const Eigen::VectorXd& c0) {
  const int p = data.p;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t m = 0; m < posts.size(); ++m) {
    const auto& traj = data.trajectories[m];
    for (int l = 0; l <= traj.length(); ++l) {
      const auto& mu = posts[m].mu[static_cast<std::size_t>(l)];
      Eigen::VectorXd r = traj.outputs.col(l) - c0 - mu.head(p);
      w += posts[m].sig[static_cast<std::size_t>(l)].topLeftCorner(p, p) +
           r * r.transpose();
    }
  }
  return w;
}

inline Eigen::MatrixXd residual_w3(const Dataset& data,
                                   const std::vector<PosteriorMoments>& posts,
                                   const ModelParams& params) {
  const int n = params.n;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t m = 0; m < posts.size(); ++m) {
    const auto& traj = data.trajectories[m];
    const auto steps = step_matrices_for(params, traj.inputs);
    for (int l = 0; l < traj.length(); ++l) {
      const auto& sm = steps[static_cast<std::size_t>(l)];
      const auto& mu = posts[m].mu[static_cast<std::size_t>(l)];
      const auto& mu1 = posts[m].mu[static_cast<std::size_t>(l + 1)];
      const auto& sig = posts[m].sig[static_cast<std::size_t>(l)];
      const auto& sig1 = posts[m].sig[static_cast<std::size_t>(l + 1)];
      const auto& cross = posts[m].sig_cross[static_cast<std::size_t>(l)];
      Eigen::VectorXd r = mu1 - sm.A * mu - sm.b;
      w += sig1 - sm.A * cross - cross.transpose() * sm.A.transpose() +
           sm.A * sig * sm.A.transpose() + r * r.transpose();
    }
  }
  return w;
}

inline double objective_l1(const std::vector<PosteriorMoments>& posts,
                           const Eigen::VectorXd& mu0, const Eigen::MatrixXd& sig0) {
  const double m = static_cast<double>(posts.size());
  return m * logdet_2pi(sig0) +
         (sig0.llt().solve(residual_w1(posts, mu0))).trace();
}

inline double objective_l2(const Dataset& data,
                           const std::vector<PosteriorMoments>& posts,
                           const Eigen::VectorXd& c0, const Eigen::MatrixXd& sv) {
  double count = 0.0;
  for (const auto& traj : data.trajectories) count += traj.length() + 1;
  return count * logdet_2pi(sv) +
         (sv.llt().solve(residual_w2(data, posts, c0))).trace();
}

inline double objective_l3(const Dataset& data,
                           const std::vector<PosteriorMoments>& posts,
                           const ModelParams& params) {
  double count = 0.0;
  for (const auto& traj : data.trajectories) count += traj.length();
  return count * logdet_2pi(params.sigma_w) +
         (params.sigma_w.llt().solve(residual_w3(data, posts, params))).trace();
}

}  // namespace koopgen::testing
