#pragma once

#include <functional>

#include "koopgen/model.hpp"

namespace koopgen {

// Forward-pass quantities stored per step l = 0..L:
//   mu_pred[l]  = mean given y_0..y_{l-1}
//   sig_pred[l] = covariance given y_0..y_{l-1}
//   mu_f[l]     = mean given y_0..y_l
//   sig_f[l]    = covariance given y_0..y_l
// loglik is the innovations-decomposition log likelihood of the trajectory.
struct FilteredMoments {
  std::vector<Eigen::VectorXd> mu_pred, mu_f;
  std::vector<Eigen::MatrixXd> sig_pred, sig_f;
  double loglik = 0.0;
};

// Smoothed posterior moments given the full observation record:
//   mu[l], sig[l] for l = 0..L and sig_cross[l] = Cov(z_l, z_{l+1} | Y)
//   for l = 0..L-1.
struct PosteriorMoments {
  std::vector<Eigen::VectorXd> mu;
  std::vector<Eigen::MatrixXd> sig;
  std::vector<Eigen::MatrixXd> sig_cross;
};

// Single filter step shared by the batch filter and the MPC loop.
struct KalmanState {
  Eigen::VectorXd mu;   // filtered mean
  Eigen::MatrixXd sig;  // filtered covariance

  static KalmanState prior(const ModelParams& params);
  void predict(const ModelParams& params, const StepMatrices& sm);
  // Assimilate one measurement; returns the log density of the innovation.
  double update(const ModelParams& params, const Eigen::VectorXd& y);
};

FilteredMoments kalman_forward(const ModelParams& params, const Trajectory& traj);

PosteriorMoments rts_smoother(const ModelParams& params, const Trajectory& traj,
                              const FilteredMoments& filt);

// Backward smoothing pass that hands each step's smoothed moments to a
// visitor instead of storing them; visit(l, mu_l, sig_ll, sig_cross) is
// called for l = L..0 with sig_cross = Cov(z_l, z_{l+1} | Y) (empty at l=L).
using SmootherVisitor = std::function<void(
    int, const Eigen::VectorXd&, const Eigen::MatrixXd&, const Eigen::MatrixXd&)>;
void smooth_backward(const ModelParams& params, const Trajectory& traj,
                     const FilteredMoments& filt, const SmootherVisitor& visit);

// Exact posterior via the full joint Gaussian of (Z, Y): unrolls the linear
// time-varying system, conditions on Y by Schur complement.  Quadratic
// memory, capped at (L+1)*n <= 64; this is the test oracle for the
// filter/smoother pair and is deliberately independent of it.
PosteriorMoments dense_posterior_oracle(const ModelParams& params,
                                        const Trajectory& traj);

// Log density of the observed outputs under the exact joint Gaussian
// (same size cap as dense_posterior_oracle).
double dense_log_marginal(const ModelParams& params, const Trajectory& traj);

// Full joint posterior of the stacked latent path (mean and covariance),
// used for posterior path sampling on small problems.
struct DensePosterior {
  Eigen::VectorXd mean;  // stacked z_0..z_L
  Eigen::MatrixXd cov;
};
DensePosterior dense_joint_posterior(const ModelParams& params,
                                     const Trajectory& traj);

}  // namespace koopgen
