#pragma once

#include <cstdint>
#include <string>

#include "koopgen/edmd.hpp"
#include "koopgen/estimation.hpp"
#include "koopgen/model.hpp"

namespace koopgen {

// Streaming sufficient statistics for the closed-form maximization step.
// Blocks of the Kronecker system are input-channel-major: block k of the
// stacked unknown is Vt_k, and the gram block (j,k) is sum_l u_j u_k G_l.
class MStepAccumulators {
 public:
  MStepAccumulators(int n, int q, int p, double dt);

  // Moments of the initial state of one trajectory.
  void add_initial(const Eigen::VectorXd& mu0_hat, const Eigen::MatrixXd& sig00);
  // One observation y_l with smoothed moments (mu_l, sig_ll).
  void add_observation(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                       const Eigen::MatrixXd& sig);
  // One transition l -> l+1 with smoothed moments and the adjacent
  // cross-covariance Cov(z_l, z_{l+1} | Y).
  void add_step(const Eigen::VectorXd& u, const Eigen::VectorXd& mu,
                const Eigen::MatrixXd& sig, const Eigen::VectorXd& mu_next,
                const Eigen::MatrixXd& sig_next, const Eigen::MatrixXd& cross);

  void merge(const MStepAccumulators& other);

  // Closed-form parameter update. Update order: (mu0, sigma0), c0, sigma_v,
  // generator stack, sigma_w (using the new generators). Covariance
  // eigenvalues are floored at max(1e-12 * trace/dim, abs_floor); noise-free
  // data drives sigma_v toward zero otherwise, which destroys the filter's
  // floating-point health.
  ModelParams finalize(const ModelParams& old, double abs_floor = 0.0) const;

  const Eigen::MatrixXd& kron_gram() const { return gram_; }
  const Eigen::MatrixXd& kron_rhs() const { return rhs_; }
  long step_count() const { return steps_; }
  long observation_count() const { return obs_; }
  long trajectory_count() const { return trajectories_; }

 private:
  int n_, q_, p_;
  double dt_;
  long trajectories_ = 0, obs_ = 0, steps_ = 0;
  Eigen::VectorXd mu0_sum_;
  Eigen::MatrixXd sig0_sum_;       // sum of (sig00 + mu0 mu0^T)
  Eigen::VectorXd obs_resid_sum_;  // sum of (y - Ct mu)
  Eigen::MatrixXd obs_resid_sq_;   // sum of (y - Ct mu)(y - Ct mu)^T
  Eigen::MatrixXd obs_cov_sum_;    // sum of Ct sig Ct^T
  Eigen::MatrixXd gram_;           // sum of u u^T kron G_l
  Eigen::MatrixXd rhs_;            // sum of u kron H_l^T
  Eigen::MatrixXd incr_sq_;        // sum of E[(z_{l+1}-z_l)(z_{l+1}-z_l)^T]
};

// Maximization step from explicitly stored posteriors. The EM driver uses
// the same accumulation path without materializing PosteriorMoments.
ModelParams m_step(const Dataset& dataset,
                   const std::vector<PosteriorMoments>& posteriors,
                   const ModelParams& old);

struct FitConfig {
  int max_iters = 500;
  // Relative likelihood-increase threshold; a negative value disables the
  // convergence test so exactly max_iters iterations run.
  double rel_tol = 1e-7;
  int threads = 1;
  // Absolute eigenvalue floor for the updated covariances. Keeps the filter
  // well conditioned when noise-free data would otherwise collapse sigma_v;
  // set to 0 for the unregularized update.
  double cov_floor = 1e-10;
};

struct FitResult {
  ModelParams params;
  std::vector<double> loglik_trace;  // one entry per likelihood evaluation
  bool converged = false;
  int iterations = 0;  // number of M-steps taken
};

FitResult fit(const Dataset& dataset, const ModelParams& init,
              const FitConfig& config);

struct Dims {
  int n = 0;
  int q = 0;
  int p = 0;
};

// Random initialization: the lower n x n block of each Vt_k is i.i.d.
// Gaussian with standard deviation 1/(dt sqrt(n) B_k), B_0 = 1 and
// B_k = max(|lo_k|, |hi_k|) for physical channels, so dt * B_k * V_k has
// spectral radius near 1 (circular law). First rows start at zero.
// Draw order: k ascending, then row-major within the block.
ModelParams init_random(const Dims& dims, double dt, const Eigen::VectorXd& input_lo,
                        const Eigen::VectorXd& input_hi, std::uint64_t seed);

// Initialization from generator EDMD on lifted full-state observations.
// The dictionary must contain the constant and, for each output coordinate,
// a degree-one function so the lifted basis can be rebased to make the
// output map exactly [0 | I | 0].
ModelParams init_from_edmd(const Dataset& dataset, const Dictionary& dict);

struct RunRecord {
  int n = 0;
  std::uint64_t seed = 0;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string error;  // nonempty when the run aborted
};

struct SelectConfig {
  FitConfig fit;
  std::uint64_t seed = 0;
  // Input bounds for init_random; empty vectors derive per-channel bounds
  // from the dataset.
  Eigen::VectorXd input_lo, input_hi;
};

struct SelectResult {
  FitResult best;
  int best_run = -1;
  std::vector<RunRecord> runs;
};

struct SelectionError : NumericalError {
  SelectionError(const std::string& msg, std::vector<RunRecord> table)
      : NumericalError(msg), runs(std::move(table)) {}
  std::vector<RunRecord> runs;
};

// Fits every (dimension, restart) pair and returns the converged run with
// the highest final likelihood plus the full comparison table. Throws
// SelectionError when no run converges.
SelectResult select_model(const Dataset& dataset, const std::vector<int>& dims,
                          int restarts, const SelectConfig& config);

std::string format_run_table(const std::vector<RunRecord>& runs);

}  // namespace koopgen
