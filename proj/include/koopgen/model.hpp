#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "koopgen/linalg.hpp"

namespace koopgen {

// Parameters of the bilinear hidden Markov model
//
//   [1; z_{l+1}] = U_l^T [1; z_l] + [0; w_l],   U_l = I + dt * sum_k u_k V_k
//   y_l          = c0 + Ctilde z_l + v_l,       Ctilde = [I_p 0]
//
// with V_k = [0 | Vt_k] (first column zero) and u_0 == 1 the constant input
// channel. The latent state z excludes the constant coordinate; the augmented
// vector (1, z) exists only transiently inside step-matrix and spectral code.
struct ModelParams {
  double dt = 0.0;
  int n = 0;  // latent dimension (constant coordinate excluded)
  int q = 0;  // physical input channels (constant channel excluded)
  int p = 0;  // output dimension, p <= n

  // q+1 generator matrices Vt_k, each (n+1) x n. Block k of the stacked
  // solve in the M-step; input-channel-major ordering throughout.
  std::vector<Eigen::MatrixXd> gen;

  Eigen::VectorXd c0;       // output offset, size p
  Eigen::MatrixXd sigma_w;  // n x n process noise covariance (PSD)
  Eigen::MatrixXd sigma_v;  // p x p measurement noise covariance (PD)
  Eigen::VectorXd mu0;      // prior mean, size n
  Eigen::MatrixXd sigma0;   // n x n prior covariance (PSD)

  int aug_dim() const { return n + 1; }

  // Output matrix [I_p 0] applied to z.
  Eigen::MatrixXd output_matrix() const;

  // Full (n+1)x(n+1) generator V_k = [0 | Vt_k].
  Eigen::MatrixXd full_generator(int k) const;

  // Throws std::invalid_argument when any dimension or PSD invariant fails.
  void validate() const;
};

// One recorded input/output history: L inputs (columns of `inputs`, physical
// channels only) and L+1 outputs (columns of `outputs`).
struct Trajectory {
  Eigen::MatrixXd inputs;   // q x L
  Eigen::MatrixXd outputs;  // p x (L+1)

  int length() const { return static_cast<int>(inputs.cols()); }
  void validate() const;
};

struct Dataset {
  double dt = 0.0;
  int q = 0;
  int p = 0;
  std::vector<Trajectory> trajectories;

  int size() const { return static_cast<int>(trajectories.size()); }
  void validate() const;
};

// One-step transition on the augmented state:
//   U = [[1, b^T], [0, A^T]] = I + dt * sum_k u_k V_k.
struct StepMatrices {
  Eigen::MatrixXd U;  // (n+1) x (n+1)
  Eigen::MatrixXd A;  // n x n
  Eigen::VectorXd b;  // n
};

StepMatrices step_matrix(const ModelParams& params, const Eigen::VectorXd& u);

// Step matrices for every column of `inputs`; shared by simulation,
// filtering and smoothing so all consumers see identical transitions.
std::vector<StepMatrices> step_matrices_for(const ModelParams& params,
                                            const Eigen::MatrixXd& inputs);

struct SimulationResult {
  Trajectory trajectory;
  Eigen::MatrixXd latents;  // n x (L+1), noise-free constant coordinate excluded
};

// Simulate the HMM for the given input columns. With a seed, Gaussian noise
// is drawn from a generator seeded with it; the stream order is documented
// and fixed: initial measurement noise first, then per step process noise
// followed by measurement noise. Without a seed the simulation is noise-free.
SimulationResult simulate(const ModelParams& params, const Eigen::VectorXd& z0,
                          const Eigen::MatrixXd& inputs,
                          std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace koopgen
