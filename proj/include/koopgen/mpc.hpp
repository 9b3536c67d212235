#pragma once

#include "koopgen/estimation.hpp"
#include "koopgen/model.hpp"

namespace koopgen {

// Quadratic tracking problem over a finite horizon with input box bounds.
// y_ref must provide at least n_p + 1 reference outputs.
struct OcpSpec {
  Eigen::MatrixXd Q;  // p x p PSD tracking weight
  Eigen::MatrixXd R;  // q x q PD input weight
  int n_p = 0;        // prediction horizon (steps)
  int n_c = 0;        // control horizon (steps), n_c <= n_p
  Eigen::VectorXd u_min, u_max;
  std::vector<Eigen::VectorXd> y_ref;

  void validate(int q, int p) const;
};

struct SolverConfig {
  double tol = 1e-6;          // projected-gradient norm threshold
  int max_iters = 200;
  double initial_step = 1.0;
  double backtrack = 0.5;
};

// Noise-free propagation of the surrogate; column j of the result is y_j,
// j = 0..n_p for n_p input columns. Arithmetic is shared with simulate().
Eigen::MatrixXd rollout(const ModelParams& params, const Eigen::VectorXd& z0,
                        const Eigen::MatrixXd& inputs);

// dt * sum_{j=0..n_p} (y_j - ref_j)^T Q (y_j - ref_j) + dt * sum_{j<n_p} u_j^T R u_j
double ocp_cost(const ModelParams& params, const Eigen::VectorXd& z0,
                const Eigen::MatrixXd& inputs, const OcpSpec& spec);

// Exact gradient of ocp_cost with respect to the inputs (discretize-then-
// differentiate adjoint recursion through the bilinear dynamics); q x n_p.
Eigen::MatrixXd ocp_gradient(const ModelParams& params, const Eigen::VectorXd& z0,
                             const Eigen::MatrixXd& inputs, const OcpSpec& spec);

struct OcpSolution {
  Eigen::MatrixXd inputs;  // q x n_p, clipped to the box
  double cost = 0.0;
  int iterations = 0;
};

// Projected gradient descent with Armijo backtracking; the cost sequence is
// nonincreasing across accepted iterates and all iterates satisfy the box.
OcpSolution solve_ocp(const ModelParams& params, const Eigen::VectorXd& z0,
                      const OcpSpec& spec, const SolverConfig& config,
                      const Eigen::MatrixXd& warm_start = Eigen::MatrixXd());

// Controlled system interface: step(u) advances exactly one sampling step
// and returns the new measurement; observe() returns the measurement at the
// current time without advancing.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual double dt() const = 0;
  virtual Eigen::VectorXd observe() = 0;
  virtual Eigen::VectorXd step(const Eigen::VectorXd& u) = 0;
};

struct MpcTrace {
  Eigen::VectorXd t;       // total_steps + 1 entries
  Eigen::MatrixXd y;       // p x (total_steps + 1) measurements
  Eigen::MatrixXd y_ref;   // p x (total_steps + 1)
  Eigen::MatrixXd u;       // q x total_steps applied inputs
  Eigen::MatrixXd z_est;   // n x (total_steps + 1) filtered means
};

// Receding-horizon loop: a Kalman filter assimilates each measurement, the
// open-loop problem is re-solved every n_c steps from the filtered mean
// (warm-started with the previous solution shifted by n_c), and the first
// n_c optimal inputs are applied.
MpcTrace mpc_loop(Plant& plant, const ModelParams& params, const OcpSpec& spec,
                  int total_steps, const SolverConfig& config = SolverConfig());

}  // namespace koopgen
