#pragma once

#include <functional>

#include "koopgen/model.hpp"
#include "koopgen/mpc.hpp"

namespace koopgen {

// ODE plant integrated with classical RK4 using internal substepping
// (default 10 substeps per sampling step); the input is held constant over
// each sampling step. Measurement noise, when enabled, is drawn once per
// produced measurement from a seeded generator.
class OdePlant : public Plant {
 public:
  using Field = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
  using Output = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  OdePlant(Field field, Output output, int state_dim, int in_dim, int out_dim,
           double dt, int substeps = 10, double noise_std = 0.0,
           std::uint64_t seed = 0);

  void reset(const Eigen::VectorXd& x0);
  const Eigen::VectorXd& state() const { return x_; }

  int input_dim() const override { return in_dim_; }
  int output_dim() const override { return out_dim_; }
  double dt() const override { return dt_; }
  Eigen::VectorXd observe() override { return last_y_; }
  Eigen::VectorXd step(const Eigen::VectorXd& u) override;

 private:
  void refresh_measurement();

  Field field_;
  Output output_;
  int in_dim_, out_dim_;
  double dt_;
  int substeps_;
  double noise_std_;
  std::uint64_t rng_state_;
  Eigen::VectorXd x_;
  Eigen::VectorXd last_y_;
};

// One RK4 sampling step (with substeps) for a control-affine field at
// constant input.
Eigen::VectorXd rk4_step(const OdePlant::Field& field, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u, double h, int substeps);

// Actuated slow-manifold system:
//   x1' = -alpha x1 + u,  x2' = beta (x1^3 - x2),  y = x2 + v.
// The exact 5-dimensional lifted representation uses the latent ordering
// (x2, x1, x1^2, x1^3) so the output map is [0 | I | 0].
struct SlowManifold {
  OdePlant plant;
  ModelParams exact;  // n = 4, q = 1, p = 1
};
SlowManifold slow_manifold_plant(double alpha, double beta, double dt,
                                 double noise_var = 0.01, std::uint64_t seed = 0);

// Unforced Duffing oscillator x'' = -delta x' + x (beta + alpha x^2) with
// full-state output y = (x, x'). The defaults give stable spirals at
// x = +/-1 (eigenvalues (-1 +/- i sqrt(31))/4) and a saddle at the origin.
OdePlant duffing_plant(double alpha = -1.0, double beta = 1.0, double delta = 0.5,
                       double dt = 0.02, int substeps = 10);

// Scalar bilinear plant x' = u x stepped with the exact ZOH solution
// x_{l+1} = x_l exp(u dt); used as ground truth for the superposition demo.
class ScalarBilinearPlant : public Plant {
 public:
  explicit ScalarBilinearPlant(double dt, double x0 = 1.0) : dt_(dt), x_(x0) {}
  void reset(double x0) { x_ = x0; }
  int input_dim() const override { return 1; }
  int output_dim() const override { return 1; }
  double dt() const override { return dt_; }
  Eigen::VectorXd observe() override { return Eigen::VectorXd::Constant(1, x_); }
  Eigen::VectorXd step(const Eigen::VectorXd& u) override;

 private:
  double dt_;
  double x_;
};

// The exact 2-state bilinear model of x' = u x (latent z = x, generators
// V_0 = 0 and V_1 with unit coupling); covariance defaults are tiny.
ModelParams scalar_bilinear_exact_params(double dt);

// Sampled input signal with a continuous-time evaluator.
struct InputSignal {
  int dim = 0;
  std::function<Eigen::VectorXd(double)> eval;

  // u_l = eval(l * dt) for l = 0..steps-1.
  Eigen::MatrixXd sample(int steps, double dt) const;
};

// Gaussian draws held constant over intervals of length `hold` covering
// [0, horizon]; sigma is the standard deviation.
InputSignal input_piecewise_constant(int dim, double hold, double sigma,
                                     std::uint64_t seed, double horizon);

// Natural cubic spline through knots on a random time grid with spacing
// uniform in [min_dt, max_dt] and values uniform in [lo, hi] per channel.
// A nonpositive horizon yields a single knot, i.e. a constant signal.
InputSignal input_smooth_spline(int dim, double min_dt, double max_dt,
                                const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                std::uint64_t seed, double horizon);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// 50 trajectories of 500 observations at dt = 0.01 from the slow-manifold
// system (alpha = 1, beta = 5), unit-Gaussian initial conditions,
// piecewise-constant inputs (hold 0.5, variance 5), measurement noise
// variance 0.01 throughout. Train keeps the first 250 observations; test
// keeps the full trajectories.
DatasetSplit dataset_protocol_slow_manifold(std::uint64_t seed);

// 50 train and 50 test trajectories of 801 samples at dt = 0.02 from the
// unforced Duffing oscillator, initial conditions uniform on [-2,2]^2,
// noise-free full-state outputs.
DatasetSplit dataset_protocol_duffing(std::uint64_t seed);

// eps = (1/M) sum_m sum_l (||yhat_l - y_l|| / ||y_l||) dt, skipping terms
// with ||y_l|| = 0 (their count is reported via `skipped`). Throws when
// every term is skipped.
double relative_l2_error(const std::vector<Eigen::MatrixXd>& preds,
                         const Dataset& truth, int* skipped = nullptr);

}  // namespace koopgen
