#include "koopgen/systems.hpp"

#include <cmath>
#include <random>

namespace koopgen {

Eigen::VectorXd rk4_step(const OdePlant::Field& field, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u, double h, int substeps) {
  Eigen::VectorXd state = x;
  const double hs = h / substeps;
  for (int s = 0; s < substeps; ++s) {
    const Eigen::VectorXd k1 = field(state, u);
    const Eigen::VectorXd k2 = field(state + 0.5 * hs * k1, u);
    const Eigen::VectorXd k3 = field(state + 0.5 * hs * k2, u);
    const Eigen::VectorXd k4 = field(state + hs * k3, u);
    state += (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return state;
}

OdePlant::OdePlant(Field field, Output output, int state_dim, int in_dim,
                   int out_dim, double dt, int substeps, double noise_std,
                   std::uint64_t seed)
    : field_(std::move(field)),
      output_(std::move(output)),
      in_dim_(in_dim),
      out_dim_(out_dim),
      dt_(dt),
      substeps_(substeps),
      noise_std_(noise_std),
      rng_state_(seed) {
  reset(Eigen::VectorXd::Zero(state_dim));
}

void OdePlant::refresh_measurement() {
  last_y_ = output_(x_);
  if (noise_std_ > 0.0) {
    std::mt19937_64 rng(rng_state_);
    std::normal_distribution<double> gauss(0.0, noise_std_);
    for (Eigen::Index i = 0; i < last_y_.size(); ++i) last_y_(i) += gauss(rng);
    rng_state_ = rng();
  }
}

void OdePlant::reset(const Eigen::VectorXd& x0) {
  x_ = x0;
  refresh_measurement();
}

Eigen::VectorXd OdePlant::step(const Eigen::VectorXd& u) {
  require(u.size() == in_dim_, "OdePlant::step: input dimension mismatch");
  x_ = rk4_step(field_, x_, u, dt_, substeps_);
  refresh_measurement();
  return last_y_;
}

SlowManifold slow_manifold_plant(double alpha, double beta, double dt,
                                 double noise_var, std::uint64_t seed) {
  require(alpha > 0.0 && beta > 0.0, "slow_manifold_plant: alpha, beta must be positive");
  auto field = [alpha, beta](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx(0) = -alpha * x(0) + u(0);
    dx(1) = beta * (x(0) * x(0) * x(0) - x(1));
    return dx;
  };
  auto output = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Constant(1, x(1));
  };
  OdePlant plant(field, output, 2, 1, 1, dt, 10, std::sqrt(noise_var), seed);

  // Lifted state (1, x2, x1, x1^2, x1^3); rows below are d/dt coefficients,
  // the generators are their transposes.
  Eigen::MatrixXd m0 = Eigen::MatrixXd::Zero(5, 5);
  m0(1, 1) = -beta;
  m0(1, 4) = beta;
  m0(2, 2) = -alpha;
  m0(3, 3) = -2.0 * alpha;
  m0(4, 4) = -3.0 * alpha;
  Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(5, 5);
  m1(2, 0) = 1.0;
  m1(3, 2) = 2.0;
  m1(4, 3) = 3.0;

  ModelParams exact;
  exact.dt = dt;
  exact.n = 4;
  exact.q = 1;
  exact.p = 1;
  exact.gen.push_back(m0.transpose().rightCols(4));
  exact.gen.push_back(m1.transpose().rightCols(4));
  exact.c0 = Eigen::VectorXd::Zero(1);
  exact.sigma_w = Eigen::MatrixXd::Zero(4, 4);
  // sigma_v must stay strictly positive definite even for a noise-free plant.
  exact.sigma_v = Eigen::MatrixXd::Constant(1, 1, std::max(noise_var, 1e-12));
  // Moments of (x2, x1, x1^2, x1^3) for standard-normal x1, x2.
  exact.mu0 = Eigen::VectorXd::Zero(4);
  exact.mu0(2) = 1.0;
  exact.sigma0 = Eigen::MatrixXd::Zero(4, 4);
  exact.sigma0(0, 0) = 1.0;
  exact.sigma0(1, 1) = 1.0;
  exact.sigma0(1, 3) = 3.0;
  exact.sigma0(3, 1) = 3.0;
  exact.sigma0(2, 2) = 2.0;
  exact.sigma0(3, 3) = 15.0;
  return SlowManifold{std::move(plant), std::move(exact)};
}

OdePlant duffing_plant(double alpha, double beta, double delta, double dt,
                       int substeps) {
  auto field = [alpha, beta, delta](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::VectorXd dx(2);
    dx(0) = x(1);
    dx(1) = -delta * x(1) + x(0) * (beta + alpha * x(0) * x(0));
    return dx;
  };
  auto output = [](const Eigen::VectorXd& x) { return x; };
  return OdePlant(field, output, 2, 0, 2, dt, substeps);
}

Eigen::VectorXd ScalarBilinearPlant::step(const Eigen::VectorXd& u) {
  require(u.size() == 1, "ScalarBilinearPlant::step: input dimension mismatch");
  x_ *= std::exp(u(0) * dt_);
  return observe();
}

ModelParams scalar_bilinear_exact_params(double dt) {
  ModelParams params;
  params.dt = dt;
  params.n = 1;
  params.q = 1;
  params.p = 1;
  params.gen.push_back(Eigen::MatrixXd::Zero(2, 1));
  Eigen::MatrixXd v1 = Eigen::MatrixXd::Zero(2, 1);
  v1(1, 0) = 1.0;  // d/dt x = u x
  params.gen.push_back(v1);
  params.c0 = Eigen::VectorXd::Zero(1);
  params.sigma_w = Eigen::MatrixXd::Zero(1, 1);
  params.sigma_v = Eigen::MatrixXd::Constant(1, 1, 1e-8);
  params.mu0 = Eigen::VectorXd::Ones(1);
  params.sigma0 = Eigen::MatrixXd::Constant(1, 1, 1e-6);
  return params;
}

Eigen::MatrixXd InputSignal::sample(int steps, double dt) const {
  Eigen::MatrixXd out(dim, steps);
  for (int l = 0; l < steps; ++l) out.col(l) = eval(l * dt);
  return out;
}

InputSignal input_piecewise_constant(int dim, double hold, double sigma,
                                     std::uint64_t seed, double horizon) {
  require(dim >= 1 && hold > 0.0 && sigma >= 0.0 && horizon >= 0.0,
          "input_piecewise_constant: invalid arguments");
  const int intervals = std::max(1, static_cast<int>(std::ceil(horizon / hold))) + 1;
  Eigen::MatrixXd values(dim, intervals);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < intervals; ++i)
    for (int d = 0; d < dim; ++d) values(d, i) = sigma * gauss(rng);

  InputSignal sig;
  sig.dim = dim;
  sig.eval = [values, hold, intervals](double t) {
    int i = static_cast<int>(std::floor(t / hold + 1e-12));
    i = std::clamp(i, 0, intervals - 1);
    return Eigen::VectorXd(values.col(i));
  };
  return sig;
}

namespace {

// Natural cubic spline through (knot_t[i], values(i)); second derivatives
// from the standard tridiagonal system.
struct CubicSpline {
  Eigen::VectorXd t, y, m;

  static CubicSpline build(const Eigen::VectorXd& t, const Eigen::VectorXd& y) {
    CubicSpline s;
    s.t = t;
    s.y = y;
    const int n = static_cast<int>(t.size());
    s.m = Eigen::VectorXd::Zero(n);
    if (n < 3) return s;
    Eigen::VectorXd a(n - 2), b(n - 2), c(n - 2), d(n - 2);
    for (int i = 1; i < n - 1; ++i) {
      const double h0 = t(i) - t(i - 1);
      const double h1 = t(i + 1) - t(i);
      a(i - 1) = h0;
      b(i - 1) = 2.0 * (h0 + h1);
      c(i - 1) = h1;
      d(i - 1) = 6.0 * ((y(i + 1) - y(i)) / h1 - (y(i) - y(i - 1)) / h0);
    }
    // Thomas algorithm.
    for (int i = 1; i < n - 2; ++i) {
      const double w = a(i) / b(i - 1);
      b(i) -= w * c(i - 1);
      d(i) -= w * d(i - 1);
    }
    Eigen::VectorXd x(n - 2);
    x(n - 3) = d(n - 3) / b(n - 3);
    for (int i = n - 4; i >= 0; --i) x(i) = (d(i) - c(i) * x(i + 1)) / b(i);
    s.m.segment(1, n - 2) = x;
    return s;
  }

  double eval(double tt) const {
    const int n = static_cast<int>(t.size());
    if (n == 1) return y(0);
    tt = std::clamp(tt, t(0), t(n - 1));
    int i = 0;
    while (i < n - 2 && tt > t(i + 1)) ++i;
    const double h = t(i + 1) - t(i);
    const double a = (t(i + 1) - tt) / h;
    const double b = (tt - t(i)) / h;
    return a * y(i) + b * y(i + 1) +
           ((a * a * a - a) * m(i) + (b * b * b - b) * m(i + 1)) * h * h / 6.0;
  }
};

}  // namespace

InputSignal input_smooth_spline(int dim, double min_dt, double max_dt,
                                const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                std::uint64_t seed, double horizon) {
  require(dim >= 1 && min_dt > 0.0 && max_dt >= min_dt,
          "input_smooth_spline: invalid grid range");
  require(lo.size() == dim && hi.size() == dim &&
              (lo.array() <= hi.array()).all(),
          "input_smooth_spline: invalid value box");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> knots{0.0};
  while (horizon > 0.0 && knots.back() < horizon)
    knots.push_back(knots.back() + min_dt + (max_dt - min_dt) * unif(rng));

  const int nk = static_cast<int>(knots.size());
  Eigen::VectorXd t = Eigen::Map<Eigen::VectorXd>(knots.data(), nk);
  Eigen::MatrixXd values(dim, nk);
  for (int i = 0; i < nk; ++i)
    for (int d = 0; d < dim; ++d)
      values(d, i) = lo(d) + (hi(d) - lo(d)) * unif(rng);

  std::vector<CubicSpline> splines;
  splines.reserve(static_cast<std::size_t>(dim));
  for (int d = 0; d < dim; ++d)
    splines.push_back(CubicSpline::build(t, values.row(d).transpose()));

  InputSignal sig;
  sig.dim = dim;
  sig.eval = [splines, dim](double tt) {
    Eigen::VectorXd out(dim);
    for (int d = 0; d < dim; ++d) out(d) = splines[static_cast<std::size_t>(d)].eval(tt);
    return out;
  };
  return sig;
}

DatasetSplit dataset_protocol_slow_manifold(std::uint64_t seed) {
  const double dt = 0.01;
  const int observations = 500;  // per trajectory
  const int train_observations = 250;
  const int m_count = 50;
  const double noise_std = 0.1;

  DatasetSplit split;
  for (Dataset* d : {&split.train, &split.test}) {
    d->dt = dt;
    d->q = 1;
    d->p = 1;
  }

  auto field = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx(0) = -x(0) + u(0);
    dx(1) = 5.0 * (x(0) * x(0) * x(0) - x(1));
    return dx;
  };

  for (int m = 0; m < m_count; ++m) {
    std::mt19937_64 rng(split_seed(seed, static_cast<std::uint64_t>(m)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd x(2);
    x << gauss(rng), gauss(rng);

    const double horizon = (observations - 1) * dt;
    InputSignal u_sig = input_piecewise_constant(1, 0.5, std::sqrt(5.0), rng(), horizon);
    Eigen::MatrixXd inputs = u_sig.sample(observations - 1, dt);

    Trajectory traj;
    traj.inputs = inputs;
    traj.outputs.resize(1, observations);
    traj.outputs(0, 0) = x(1) + noise_std * gauss(rng);
    for (int l = 0; l < observations - 1; ++l) {
      x = rk4_step(field, x, inputs.col(l), dt, 10);
      traj.outputs(0, l + 1) = x(1) + noise_std * gauss(rng);
    }

    Trajectory train;
    train.inputs = traj.inputs.leftCols(train_observations - 1);
    train.outputs = traj.outputs.leftCols(train_observations);
    split.train.trajectories.push_back(std::move(train));
    split.test.trajectories.push_back(std::move(traj));
  }
  return split;
}

DatasetSplit dataset_protocol_duffing(std::uint64_t seed) {
  const double dt = 0.02;
  const int observations = 801;
  const int m_count = 50;

  auto field = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::VectorXd dx(2);
    dx(0) = x(1);
    dx(1) = -0.5 * x(1) + x(0) * (1.0 - x(0) * x(0));
    return dx;
  };

  auto generate = [&](std::uint64_t base) {
    Dataset d;
    d.dt = dt;
    d.q = 0;
    d.p = 2;
    const Eigen::VectorXd no_input(0);
    for (int m = 0; m < m_count; ++m) {
      std::mt19937_64 rng(split_seed(base, static_cast<std::uint64_t>(m)));
      std::uniform_real_distribution<double> unif(-2.0, 2.0);
      Eigen::VectorXd x(2);
      x << unif(rng), unif(rng);
      Trajectory traj;
      traj.inputs.resize(0, observations - 1);
      traj.outputs.resize(2, observations);
      traj.outputs.col(0) = x;
      for (int l = 0; l < observations - 1; ++l) {
        x = rk4_step(field, x, no_input, dt, 10);
        traj.outputs.col(l + 1) = x;
      }
      d.trajectories.push_back(std::move(traj));
    }
    return d;
  };

  DatasetSplit split;
  split.train = generate(split_seed(seed, 0xA11CE));
  split.test = generate(split_seed(seed, 0xB0B));
  return split;
}

double relative_l2_error(const std::vector<Eigen::MatrixXd>& preds,
                         const Dataset& truth, int* skipped) {
  require(preds.size() == truth.trajectories.size(),
          "relative_l2_error: trajectory count mismatch");
  double total = 0.0;
  int skip_count = 0;
  long terms = 0;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    const auto& y = truth.trajectories[m].outputs;
    require(preds[m].rows() == y.rows() && preds[m].cols() == y.cols(),
            "relative_l2_error: shape mismatch");
    for (Eigen::Index l = 0; l < y.cols(); ++l) {
      const double denom = y.col(l).norm();
      if (denom == 0.0) {
        ++skip_count;
        continue;
      }
      total += (preds[m].col(l) - y.col(l)).norm() / denom * truth.dt;
      ++terms;
    }
  }
  if (skipped != nullptr) *skipped = skip_count;
  if (terms == 0) throw std::invalid_argument("relative_l2_error: all-zero truth");
  return total / static_cast<double>(preds.size());
}

}  // namespace koopgen
