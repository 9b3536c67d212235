#include "koopgen/em.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace koopgen {

namespace {

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double covariance_floor(const Eigen::MatrixXd& s, double abs_floor) {
  return std::max(abs_floor, 1e-12 * s.trace() / static_cast<double>(s.rows()));
}

}  // namespace

MStepAccumulators::MStepAccumulators(int n, int q, int p, double dt)
    : n_(n), q_(q), p_(p), dt_(dt) {
  const int stack = (q + 1) * (n + 1);
  mu0_sum_ = Eigen::VectorXd::Zero(n);
  sig0_sum_ = Eigen::MatrixXd::Zero(n, n);
  obs_resid_sum_ = Eigen::VectorXd::Zero(p);
  obs_resid_sq_ = Eigen::MatrixXd::Zero(p, p);
  obs_cov_sum_ = Eigen::MatrixXd::Zero(p, p);
  gram_ = Eigen::MatrixXd::Zero(stack, stack);
  rhs_ = Eigen::MatrixXd::Zero(stack, n);
  incr_sq_ = Eigen::MatrixXd::Zero(n, n);
}

void MStepAccumulators::add_initial(const Eigen::VectorXd& mu0_hat,
                                    const Eigen::MatrixXd& sig00) {
  ++trajectories_;
  mu0_sum_ += mu0_hat;
  sig0_sum_ += sig00 + mu0_hat * mu0_hat.transpose();
}

void MStepAccumulators::add_observation(const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& mu,
                                        const Eigen::MatrixXd& sig) {
  ++obs_;
  Eigen::VectorXd r = y - mu.head(p_);
  obs_resid_sum_ += r;
  obs_resid_sq_ += r * r.transpose();
  obs_cov_sum_ += sig.topLeftCorner(p_, p_);
}

void MStepAccumulators::add_step(const Eigen::VectorXd& u, const Eigen::VectorXd& mu,
                                 const Eigen::MatrixXd& sig,
                                 const Eigen::VectorXd& mu_next,
                                 const Eigen::MatrixXd& sig_next,
                                 const Eigen::MatrixXd& cross) {
  ++steps_;
  const int a = n_ + 1;

  Eigen::MatrixXd g(a, a);
  g(0, 0) = 1.0;
  g.block(0, 1, 1, n_) = mu.transpose();
  g.block(1, 0, n_, 1) = mu;
  g.block(1, 1, n_, n_) = sig + mu * mu.transpose();

  Eigen::VectorXd dmu = (mu_next - mu) / dt_;
  Eigen::MatrixXd ht(a, n_);  // H_l^T
  ht.topRows(1) = dmu.transpose();
  ht.bottomRows(n_) = (cross - sig) / dt_ + mu * dmu.transpose();

  Eigen::VectorXd u_aug(q_ + 1);
  u_aug(0) = 1.0;
  u_aug.tail(q_) = u;
  for (int j = 0; j <= q_; ++j) {
    for (int k = 0; k <= q_; ++k)
      gram_.block(j * a, k * a, a, a) += (u_aug(j) * u_aug(k)) * g;
    rhs_.middleRows(j * a, a) += u_aug(j) * ht;
  }

  // E[(z_{l+1}-z_l)(z_{l+1}-z_l)^T]
  Eigen::MatrixXd x = cross + mu * mu_next.transpose();  // E[z_l z_{l+1}^T]
  incr_sq_ += sig_next + mu_next * mu_next.transpose() - x - x.transpose() + sig +
              mu * mu.transpose();
}

void MStepAccumulators::merge(const MStepAccumulators& other) {
  trajectories_ += other.trajectories_;
  obs_ += other.obs_;
  steps_ += other.steps_;
  mu0_sum_ += other.mu0_sum_;
  sig0_sum_ += other.sig0_sum_;
  obs_resid_sum_ += other.obs_resid_sum_;
  obs_resid_sq_ += other.obs_resid_sq_;
  obs_cov_sum_ += other.obs_cov_sum_;
  gram_ += other.gram_;
  rhs_ += other.rhs_;
  incr_sq_ += other.incr_sq_;
}

ModelParams MStepAccumulators::finalize(const ModelParams& old,
                                        double abs_floor) const {
  require(trajectories_ > 0 && steps_ > 0, "m_step: no data accumulated");
  const double m = static_cast<double>(trajectories_);
  const double n_obs = static_cast<double>(obs_);
  const double n_steps = static_cast<double>(steps_);

  ModelParams out = old;

  out.mu0 = mu0_sum_ / m;
  Eigen::MatrixXd sig0 = sig0_sum_ / m - out.mu0 * out.mu0.transpose();
  out.sigma0 = clamp_eigenvalues(sig0, covariance_floor(sig0, abs_floor));

  out.c0 = obs_resid_sum_ / n_obs;
  Eigen::MatrixXd sv =
      (obs_cov_sum_ + obs_resid_sq_) / n_obs - out.c0 * out.c0.transpose();
  out.sigma_v = clamp_eigenvalues(sv, covariance_floor(sv, abs_floor));

  Eigen::MatrixXd stack = gram_solve(gram_, rhs_, n_ + 1, "m_step generator update");
  for (int k = 0; k <= q_; ++k)
    out.gen[static_cast<std::size_t>(k)] = stack.middleRows(k * (n_ + 1), n_ + 1);

  // Residual second moment with the new generators, expanded in the
  // already-accumulated sums: the transition residual is
  // z_{l+1} - z_l - dt * W^T (u kron xi).
  Eigen::MatrixXd rw = rhs_.transpose() * stack;
  Eigen::MatrixXd sw = incr_sq_ - dt_ * dt_ * (rw + rw.transpose()) +
                       dt_ * dt_ * stack.transpose() * (gram_ * stack);
  sw /= n_steps;
  out.sigma_w = clamp_eigenvalues(sw, covariance_floor(sw, abs_floor));
  return out;
}

ModelParams m_step(const Dataset& dataset,
                   const std::vector<PosteriorMoments>& posteriors,
                   const ModelParams& old) {
  require(static_cast<int>(posteriors.size()) == dataset.size(),
          "m_step: one posterior per trajectory required");
  MStepAccumulators acc(old.n, old.q, old.p, old.dt);
  for (int m = 0; m < dataset.size(); ++m) {
    const auto& traj = dataset.trajectories[static_cast<std::size_t>(m)];
    const auto& post = posteriors[static_cast<std::size_t>(m)];
    const int len = traj.length();
    require(static_cast<int>(post.mu.size()) == len + 1,
            "m_step: posterior length mismatch");
    acc.add_initial(post.mu[0], post.sig[0]);
    for (int l = 0; l <= len; ++l)
      acc.add_observation(traj.outputs.col(l), post.mu[static_cast<std::size_t>(l)],
                          post.sig[static_cast<std::size_t>(l)]);
    for (int l = 0; l < len; ++l)
      acc.add_step(traj.inputs.col(l), post.mu[static_cast<std::size_t>(l)],
                   post.sig[static_cast<std::size_t>(l)],
                   post.mu[static_cast<std::size_t>(l + 1)],
                   post.sig[static_cast<std::size_t>(l + 1)],
                   post.sig_cross[static_cast<std::size_t>(l)]);
  }
  return acc.finalize(old);
}

namespace {

struct EStepResult {
  double loglik = 0.0;
  MStepAccumulators acc;
};

// Filter + smooth every trajectory, accumulating the M-step sufficient
// statistics on the fly. Trajectories run in parallel; the reduction is in
// trajectory order so results are bitwise reproducible for any thread count.
EStepResult e_step(const Dataset& dataset, const ModelParams& params, int threads) {
  const int m = dataset.size();
  std::vector<double> logliks(static_cast<std::size_t>(m));
  std::vector<MStepAccumulators> accs(
      static_cast<std::size_t>(m),
      MStepAccumulators(params.n, params.q, params.p, params.dt));

  parallel_for(m, threads, [&](int i) {
    const auto& traj = dataset.trajectories[static_cast<std::size_t>(i)];
    auto& acc = accs[static_cast<std::size_t>(i)];
    FilteredMoments filt = kalman_forward(params, traj);
    logliks[static_cast<std::size_t>(i)] = filt.loglik;

    const int len = traj.length();
    Eigen::VectorXd mu_next;
    Eigen::MatrixXd sig_next;
    smooth_backward(params, traj, filt,
                    [&](int l, const Eigen::VectorXd& mu, const Eigen::MatrixXd& sig,
                        const Eigen::MatrixXd& cross) {
                      acc.add_observation(traj.outputs.col(l), mu, sig);
                      if (l < len)
                        acc.add_step(traj.inputs.col(l), mu, sig, mu_next, sig_next,
                                     cross);
                      if (l == 0) acc.add_initial(mu, sig);
                      mu_next = mu;
                      sig_next = sig;
                    });
  });

  EStepResult res{0.0, MStepAccumulators(params.n, params.q, params.p, params.dt)};
  for (int i = 0; i < m; ++i) {
    res.loglik += logliks[static_cast<std::size_t>(i)];
    res.acc.merge(accs[static_cast<std::size_t>(i)]);
  }
  return res;
}

}  // namespace

FitResult fit(const Dataset& dataset, const ModelParams& init, const FitConfig& config) {
  dataset.validate();
  init.validate();
  require(dataset.q == init.q && dataset.p == init.p,
          "fit: dataset and model dimensions do not match");
  require(std::abs(dataset.dt - init.dt) < 1e-12 * (1.0 + std::abs(init.dt)),
          "fit: dataset and model sampling steps differ");
  require(dataset.size() > 0, "fit: empty dataset");

  FitResult res;
  res.params = init;

  auto evaluate = [&](int iter) {
    try {
      return e_step(dataset, res.params, config.threads);
    } catch (const NumericalError& e) {
      throw NumericalError("fit: E-step failed at iteration " + std::to_string(iter) +
                           ": " + e.what());
    }
  };

  EStepResult estep = evaluate(0);
  res.loglik_trace.push_back(estep.loglik);

  for (int it = 1; it <= config.max_iters; ++it) {
    res.params = estep.acc.finalize(res.params, config.cov_floor);
    res.iterations = it;
    estep = evaluate(it);
    res.loglik_trace.push_back(estep.loglik);
    const double prev = res.loglik_trace[res.loglik_trace.size() - 2];
    if (!std::isfinite(estep.loglik))
      throw NumericalError("fit: likelihood diverged at iteration " +
                           std::to_string(it));
    if (config.rel_tol >= 0.0 &&
        estep.loglik - prev < config.rel_tol * (1.0 + std::abs(prev))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

ModelParams init_random(const Dims& dims, double dt, const Eigen::VectorXd& input_lo,
                        const Eigen::VectorXd& input_hi, std::uint64_t seed) {
  require(dims.n >= 1 && dims.p >= 1 && dims.p <= dims.n && dims.q >= 0,
          "init_random: invalid dimensions");
  require(input_lo.size() == dims.q && input_hi.size() == dims.q,
          "init_random: input bounds must have q entries");
  require(dt > 0.0, "init_random: dt must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double base_std = 1.0 / (dt * std::sqrt(static_cast<double>(dims.n)));

  ModelParams params;
  params.dt = dt;
  params.n = dims.n;
  params.q = dims.q;
  params.p = dims.p;
  for (int k = 0; k <= dims.q; ++k) {
    double bound = 1.0;
    if (k >= 1) {
      bound = std::max(std::abs(input_lo(k - 1)), std::abs(input_hi(k - 1)));
      require(std::isfinite(bound) && bound > 0.0,
              "init_random: input bounds must be finite and nonzero");
    }
    Eigen::MatrixXd vt = Eigen::MatrixXd::Zero(dims.n + 1, dims.n);
    const double sd = base_std / bound;
    for (int i = 1; i <= dims.n; ++i)
      for (int j = 0; j < dims.n; ++j) vt(i, j) = sd * gauss(rng);
    params.gen.push_back(vt);
  }
  params.c0 = Eigen::VectorXd::Zero(dims.p);
  params.sigma_w = 1e-2 * Eigen::MatrixXd::Identity(dims.n, dims.n);
  params.sigma_v = 1e-1 * Eigen::MatrixXd::Identity(dims.p, dims.p);
  params.mu0 = Eigen::VectorXd::Zero(dims.n);
  params.sigma0 = Eigen::MatrixXd::Identity(dims.n, dims.n);
  return params;
}

ModelParams init_from_edmd(const Dataset& dataset, const Dictionary& dict) {
  dataset.validate();
  require(dataset.size() > 0, "init_from_edmd: empty dataset");
  require(dict.dim_in() == dataset.p,
          "init_from_edmd: dictionary domain must match the output dimension");
  require(dict.size() >= dataset.p + 1,
          "init_from_edmd: dictionary too small for the output map");
  require(dict.degrees[0].sum() == 0,
          "init_from_edmd: dictionary must contain the constant function first");

  const int p = dataset.p;
  const int big_n = dict.size();
  const int n = big_n - 1;

  // The rebased lift puts (1, y) first so the output map is [0 | I | 0].
  auto lift = [&](const Eigen::VectorXd& y) { return augmented_lift(dict, y); };

  long total_steps = 0;
  for (const auto& traj : dataset.trajectories) total_steps += traj.length();
  require(total_steps > 0, "init_from_edmd: dataset has no transitions");

  const int stack_rows = (dataset.q + 1) * (n + 1);
  Eigen::MatrixXd psi(stack_rows, total_steps);
  Eigen::MatrixXd psi_dot(n, total_steps);
  Eigen::VectorXd mu0_sum = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd z0_sq = Eigen::MatrixXd::Zero(n, n);

  long col = 0;
  for (const auto& traj : dataset.trajectories) {
    const int len = traj.length();
    Eigen::VectorXd xi = lift(traj.outputs.col(0));
    mu0_sum += xi.tail(n);
    z0_sq += xi.tail(n) * xi.tail(n).transpose();
    for (int l = 0; l < len; ++l) {
      Eigen::VectorXd xi_next = lift(traj.outputs.col(l + 1));
      Eigen::VectorXd u_aug(dataset.q + 1);
      u_aug(0) = 1.0;
      u_aug.tail(dataset.q) = traj.inputs.col(l);
      psi.col(col) = lift_kron(u_aug, xi);
      psi_dot.col(col) = (xi_next.tail(n) - xi.tail(n)) / dataset.dt;
      xi = xi_next;
      ++col;
    }
  }

  ModelParams params;
  params.dt = dataset.dt;
  params.n = n;
  params.q = dataset.q;
  params.p = p;
  params.gen = edmd_generator_fit(psi, psi_dot);
  params.c0 = Eigen::VectorXd::Zero(p);
  params.sigma_w = 1e-2 * Eigen::MatrixXd::Identity(n, n);
  params.sigma_v = 1e-1 * Eigen::MatrixXd::Identity(p, p);

  const double m = static_cast<double>(dataset.size());
  params.mu0 = mu0_sum / m;
  Eigen::MatrixXd sig0 = z0_sq / m - params.mu0 * params.mu0.transpose();
  params.sigma0 = clamp_eigenvalues(sig0, 1e-6 * (1.0 + sig0.trace() /
                                                            static_cast<double>(n)));
  return params;
}

std::string format_run_table(const std::vector<RunRecord>& runs) {
  std::ostringstream os;
  os << "n,seed,loglik,converged,iterations,error\n";
  for (const auto& r : runs) {
    os << r.n << ',' << r.seed << ',' << std::setprecision(17) << r.loglik << ','
       << (r.converged ? "true" : "false") << ',' << r.iterations << ','
       << r.error << '\n';
  }
  return os.str();
}

SelectResult select_model(const Dataset& dataset, const std::vector<int>& dims,
                          int restarts, const SelectConfig& config) {
  dataset.validate();
  require(restarts >= 1, "select_model: restarts must be >= 1");
  require(!dims.empty(), "select_model: at least one dimension required");

  Eigen::VectorXd lo = config.input_lo, hi = config.input_hi;
  if (lo.size() == 0) {
    Eigen::VectorXd bound = Eigen::VectorXd::Ones(dataset.q);
    for (const auto& traj : dataset.trajectories)
      for (int k = 0; k < dataset.q; ++k)
        if (traj.inputs.rows() > 0 && traj.inputs.cols() > 0)
          bound(k) = std::max(bound(k), traj.inputs.row(k).cwiseAbs().maxCoeff());
    lo = -bound;
    hi = bound;
  }

  SelectResult result;
  double best_loglik = -std::numeric_limits<double>::infinity();
  int run_index = 0;
  for (int n : dims) {
    for (int r = 0; r < restarts; ++r, ++run_index) {
      RunRecord rec;
      rec.n = n;
      rec.seed = split_seed(config.seed, static_cast<std::uint64_t>(run_index));
      try {
        ModelParams init = init_random(Dims{n, dataset.q, dataset.p}, dataset.dt,
                                       lo, hi, rec.seed);
        FitResult fr = fit(dataset, init, config.fit);
        rec.loglik = fr.loglik_trace.back();
        rec.converged = fr.converged;
        rec.iterations = fr.iterations;
        if (fr.converged && rec.loglik > best_loglik) {
          best_loglik = rec.loglik;
          result.best = std::move(fr);
          result.best_run = run_index;
        }
      } catch (const std::exception& e) {
        rec.loglik = std::numeric_limits<double>::quiet_NaN();
        rec.error = e.what();
      }
      result.runs.push_back(std::move(rec));
    }
  }

  if (result.best_run < 0)
    throw SelectionError("select_model: no run converged\n" +
                             format_run_table(result.runs),
                         result.runs);
  return result;
}

}  // namespace koopgen
