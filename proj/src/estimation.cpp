#include "koopgen/estimation.hpp"

#include <cmath>
#include <numbers>

namespace koopgen {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Innovation covariance factorization with the jitter fallback mandated for
// all SPD inversions in the forward/backward recursions.
Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& s, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-10 * s.trace() / static_cast<double>(s.rows());
  llt.compute(s + jitter * Eigen::MatrixXd::Identity(s.rows(), s.cols()));
  if (llt.info() == Eigen::Success) return llt;
  throw NumericalError(std::string("singular covariance in ") + what);
}

}  // namespace

KalmanState KalmanState::prior(const ModelParams& params) {
  return KalmanState{params.mu0, params.sigma0};
}

void KalmanState::predict(const ModelParams& params, const StepMatrices& sm) {
  mu = sm.A * mu + sm.b;
  sig = symmetrized(params.sigma_w + sm.A * sig * sm.A.transpose());
}

double KalmanState::update(const ModelParams& params, const Eigen::VectorXd& y) {
  const int p = params.p;
  // Ctilde = [I 0], so Ctilde Sig Ctilde^T is the leading p x p block.
  Eigen::MatrixXd s = params.sigma_v + sig.topLeftCorner(p, p);
  if (!s.allFinite()) throw NumericalError("non-finite innovation covariance");
  auto llt = factor_spd(symmetrized(s), "innovation covariance");

  Eigen::VectorXd innov = y - params.c0 - mu.head(p);
  Eigen::MatrixXd gain = llt.solve(sig.leftCols(p).transpose()).transpose();
  mu += gain * innov;
  // Joseph form keeps the filtered covariance PSD even when an unstable
  // intermediate model inflates the predicted covariance.
  Eigen::MatrixXd ikc = Eigen::MatrixXd::Identity(sig.rows(), sig.cols());
  ikc.leftCols(p) -= gain;
  sig = symmetrized(ikc * sig * ikc.transpose() +
                    gain * params.sigma_v * gain.transpose());

  const double quad = innov.dot(llt.solve(innov));
  double logdet = 0.0;
  for (int i = 0; i < p; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (p * kLog2Pi + logdet + quad);
}

FilteredMoments kalman_forward(const ModelParams& params, const Trajectory& traj) {
  traj.validate();
  require(traj.outputs.rows() == params.p && traj.inputs.rows() == params.q,
          "kalman_forward: trajectory dimensions do not match model");
  const int len = traj.length();
  const auto steps = step_matrices_for(params, traj.inputs);

  FilteredMoments fm;
  fm.mu_pred.resize(len + 1);
  fm.mu_f.resize(len + 1);
  fm.sig_pred.resize(len + 1);
  fm.sig_f.resize(len + 1);

  KalmanState st = KalmanState::prior(params);
  for (int l = 0; l <= len; ++l) {
    if (l > 0) st.predict(params, steps[static_cast<std::size_t>(l - 1)]);
    fm.mu_pred[l] = st.mu;
    fm.sig_pred[l] = st.sig;
    fm.loglik += st.update(params, traj.outputs.col(l));
    fm.mu_f[l] = st.mu;
    fm.sig_f[l] = st.sig;
  }
  if (!std::isfinite(fm.loglik))
    throw NumericalError("kalman_forward: log likelihood is not finite");
  return fm;
}

void smooth_backward(const ModelParams& params, const Trajectory& traj,
                     const FilteredMoments& filt, const SmootherVisitor& visit) {
  const int len = traj.length();
  require(static_cast<int>(filt.mu_f.size()) == len + 1,
          "smooth_backward: filter output does not match trajectory");
  const auto steps = step_matrices_for(params, traj.inputs);

  Eigen::VectorXd mu_s = filt.mu_f[static_cast<std::size_t>(len)];
  Eigen::MatrixXd sig_s = filt.sig_f[static_cast<std::size_t>(len)];
  visit(len, mu_s, sig_s, Eigen::MatrixXd());

  for (int l = len - 1; l >= 0; --l) {
    const auto& sm = steps[static_cast<std::size_t>(l)];
    const auto& sig_f = filt.sig_f[static_cast<std::size_t>(l)];
    const auto& sig_pred_next = filt.sig_pred[static_cast<std::size_t>(l + 1)];
    // J_l = Sig_f A^T (Sig_pred)^{-1}
    Eigen::MatrixXd gain =
        spd_solve(sig_pred_next, sm.A * sig_f, "smoothing gain").transpose();
    Eigen::VectorXd mu_new =
        filt.mu_f[static_cast<std::size_t>(l)] +
        gain * (mu_s - filt.mu_pred[static_cast<std::size_t>(l + 1)]);
    Eigen::MatrixXd sig_new =
        symmetrized(sig_f + gain * (sig_s - sig_pred_next) * gain.transpose());
    Eigen::MatrixXd cross = gain * sig_s;  // Cov(z_l, z_{l+1} | Y)
    mu_s = mu_new;
    sig_s = sig_new;
    visit(l, mu_s, sig_s, cross);
  }
}

PosteriorMoments rts_smoother(const ModelParams& params, const Trajectory& traj,
                              const FilteredMoments& filt) {
  const int len = traj.length();
  PosteriorMoments pm;
  pm.mu.resize(static_cast<std::size_t>(len) + 1);
  pm.sig.resize(static_cast<std::size_t>(len) + 1);
  pm.sig_cross.resize(static_cast<std::size_t>(len));
  smooth_backward(params, traj, filt,
                  [&](int l, const Eigen::VectorXd& mu, const Eigen::MatrixXd& sig,
                      const Eigen::MatrixXd& cross) {
                    pm.mu[static_cast<std::size_t>(l)] = mu;
                    pm.sig[static_cast<std::size_t>(l)] = sig;
                    if (l < len) pm.sig_cross[static_cast<std::size_t>(l)] = cross;
                  });
  return pm;
}

namespace {

struct DenseJoint {
  Eigen::VectorXd mean_z;   // stacked latent mean, (L+1)n
  Eigen::MatrixXd cov_z;    // stacked latent covariance
  Eigen::VectorXd mean_y;   // stacked output mean, (L+1)p
  Eigen::MatrixXd cov_y;    // stacked output covariance
  Eigen::MatrixXd cross;    // Cov(Z, Y)
  Eigen::VectorXd y_stack;  // observed outputs, stacked
};

DenseJoint build_joint(const ModelParams& params, const Trajectory& traj) {
  traj.validate();
  params.validate();
  const int n = params.n;
  const int p = params.p;
  const int len = traj.length();
  require((len + 1) * n <= 64,
          "dense_posterior_oracle: size cap (L+1)*n <= 64 exceeded");
  const auto steps = step_matrices_for(params, traj.inputs);

  const int nz = (len + 1) * n;
  const int ny = (len + 1) * p;
  DenseJoint j;
  j.mean_z.resize(nz);
  j.cov_z.setZero(nz, nz);

  j.mean_z.head(n) = params.mu0;
  j.cov_z.topLeftCorner(n, n) = params.sigma0;
  for (int l = 0; l < len; ++l) {
    const auto& sm = steps[static_cast<std::size_t>(l)];
    j.mean_z.segment((l + 1) * n, n) = sm.A * j.mean_z.segment(l * n, n) + sm.b;
    for (int k = 0; k <= l; ++k) {
      Eigen::MatrixXd blk = sm.A * j.cov_z.block(l * n, k * n, n, n);
      j.cov_z.block((l + 1) * n, k * n, n, n) = blk;
      j.cov_z.block(k * n, (l + 1) * n, n, n) = blk.transpose();
    }
    j.cov_z.block((l + 1) * n, (l + 1) * n, n, n) =
        params.sigma_w + sm.A * j.cov_z.block(l * n, l * n, n, n) * sm.A.transpose();
  }
  j.cov_z = symmetrized(j.cov_z);

  // y_l = c0 + [I 0] z_l + v_l
  j.mean_y.resize(ny);
  j.cov_y.setZero(ny, ny);
  j.cross.setZero(nz, ny);
  j.y_stack.resize(ny);
  for (int l = 0; l <= len; ++l) {
    j.mean_y.segment(l * p, p) = params.c0 + j.mean_z.segment(l * n, n).head(p);
    j.y_stack.segment(l * p, p) = traj.outputs.col(l);
    for (int k = 0; k <= len; ++k)
      j.cov_y.block(l * p, k * p, p, p) = j.cov_z.block(l * n, k * n, p, p);
    j.cov_y.block(l * p, l * p, p, p) += params.sigma_v;
    for (int k = 0; k <= len; ++k)
      j.cross.block(k * n, l * p, n, p) = j.cov_z.block(k * n, l * n, n, p);
  }
  j.cov_y = symmetrized(j.cov_y);
  return j;
}

}  // namespace

DensePosterior dense_joint_posterior(const ModelParams& params,
                                     const Trajectory& traj) {
  DenseJoint j = build_joint(params, traj);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(j.cov_y);
  DensePosterior post;
  post.mean = j.mean_z + j.cross * ldlt.solve(j.y_stack - j.mean_y);
  post.cov = symmetrized(j.cov_z - j.cross * ldlt.solve(j.cross.transpose()));
  return post;
}

PosteriorMoments dense_posterior_oracle(const ModelParams& params,
                                        const Trajectory& traj) {
  const DensePosterior post = dense_joint_posterior(params, traj);
  const int n = params.n;
  const int len = traj.length();
  PosteriorMoments pm;
  for (int l = 0; l <= len; ++l) {
    pm.mu.push_back(post.mean.segment(l * n, n));
    pm.sig.push_back(post.cov.block(l * n, l * n, n, n));
    if (l < len) pm.sig_cross.push_back(post.cov.block(l * n, (l + 1) * n, n, n));
  }
  return pm;
}

double dense_log_marginal(const ModelParams& params, const Trajectory& traj) {
  DenseJoint j = build_joint(params, traj);
  Eigen::LLT<Eigen::MatrixXd> llt(j.cov_y);
  require(llt.info() == Eigen::Success, "dense_log_marginal: output covariance not PD");
  Eigen::VectorXd r = j.y_stack - j.mean_y;
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < j.cov_y.rows(); ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (static_cast<double>(j.cov_y.rows()) * kLog2Pi + logdet +
                 r.dot(llt.solve(r)));
}

}  // namespace koopgen
