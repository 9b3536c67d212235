#include "koopgen/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace koopgen {

Eigen::MatrixXd ModelParams::output_matrix() const {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(p, n);
  c.leftCols(p).setIdentity();
  return c;
}

Eigen::MatrixXd ModelParams::full_generator(int k) const {
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n + 1, n + 1);
  v.rightCols(n) = gen.at(static_cast<std::size_t>(k));
  return v;
}

namespace {

bool is_symmetric_psd(const Eigen::MatrixXd& s, double tol) {
  if (s.rows() != s.cols()) return false;
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > tol * (1.0 + s.cwiseAbs().maxCoeff()))
    return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(s));
  return es.eigenvalues().minCoeff() >= -tol * (1.0 + s.cwiseAbs().maxCoeff());
}

}  // namespace

void ModelParams::validate() const {
  require(dt > 0.0 && std::isfinite(dt), "ModelParams: dt must be positive");
  require(n >= 1, "ModelParams: latent dimension must be >= 1");
  require(q >= 0, "ModelParams: input channel count must be >= 0");
  require(p >= 1 && p <= n, "ModelParams: output dimension must satisfy 1 <= p <= n");
  require(static_cast<int>(gen.size()) == q + 1,
          "ModelParams: expected q+1 generator matrices");
  for (const auto& g : gen) {
    require(g.rows() == n + 1 && g.cols() == n,
            "ModelParams: generator matrices must be (n+1) x n");
    require(g.allFinite(), "ModelParams: generator matrices must be finite");
  }
  require(c0.size() == p, "ModelParams: c0 must have size p");
  require(mu0.size() == n, "ModelParams: mu0 must have size n");
  require(c0.allFinite() && mu0.allFinite(), "ModelParams: c0/mu0 must be finite");
  require(sigma_w.rows() == n && sigma_w.cols() == n, "ModelParams: sigma_w must be n x n");
  require(sigma_v.rows() == p && sigma_v.cols() == p, "ModelParams: sigma_v must be p x p");
  require(sigma0.rows() == n && sigma0.cols() == n, "ModelParams: sigma0 must be n x n");
  const double tol = 1e-10;
  require(is_symmetric_psd(sigma_w, tol), "ModelParams: sigma_w must be symmetric PSD");
  require(is_symmetric_psd(sigma0, tol), "ModelParams: sigma0 must be symmetric PSD");
  require(is_symmetric_psd(sigma_v, tol), "ModelParams: sigma_v must be symmetric PSD");
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrized(sigma_v));
  require(llt.info() == Eigen::Success,
          "ModelParams: sigma_v must be strictly positive definite");
}

void Trajectory::validate() const {
  require(outputs.cols() == inputs.cols() + 1,
          "Trajectory: outputs length must equal inputs length + 1");
  require(outputs.allFinite(), "Trajectory: outputs must be finite");
  require(inputs.size() == 0 || inputs.allFinite(), "Trajectory: inputs must be finite");
}

void Dataset::validate() const {
  require(dt > 0.0, "Dataset: dt must be positive");
  for (const auto& t : trajectories) {
    t.validate();
    require(t.inputs.rows() == q, "Dataset: trajectory input dimension mismatch");
    require(t.outputs.rows() == p, "Dataset: trajectory output dimension mismatch");
  }
}

StepMatrices step_matrix(const ModelParams& params, const Eigen::VectorXd& u) {
  require(u.size() == params.q, "step_matrix: input dimension mismatch");
  require(u.size() == 0 || u.allFinite(), "step_matrix: input must be finite");
  const int n = params.n;
  StepMatrices sm;
  sm.U = Eigen::MatrixXd::Identity(n + 1, n + 1);
  sm.U.rightCols(n) += params.dt * params.gen[0];
  for (int k = 0; k < params.q; ++k)
    sm.U.rightCols(n) += params.dt * u(k) * params.gen[static_cast<std::size_t>(k + 1)];
  sm.b = sm.U.block(0, 1, 1, n).transpose();
  sm.A = sm.U.block(1, 1, n, n).transpose();
  return sm;
}

std::vector<StepMatrices> step_matrices_for(const ModelParams& params,
                                            const Eigen::MatrixXd& inputs) {
  std::vector<StepMatrices> out;
  out.reserve(static_cast<std::size_t>(inputs.cols()));
  for (Eigen::Index l = 0; l < inputs.cols(); ++l)
    out.push_back(step_matrix(params, inputs.col(l)));
  return out;
}

SimulationResult simulate(const ModelParams& params, const Eigen::VectorXd& z0,
                          const Eigen::MatrixXd& inputs,
                          std::optional<std::uint64_t> seed) {
  params.validate();
  require(z0.size() == params.n, "simulate: z0 dimension mismatch");
  require(inputs.rows() == params.q, "simulate: input dimension mismatch");

  const int n = params.n;
  const int p = params.p;
  const int len = static_cast<int>(inputs.cols());

  Eigen::MatrixXd w_factor, v_factor;
  std::mt19937_64 rng;
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool noisy = seed.has_value();
  if (noisy) {
    rng.seed(*seed);
    w_factor = psd_factor(params.sigma_w);
    v_factor = psd_factor(params.sigma_v);
  }
  auto draw = [&](const Eigen::MatrixXd& factor) {
    Eigen::VectorXd xi(factor.cols());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = gauss(rng);
    return Eigen::VectorXd(factor * xi);
  };

  SimulationResult res;
  res.latents.resize(n, len + 1);
  res.trajectory.inputs = inputs;
  res.trajectory.outputs.resize(p, len + 1);

  Eigen::VectorXd z = z0;
  res.latents.col(0) = z;
  Eigen::VectorXd y = params.c0 + z.head(p);
  if (noisy) y += draw(v_factor);
  res.trajectory.outputs.col(0) = y;

  for (int l = 0; l < len; ++l) {
    const StepMatrices sm = step_matrix(params, res.trajectory.inputs.col(l));
    z = sm.A * z + sm.b;
    if (noisy) z += draw(w_factor);
    res.latents.col(l + 1) = z;
    y = params.c0 + z.head(p);
    if (noisy) y += draw(v_factor);
    res.trajectory.outputs.col(l + 1) = y;
  }
  return res;
}

}  // namespace koopgen
