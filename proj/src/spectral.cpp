#include "koopgen/spectral.hpp"

#include <algorithm>

namespace koopgen {

Eigen::MatrixXd generator_at_input(const ModelParams& params, const Eigen::VectorXd& u) {
  require(u.size() == params.q, "generator_at_input: input dimension mismatch");
  require(u.size() == 0 || u.allFinite(), "generator_at_input: input must be finite");
  Eigen::MatrixXd v = params.full_generator(0);
  for (int k = 0; k < params.q; ++k) v += u(k) * params.full_generator(k + 1);
  return v;
}

std::vector<EigenPair> eigen_spectrum(const ModelParams& params,
                                      const Eigen::VectorXd& u) {
  Eigen::MatrixXd vu = generator_at_input(params, u);
  if (!vu.allFinite())
    throw NumericalError("eigen_spectrum: generator matrix has non-finite entries");
  Eigen::EigenSolver<Eigen::MatrixXd> es(vu);
  if (es.info() != Eigen::Success)
    throw NumericalError("eigen_spectrum: eigensolver failed");

  std::vector<EigenPair> pairs;
  pairs.reserve(static_cast<std::size_t>(vu.rows()));
  for (Eigen::Index i = 0; i < vu.rows(); ++i) {
    EigenPair p;
    p.lam = es.eigenvalues()(i);
    p.v = es.eigenvectors().col(i);
    p.v /= p.v.norm();
    Eigen::Index imax = 0;
    p.v.cwiseAbs().maxCoeff(&imax);
    const std::complex<double> phase = p.v(imax) / std::abs(p.v(imax));
    p.v /= phase;
    pairs.push_back(std::move(p));
  }
  std::sort(pairs.begin(), pairs.end(), [](const EigenPair& a, const EigenPair& b) {
    if (a.lam.real() != b.lam.real()) return a.lam.real() < b.lam.real();
    return a.lam.imag() < b.lam.imag();
  });
  return pairs;
}

std::vector<EigenfunctionValue> eigenfunction_values(const ModelParams& params,
                                                     const PosteriorMoments& post,
                                                     const EigenPair& pair) {
  require(pair.v.size() == params.n + 1,
          "eigenfunction_values: eigenvector size mismatch");
  const Eigen::VectorXcd tail = pair.v.tail(params.n);
  std::vector<EigenfunctionValue> out;
  out.reserve(post.mu.size());
  for (std::size_t l = 0; l < post.mu.size(); ++l) {
    const Eigen::VectorXcd mu_c = post.mu[l].cast<std::complex<double>>();
    const Eigen::VectorXcd sig_tail = post.sig[l].cast<std::complex<double>>() * tail;
    EigenfunctionValue ev;
    // phi = v^T (1, mu): plain transpose, no conjugation.
    ev.value = pair.v(0) + (tail.transpose() * mu_c)(0, 0);
    ev.variance = std::max(0.0, (tail.adjoint() * sig_tail)(0, 0).real());
    out.push_back(ev);
  }
  return out;
}

}  // namespace koopgen
