#include "koopgen/linalg.hpp"

#include <cmath>
#include <sstream>

namespace koopgen {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  const double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
  Eigen::MatrixXd aj = a + jitter * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  llt.compute(aj);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  throw NumericalError(std::string("singular matrix in ") + what +
                       " (jitter retry failed)");
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& s) {
  if (s.size() == 0) return s;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(s));
  Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * vals.asDiagonal();
}

Eigen::MatrixXd clamp_eigenvalues(const Eigen::MatrixXd& s, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(s));
  if (es.eigenvalues().minCoeff() >= floor) return symmetrized(s);
  Eigen::VectorXd vals = es.eigenvalues().cwiseMax(floor);
  return symmetrized(es.eigenvectors() * vals.asDiagonal() *
                     es.eigenvectors().transpose());
}

Eigen::MatrixXd gram_solve(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& rhs,
                           int block_rows, const char* what) {
  const double scale = gram.trace() / static_cast<double>(gram.rows());
  if (!std::isfinite(scale) || scale <= 0.0)
    throw NumericalError(std::string(what) + ": degenerate gram matrix");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(gram));
  const double min_eig = es.eigenvalues().minCoeff();

  if (min_eig > 1e-12 * scale) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(symmetrized(gram));
    return ldlt.solve(rhs);
  }
  if (min_eig > 1e-13 * scale) {
    const double jitter = 1e-10 * scale;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(
        symmetrized(gram) + jitter * Eigen::MatrixXd::Identity(gram.rows(), gram.cols()));
    return ldlt.solve(rhs);
  }

  // Numerically singular even for the jitter fallback: name the block the
  // null direction concentrates on.
  int idx = 0;
  es.eigenvectors().col(0).cwiseAbs().maxCoeff(&idx);
  std::ostringstream msg;
  msg << what << ": gram matrix singular after jitter (deficient block: input channel "
      << idx / block_rows << ", augmented coordinate " << idx % block_rows << ")";
  throw IdentifiabilityError(msg.str());
}

}  // namespace koopgen
