#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace koopgen {

// Thrown when a linear-algebra step cannot proceed (singular matrix after
// the jitter retry, non-finite values, diverged likelihood).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by the M-step when the generator normal equations stay singular,
// i.e. the data does not excite every (input channel, coordinate) block.
struct IdentifiabilityError : NumericalError {
  explicit IdentifiabilityError(const std::string& msg) : NumericalError(msg) {}
};

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& s) {
  return 0.5 * (s + s.transpose());
}

// SPD solve with one jitter retry (1e-10 * trace/dim * I). Throws
// NumericalError if the factorization still fails.
Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const char* what);

// Solve gram * X = rhs for a PSD normal-equation gram. Healthy systems are
// solved directly; borderline conditioning gets one jitter retry
// (1e-10 * trace/dim); numerically rank-deficient grams raise
// IdentifiabilityError naming the deficient block of size `block_rows`.
Eigen::MatrixXd gram_solve(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& rhs,
                           int block_rows, const char* what);

// Factor L with L*L^T = S for a symmetric PSD matrix. Falls back to an
// eigendecomposition with clamped eigenvalues when the matrix is singular,
// so exactly-zero covariances are handled.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& s);

// Clamp eigenvalues of a symmetric matrix from below (in place convention:
// returns the clamped matrix).
Eigen::MatrixXd clamp_eigenvalues(const Eigen::MatrixXd& s, double floor);

// SplitMix64; used to derive independent per-trajectory seeds from one base
// seed without correlated streams.
inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void require(bool cond, const std::string& msg);

}  // namespace koopgen
