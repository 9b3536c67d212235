#pragma once

#include <complex>

#include "koopgen/estimation.hpp"
#include "koopgen/model.hpp"

namespace koopgen {

// Eigenpair of the generator matrix at a fixed input level, on the augmented
// (constant-prepended) space. v is a right eigenvector of V_u, so the
// observable v^T (1, z) evolves with rate lam; unit norm, phase fixed by
// making the largest-magnitude component real positive.
struct EigenPair {
  std::complex<double> lam;
  Eigen::VectorXcd v;  // size n+1
};

// V_u = V_0 + sum_k u_k V_k; the drift term is always included.
Eigen::MatrixXd generator_at_input(const ModelParams& params, const Eigen::VectorXd& u);

// Full eigendecomposition of generator_at_input, sorted by (Re, Im)
// lexicographically. Complex pairs appear as both conjugates.
std::vector<EigenPair> eigen_spectrum(const ModelParams& params, const Eigen::VectorXd& u);

struct EigenfunctionValue {
  std::complex<double> value;
  double variance;  // posterior variance of the value, nonnegative
};

// Eigenfunction values along a smoothed trajectory: value_l = v^T (1, mu_l),
// variance_l = v~^* Sig_ll v~ with v~ the non-constant part of v.
std::vector<EigenfunctionValue> eigenfunction_values(const ModelParams& params,
                                                     const PosteriorMoments& post,
                                                     const EigenPair& pair);

}  // namespace koopgen
