#pragma once

#include <Eigen/Dense>
#include <vector>

#include "koopgen/linalg.hpp"

namespace koopgen {

// Tensor-product polynomial dictionary on a box. Function j is the product
// over dimensions of Legendre polynomials of degree degrees[j](i) in the
// variable rescaled to [-1, 1]; the constant function comes first.
struct Dictionary {
  Eigen::VectorXd lo, hi;                // domain box
  std::vector<Eigen::VectorXi> degrees;  // multi-degree per function

  int dim_in() const { return static_cast<int>(lo.size()); }
  int size() const { return static_cast<int>(degrees.size()); }
  Eigen::VectorXd eval(const Eigen::VectorXd& x) const;

  // Index of the function with degree one in variable i and zero elsewhere,
  // or -1 when the dictionary does not contain it.
  int linear_index(int i) const;
};

Dictionary legendre_dictionary(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                               const Eigen::VectorXi& max_degree_per_dim);

// Least-squares generator fit (Psi Psi^T)^{-1} Psi PsiDot^T, reshaped into
// the input-channel-major stack [Vt_0; ...; Vt_q]. Columns of Psi are
// u_l kron (1, z_l); columns of PsiDot are (z_{l+1} - z_l)/dt.
std::vector<Eigen::MatrixXd> edmd_generator_fit(const Eigen::MatrixXd& dict_vals,
                                                const Eigen::MatrixXd& dict_derivs);

// Column u kron xi used to assemble Psi.
Eigen::VectorXd lift_kron(const Eigen::VectorXd& u_aug, const Eigen::VectorXd& xi);

// Dictionary evaluation rebased to the model's latent normal form: entry 0
// is the constant, entries 1..p reproduce the observation coordinates, and
// the remaining basis functions follow in dictionary order. Throws when the
// dictionary lacks the constant or a degree-one function per coordinate.
Eigen::VectorXd augmented_lift(const Dictionary& dict, const Eigen::VectorXd& y);

}  // namespace koopgen
