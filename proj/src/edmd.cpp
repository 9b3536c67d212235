#include "koopgen/edmd.hpp"

#include <sstream>

namespace koopgen {

Eigen::VectorXd Dictionary::eval(const Eigen::VectorXd& x) const {
  require(x.size() == dim_in(), "Dictionary::eval: dimension mismatch");
  const int d = dim_in();
  int max_deg = 0;
  for (const auto& mi : degrees) max_deg = std::max(max_deg, mi.maxCoeff());

  // Legendre values per dimension on the rescaled variable.
  Eigen::MatrixXd p(d, max_deg + 1);
  for (int i = 0; i < d; ++i) {
    const double t = (2.0 * x(i) - lo(i) - hi(i)) / (hi(i) - lo(i));
    p(i, 0) = 1.0;
    if (max_deg >= 1) p(i, 1) = t;
    for (int k = 2; k <= max_deg; ++k)
      p(i, k) = ((2 * k - 1) * t * p(i, k - 1) - (k - 1) * p(i, k - 2)) / k;
  }

  Eigen::VectorXd out(size());
  for (int j = 0; j < size(); ++j) {
    double v = 1.0;
    for (int i = 0; i < d; ++i) v *= p(i, degrees[static_cast<std::size_t>(j)](i));
    out(j) = v;
  }
  return out;
}

int Dictionary::linear_index(int i) const {
  for (int j = 0; j < size(); ++j) {
    const auto& mi = degrees[static_cast<std::size_t>(j)];
    if (mi(i) == 1 && mi.sum() == 1) return j;
  }
  return -1;
}

Dictionary legendre_dictionary(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                               const Eigen::VectorXi& max_degree_per_dim) {
  require(lo.size() == hi.size() && lo.size() == max_degree_per_dim.size(),
          "legendre_dictionary: box/degree dimension mismatch");
  require(lo.size() > 0, "legendre_dictionary: empty box");
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    require(hi(i) > lo(i), "legendre_dictionary: box interval must be nondegenerate");
    require(max_degree_per_dim(i) >= 0, "legendre_dictionary: degrees must be >= 0");
  }

  Dictionary dict;
  dict.lo = lo;
  dict.hi = hi;
  const int d = static_cast<int>(lo.size());
  Eigen::VectorXi mi = Eigen::VectorXi::Zero(d);
  // Odometer over multi-degrees, last dimension fastest; constant first.
  while (true) {
    dict.degrees.push_back(mi);
    int i = d - 1;
    while (i >= 0) {
      if (mi(i) < max_degree_per_dim(i)) {
        ++mi(i);
        break;
      }
      mi(i) = 0;
      --i;
    }
    if (i < 0) break;
  }
  return dict;
}

Eigen::VectorXd augmented_lift(const Dictionary& dict, const Eigen::VectorXd& y) {
  const int p = dict.dim_in();
  const int big_n = dict.size();
  require(big_n >= p + 1, "augmented_lift: dictionary too small for the output map");
  require(dict.degrees[0].sum() == 0,
          "augmented_lift: dictionary must contain the constant function first");

  std::vector<int> lin(static_cast<std::size_t>(p));
  std::vector<bool> used(static_cast<std::size_t>(big_n), false);
  used[0] = true;
  for (int i = 0; i < p; ++i) {
    const int j = dict.linear_index(i);
    require(j >= 0, "augmented_lift: dictionary lacks a coordinate function for "
                    "variable " + std::to_string(i));
    lin[static_cast<std::size_t>(i)] = j;
    used[static_cast<std::size_t>(j)] = true;
  }

  const Eigen::VectorXd psi = dict.eval(y);
  Eigen::VectorXd xi(big_n);
  xi(0) = 1.0;
  // P1 of the rescaled variable is affine in the raw coordinate.
  for (int i = 0; i < p; ++i)
    xi(1 + i) = 0.5 * (dict.hi(i) - dict.lo(i)) * psi(lin[static_cast<std::size_t>(i)]) +
                0.5 * (dict.hi(i) + dict.lo(i));
  int next = 1 + p;
  for (int j = 1; j < big_n; ++j)
    if (!used[static_cast<std::size_t>(j)]) xi(next++) = psi(j);
  return xi;
}

Eigen::VectorXd lift_kron(const Eigen::VectorXd& u_aug, const Eigen::VectorXd& xi) {
  Eigen::VectorXd col(u_aug.size() * xi.size());
  for (Eigen::Index k = 0; k < u_aug.size(); ++k)
    col.segment(k * xi.size(), xi.size()) = u_aug(k) * xi;
  return col;
}

std::vector<Eigen::MatrixXd> edmd_generator_fit(const Eigen::MatrixXd& dict_vals,
                                                const Eigen::MatrixXd& dict_derivs) {
  const int n = static_cast<int>(dict_derivs.rows());
  require(n >= 1, "edmd_generator_fit: empty derivative matrix");
  require(dict_vals.cols() == dict_derivs.cols(),
          "edmd_generator_fit: snapshot count mismatch");
  require(dict_vals.rows() % (n + 1) == 0,
          "edmd_generator_fit: Psi rows must be a multiple of n+1");
  const int blocks = static_cast<int>(dict_vals.rows()) / (n + 1);

  Eigen::MatrixXd gram = dict_vals * dict_vals.transpose();
  Eigen::MatrixXd rhs = dict_vals * dict_derivs.transpose();
  Eigen::MatrixXd stack = gram_solve(gram, rhs, n + 1, "edmd_generator_fit");

  std::vector<Eigen::MatrixXd> gen;
  gen.reserve(static_cast<std::size_t>(blocks));
  for (int k = 0; k < blocks; ++k) gen.push_back(stack.middleRows(k * (n + 1), n + 1));
  return gen;
}

}  // namespace koopgen
