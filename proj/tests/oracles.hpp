#pragma once

// Independent reference computations shared by the unit tests. Nothing here
// calls into the library under test.

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace oracle {

using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

/// Gaussian elimination with partial pivoting in extended precision.
template <typename DerivedA, typename DerivedB>
Eigen::VectorXd solve(const Eigen::MatrixBase<DerivedA>& A_in, const Eigen::MatrixBase<DerivedB>& b_in) {
  const long n = long(A_in.rows());
  std::vector<std::vector<long double>> a(n, std::vector<long double>(n + 1));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) a[i][j] = A_in(i, j);
    a[i][n] = b_in(i);
  }
  for (long k = 0; k < n; ++k) {
    long p = k;
    for (long i = k + 1; i < n; ++i)
      if (std::fabs(a[i][k]) > std::fabs(a[p][k])) p = i;
    if (a[p][k] == 0) throw std::runtime_error("singular");
    std::swap(a[k], a[p]);
    for (long i = k + 1; i < n; ++i) {
      const long double f = a[i][k] / a[k][k];
      for (long j = k; j <= n; ++j) a[i][j] -= f * a[k][j];
    }
  }
  Eigen::VectorXd x(n);
  for (long i = n - 1; i >= 0; --i) {
    long double s = a[i][n];
    for (long j = i + 1; j < n; ++j) s -= a[i][j] * (long double)x[j];
    x[i] = double(s / a[i][i]);
  }
  return x;
}

/// J^T J and J^T r by explicit triple loops.
template <typename DerivedJ>
Eigen::MatrixXd gram(const Eigen::MatrixBase<DerivedJ>& J) {
  Eigen::MatrixXd G(J.cols(), J.cols());
  for (long i = 0; i < J.cols(); ++i)
    for (long k = 0; k < J.cols(); ++k) {
      long double s = 0;
      for (long j = 0; j < J.rows(); ++j) s += (long double)J(j, i) * J(j, k);
      G(i, k) = double(s);
    }
  return G;
}

template <typename DerivedJ, typename DerivedR>
Eigen::VectorXd gram_rhs(const Eigen::MatrixBase<DerivedJ>& J, const Eigen::MatrixBase<DerivedR>& r) {
  Eigen::VectorXd g(J.cols());
  for (long i = 0; i < J.cols(); ++i) {
    long double s = 0;
    for (long j = 0; j < J.rows(); ++j) s += (long double)J(j, i) * r(j);
    g[i] = double(s);
  }
  return g;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace oracle
