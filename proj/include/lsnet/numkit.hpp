#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "lsnet/error.hpp"

namespace lsnet {

using Index = Eigen::Index;

// Dense storage is row-major everywhere in the library.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// True when every coefficient is finite.
template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

namespace detail {

template <typename DerivedA, typename DerivedB>
void check_normal_system(const Eigen::MatrixBase<DerivedA>& A, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (A.rows() != A.cols() || A.rows() != b.rows() || b.cols() != 1) {
    throw Error(ErrorCode::DimensionMismatch,
                "cholesky_solve expects square A (got " + std::to_string(A.rows()) + "x" +
                    std::to_string(A.cols()) + ") and b of length " + std::to_string(A.rows()));
  }
  if (A.rows() == 0) return;
  const Scalar scale = A.cwiseAbs().maxCoeff();
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10) * scale) {
    throw Error(ErrorCode::InvalidArgument, "cholesky_solve: matrix is not symmetric");
  }
}

// Pivots of a Cholesky factor are L(k,k)^2; anything at or below the threshold
// means the system is numerically rank deficient.
template <typename Llt, typename Scalar>
void check_pivots(const Llt& llt, Scalar max_diag) {
  const Scalar threshold = Scalar(1e-12) * max_diag;
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "Cholesky factorization hit a non-positive pivot");
  }
  const auto L = llt.matrixLLT();
  for (Index k = 0; k < L.rows(); ++k) {
    const Scalar pivot = L(k, k) * L(k, k);
    if (!(pivot > threshold)) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "pivot " + std::to_string(k) + " = " + std::to_string(pivot) + " below threshold");
    }
  }
}

}  // namespace detail

/// Solves A x = b for symmetric positive-definite A.
///
/// Throws NotPositiveDefinite when any pivot falls to 1e-12 times the largest
/// diagonal entry or below; callers that can recover add damping and retry.
template <typename DerivedA, typename DerivedB>
VectorX<typename DerivedA::Scalar> cholesky_solve(const Eigen::MatrixBase<DerivedA>& A,
                                                  const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  detail::check_normal_system(A, b);
  if (A.rows() == 0) return VectorX<Scalar>(0);
  const Scalar max_diag = A.diagonal().maxCoeff();
  Eigen::LLT<MatrixX<Scalar>> llt(A);
  detail::check_pivots(llt, max_diag);
  return llt.solve(b);
}

/// In-place variant for large normal matrices: A is overwritten by its factor.
template <typename Scalar, typename DerivedB>
VectorX<Scalar> cholesky_solve_in_place(MatrixX<Scalar>& A, const Eigen::MatrixBase<DerivedB>& b) {
  detail::check_normal_system(A, b);
  if (A.rows() == 0) return VectorX<Scalar>(0);
  const Scalar max_diag = A.diagonal().maxCoeff();
  Eigen::LLT<Eigen::Ref<MatrixX<Scalar>>> llt(A);
  detail::check_pivots(llt, max_diag);
  return llt.solve(b);
}

/// Central-difference Jacobian of f at x; entry (j, k) is
/// (f_j(x + h e_k) - f_j(x - h e_k)) / 2h.
template <typename Function, typename Derived>
MatrixX<typename Derived::Scalar> finite_diff_jacobian(Function&& f, const Eigen::MatrixBase<Derived>& x,
                                                       typename Derived::Scalar h = 1e-5) {
  using Scalar = typename Derived::Scalar;
  if (!(h > Scalar(0))) throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  VectorX<Scalar> probe = x;
  const VectorX<Scalar> f0 = f(probe);
  if (!all_finite(f0)) throw Error(ErrorCode::NonFiniteEvaluation, "f(x) is not finite");
  MatrixX<Scalar> J(f0.size(), x.size());
  for (Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const VectorX<Scalar> fp = f(probe);
    probe[k] = x[k] - h;
    const VectorX<Scalar> fm = f(probe);
    probe[k] = x[k];
    if (!all_finite(fp) || !all_finite(fm)) {
      throw Error(ErrorCode::NonFiniteEvaluation, "f is not finite at probe " + std::to_string(k));
    }
    J.col(k) = (fp - fm) / (Scalar(2) * h);
  }
  return J;
}

/// Counter-based generator: output n is a bijective mix of seed + n * golden,
/// so a (seed, counter) pair fully determines the remaining stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t next_u64() { return mix(seed_ + kGolden * ++counter_); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// Independent child stream; used for the root -> module -> instance fan-out.
  Rng derive(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
  Rng derive(std::string_view tag) const { return derive(hash(tag)); }

  static std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
    return mix(mix(parent ^ 0x6a09e667f3bcc909ULL) + kGolden * (stream + 1));
  }

  static std::uint64_t hash(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : tag) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Draw from N(mean, sigma^2). sigma = 0 returns mean without consuming the stream.
inline double sample_normal(double mean, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw Error(ErrorCode::InvalidSigma, "sigma must be non-negative");
  if (sigma == 0.0) return mean;
  return mean + sigma * rng.normal();
}

/// s(v) = sign(v) log(1 + |v|), applied to every network input feature.
inline double scale_compress(double v) { return std::copysign(std::log1p(std::abs(v)), v); }
inline double scale_expand(double s) { return std::copysign(std::expm1(std::abs(s)), s); }

}  // namespace lsnet
