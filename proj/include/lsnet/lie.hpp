#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace lsnet {

template <typename Scalar>
using Vector3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3T = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector6T = Eigen::Matrix<Scalar, 6, 1>;
template <typename Scalar>
using Matrix4T = Eigen::Matrix<Scalar, 4, 4>;

using Vector3 = Vector3T<double>;
using Matrix3 = Matrix3T<double>;
using Vector6 = Vector6T<double>;
using Matrix4 = Matrix4T<double>;

/// Below this rotation angle so3_exp / se3_exp switch to truncated series.
inline constexpr double kSmallAngle = 1e-6;

template <typename Scalar>
Matrix3T<Scalar> hat(const Vector3T<Scalar>& w) {
  Matrix3T<Scalar> K;
  K << Scalar(0), -w.z(), w.y(), w.z(), Scalar(0), -w.x(), -w.y(), w.x(), Scalar(0);
  return K;
}

namespace detail {

// Closed-form coefficients of exp(K) = I + s K + c K^2 and V = I + c K + v K^2
// for K = hat(alpha), theta = |alpha| >= kSmallAngle.
template <typename Scalar>
struct SoCoefficients {
  Scalar s;  // sin(theta) / theta
  Scalar c;  // (1 - cos(theta)) / theta^2
  Scalar v;  // (theta - sin(theta)) / theta^3
};

template <typename Scalar>
SoCoefficients<Scalar> so_coefficients(Scalar theta) {
  using std::sin;
  const Scalar half = sin(theta / Scalar(2));
  return {sin(theta) / theta, Scalar(2) * half * half / (theta * theta), (theta - sin(theta)) / (theta * theta * theta)};
}

}  // namespace detail

/// Rodrigues' formula; truncated series below kSmallAngle.
template <typename Scalar>
Matrix3T<Scalar> so3_exp(const Vector3T<Scalar>& alpha) {
  const Scalar theta = alpha.norm();
  const Matrix3T<Scalar> K = hat(alpha);
  if (theta < Scalar(kSmallAngle)) return Matrix3T<Scalar>::Identity() + K + Scalar(0.5) * K * K;
  const auto k = detail::so_coefficients(theta);
  return Matrix3T<Scalar>::Identity() + k.s * K + k.c * K * K;
}

/// V(alpha) = I + (1 - cos)/theta^2 K + (theta - sin)/theta^3 K^2; also the
/// left Jacobian of SO(3).
template <typename Scalar>
Matrix3T<Scalar> so3_left_jacobian(const Vector3T<Scalar>& alpha) {
  const Scalar theta = alpha.norm();
  const Matrix3T<Scalar> K = hat(alpha);
  if (theta < Scalar(kSmallAngle)) {
    return Matrix3T<Scalar>::Identity() + Scalar(0.5) * K + K * K / Scalar(6);
  }
  const auto k = detail::so_coefficients(theta);
  return Matrix3T<Scalar>::Identity() + k.c * K + k.v * K * K;
}

/// Rotation vector of R with |alpha| in [0, pi].
template <typename Scalar>
Vector3T<Scalar> so3_log(const Matrix3T<Scalar>& R) {
  using std::acos;
  using std::sin;
  const Scalar cos_theta = std::clamp((R.trace() - Scalar(1)) / Scalar(2), Scalar(-1), Scalar(1));
  const Scalar theta = acos(cos_theta);
  const Vector3T<Scalar> w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < Scalar(1e-8)) return Scalar(0.5) * w;
  if (theta > Scalar(3.14159265358979323846) - Scalar(1e-6)) {
    // Near pi: recover the axis from the symmetric part.
    const Matrix3T<Scalar> B = (R + Matrix3T<Scalar>::Identity()) / Scalar(2);
    Eigen::Index i;
    B.diagonal().maxCoeff(&i);
    Vector3T<Scalar> axis = B.col(i) / std::sqrt(B(i, i));
    return theta * axis.normalized();
  }
  return theta / (Scalar(2) * sin(theta)) * w;
}

/// T = exp(p^) for p = (t, alpha): rotation so3_exp(alpha), translation V(alpha) t.
template <typename Scalar>
Matrix4T<Scalar> se3_exp(const Vector6T<Scalar>& p) {
  const Vector3T<Scalar> t = p.template head<3>();
  const Vector3T<Scalar> alpha = p.template tail<3>();
  Matrix4T<Scalar> T = Matrix4T<Scalar>::Identity();
  T.template topLeftCorner<3, 3>() = so3_exp(alpha);
  T.template topRightCorner<3, 1>() = so3_left_jacobian(alpha) * t;
  return T;
}

/// Derivative of the scaled warp point q(p) = R(alpha) m + w V(alpha) t with
/// respect to the 6-vector p = (t, alpha) itself.
///
/// The pose is updated additively, so the pose Jacobian has to be exact in
/// these coordinates rather than in a local perturbation chart. The rotation
/// part uses d(R m) = -(R m)^ J_l(alpha) d alpha plus the derivative of V(alpha) t.
/// Everything that depends only on p is computed once in the constructor.
template <typename Scalar>
class WarpPointJacobian {
 public:
  explicit WarpPointJacobian(const Vector6T<Scalar>& p) {
    using std::sin;
    const Vector3T<Scalar> t = p.template head<3>();
    const Vector3T<Scalar> alpha = p.template tail<3>();
    const Scalar theta = alpha.norm();
    R_ = so3_exp(alpha);
    V_ = so3_left_jacobian(alpha);

    // A = (1 - cos)/theta^2, B = (theta - sin)/theta^3 and their
    // theta-derivatives divided by theta.
    Scalar A, B, dA, dB;
    const Scalar t2 = theta * theta;
    if (theta < Scalar(1e-2)) {
      A = Scalar(0.5) - t2 / Scalar(24) + t2 * t2 / Scalar(720);
      B = Scalar(1) / Scalar(6) - t2 / Scalar(120) + t2 * t2 / Scalar(5040);
      dA = Scalar(-1) / Scalar(12) + t2 / Scalar(180) - t2 * t2 / Scalar(6720);
      dB = Scalar(-1) / Scalar(60) + t2 / Scalar(1260) - t2 * t2 / Scalar(60480);
    } else {
      const Scalar half = sin(theta / Scalar(2));
      const Scalar one_minus_cos = Scalar(2) * half * half;
      const Scalar theta_minus_sin = theta - sin(theta);
      A = one_minus_cos / t2;
      B = theta_minus_sin / (t2 * theta);
      dA = (theta * sin(theta) - Scalar(2) * one_minus_cos) / (t2 * t2);
      dB = one_minus_cos / (t2 * t2) - Scalar(3) * theta_minus_sin / (t2 * t2 * theta);
    }
    const Vector3T<Scalar> u = alpha.cross(t);
    const Vector3T<Scalar> v = alpha.cross(u);
    const Matrix3T<Scalar> dv = alpha * t.transpose() + alpha.dot(t) * Matrix3T<Scalar>::Identity() -
                                Scalar(2) * t * alpha.transpose();
    dVt_ = dA * u * alpha.transpose() - A * hat(t) + dB * v * alpha.transpose() + B * dv;
  }

  /// 3 x 6 Jacobian of q at ray m and inverse depth w.
  Eigen::Matrix<Scalar, 3, 6> operator()(const Vector3T<Scalar>& m, Scalar w) const {
    Eigen::Matrix<Scalar, 3, 6> D;
    D.template leftCols<3>() = w * V_;
    D.template rightCols<3>() = -hat(Vector3T<Scalar>(R_ * m)) * V_ + w * dVt_;
    return D;
  }

  const Matrix3T<Scalar>& rotation() const { return R_; }

 private:
  Matrix3T<Scalar> R_;
  Matrix3T<Scalar> V_;
  Matrix3T<Scalar> dVt_;
};

}  // namespace lsnet
