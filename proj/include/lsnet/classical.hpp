#pragma once

#include "lsnet/problem.hpp"

namespace lsnet {

struct ClassicalConfig {
  int max_iterations = 15;
  double step_tolerance = 1e-8;
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 10.0;
  int max_retries = 10;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

enum class ClassicalMethod { GaussNewton, LevenbergMarquardt };

/// Floor on the diagonal entries of J^T J used for damping, so that zero and
/// vanishing curvature directions are still damped by at least lambda * 1e-6.
inline constexpr double kZeroDiagonalDamping = 1e-6;

/// Solves J^T J dx = -J^T r. Throws NotPositiveDefinite on rank deficiency.
Vector gauss_newton_step(const Matrix& J, const Vector& r);
Vector gauss_newton_step_normal(const Matrix& JtJ, const Vector& Jtr);

/// dx = -(J^T J + lambda diag(J^T J))^{-1} J^T r. Diagonal entries below 1e-6
/// are damped as if they were 1e-6 so that the system stays definite.
Vector lm_step(const Matrix& J, const Vector& r, double lambda);
Vector lm_step_normal(const Matrix& JtJ, const Vector& Jtr, double lambda);

/// Classical Gauss-Newton / Levenberg-Marquardt iteration.
///
/// Every accepted iterate is recorded; the solve stops once a proposed step is
/// shorter than the step tolerance (the step is not applied), after
/// max_iterations accepted steps, on divergence, or with SolveFailed when GN
/// meets a rank-deficient J^T J or LM exhausts its retries. The LM objective
/// sequence is non-increasing by construction.
SolverTrace solve_classical(const Problem& problem, const Vector& x0, const ClassicalConfig& config,
                            ClassicalMethod method);

}  // namespace lsnet
