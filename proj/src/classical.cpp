#include "lsnet/classical.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lsnet {

void ClassicalConfig::validate() const {
  if (max_iterations < 1 || !(step_tolerance > 0) || !(lambda0 > 0) || !(lambda_up > 1) || !(lambda_down > 1) ||
      max_retries < 1) {
    throw Error(ErrorCode::InvalidArgument, "ClassicalConfig: fields must be positive with lambda factors > 1");
  }
}

namespace {

Matrix damped(const Matrix& JtJ, double lambda) {
  Matrix A = JtJ;
  if (lambda == 0.0) return A;
  for (Index k = 0; k < A.rows(); ++k) {
    const double d = JtJ(k, k);
    A(k, k) += lambda * std::max(d, kZeroDiagonalDamping);
  }
  return A;
}

}  // namespace

Vector gauss_newton_step_normal(const Matrix& JtJ, const Vector& Jtr) { return cholesky_solve(JtJ, -Jtr); }

Vector gauss_newton_step(const Matrix& J, const Vector& r) {
  if (J.rows() != r.size()) throw Error(ErrorCode::DimensionMismatch, "gauss_newton_step: rows(J) != len(r)");
  return gauss_newton_step_normal(J.transpose() * J, J.transpose() * r);
}

Vector lm_step_normal(const Matrix& JtJ, const Vector& Jtr, double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lm_step: lambda must be non-negative");
  Matrix A = damped(JtJ, lambda);
  return cholesky_solve_in_place(A, -Jtr);
}

Vector lm_step(const Matrix& J, const Vector& r, double lambda) {
  if (J.rows() != r.size()) throw Error(ErrorCode::DimensionMismatch, "lm_step: rows(J) != len(r)");
  return lm_step_normal(J.transpose() * J, J.transpose() * r, lambda);
}

namespace {

// Objective at a trial point; evaluation failures (domain errors, non-finite
// residuals) are reported as NaN so the caller can reject the step.
double try_objective(const Problem& problem, const Vector& x) {
  if (!all_finite(x)) return std::nan("");
  try {
    return objective(problem, x);
  } catch (const Error&) {
    return std::nan("");
  }
}

}  // namespace

SolverTrace solve_classical(const Problem& problem, const Vector& x0, const ClassicalConfig& config,
                            ClassicalMethod method) {
  config.validate();
  if (x0.size() != problem.dim_x()) throw Error(ErrorCode::DimensionMismatch, "solve_classical: bad x0 length");

  SolverTrace trace;
  Stopwatch clock;
  Vector x = x0;
  double E = try_objective(problem, x);
  if (!std::isfinite(E)) {
    trace.termination = Termination::NonFiniteEvaluation;
    return trace;
  }
  const double E0 = E;
  trace.push(x, E, 0.0, clock.elapsed_ms());

  double lambda = config.lambda0;
  trace.termination = Termination::MaxIterations;
  for (int it = 0; it < config.max_iterations; ++it) {
    clock.restart();
    NormalEquations ne;
    try {
      ne = problem.normal_equations(x);
    } catch (const Error&) {
      trace.termination = Termination::NonFiniteEvaluation;
      return trace;
    }
    if (!all_finite(ne.hessian) || !all_finite(ne.gradient)) {
      trace.termination = Termination::NonFiniteEvaluation;
      return trace;
    }

    if (method == ClassicalMethod::GaussNewton) {
      Vector dx;
      try {
        dx = gauss_newton_step_normal(ne.hessian, ne.gradient);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotPositiveDefinite) throw;
        trace.termination = Termination::SolveFailed;
        return trace;
      }
      const double step = dx.norm();
      if (step < config.step_tolerance) {
        trace.termination = Termination::StepTolerance;
        return trace;
      }
      Vector x_new = x + dx;
      problem.project(x_new);
      const double E_new = try_objective(problem, x_new);
      if (is_divergent(E_new, E0, x_new)) {
        trace.termination = Termination::Diverged;
        return trace;
      }
      trace.push(x_new, E_new, (x_new - x).norm(), clock.elapsed_ms());
      x = std::move(x_new);
      E = E_new;
      continue;
    }

    bool accepted = false;
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
      Vector dx;
      try {
        dx = lm_step_normal(ne.hessian, ne.gradient, lambda);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotPositiveDefinite) throw;
        lambda *= config.lambda_up;
        continue;
      }
      if (dx.norm() < config.step_tolerance) {
        trace.termination = Termination::StepTolerance;
        return trace;
      }
      Vector x_new = x + dx;
      problem.project(x_new);
      const double E_new = try_objective(problem, x_new);
      if (std::isfinite(E_new) && E_new <= E) {
        trace.push(x_new, E_new, (x_new - x).norm(), clock.elapsed_ms());
        x = std::move(x_new);
        E = E_new;
        lambda /= config.lambda_down;
        accepted = true;
        break;
      }
      lambda *= config.lambda_up;
    }
    if (!accepted) {
      trace.termination = Termination::SolveFailed;
      return trace;
    }
  }
  return trace;
}

}  // namespace lsnet
