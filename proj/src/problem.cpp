#include "lsnet/problem.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <ostream>

namespace lsnet {

NormalEquations Problem::normal_equations(const Vector& x) const {
  NormalEquations ne;
  ne.residual = residual(x);
  const Matrix J = jacobian(x);
  ne.hessian = J.transpose() * J;
  ne.gradient = J.transpose() * ne.residual;
  return ne;
}

LinearProblem::LinearProblem(Matrix A, Vector b, std::optional<Vector> truth)
    : A_(std::move(A)), b_(std::move(b)), truth_(std::move(truth)) {
  if (A_.rows() != b_.size()) throw Error(ErrorCode::DimensionMismatch, "LinearProblem: rows(A) != len(b)");
  if (truth_ && truth_->size() != A_.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "LinearProblem: truth length != cols(A)");
  }
}

Vector LinearProblem::residual(const Vector& x) const {
  if (x.size() != A_.cols()) throw Error(ErrorCode::DimensionMismatch, "LinearProblem: bad x length");
  return A_ * x - b_;
}

Matrix LinearProblem::jacobian(const Vector& x) const {
  if (x.size() != A_.cols()) throw Error(ErrorCode::DimensionMismatch, "LinearProblem: bad x length");
  return A_;
}

double objective(const Problem& problem, const Vector& x) {
  if (x.size() != problem.dim_x()) throw Error(ErrorCode::DimensionMismatch, "objective: bad x length");
  if (!all_finite(x)) throw Error(ErrorCode::NonFiniteEvaluation, "objective: non-finite parameters");
  const Vector r = problem.residual(x);
  if (!all_finite(r)) throw Error(ErrorCode::NonFiniteEvaluation, "objective: non-finite residual");
  return half_squared_norm(r);
}

JacobianReport validate_jacobian(const Problem& problem, const Vector& x, double tol,
                                 std::span<const bool> row_mask, double h) {
  const Matrix analytic = problem.jacobian(x);
  const Matrix numeric = finite_diff_jacobian([&](const Vector& p) { return problem.residual(p); }, x, h);
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "validate_jacobian: analytic Jacobian has the wrong shape");
  }
  if (!row_mask.empty() && static_cast<Index>(row_mask.size()) != analytic.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "validate_jacobian: mask length != residual count");
  }
  if (!all_finite(analytic)) throw Error(ErrorCode::NonFiniteEvaluation, "analytic Jacobian is not finite");

  const double floor = 1e-3 * std::max(1.0, analytic.cwiseAbs().maxCoeff());
  JacobianReport report;
  for (Index j = 0; j < analytic.rows(); ++j) {
    if (!row_mask.empty() && !row_mask[j]) continue;
    ++report.rows_checked;
    for (Index k = 0; k < analytic.cols(); ++k) {
      const double a = analytic(j, k);
      const double n = numeric(j, k);
      const double denom = std::max({std::abs(a), std::abs(n), floor});
      const double rel = std::abs(a - n) / denom;
      const JacobianDiscrepancy d{j, k, a, n, rel};
      if (!report.worst || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = d;
      }
      if (!(rel < tol)) report.violations.push_back(d);
    }
  }
  return report;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::MaxIterations: return "MaxIterations";
    case Termination::StepTolerance: return "StepTolerance";
    case Termination::Diverged: return "Diverged";
    case Termination::SolveFailed: return "SolveFailed";
    case Termination::NonFiniteEvaluation: return "NonFiniteEvaluation";
  }
  return "Unknown";
}

void SolverTrace::push(Vector x, double objective, double step_norm, double ms) {
  iterates.push_back(std::move(x));
  objectives.push_back(objective);
  step_norms.push_back(step_norm);
  wall_ms.push_back(ms);
}

double SolverTrace::objective_at(std::size_t i) const {
  return objectives[std::min(i, objectives.size() - 1)];
}

const Vector& SolverTrace::iterate_at(std::size_t i) const {
  return iterates[std::min(i, iterates.size() - 1)];
}

void write_trace_csv(std::ostream& os, const SolverTrace& trace) {
  const Index n = trace.empty() ? 0 : trace.iterates.front().size();
  os << "iteration,objective,step_norm,wall_ms";
  for (Index k = 0; k < n; ++k) os << ",x" << k;
  os << '\n';
  for (std::size_t i = 0; i < trace.size(); ++i) {
    os << i << ',' << format_double(trace.objectives[i]) << ',' << format_double(trace.step_norms[i]) << ','
       << format_double(trace.wall_ms[i]);
    for (Index k = 0; k < n; ++k) os << ',' << format_double(trace.iterates[i][k]);
    os << '\n';
  }
}

bool is_divergent(double objective, double initial_objective, const Vector& x) {
  if (!std::isfinite(objective) || !all_finite(x)) return true;
  // Floor keeps a start at an exact zero residual from flagging every step.
  return objective > 1e6 * std::max(initial_objective, 1e-12);
}

namespace {
std::atomic<bool> g_deterministic_timing{false};
}

double Stopwatch::elapsed_ms() const {
  if (g_deterministic_timing.load(std::memory_order_relaxed)) return 0.0;
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
}

void Stopwatch::set_deterministic(bool on) { g_deterministic_timing.store(on); }
bool Stopwatch::deterministic() { return g_deterministic_timing.load(); }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace lsnet
