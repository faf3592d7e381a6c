#pragma once

#include <chrono>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsnet/numkit.hpp"

namespace lsnet {

/// Gauss-Newton quantities at one point: J^T J, J^T r and r itself.
struct NormalEquations {
  Matrix hessian;
  Vector gradient;
  Vector residual;
};

/// A nonlinear least-squares problem E(x) = 1/2 |r(x)|^2 with analytic Jacobian.
///
/// Implementations are immutable after construction and therefore safe to
/// share between concurrent solves.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual Index dim_x() const = 0;
  virtual Index dim_r() const = 0;
  virtual Vector residual(const Vector& x) const = 0;
  /// Dense dim_r x dim_x Jacobian.
  virtual Matrix jacobian(const Vector& x) const = 0;

  /// Structured problems override this to skip the dense Jacobian.
  virtual NormalEquations normal_equations(const Vector& x) const;

  /// Maps an updated iterate back into the feasible set (no-op by default).
  virtual void project(Vector& /*x*/) const {}

  virtual std::optional<Vector> ground_truth() const { return std::nullopt; }
  virtual std::string family() const = 0;
};

/// r(x) = A x - b.
class LinearProblem final : public Problem {
 public:
  LinearProblem(Matrix A, Vector b, std::optional<Vector> truth = std::nullopt);

  Index dim_x() const override { return A_.cols(); }
  Index dim_r() const override { return A_.rows(); }
  Vector residual(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;
  std::optional<Vector> ground_truth() const override { return truth_; }
  std::string family() const override { return "linear"; }

  const Matrix& A() const { return A_; }
  const Vector& b() const { return b_; }

 private:
  Matrix A_;
  Vector b_;
  std::optional<Vector> truth_;
};

/// 1/2 sum_j r_j(x)^2.
double objective(const Problem& problem, const Vector& x);

/// Convenience for callers that already hold the residual vector.
inline double half_squared_norm(const Vector& r) { return 0.5 * r.squaredNorm(); }

struct JacobianDiscrepancy {
  Index row;
  Index col;
  double analytic;
  double numeric;
  double rel_error;
};

struct JacobianReport {
  double max_rel_error = 0.0;
  Index rows_checked = 0;
  std::optional<JacobianDiscrepancy> worst;
  std::vector<JacobianDiscrepancy> violations;
  bool passed() const { return violations.empty(); }
};

/// Compares the analytic Jacobian with central differences of the residual.
///
/// Relative error is |a - n| / max(|a|, |n|, 1e-3 * max(1, max|J|)), so entries
/// that are tiny compared to the Jacobian's scale are judged against that
/// scale. Rows with row_mask[j] == false are skipped. An entry violates when
/// its relative error is not strictly below tol.
JacobianReport validate_jacobian(const Problem& problem, const Vector& x, double tol,
                                 std::span<const bool> row_mask = {}, double h = 1e-5);

enum class Termination { MaxIterations, StepTolerance, Diverged, SolveFailed, NonFiniteEvaluation };

std::string to_string(Termination t);

/// Iterate history x_0..x_N of one solve. step_norms[i] = |x_i - x_{i-1}|
/// (0 for i = 0) and wall_ms[i] is the time spent producing x_i.
struct SolverTrace {
  std::vector<Vector> iterates;
  std::vector<double> objectives;
  std::vector<double> step_norms;
  std::vector<double> wall_ms;
  Termination termination = Termination::MaxIterations;

  void push(Vector x, double objective, double step_norm, double ms);
  std::size_t size() const { return iterates.size(); }
  bool empty() const { return iterates.empty(); }
  const Vector& final_x() const { return iterates.back(); }
  double final_objective() const { return objectives.back(); }
  /// Objective at iteration i, holding the last value once the solve stopped early.
  double objective_at(std::size_t i) const;
  const Vector& iterate_at(std::size_t i) const;
};

/// Columns: iteration, objective, step_norm, wall_ms, x0..x{n-1}.
void write_trace_csv(std::ostream& os, const SolverTrace& trace);

/// E > 1e6 E_0 (E_0 floored at 1e-12) or any non-finite parameter.
bool is_divergent(double objective, double initial_objective, const Vector& x);

/// Wall-clock helper. With deterministic timing enabled every measurement
/// reads 0 so that CSV outputs are byte-reproducible.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const;
  void restart() { start_ = std::chrono::steady_clock::now(); }

  static void set_deterministic(bool on);
  static bool deterministic();

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Formats a double so that parsing it back yields the same bits.
std::string format_double(double v);

}  // namespace lsnet
