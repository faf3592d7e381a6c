#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lsnet/problem.hpp"

namespace lsnet {

enum class CurveTag { ExpSum, Sine, Sinc, Gaussian };

inline constexpr std::array<CurveTag, 4> kAllCurveTags = {CurveTag::ExpSum, CurveTag::Sine, CurveTag::Sinc,
                                                          CurveTag::Gaussian};

std::string_view to_string(CurveTag tag);
/// Accepts "expsum", "sine", "sinc", "gaussian"; throws InvalidArgument otherwise.
CurveTag parse_curve_tag(std::string_view name);

struct Range {
  double lo;
  double hi;
  double mid() const { return 0.5 * (lo + hi); }
};

/// Two-parameter curve family with its sampling ranges and t-grid.
struct CurveFamily {
  CurveTag tag;
  Range a;
  Range b;
  int grid_count = 25;
  Range grid{-2.5, 2.5};

  /// Default ranges; Gaussian widths stay at or above 0.3.
  static CurveFamily standard(CurveTag tag);

  Vector t_grid() const;
  /// Shared start point for every solver: the centre of the sampling box.
  Vector initial_guess() const;
};

/// sinc(u) = sin(u) / u with sinc(0) = 1; series expansion for |u| < 1e-4.
double sinc(double u);
/// d sinc / du with limit 0 at u = 0.
double sinc_derivative(double u);

/// f(a, b, t) for the family. Gaussian is the normal density N(t | a, b) and
/// throws DomainError for b <= 0.
double curve_value(CurveTag tag, double a, double b, double t);

/// m x 2 matrix of [df/da, df/db] on the grid (equal to dr/dx for r = f - y).
Matrix curve_jacobian(CurveTag tag, double a, double b, const Vector& t_grid);

struct CurveInstance {
  CurveTag tag;
  Vector truth;  // (a, b)
  Vector t;
  Vector y;
  double sigma;
  std::uint64_t seed;
};

/// Samples (a, b) uniformly from the family box and adds N(0, sigma^2) noise.
CurveInstance sample_instance(const CurveFamily& family, Rng& rng, double sigma = 0.1);

/// Seeded convenience: sample_instance with Rng(seed); the seed is recorded.
CurveInstance sample_instance(const CurveFamily& family, std::uint64_t seed, double sigma = 0.1);

/// r_j(a, b) = f(a, b, t_j) - y_j.
class CurveProblem final : public Problem {
 public:
  explicit CurveProblem(CurveInstance instance);

  Index dim_x() const override { return 2; }
  Index dim_r() const override { return instance_.t.size(); }
  Vector residual(const Vector& x) const override;
  Matrix jacobian(const Vector& x) const override;
  std::optional<Vector> ground_truth() const override { return instance_.truth; }
  std::string family() const override { return std::string(to_string(instance_.tag)); }

  const CurveInstance& instance() const { return instance_; }

 private:
  CurveInstance instance_;
};

/// L1 parameter error. ExpSum is symmetric under a <-> b, so its error is
/// taken against the nearer of the two orderings of the truth.
double curve_param_error(CurveTag tag, const Vector& x, const Vector& truth);

/// JSON export {family, t, y, truth, sigma, seed}.
std::string curve_instance_to_json(const CurveInstance& instance);
CurveInstance curve_instance_from_json(const std::string& text);

}  // namespace lsnet
