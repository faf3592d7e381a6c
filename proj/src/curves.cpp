#include "lsnet/curves.hpp"

#include <cmath>
#include "json.hpp"

namespace lsnet {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

std::string_view to_string(CurveTag tag) {
  switch (tag) {
    case CurveTag::ExpSum: return "expsum";
    case CurveTag::Sine: return "sine";
    case CurveTag::Sinc: return "sinc";
    case CurveTag::Gaussian: return "gaussian";
  }
  return "unknown";
}

CurveTag parse_curve_tag(std::string_view name) {
  for (CurveTag tag : kAllCurveTags) {
    if (name == to_string(tag)) return tag;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown curve family '" + std::string(name) + "'");
}

CurveFamily CurveFamily::standard(CurveTag tag) {
  switch (tag) {
    case CurveTag::ExpSum: return {tag, {-1.0, 0.5}, {-1.0, 0.5}};
    case CurveTag::Sine: return {tag, {0.5, 3.0}, {-kPi, kPi}};
    case CurveTag::Sinc: return {tag, {0.5, 3.0}, {-kPi, kPi}};
    case CurveTag::Gaussian: return {tag, {-2.0, 2.0}, {0.3, 2.0}};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown curve tag");
}

Vector CurveFamily::t_grid() const {
  if (grid_count < 2) throw Error(ErrorCode::InvalidArgument, "t-grid needs at least two points");
  return Vector::LinSpaced(grid_count, grid.lo, grid.hi);
}

Vector CurveFamily::initial_guess() const { return Vector{{a.mid(), b.mid()}}; }

double sinc(double u) {
  if (std::abs(u) < 1e-4) {
    const double u2 = u * u;
    return 1.0 - u2 / 6.0 + u2 * u2 / 120.0;
  }
  return std::sin(u) / u;
}

double sinc_derivative(double u) {
  if (std::abs(u) < 1e-3) {
    const double u2 = u * u;
    return u * (-1.0 / 3.0 + u2 / 30.0 - u2 * u2 / 840.0);
  }
  return (std::cos(u) - std::sin(u) / u) / u;
}

namespace {

void check_domain(CurveTag tag, double b) {
  if (tag == CurveTag::Gaussian && !(b > 0.0)) {
    throw Error(ErrorCode::DomainError, "Gaussian width must be positive");
  }
}

}  // namespace

double curve_value(CurveTag tag, double a, double b, double t) {
  check_domain(tag, b);
  switch (tag) {
    case CurveTag::ExpSum: return std::exp(a * t) + std::exp(b * t);
    case CurveTag::Sine: return std::sin(a * t + b);
    case CurveTag::Sinc: return sinc(a * t + b);
    case CurveTag::Gaussian: {
      const double z = (t - a) / b;
      return kInvSqrt2Pi / b * std::exp(-0.5 * z * z);
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown curve tag");
}

Matrix curve_jacobian(CurveTag tag, double a, double b, const Vector& t_grid) {
  check_domain(tag, b);
  Matrix J(t_grid.size(), 2);
  for (Index j = 0; j < t_grid.size(); ++j) {
    const double t = t_grid[j];
    switch (tag) {
      case CurveTag::ExpSum:
        J(j, 0) = t * std::exp(a * t);
        J(j, 1) = t * std::exp(b * t);
        break;
      case CurveTag::Sine: {
        const double c = std::cos(a * t + b);
        J(j, 0) = t * c;
        J(j, 1) = c;
        break;
      }
      case CurveTag::Sinc: {
        const double d = sinc_derivative(a * t + b);
        J(j, 0) = t * d;
        J(j, 1) = d;
        break;
      }
      case CurveTag::Gaussian: {
        const double dt = t - a;
        const double n = kInvSqrt2Pi / b * std::exp(-0.5 * dt * dt / (b * b));
        J(j, 0) = n * dt / (b * b);
        J(j, 1) = n * (dt * dt / (b * b * b) - 1.0 / b);
        break;
      }
    }
  }
  return J;
}

CurveInstance sample_instance(const CurveFamily& family, Rng& rng, double sigma) {
  if (!(sigma >= 0.0)) throw Error(ErrorCode::InvalidSigma, "noise sigma must be non-negative");
  CurveInstance inst;
  inst.tag = family.tag;
  inst.sigma = sigma;
  inst.seed = rng.seed();
  const double a = rng.uniform(family.a.lo, family.a.hi);
  const double b = rng.uniform(family.b.lo, family.b.hi);
  inst.truth = Vector{{a, b}};
  inst.t = family.t_grid();
  inst.y.resize(inst.t.size());
  for (Index j = 0; j < inst.t.size(); ++j) {
    inst.y[j] = curve_value(family.tag, a, b, inst.t[j]) + sample_normal(0.0, sigma, rng);
  }
  return inst;
}

CurveInstance sample_instance(const CurveFamily& family, std::uint64_t seed, double sigma) {
  Rng rng(seed);
  return sample_instance(family, rng, sigma);
}

CurveProblem::CurveProblem(CurveInstance instance) : instance_(std::move(instance)) {
  if (instance_.t.size() != instance_.y.size()) {
    throw Error(ErrorCode::DimensionMismatch, "CurveProblem: len(t) != len(y)");
  }
}

Vector CurveProblem::residual(const Vector& x) const {
  if (x.size() != 2) throw Error(ErrorCode::DimensionMismatch, "CurveProblem expects two parameters");
  Vector r(instance_.t.size());
  for (Index j = 0; j < r.size(); ++j) r[j] = curve_value(instance_.tag, x[0], x[1], instance_.t[j]) - instance_.y[j];
  return r;
}

Matrix CurveProblem::jacobian(const Vector& x) const {
  if (x.size() != 2) throw Error(ErrorCode::DimensionMismatch, "CurveProblem expects two parameters");
  return curve_jacobian(instance_.tag, x[0], x[1], instance_.t);
}

double curve_param_error(CurveTag tag, const Vector& x, const Vector& truth) {
  const double direct = (x - truth).lpNorm<1>();
  if (tag != CurveTag::ExpSum) return direct;
  const double swapped = std::abs(x[0] - truth[1]) + std::abs(x[1] - truth[0]);
  return std::min(direct, swapped);
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

std::string curve_instance_to_json(const CurveInstance& instance) {
  nlohmann::json j;
  j["family"] = std::string(to_string(instance.tag));
  j["seed"] = instance.seed;
  j["sigma"] = instance.sigma;
  j["truth"] = to_std(instance.truth);
  j["t"] = to_std(instance.t);
  j["y"] = to_std(instance.y);
  return j.dump(2);
}

CurveInstance curve_instance_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    CurveInstance inst;
    inst.tag = parse_curve_tag(j.at("family").get<std::string>());
    inst.seed = j.at("seed").get<std::uint64_t>();
    inst.sigma = j.at("sigma").get<double>();
    inst.truth = to_eigen(j.at("truth").get<std::vector<double>>());
    inst.t = to_eigen(j.at("t").get<std::vector<double>>());
    inst.y = to_eigen(j.at("y").get<std::vector<double>>());
    if (inst.t.size() != inst.y.size() || inst.truth.size() != 2) {
      throw Error(ErrorCode::CorruptFile, "curve instance has inconsistent lengths");
    }
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("curve instance JSON: ") + e.what());
  }
}

}  // namespace lsnet
