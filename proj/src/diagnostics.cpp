#include "lsnet/diagnostics.hpp"

#include <memory>
#include <span>
#include <sstream>

#include "lsnet/training.hpp"

namespace lsnet {

namespace {

/// Wraps a problem and negates its analytic Jacobian.
class FlippedJacobian final : public Problem {
 public:
  explicit FlippedJacobian(const Problem& inner) : inner_(inner) {}
  Index dim_x() const override { return inner_.dim_x(); }
  Index dim_r() const override { return inner_.dim_r(); }
  Vector residual(const Vector& x) const override { return inner_.residual(x); }
  Matrix jacobian(const Vector& x) const override { return -inner_.jacobian(x); }
  std::string family() const override { return inner_.family(); }

 private:
  const Problem& inner_;
};

void record(CheckResult& out, const JacobianReport& report, const std::string& where) {
  ++out.instances;
  if (!report.passed()) out.passed = false;
  if (report.worst && report.max_rel_error >= out.worst_error) {
    out.worst_error = report.max_rel_error;
    std::ostringstream os;
    os << where << " entry (" << report.worst->row << ", " << report.worst->col << "): analytic "
       << report.worst->analytic << " numeric " << report.worst->numeric << " rel " << report.worst->rel_error;
    out.worst = os.str();
  }
}

}  // namespace

CheckResult check_curve_jacobian(CurveTag tag, int instances, double tol, std::uint64_t seed, bool flip_sign) {
  CheckResult out;
  out.name = "jacobian/" + std::string(to_string(tag));
  const CurveFamily family = CurveFamily::standard(tag);
  const Rng root = Rng(seed).derive("jacobian-check").derive(std::string(to_string(tag)));
  for (int k = 0; k < instances; ++k) {
    Rng rng = root.derive(std::uint64_t(k));
    const CurveProblem problem(sample_instance(family, rng));
    const FlippedJacobian flipped(problem);
    const Problem& checked = flip_sign ? static_cast<const Problem&>(flipped) : problem;
    record(out, validate_jacobian(checked, problem.instance().truth, tol), "instance " + std::to_string(k));
  }
  return out;
}

CheckResult check_photometric_jacobian(int instances, double tol, std::uint64_t seed, int width, int height,
                                       bool flip_sign) {
  CheckResult out;
  out.name = "jacobian/stereo";
  SceneConfig sc;
  sc.width = width;
  sc.height = height;
  const Rng root = Rng(seed).derive("jacobian-check").derive("stereo");
  for (int k = 0; k < instances; ++k) {
    const StereoTrainingInstance inst = stereo_training_instance(root.seed(), std::uint64_t(k), sc, {});
    const StereoProblem& problem = *inst.problem;
    // Evaluate away from the ground truth: 5% depth and 0.01 pose perturbations.
    Rng rng = root.derive(std::uint64_t(k)).derive("perturbation");
    Vector x = *problem.ground_truth();
    const Index P = problem.instance().pixel_count();
    for (Index p = 0; p < P; ++p) x[p] *= 1.0 + rng.uniform(-0.05, 0.05);
    for (Index c = P; c < x.size(); ++c) x[c] += rng.uniform(-0.01, 0.01);
    const std::vector<char> smooth =
        smooth_rows(problem.instance(), problem.depth_of(x), StereoProblem::pose_of(x), 1e-5);
    std::unique_ptr<bool[]> mask(new bool[smooth.size()]);
    for (std::size_t j = 0; j < smooth.size(); ++j) mask[j] = smooth[j] != 0;
    const FlippedJacobian flipped(problem);
    const Problem& checked = flip_sign ? static_cast<const Problem&>(flipped) : problem;
    record(out, validate_jacobian(checked, x, tol, std::span<const bool>(mask.get(), smooth.size())),
           "instance " + std::to_string(k));
  }
  return out;
}

long double reference_dense_replay_loss(const MetaModel& model, const std::vector<long double>& params,
                                        const std::vector<DenseTrainingInstance>& batch, const Tape& tape) {
  if (model.variant() != ModelVariant::DenseLstm || params.size() != std::size_t(model.parameter_count())) {
    throw Error(ErrorCode::ShapeMismatch, "reference replay needs a dense model and matching parameters");
  }
  using Real = long double;
  const Index d = model.dense_config().dim_x, H = model.dense_config().hidden;
  const int layers = model.dense_config().layers;
  // Element (r, c) of a row-major tensor.
  const auto at = [&](const std::string& name, Index r, Index c) {
    const TensorInfo& t = model.info(name);
    return params[std::size_t(t.offset + r * t.view_cols() + c)];
  };
  const auto sigmoid = [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); };

  Real total = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Vector truth = *batch[b].problem->ground_truth();
    const bool swap = batch[b].problem->family() == to_string(CurveTag::ExpSum);
    std::vector<Real> x(batch[b].x0.data(), batch[b].x0.data() + d);
    std::vector<std::vector<Real>> h(layers, std::vector<Real>(H, 0)), c = h;
    for (int i = 0; i < tape.N; ++i) {
      const Vector& phi = tape.features[i][b];
      std::vector<Real> in(phi.data(), phi.data() + phi.size());
      in.insert(in.end(), x.begin(), x.end());
      std::vector<Real> u(H);
      for (Index r = 0; r < H; ++r) {
        u[r] = at("input.bias", r, 0);
        for (std::size_t k = 0; k < in.size(); ++k) u[r] += at("input.weight", r, Index(k)) * in[k];
      }
      for (int l = 0; l < layers; ++l) {
        const std::string w = "cell" + std::to_string(l) + ".weight", bias = "cell" + std::to_string(l) + ".bias";
        std::vector<Real> pre(4 * H);
        for (Index r = 0; r < 4 * H; ++r) {
          pre[r] = at(bias, r, 0);
          for (Index k = 0; k < H; ++k) pre[r] += at(w, r, k) * u[k] + at(w, r, H + k) * h[l][k];
        }
        for (Index k = 0; k < H; ++k) {
          const Real ig = sigmoid(pre[k]), fg = sigmoid(pre[H + k]), og = sigmoid(pre[2 * H + k]);
          const Real gg = std::tanh(pre[3 * H + k]);
          c[l][k] = fg * c[l][k] + ig * gg;
          h[l][k] = og * std::tanh(c[l][k]);
        }
        u = h[l];
      }
      if (tape.accepted[i][b]) {
        for (Index r = 0; r < d; ++r) {
          Real delta = at("output.bias", r, 0);
          for (Index k = 0; k < H; ++k) delta += at("output.weight", r, k) * u[k];
          x[r] += delta;
        }
      }
      Real direct = 0;
      for (Index r = 0; r < d; ++r) direct += std::abs(x[r] - Real(truth[r]));
      if (swap) direct = std::min(direct, std::abs(x[0] - Real(truth[1])) + std::abs(x[1] - Real(truth[0])));
      total += direct;
    }
  }
  return total / Real(batch.size());
}

CheckResult check_bptt_gradients(int instances, int unroll, double tol, std::uint64_t seed) {
  CheckResult out;
  out.name = "bptt/dense";
  Rng rng = Rng(seed).derive("bptt-check");
  MetaModel model = MetaModel::dense({2, 2, 2}, rng);
  for (double& p : model.parameters()) p = rng.uniform(-0.5, 0.5);
  std::vector<DenseTrainingInstance> batch;
  for (int k = 0; k < instances; ++k) batch.push_back(curve_training_instance(rng.seed(), std::uint64_t(k)));
  out.instances = instances;

  const BpttResult r = bptt_gradients(model, batch, unroll);
  if (replay_loss(model, batch, r.tape) != r.loss) {
    out.passed = false;
    out.worst = "tape replay does not reproduce the recorded loss";
    return out;
  }
  std::vector<long double> params(model.parameters().data(), model.parameters().data() + model.parameter_count());
  for (Index k = 0; k < model.parameter_count(); ++k) {
    const long double p0 = params[std::size_t(k)];
    const long double h = 1e-6L * std::max(1.0L, std::abs(p0));
    params[std::size_t(k)] = p0 + h;
    const long double lp = reference_dense_replay_loss(model, params, batch, r.tape);
    params[std::size_t(k)] = p0 - h;
    const long double lm = reference_dense_replay_loss(model, params, batch, r.tape);
    params[std::size_t(k)] = p0;
    const double numeric = double((lp - lm) / (2.0L * h));
    const double analytic = r.gradient[k];
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    if (!(rel < tol)) out.passed = false;
    if (rel >= out.worst_error) {
      out.worst_error = rel;
      std::ostringstream os;
      os << "parameter " << k << ": analytic " << analytic << " numeric " << numeric << " rel " << rel;
      out.worst = os.str();
    }
  }
  return out;
}

}  // namespace lsnet
