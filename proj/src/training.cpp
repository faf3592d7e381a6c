#include "lsnet/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace lsnet {

namespace {

double sign(double v) { return double(v > 0.0) - double(v < 0.0); }

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

IterateLoss IterateLoss::parameters(Vector truth, double weight, bool swap_invariant) {
  IterateLoss l;
  l.kind_ = Kind::Parameters;
  l.truth_ = std::move(truth);
  l.w_a_ = weight;
  l.swap_ = swap_invariant && l.truth_.size() == 2;
  return l;
}

IterateLoss IterateLoss::stereo(const Vector& truth, double w_depth, double w_pose) {
  if (truth.size() < 7) throw Error(ErrorCode::DimensionMismatch, "stereo target needs depths and a pose");
  IterateLoss l;
  l.kind_ = Kind::Stereo;
  l.truth_ = truth;
  l.w_a_ = w_depth;
  l.w_b_ = w_pose;
  return l;
}

double IterateLoss::operator()(const Vector& x, Vector* gradient) const {
  if (x.size() != truth_.size()) throw Error(ErrorCode::DimensionMismatch, "iterate does not match the loss target");
  if (gradient) gradient->setZero(x.size());
  if (kind_ == Kind::Stereo) {
    const Index P = x.size() - 6;
    const double depth = (x.head(P) - truth_.head(P)).lpNorm<1>() / double(P);
    const double pose = (x.tail<6>() - truth_.tail<6>()).lpNorm<1>();
    if (gradient) {
      for (Index k = 0; k < P; ++k) (*gradient)[k] = w_a_ * sign(x[k] - truth_[k]) / double(P);
      for (Index k = P; k < x.size(); ++k) (*gradient)[k] = w_b_ * sign(x[k] - truth_[k]);
    }
    return w_a_ * depth + w_b_ * pose;
  }
  const double direct = (x - truth_).lpNorm<1>();
  if (swap_) {
    const double swapped = std::abs(x[0] - truth_[1]) + std::abs(x[1] - truth_[0]);
    if (swapped < direct) {
      if (gradient) *gradient << w_a_ * sign(x[0] - truth_[1]), w_a_ * sign(x[1] - truth_[0]);
      return w_a_ * swapped;
    }
  }
  if (gradient) {
    for (Index k = 0; k < x.size(); ++k) (*gradient)[k] = w_a_ * sign(x[k] - truth_[k]);
  }
  return w_a_ * direct;
}

double meta_loss(const SolverTrace& trace, const IterateLoss& loss, int N) {
  if (trace.empty()) throw Error(ErrorCode::InvalidArgument, "meta_loss needs a non-empty trace");
  if (N < 0) throw Error(ErrorCode::InvalidArgument, "meta_loss: N must be non-negative");
  const std::size_t count = N == 0 ? trace.size() - 1 : std::size_t(N);
  double total = 0.0;
  for (std::size_t i = 1; i <= count; ++i) total += loss(trace.iterate_at(i));
  return total;
}

namespace {

double evaluate_objective(const Problem& problem, const Vector& x) {
  if (!all_finite(x)) return kNaN;
  try {
    return objective(problem, x);
  } catch (const Error&) {
    return kNaN;
  }
}

// ---------------------------------------------------------------- dense

struct DenseStepCache {
  MatrixX<double> input;  // [phi; x], D x B
  std::vector<LstmCache> cells;
  MatrixX<double> top;
};

struct DenseUnroll {
  double loss = 0.0;
  std::vector<MatrixX<double>> X;  // iterates 0..N, d x B
  std::vector<DenseStepCache> steps;
};

void check_dense_batch(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch) {
  if (model.variant() != ModelVariant::DenseLstm) throw Error(ErrorCode::ShapeMismatch, "expected a dense model");
  const Index d = model.dense_config().dim_x;
  for (const auto& inst : batch) {
    if (!inst.problem || inst.problem->dim_x() != d || inst.x0.size() != d || inst.loss.dim() != d) {
      throw Error(ErrorCode::DimensionMismatch, "training instance does not match the model dimension");
    }
  }
}

DenseUnroll dense_forward(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, int N,
                          const Tape* replay, Tape* record, bool keep_cache) {
  check_dense_batch(model, batch);
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "unroll length must be at least 1");
  const DenseLstmConfig& cfg = model.dense_config();
  const Index d = cfg.dim_x, B = Index(batch.size()), L = small_feature_length(d);
  if (replay && (replay->N != N || replay->features.size() != std::size_t(N) ||
                 replay->accepted.size() != std::size_t(N))) {
    throw Error(ErrorCode::ShapeMismatch, "tape does not match the unroll");
  }
  if (record) {
    record->N = N;
    record->features.assign(N, std::vector<Vector>(B));
    record->accepted.assign(N, std::vector<char>(B, 0));
    record->clamped.clear();
  }

  DenseUnroll out;
  MatrixX<double> X(d, B);
  std::vector<double> E0(B, kNaN);
  std::vector<char> active(B, 1);
  for (Index b = 0; b < B; ++b) {
    X.col(b) = batch[b].x0;
    if (!replay) {
      E0[b] = evaluate_objective(*batch[b].problem, batch[b].x0);
      if (!std::isfinite(E0[b])) active[b] = 0;
    }
  }
  out.X.push_back(X);

  const auto W_in = model.tensor("input.weight");
  const auto b_in = model.tensor("input.bias");
  const auto W_out = model.tensor("output.weight");
  const auto b_out = model.tensor("output.bias");
  std::vector<std::string> cell_w, cell_b;
  for (int l = 0; l < cfg.layers; ++l) {
    cell_w.push_back("cell" + std::to_string(l) + ".weight");
    cell_b.push_back("cell" + std::to_string(l) + ".bias");
  }

  RecurrentState state = zero_state(model, B);
  for (int i = 0; i < N; ++i) {
    MatrixX<double> F = MatrixX<double>::Zero(L, B);
    for (Index b = 0; b < B; ++b) {
      if (replay) {
        if (replay->features[i][b].size() != L) throw Error(ErrorCode::ShapeMismatch, "tape feature has wrong length");
        F.col(b) = replay->features[i][b];
        continue;
      }
      if (active[b]) {
        try {
          F.col(b) = phi_small(batch[b].problem->normal_equations(X.col(b)));
        } catch (const Error&) {
          active[b] = 0;
          F.col(b).setZero();
        }
      }
      if (record) record->features[i][b] = F.col(b);
    }

    DenseStepCache step;
    step.input.resize(L + d, B);
    step.input << F, X;
    MatrixX<double> in = W_in * step.input;
    in.colwise() += b_in.col(0);
    RecurrentState next(cfg.layers);
    if (keep_cache) step.cells.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      next[l] = lstm_forward(in, state[l], model.tensor(cell_w[l]), model.tensor(cell_b[l]),
                             keep_cache ? &step.cells[l] : nullptr);
      in = next[l].h;
    }
    MatrixX<double> delta = W_out * in;
    delta.colwise() += b_out.col(0);
    MatrixX<double> Xn = X + delta;
    for (Index b = 0; b < B; ++b) {
      bool accept;
      if (replay) {
        accept = replay->accepted[i][b] != 0;
      } else {
        accept = false;
        if (active[b]) {
          const Vector x = Xn.col(b);
          const double E = evaluate_objective(*batch[b].problem, x);
          accept = std::isfinite(E) && !is_divergent(E, E0[b], x);
          if (!accept) active[b] = 0;
        }
      }
      if (record) record->accepted[i][b] = accept ? 1 : 0;
      if (!accept) Xn.col(b) = X.col(b);
    }
    X = std::move(Xn);
    state = std::move(next);
    for (Index b = 0; b < B; ++b) out.loss += batch[b].loss(X.col(b));
    out.X.push_back(X);
    if (keep_cache) {
      step.top = std::move(in);
      out.steps.push_back(std::move(step));
    }
  }
  out.loss /= double(B);
  if (record) record->loss = out.loss;
  return out;
}

Vector dense_backward(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, const DenseUnroll& fw,
                      const Tape& tape) {
  const DenseLstmConfig& cfg = model.dense_config();
  const Index d = cfg.dim_x, B = Index(batch.size()), H = cfg.hidden;
  const int N = tape.N;
  Vector grad = Vector::Zero(model.parameter_count());
  auto dW_in = model.tensor_in(grad, "input.weight");
  auto db_in = model.tensor_in(grad, "input.bias");
  auto dW_out = model.tensor_in(grad, "output.weight");
  auto db_out = model.tensor_in(grad, "output.bias");
  const auto W_in = model.tensor("input.weight");
  const auto W_out = model.tensor("output.weight");

  MatrixX<double> gX = MatrixX<double>::Zero(d, B);
  std::vector<MatrixX<double>> dh_rec(cfg.layers, MatrixX<double>::Zero(H, B));
  std::vector<MatrixX<double>> dc_rec(cfg.layers, MatrixX<double>::Zero(H, B));
  Vector g;
  for (int i = N - 1; i >= 0; --i) {
    for (Index b = 0; b < B; ++b) {
      batch[b].loss(fw.X[i + 1].col(b), &g);
      gX.col(b) += g / double(B);
    }
    const DenseStepCache& st = fw.steps[i];
    MatrixX<double> d_delta = gX;
    for (Index b = 0; b < B; ++b) {
      if (!tape.accepted[i][b]) d_delta.col(b).setZero();
    }
    dW_out.noalias() += d_delta * st.top.transpose();
    db_out.col(0) += d_delta.rowwise().sum();
    MatrixX<double> dh = W_out.transpose() * d_delta + dh_rec[cfg.layers - 1];
    MatrixX<double> du;
    for (int l = cfg.layers - 1; l >= 0; --l) {
      const std::string prefix = "cell" + std::to_string(l);
      LstmGradients lg = lstm_backward(st.cells[l], dh, dc_rec[l], model.tensor(prefix + ".weight"),
                                       model.tensor_in(grad, prefix + ".weight"),
                                       model.tensor_in(grad, prefix + ".bias"));
      dh_rec[l] = std::move(lg.h_prev);
      dc_rec[l] = std::move(lg.c_prev);
      if (l > 0) {
        dh = lg.input + dh_rec[l - 1];
      } else {
        du = std::move(lg.input);
      }
    }
    dW_in.noalias() += du * st.input.transpose();
    db_in.col(0) += du.rowwise().sum();
    // Only the x rows of the input carry gradient; phi is a constant.
    gX += (W_in.transpose() * du).bottomRows(d);
  }
  return grad;
}

// ----------------------------------------------------------------- conv

Vector flatten(const FeatureImage& f) {
  Vector v(f.channels.size() + f.global.size());
  v << Eigen::Map<const Vector>(f.channels.data(), f.channels.size()), f.global;
  return v;
}

FeatureImage unflatten(const Vector& v, int width, int height) {
  FeatureImage f;
  f.width = width;
  f.height = height;
  const Index P = f.pixel_count();
  if (v.size() != kPixelChannels * P + kGlobalFeatures) throw Error(ErrorCode::ShapeMismatch, "tape feature has wrong length");
  f.channels = Eigen::Map<const MatrixX<double>>(v.data(), kPixelChannels, P);
  f.global = v.tail(kGlobalFeatures);
  return f;
}

struct ConvStepCache {
  LstmCache cell;
  MatrixX<double> h;
  Vector pooled;
};

struct ConvUnroll {
  double loss = 0.0;
  std::vector<Vector> X;
  std::vector<ConvStepCache> steps;
};

ConvUnroll conv_forward(const MetaModel& model, const StereoTrainingInstance& inst, int N, const Tape* replay,
                        std::size_t column, Tape* record, bool keep_cache) {
  const StereoProblem& problem = *inst.problem;
  const auto& K = problem.instance().intrinsics;
  const Index P = problem.instance().pixel_count();
  const int kernel = model.conv_config().kernel;
  if (inst.x0.size() != P + 6 || inst.loss.dim() != P + 6) {
    throw Error(ErrorCode::DimensionMismatch, "stereo training instance has inconsistent sizes");
  }
  const auto W = model.tensor("cell.weight");
  const auto bias = model.tensor("cell.bias");
  const auto Wd = model.tensor("depth.weight");
  const double bd = model.tensor("depth.bias")(0, 0);
  const auto Wp = model.tensor("pose.weight");
  const auto bp = model.tensor("pose.bias");

  ConvUnroll out;
  Vector X = inst.x0;
  out.X.push_back(X);
  bool active = true;
  double E0 = kNaN;
  if (!replay) {
    E0 = evaluate_objective(problem, X);
    active = std::isfinite(E0);
  }
  RecurrentState state = zero_state(model, P);
  double previous_step = 0.0;
  for (int i = 0; i < N; ++i) {
    FeatureImage f;
    if (replay) {
      f = unflatten(replay->features[i][column], K.width, K.height);
    } else {
      bool ok = false;
      if (active) {
        try {
          const Linearization lin = problem.linearize(X);
          f = phi_dense(lin.jacobian, lin.residuals.r, {previous_step, i, N});
          ok = true;
        } catch (const Error&) {
          active = false;
        }
      }
      if (!ok) {
        f.width = K.width;
        f.height = K.height;
        f.channels = MatrixX<double>::Zero(kPixelChannels, P);
        f.global = Vector::Zero(kGlobalFeatures);
      }
      if (record) record->features[i][column] = flatten(f);
    }
    ConvStepCache step;
    HiddenState next = conv_lstm_forward(conv_input(f, X.head(P)), K.width, K.height, state[0], W, bias, kernel,
                                         keep_cache ? &step.cell : nullptr);
    const Vector pooled = next.h.rowwise().mean();
    Vector Xn(P + 6);
    Xn.head(P) = X.head(P) + (Wd * next.h).transpose();
    Xn.head(P).array() += bd;
    Xn.tail<6>() = X.tail<6>() + Wp * pooled + bp;

    std::vector<char> clamp(P, 0);
    if (replay) {
      clamp = replay->clamped[i][column];
    } else {
      for (Index p = 0; p < P; ++p) clamp[p] = Xn[p] < kMinInverseDepth ? 1 : 0;
    }
    for (Index p = 0; p < P; ++p) {
      if (clamp[p]) Xn[p] = kMinInverseDepth;
    }
    bool accept;
    if (replay) {
      accept = replay->accepted[i][column] != 0;
    } else {
      accept = false;
      if (active) {
        const double E = evaluate_objective(problem, Xn);
        accept = std::isfinite(E) && !is_divergent(E, E0, Xn);
        if (!accept) active = false;
      }
      if (record) {
        record->accepted[i][column] = accept ? 1 : 0;
        record->clamped[i][column] = clamp;
      }
    }
    if (accept) {
      previous_step = (Xn - X).norm();
      X = std::move(Xn);
    }
    state[0] = std::move(next);
    out.loss += inst.loss(X);
    out.X.push_back(X);
    if (keep_cache) {
      step.h = state[0].h;
      step.pooled = pooled;
      out.steps.push_back(std::move(step));
    }
  }
  return out;
}

void conv_backward(const MetaModel& model, const StereoTrainingInstance& inst, const ConvUnroll& fw, const Tape& tape,
                   std::size_t column, double scale, Vector& grad) {
  const auto& K = inst.problem->instance().intrinsics;
  const Index P = inst.problem->instance().pixel_count();
  const Index C = model.conv_config().channels;
  const int kernel = model.conv_config().kernel;
  const auto W = model.tensor("cell.weight");
  const auto Wd = model.tensor("depth.weight");
  const auto Wp = model.tensor("pose.weight");
  auto dW = model.tensor_in(grad, "cell.weight");
  auto db = model.tensor_in(grad, "cell.bias");
  auto dWd = model.tensor_in(grad, "depth.weight");
  auto dbd = model.tensor_in(grad, "depth.bias");
  auto dWp = model.tensor_in(grad, "pose.weight");
  auto dbp = model.tensor_in(grad, "pose.bias");

  Vector gX = Vector::Zero(P + 6);
  MatrixX<double> dh_rec = MatrixX<double>::Zero(C, P);
  MatrixX<double> dc_rec = MatrixX<double>::Zero(C, P);
  Vector g;
  for (int i = tape.N - 1; i >= 0; --i) {
    inst.loss(fw.X[i + 1], &g);
    gX += scale * g;
    if (!tape.accepted[i][column]) continue;
    const ConvStepCache& st = fw.steps[i];
    const std::vector<char>& clamp = tape.clamped[i][column];
    for (Index p = 0; p < P; ++p) {
      if (clamp[p]) gX[p] = 0.0;
    }
    const Vector d_dz = gX.head(P);
    const Vector6 d_dp = gX.tail<6>();
    dWd.row(0).noalias() += d_dz.transpose() * st.h.transpose();
    dbd(0, 0) += d_dz.sum();
    dWp.noalias() += d_dp * st.pooled.transpose();
    dbp.col(0) += d_dp;
    MatrixX<double> dh = Wd.transpose() * d_dz.transpose() + dh_rec;
    const Vector d_pooled = Wp.transpose() * d_dp / double(P);
    dh.colwise() += d_pooled;
    LstmGradients lg = conv_lstm_backward(st.cell, dh, dc_rec, K.width, K.height, W, kernel, dW, db);
    dh_rec = std::move(lg.h_prev);
    dc_rec = std::move(lg.c_prev);
    gX.head(P) += lg.input.row(kPixelChannels).transpose();
  }
}

void init_conv_tape(Tape& tape, int N, std::size_t B) {
  tape.N = N;
  tape.features.assign(N, std::vector<Vector>(B));
  tape.accepted.assign(N, std::vector<char>(B, 0));
  tape.clamped.assign(N, std::vector<std::vector<char>>(B));
}

void check_conv_model(const MetaModel& model, int N) {
  if (model.variant() != ModelVariant::ConvLstm) throw Error(ErrorCode::ShapeMismatch, "expected a conv model");
  if (N < 1) throw Error(ErrorCode::InvalidArgument, "unroll length must be at least 1");
}

void finish(BpttResult& r, double clip) {
  if (!std::isfinite(r.loss) || !all_finite(r.gradient)) {
    throw Error(ErrorCode::NonFiniteGradient, "meta-loss or gradient is not finite");
  }
  r.grad_norm = clip > 0.0 ? clip_global_norm(r.gradient, clip) : r.gradient.norm();
}

}  // namespace

BpttResult bptt_gradients(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, int N,
                          double clip) {
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty training batch");
  BpttResult r;
  const DenseUnroll fw = dense_forward(model, batch, N, nullptr, &r.tape, true);
  r.loss = fw.loss;
  r.gradient = dense_backward(model, batch, fw, r.tape);
  finish(r, clip);
  return r;
}

BpttResult bptt_gradients(const MetaModel& model, const std::vector<StereoTrainingInstance>& batch, int N,
                          double clip) {
  check_conv_model(model, N);
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty training batch");
  BpttResult r;
  init_conv_tape(r.tape, N, batch.size());
  r.gradient = Vector::Zero(model.parameter_count());
  const double scale = 1.0 / double(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ConvUnroll fw = conv_forward(model, batch[b], N, nullptr, b, &r.tape, true);
    r.loss += fw.loss;
    conv_backward(model, batch[b], fw, r.tape, b, scale, r.gradient);
  }
  r.loss *= scale;
  r.tape.loss = r.loss;
  finish(r, clip);
  return r;
}

double replay_loss(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, const Tape& tape) {
  return dense_forward(model, batch, tape.N, &tape, nullptr, false).loss;
}

double replay_loss(const MetaModel& model, const std::vector<StereoTrainingInstance>& batch, const Tape& tape) {
  check_conv_model(model, tape.N);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) total += conv_forward(model, batch[b], tape.N, &tape, b, nullptr, false).loss;
  return total * (1.0 / double(batch.size()));
}

double batch_loss(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, int N) {
  if (batch.empty()) return 0.0;
  return dense_forward(model, batch, N, nullptr, nullptr, false).loss;
}

double batch_loss(const MetaModel& model, const std::vector<StereoTrainingInstance>& batch, int N) {
  check_conv_model(model, N);
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (const auto& inst : batch) total += conv_forward(model, inst, N, nullptr, 0, nullptr, false).loss;
  return total * (1.0 / double(batch.size()));
}

double clip_global_norm(Vector& g, double max_norm) {
  const double norm = g.norm();
  if (max_norm > 0.0 && norm > max_norm) g *= max_norm / norm;
  return norm;
}

void adam_step(Vector& params, const Vector& grad, AdamState& state, const AdamConfig& config) {
  if (grad.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "ADAM: gradient does not match parameters");
  if (state.step == 0 && state.m.size() == 0 && state.v.size() == 0) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "ADAM: state does not match parameters");
  }
  ++state.step;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, double(state.step));
  params.array() -= config.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + config.eps);
}

void MetaTrainConfig::validate() const {
  if (unroll < 1 || batch_size < 1 || outer_steps < 0 || validation_size < 1 || validate_every < 1 ||
      log_every < 1 || checkpoint_every < 0 || !(adam.lr > 0) || !(adam.beta1 > 0 && adam.beta1 < 1) ||
      !(adam.beta2 > 0 && adam.beta2 < 1) || !(adam.eps > 0) || !(failure_budget >= 0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid meta-training configuration");
  }
}

std::uint64_t training_counter(std::uint64_t k) { return (k / 9) * 10 + k % 9; }
std::uint64_t validation_counter(std::uint64_t m) { return 10 * m + 9; }

void write_training_csv(const std::string& path, const std::vector<TrainingRow>& rows, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  if (!append) out << "outer_step,train_loss,val_loss,grad_norm,wall_ms\n";
  for (const TrainingRow& r : rows) {
    out << r.outer_step << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
        << format_double(r.grad_norm) << ',' << format_double(r.wall_ms) << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_eigen(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), Index(v.size())); }

struct Checkpoint {
  MetaModel model;
  MetaModel best;
  AdamState adam;
  int outer_step = 0;
  double best_val = 0.0;
  int discarded = 0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

void write_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json j;
  j["format"] = "lsnet-checkpoint";
  j["version"] = kModelVersion;
  j["model"] = nlohmann::json::parse(model_to_json(c.model));
  j["best"] = nlohmann::json::parse(model_to_json(c.best));
  j["adam"] = {{"m", to_std(c.adam.m)}, {"v", to_std(c.adam.v)}, {"step", c.adam.step}};
  j["outer_step"] = c.outer_step;
  j["best_val"] = c.best_val;
  j["val_loss"] = c.val_loss;
  j["discarded"] = c.discarded;
  j["wall_ms"] = c.wall_ms;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + tmp);
    out << j.dump() << '\n';
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error(ErrorCode::IoError, "cannot replace " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(ss.str());
    if (j.value("format", std::string()) != "lsnet-checkpoint") throw Error(ErrorCode::CorruptFile, "not a checkpoint");
    if (j.at("version").get<int>() != kModelVersion) throw Error(ErrorCode::VersionMismatch, "checkpoint version mismatch");
    Checkpoint c{model_from_json(j.at("model").dump()), model_from_json(j.at("best").dump()), {}};
    c.adam.m = to_eigen(j.at("adam").at("m").get<std::vector<double>>());
    c.adam.v = to_eigen(j.at("adam").at("v").get<std::vector<double>>());
    c.adam.step = j.at("adam").at("step").get<long>();
    c.outer_step = j.at("outer_step").get<int>();
    // Infinity and NaN are stored as null.
    c.best_val = j.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : j.at("best_val").get<double>();
    c.val_loss = j.at("val_loss").is_null() ? kNaN : j.at("val_loss").get<double>();
    c.discarded = j.at("discarded").get<int>();
    c.wall_ms = j.at("wall_ms").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("checkpoint JSON: ") + e.what());
  }
}

template <typename Instance>
TrainingResult train_driver(const MetaTrainConfig& config,
                            const std::function<Instance(std::uint64_t)>& generator, MetaModel model,
                            const std::string& resume_from) {
  config.validate();
  std::vector<Instance> validation;
  for (int m = 0; m < config.validation_size; ++m) validation.push_back(generator(validation_counter(m)));

  AdamState adam;
  MetaModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  double val_loss = kNaN;
  int start = 0;
  int discarded = 0;
  double wall_offset = 0.0;
  const bool resuming = !resume_from.empty();
  if (resuming) {
    Checkpoint c = read_checkpoint(resume_from);
    if (!(c.model.layout().size() == model.layout().size() && c.model.parameter_count() == model.parameter_count() &&
          c.model.variant() == model.variant())) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint model does not match the configuration");
    }
    model = std::move(c.model);
    best = std::move(c.best);
    adam = std::move(c.adam);
    start = c.outer_step;
    best_val = c.best_val;
    val_loss = c.val_loss;
    discarded = c.discarded;
    wall_offset = c.wall_ms;
  }

  auto make_batch = [&](int k) {
    std::vector<Instance> batch;
    for (int j = 0; j < config.batch_size; ++j) {
      batch.push_back(generator(training_counter(std::uint64_t(k) * config.batch_size + j)));
    }
    return batch;
  };

  std::vector<TrainingRow> rows;
  Stopwatch clock;
  const auto wall = [&]() { return Stopwatch::deterministic() ? 0.0 : wall_offset + clock.elapsed_ms(); };
  auto emit = [&](const TrainingRow& row) {
    rows.push_back(row);
    if (!config.csv_path.empty()) write_training_csv(config.csv_path, {row}, true);
    if (config.verbose) {
      std::cout << "step " << row.outer_step << " train " << row.train_loss << " val " << row.val_loss << " |g| "
                << row.grad_norm << std::endl;
    }
  };
  if (!config.csv_path.empty() && !resuming) write_training_csv(config.csv_path, {}, false);
  if (!resuming) {
    val_loss = batch_loss(model, validation, config.unroll);
    best_val = val_loss;
    emit({0, batch_loss(model, make_batch(0), config.unroll), val_loss, 0.0, wall()});
  }

  const int budget = int(std::floor(config.failure_budget * config.outer_steps));
  double window_loss = 0.0;
  int window_count = 0;
  double grad_norm = 0.0;
  auto save = [&](int step) {
    if (config.checkpoint_path.empty()) return;
    write_checkpoint(config.checkpoint_path, {model, best, adam, step, best_val, discarded, val_loss, wall()});
  };

  for (int k = start; k < config.outer_steps; ++k) {
    const std::vector<Instance> batch = make_batch(k);
    try {
      BpttResult r = bptt_gradients(model, batch, config.unroll, config.clip_norm);
      adam_step(model.parameters(), r.gradient, adam, config.adam);
      window_loss += r.loss;
      ++window_count;
      grad_norm = r.grad_norm;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteGradient) throw;
      ++discarded;
      if (config.verbose) std::cout << "step " << k + 1 << ": discarded batch (" << e.what() << ")" << std::endl;
      if (discarded > budget) {
        save(k);
        throw Error(ErrorCode::NonFiniteGradient,
                    "failure budget exhausted: " + std::to_string(discarded) + " discarded batches by outer step " +
                        std::to_string(k + 1) + " (budget " + std::to_string(budget) + ")");
      }
    }
    const int step = k + 1;
    if (step % config.validate_every == 0 || step == config.outer_steps) {
      val_loss = batch_loss(model, validation, config.unroll);
      if (val_loss < best_val) {
        best_val = val_loss;
        best = model;
      }
    }
    if (step % config.log_every == 0 || step == config.outer_steps) {
      emit({step, window_count ? window_loss / window_count : kNaN, val_loss, grad_norm, wall()});
      window_loss = 0.0;
      window_count = 0;
    }
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) save(step);
  }
  save(std::max(start, config.outer_steps));
  return {best, model, best_val, std::max(start, config.outer_steps), discarded, rows};
}

}  // namespace

TrainingResult train_meta(const MetaTrainConfig& config, const DenseGenerator& generator,
                          const std::string& resume_from) {
  Rng rng(Rng::derive_seed(config.seed, Rng::hash("model")));
  return train_driver<DenseTrainingInstance>(config, generator, MetaModel::dense(config.dense, rng), resume_from);
}

TrainingResult train_meta(const MetaTrainConfig& config, const StereoGenerator& generator,
                          const std::string& resume_from) {
  Rng rng(Rng::derive_seed(config.seed, Rng::hash("model")));
  return train_driver<StereoTrainingInstance>(config, generator, MetaModel::conv(config.conv, rng), resume_from);
}

DenseTrainingInstance curve_training_instance(std::uint64_t root_seed, std::uint64_t counter, double sigma,
                                              double w_param) {
  const Rng rng(Rng::derive_seed(root_seed, counter));
  Rng pick = rng.derive("family");
  const CurveTag tag = kAllCurveTags[pick.next_u64() % kAllCurveTags.size()];
  const CurveFamily family = CurveFamily::standard(tag);
  Rng sampler = rng.derive("instance");
  CurveInstance inst = sample_instance(family, sampler, sigma);
  DenseTrainingInstance out;
  out.loss = IterateLoss::parameters(inst.truth, w_param, tag == CurveTag::ExpSum);
  out.problem = std::make_shared<CurveProblem>(std::move(inst));
  out.x0 = family.initial_guess();
  return out;
}

DenseGenerator curve_generator(std::uint64_t root_seed, double sigma, double w_param) {
  return [=](std::uint64_t counter) { return curve_training_instance(root_seed, counter, sigma, w_param); };
}

StereoTrainingInstance stereo_training_instance(std::uint64_t root_seed, std::uint64_t counter,
                                                const SceneConfig& scene, const LossWeights& weights) {
  const Rng rng(Rng::derive_seed(root_seed, counter));
  for (std::uint64_t attempt = 0; attempt < 16; ++attempt) {
    Rng scene_rng = rng.derive(attempt);
    try {
      auto problem = std::make_shared<StereoProblem>(synth_scene(scene_rng, scene));
      StereoTrainingInstance out;
      out.x0 = stereo_initial_iterate(*problem, scene.mean_depth);
      out.loss = IterateLoss::stereo(*problem->ground_truth(), weights.depth, weights.pose);
      out.problem = std::move(problem);
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateScene) throw;
    }
  }
  throw Error(ErrorCode::DegenerateScene, "scene configuration keeps producing degenerate scenes");
}

StereoGenerator stereo_generator(std::uint64_t root_seed, const SceneConfig& scene, const LossWeights& weights) {
  return [=](std::uint64_t counter) { return stereo_training_instance(root_seed, counter, scene, weights); };
}

}  // namespace lsnet
