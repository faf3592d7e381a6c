#include "lsnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lsnet {

std::string_view to_string(ModelVariant variant) {
  return variant == ModelVariant::DenseLstm ? "dense" : "conv";
}

ModelVariant parse_model_variant(std::string_view name) {
  if (name == "dense") return ModelVariant::DenseLstm;
  if (name == "conv") return ModelVariant::ConvLstm;
  throw Error(ErrorCode::InvalidArgument, "unknown model variant '" + std::string(name) + "'");
}

Index TensorInfo::size() const {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

Index TensorInfo::view_cols() const { return shape.size() < 2 ? 1 : shape.back(); }
Index TensorInfo::view_rows() const { return size() / std::max<Index>(view_cols(), 1); }

void MetaModel::add(std::string name, std::vector<Index> shape) {
  TensorInfo t{std::move(name), std::move(shape), params_.size()};
  params_.conservativeResize(params_.size() + t.size());
  params_.tail(t.size()).setZero();
  layout_.push_back(std::move(t));
}

namespace {

void fill_uniform(MatrixMap m, double bound, Rng& rng) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-bound, bound);
  }
}

}  // namespace

MetaModel MetaModel::dense(const DenseLstmConfig& config, Rng& rng) {
  if (config.dim_x < 1 || config.dim_x > kMaxSmallDim || config.hidden < 1 || config.layers < 1) {
    throw Error(ErrorCode::InvalidArgument, "dense model needs 1 <= dim_x <= 8, hidden >= 1, layers >= 1");
  }
  MetaModel m;
  m.variant_ = ModelVariant::DenseLstm;
  m.dense_ = config;
  const Index H = config.hidden, D = m.input_dim();
  m.add("input.weight", {H, D});
  m.add("input.bias", {H});
  for (int l = 0; l < config.layers; ++l) {
    m.add("cell" + std::to_string(l) + ".weight", {4 * H, 2 * H});
    m.add("cell" + std::to_string(l) + ".bias", {4 * H});
  }
  m.add("output.weight", {config.dim_x, H});
  m.add("output.bias", {config.dim_x});

  const double in_bound = 1.0 / std::sqrt(double(D));
  fill_uniform(m.tensor("input.weight"), in_bound, rng);
  fill_uniform(m.tensor("input.bias"), in_bound, rng);
  const double cell_bound = 1.0 / std::sqrt(double(H));
  for (int l = 0; l < config.layers; ++l) {
    const std::string prefix = "cell" + std::to_string(l);
    fill_uniform(m.tensor(prefix + ".weight"), cell_bound, rng);
    auto b = m.tensor(prefix + ".bias");
    fill_uniform(b, cell_bound, rng);
    b.middleRows(H, H).array() += 1.0;
  }
  return m;
}

MetaModel MetaModel::conv(const ConvLstmConfig& config, Rng& rng) {
  if (config.channels < 1 || config.kernel < 1 || config.kernel % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "conv model needs channels >= 1 and an odd kernel");
  }
  MetaModel m;
  m.variant_ = ModelVariant::ConvLstm;
  m.conv_ = config;
  const Index C = config.channels, taps = Index(config.kernel) * config.kernel;
  m.add("cell.weight", {taps, 4 * C, kConvInputChannels + C});
  m.add("cell.bias", {4 * C});
  m.add("depth.weight", {1, C});
  m.add("depth.bias", {1});
  m.add("pose.weight", {6, C});
  m.add("pose.bias", {6});

  const double bound = 1.0 / std::sqrt(double((kConvInputChannels + C) * taps));
  fill_uniform(m.tensor("cell.weight"), bound, rng);
  auto b = m.tensor("cell.bias");
  fill_uniform(b, bound, rng);
  b.middleRows(C, C).array() += 1.0;
  return m;
}

Index MetaModel::input_dim() const {
  if (variant_ == ModelVariant::ConvLstm) return kConvInputChannels;
  return small_feature_length(dense_.dim_x) + dense_.dim_x;
}

Index MetaModel::hidden() const { return variant_ == ModelVariant::ConvLstm ? conv_.channels : dense_.hidden; }

const TensorInfo& MetaModel::info(std::string_view name) const {
  for (const TensorInfo& t : layout_) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "model has no tensor '" + std::string(name) + "'");
}

ConstMatrixMap MetaModel::tensor(std::string_view name) const {
  const TensorInfo& t = info(name);
  return {params_.data() + t.offset, t.view_rows(), t.view_cols()};
}

MatrixMap MetaModel::tensor(std::string_view name) {
  const TensorInfo& t = info(name);
  return {params_.data() + t.offset, t.view_rows(), t.view_cols()};
}

MatrixMap MetaModel::tensor_in(Vector& flat, std::string_view name) const {
  if (flat.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "vector does not match model layout");
  const TensorInfo& t = info(name);
  return {flat.data() + t.offset, t.view_rows(), t.view_cols()};
}

bool MetaModel::operator==(const MetaModel& other) const {
  if (variant_ != other.variant_ || layout_.size() != other.layout_.size()) return false;
  for (std::size_t k = 0; k < layout_.size(); ++k) {
    if (layout_[k].name != other.layout_[k].name || layout_[k].shape != other.layout_[k].shape) return false;
  }
  if (params_.size() != other.params_.size()) return false;
  // Bitwise comparison so that signed zeros and NaN payloads count.
  return std::memcmp(params_.data(), other.params_.data(), sizeof(double) * params_.size()) == 0;
}

RecurrentState zero_state(const MetaModel& model, Index columns) {
  const Index H = model.hidden();
  const int layers = model.variant() == ModelVariant::DenseLstm ? model.dense_config().layers : 1;
  RecurrentState s(layers);
  for (HiddenState& h : s) {
    h.h = MatrixX<double>::Zero(H, columns);
    h.c = MatrixX<double>::Zero(H, columns);
  }
  return s;
}

namespace {

void check_state(const HiddenState& state, Index H, Index cols) {
  if (state.h.rows() != H || state.c.rows() != H || state.h.cols() != cols || state.c.cols() != cols) {
    throw Error(ErrorCode::ShapeMismatch, "hidden state shape does not match the model");
  }
}

// Gate activations and state update shared by the dense and conv cells.
HiddenState apply_gates(MatrixX<double>& z, const HiddenState& state, LstmCache* cache) {
  const Index H = state.h.rows();
  z.topRows(3 * H) = (1.0 + (-z.topRows(3 * H).array()).exp()).inverse().matrix();
  z.bottomRows(H) = z.bottomRows(H).array().tanh().matrix();
  HiddenState out;
  out.c = (z.middleRows(H, H).array() * state.c.array() + z.topRows(H).array() * z.bottomRows(H).array()).matrix();
  MatrixX<double> tanh_c = out.c.array().tanh().matrix();
  out.h = (z.middleRows(2 * H, H).array() * tanh_c.array()).matrix();
  if (cache) {
    cache->gates = z;
    cache->c_prev = state.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return out;
}

// d(pre-activation) from dh', dc'; also returns dc_prev through the out-parameter.
MatrixX<double> gate_backward(const LstmCache& cache, const MatrixX<double>& dh, const MatrixX<double>& dc_next,
                              MatrixX<double>& dc_prev) {
  const Index H = cache.c_prev.rows();
  const auto i = cache.gates.topRows(H).array();
  const auto f = cache.gates.middleRows(H, H).array();
  const auto o = cache.gates.middleRows(2 * H, H).array();
  const auto g = cache.gates.bottomRows(H).array();
  const auto tc = cache.tanh_c.array();
  const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * o * (1.0 - tc * tc);
  MatrixX<double> dz(4 * H, dh.cols());
  dz.topRows(H) = (dc * g * i * (1.0 - i)).matrix();
  dz.middleRows(H, H) = (dc * cache.c_prev.array() * f * (1.0 - f)).matrix();
  dz.middleRows(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
  dz.bottomRows(H) = (dc * i * (1.0 - g * g)).matrix();
  dc_prev = (dc * f).matrix();
  return dz;
}

}  // namespace

HiddenState lstm_forward(const MatrixX<double>& input, const HiddenState& state, const ConstMatrixMap& W,
                         const ConstMatrixMap& b, LstmCache* cache) {
  const Index H = state.h.rows(), B = input.cols();
  check_state(state, H, B);
  if (W.rows() != 4 * H || W.cols() != input.rows() + H || b.rows() != 4 * H || b.cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "LSTM weights do not match input and state sizes");
  }
  MatrixX<double> stacked(input.rows() + H, B);
  stacked << input, state.h;
  MatrixX<double> z = W * stacked;
  z.colwise() += b.col(0);
  if (cache) cache->stacked = std::move(stacked);
  return apply_gates(z, state, cache);
}

LstmGradients lstm_backward(const LstmCache& cache, const MatrixX<double>& dh, const MatrixX<double>& dc,
                            const ConstMatrixMap& W, MatrixMap dW, MatrixMap db) {
  const Index H = cache.c_prev.rows();
  LstmGradients g;
  const MatrixX<double> dz = gate_backward(cache, dh, dc, g.c_prev);
  dW.noalias() += dz * cache.stacked.transpose();
  db.col(0) += dz.rowwise().sum();
  const MatrixX<double> ds = W.transpose() * dz;
  g.input = ds.topRows(ds.rows() - H);
  g.h_prev = ds.bottomRows(H);
  return g;
}

HiddenState lstm_cell(const MatrixX<double>& input, const HiddenState& state, const MetaModel& model, int layer) {
  if (model.variant() != ModelVariant::DenseLstm) throw Error(ErrorCode::ShapeMismatch, "lstm_cell needs a dense model");
  const std::string prefix = "cell" + std::to_string(layer);
  return lstm_forward(input, state, model.tensor(prefix + ".weight"), model.tensor(prefix + ".bias"));
}

namespace {

// out(:, y, x) = in(:, y + dy, x + dx), zero outside the image.
void shift_image(const MatrixX<double>& in, int width, int height, int dy, int dx, MatrixX<double>& out) {
  out.setZero(in.rows(), in.cols());
  const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
  const int y0 = std::max(0, -dy), y1 = std::min(height, height - dy);
  if (x1 <= x0 || y1 <= y0) return;
  const Index len = x1 - x0;
  for (Index c = 0; c < in.rows(); ++c) {
    for (int y = y0; y < y1; ++y) {
      out.row(c).segment(Index(y) * width + x0, len) = in.row(c).segment(Index(y + dy) * width + x0 + dx, len);
    }
  }
}

void check_conv(const MatrixX<double>& in, int width, int height, const ConstMatrixMap& W, int kernel) {
  const Index taps = Index(kernel) * kernel;
  if (in.cols() != Index(width) * height || W.cols() != in.rows() || W.rows() % taps != 0) {
    throw Error(ErrorCode::ShapeMismatch, "convolution shapes do not match");
  }
}

}  // namespace

MatrixX<double> conv2d(const MatrixX<double>& in, int width, int height, const ConstMatrixMap& W, int kernel) {
  check_conv(in, width, height, W, kernel);
  const Index taps = Index(kernel) * kernel, cout = W.rows() / taps;
  const int half = kernel / 2;
  MatrixX<double> out = MatrixX<double>::Zero(cout, in.cols());
  MatrixX<double> shifted;
  for (Index t = 0; t < taps; ++t) {
    const int dy = int(t / kernel) - half, dx = int(t % kernel) - half;
    if (dy == 0 && dx == 0) {
      out.noalias() += W.middleRows(t * cout, cout) * in;
    } else {
      shift_image(in, width, height, dy, dx, shifted);
      out.noalias() += W.middleRows(t * cout, cout) * shifted;
    }
  }
  return out;
}

MatrixX<double> conv2d_backward(const MatrixX<double>& in, const MatrixX<double>& d_out, int width, int height,
                                const ConstMatrixMap& W, int kernel, MatrixMap dW) {
  check_conv(in, width, height, W, kernel);
  const Index taps = Index(kernel) * kernel, cout = W.rows() / taps;
  const int half = kernel / 2;
  MatrixX<double> d_in = MatrixX<double>::Zero(in.rows(), in.cols());
  MatrixX<double> shifted, back;
  for (Index t = 0; t < taps; ++t) {
    const int dy = int(t / kernel) - half, dx = int(t % kernel) - half;
    const MatrixX<double> d_shifted = W.middleRows(t * cout, cout).transpose() * d_out;
    if (dy == 0 && dx == 0) {
      dW.middleRows(t * cout, cout).noalias() += d_out * in.transpose();
      d_in += d_shifted;
    } else {
      shift_image(in, width, height, dy, dx, shifted);
      dW.middleRows(t * cout, cout).noalias() += d_out * shifted.transpose();
      // The adjoint of a zero-padded shift is the opposite shift.
      shift_image(d_shifted, width, height, -dy, -dx, back);
      d_in += back;
    }
  }
  return d_in;
}

HiddenState conv_lstm_forward(const MatrixX<double>& input, int width, int height, const HiddenState& state,
                              const ConstMatrixMap& W, const ConstMatrixMap& b, int kernel, LstmCache* cache) {
  const Index H = state.h.rows(), P = Index(width) * height;
  check_state(state, H, P);
  if (input.cols() != P) throw Error(ErrorCode::ShapeMismatch, "conv-LSTM input does not match the image size");
  if (W.cols() != input.rows() + H || W.rows() != Index(kernel) * kernel * 4 * H || b.rows() != 4 * H) {
    throw Error(ErrorCode::ShapeMismatch, "conv-LSTM weights do not match input and state sizes");
  }
  MatrixX<double> stacked(input.rows() + H, P);
  stacked << input, state.h;
  MatrixX<double> z = conv2d(stacked, width, height, W, kernel);
  z.colwise() += b.col(0);
  if (cache) cache->stacked = std::move(stacked);
  return apply_gates(z, state, cache);
}

HiddenState conv_lstm_cell(const MatrixX<double>& input, int width, int height, const HiddenState& state,
                           const MetaModel& model) {
  if (model.variant() != ModelVariant::ConvLstm) throw Error(ErrorCode::ShapeMismatch, "conv_lstm_cell needs a conv model");
  return conv_lstm_forward(input, width, height, state, model.tensor("cell.weight"), model.tensor("cell.bias"),
                           model.conv_config().kernel);
}

LstmGradients conv_lstm_backward(const LstmCache& cache, const MatrixX<double>& dh, const MatrixX<double>& dc,
                                 int width, int height, const ConstMatrixMap& W, int kernel, MatrixMap dW,
                                 MatrixMap db) {
  const Index H = cache.c_prev.rows();
  LstmGradients g;
  const MatrixX<double> dz = gate_backward(cache, dh, dc, g.c_prev);
  db.col(0) += dz.rowwise().sum();
  const MatrixX<double> ds = conv2d_backward(cache.stacked, dz, width, height, W, kernel, dW);
  g.input = ds.topRows(ds.rows() - H);
  g.h_prev = ds.bottomRows(H);
  return g;
}

Vector dense_input(const Vector& phi, const Vector& x) {
  Vector u(phi.size() + x.size());
  u << phi, x;
  return u;
}

MatrixX<double> conv_input(const FeatureImage& features, const Vector& z) {
  const Index P = features.pixel_count();
  if (z.size() != P || features.channels.rows() != kPixelChannels || features.channels.cols() != P ||
      features.global.size() != kGlobalFeatures) {
    throw Error(ErrorCode::ShapeMismatch, "feature image does not match the iterate");
  }
  MatrixX<double> in(kConvInputChannels, P);
  in.topRows(kPixelChannels) = features.channels;
  in.row(kPixelChannels) = z.transpose();
  for (int k = 0; k < kGlobalFeatures; ++k) in.row(kPixelChannels + 1 + k).setConstant(features.global[k]);
  return in;
}

UpdatePrediction predict_update(const MetaModel& model, const Vector& phi, const RecurrentState& state,
                                const Vector& x) {
  if (model.variant() != ModelVariant::DenseLstm) throw Error(ErrorCode::ShapeMismatch, "expected a dense model");
  const DenseLstmConfig& cfg = model.dense_config();
  if (x.size() != cfg.dim_x || phi.size() != small_feature_length(cfg.dim_x)) {
    throw Error(ErrorCode::ShapeMismatch, "features do not match the dense model layout");
  }
  if (static_cast<int>(state.size()) != cfg.layers) throw Error(ErrorCode::ShapeMismatch, "wrong number of cell states");
  MatrixX<double> in = model.tensor("input.weight") * dense_input(phi, x) + model.tensor("input.bias");
  UpdatePrediction out;
  out.state.resize(state.size());
  for (int l = 0; l < cfg.layers; ++l) {
    out.state[l] = lstm_cell(in, state[l], model, l);
    in = out.state[l].h;
  }
  out.dx = model.tensor("output.weight") * in + model.tensor("output.bias");
  return out;
}

UpdatePrediction predict_update(const MetaModel& model, const FeatureImage& features, const RecurrentState& state,
                                const Vector& x) {
  if (model.variant() != ModelVariant::ConvLstm) throw Error(ErrorCode::ShapeMismatch, "expected a conv model");
  const Index P = features.pixel_count();
  if (x.size() != P + 6) throw Error(ErrorCode::ShapeMismatch, "iterate does not match the feature image");
  if (state.size() != 1) throw Error(ErrorCode::ShapeMismatch, "conv model has one cell state");
  UpdatePrediction out;
  out.state = {conv_lstm_cell(conv_input(features, x.head(P)), features.width, features.height, state[0], model)};
  const MatrixX<double>& h = out.state[0].h;
  out.dx.resize(P + 6);
  out.dx.head(P) = (model.tensor("depth.weight") * h).transpose();
  out.dx.head(P).array() += model.tensor("depth.bias")(0, 0);
  const Vector pooled = h.rowwise().mean();
  out.dx.tail<6>() = model.tensor("pose.weight") * pooled + model.tensor("pose.bias");
  return out;
}

namespace {

double evaluate_objective(const Problem& problem, const Vector& x) {
  if (!all_finite(x)) return std::nan("");
  try {
    return objective(problem, x);
  } catch (const Error&) {
    return std::nan("");
  }
}

}  // namespace

SolverTrace ls_net_solve(const Problem& problem, const MetaModel& model, const Vector& x0, int N, double epsilon) {
  if (N < 0) throw Error(ErrorCode::InvalidArgument, "ls_net_solve: N must be non-negative");
  if (x0.size() != problem.dim_x()) throw Error(ErrorCode::DimensionMismatch, "ls_net_solve: bad x0 length");
  const auto* stereo = dynamic_cast<const StereoProblem*>(&problem);
  const bool conv = model.variant() == ModelVariant::ConvLstm;
  if (conv && !stereo) throw Error(ErrorCode::InvalidArgument, "the conv model needs a stereo problem");
  if (!conv && (stereo || problem.dim_x() != model.dense_config().dim_x)) {
    throw Error(ErrorCode::InvalidArgument, "the dense model does not match the problem dimension");
  }

  SolverTrace trace;
  Stopwatch clock;
  Vector x = x0;
  double E = evaluate_objective(problem, x);
  if (!std::isfinite(E)) {
    trace.termination = Termination::NonFiniteEvaluation;
    return trace;
  }
  const double E0 = E;
  trace.push(x, E, 0.0, clock.elapsed_ms());
  trace.termination = Termination::MaxIterations;

  RecurrentState state = zero_state(model, conv ? stereo->instance().pixel_count() : 1);
  double previous_step = 0.0;
  for (int i = 0; i < N; ++i) {
    clock.restart();
    UpdatePrediction update;
    try {
      if (conv) {
        const Linearization lin = stereo->linearize(x);
        const FeatureImage f = phi_dense(lin.jacobian, lin.residuals.r, {previous_step, i, N});
        update = predict_update(model, f, state, x);
      } else {
        update = predict_update(model, phi_small(problem.normal_equations(x)), state, x);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteEvaluation && e.code() != ErrorCode::DomainError) throw;
      trace.termination = Termination::NonFiniteEvaluation;
      return trace;
    }
    if (!all_finite(update.dx)) {
      trace.termination = Termination::Diverged;
      return trace;
    }
    if (update.dx.norm() < epsilon) {
      trace.termination = Termination::StepTolerance;
      return trace;
    }
    Vector x_new = x + update.dx;
    problem.project(x_new);
    const double E_new = evaluate_objective(problem, x_new);
    if (!std::isfinite(E_new)) {
      trace.termination = Termination::NonFiniteEvaluation;
      return trace;
    }
    if (is_divergent(E_new, E0, x_new)) {
      trace.termination = Termination::Diverged;
      return trace;
    }
    previous_step = (x_new - x).norm();
    trace.push(x_new, E_new, previous_step, clock.elapsed_ms());
    x = std::move(x_new);
    state = std::move(update.state);
  }
  return trace;
}

StereoSolution solve_stereo(const StereoInstance& instance, const MetaModel* model, const StereoInit& init,
                            const StereoSolveConfig& config) {
  const StereoProblem problem(instance);
  const Vector x0 = stereo_initial_iterate(problem, config.mean_depth, init);
  StereoSolution sol;
  sol.trace = model ? ls_net_solve(problem, *model, x0, config.iterations, config.epsilon)
                    : solve_classical(problem, x0, config.classical, ClassicalMethod::LevenbergMarquardt);
  const Vector& x = sol.trace.empty() ? x0 : sol.trace.final_x();
  sol.z = problem.depth_of(x);
  sol.pose = StereoProblem::pose_of(x);
  for (const Vector& xi : sol.trace.iterates) sol.metrics.push_back(stereo_metrics(problem, xi));
  return sol;
}

std::string model_to_json(const MetaModel& model) {
  nlohmann::json j;
  j["format"] = "lsnet-meta-model";
  j["version"] = kModelVersion;
  j["variant"] = std::string(to_string(model.variant()));
  if (model.variant() == ModelVariant::DenseLstm) {
    const auto& c = model.dense_config();
    j["config"] = {{"dim_x", c.dim_x}, {"hidden", c.hidden}, {"layers", c.layers}};
  } else {
    const auto& c = model.conv_config();
    j["config"] = {{"channels", c.channels}, {"kernel", c.kernel}};
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const TensorInfo& t : model.layout()) {
    const double* p = model.parameters().data() + t.offset;
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"data", std::vector<double>(p, p + t.size())}});
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

MetaModel model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.value("format", std::string()) != "lsnet-meta-model") throw Error(ErrorCode::CorruptFile, "not a model file");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) {
      throw Error(ErrorCode::VersionMismatch,
                  "model version " + std::to_string(version) + ", expected " + std::to_string(kModelVersion));
    }
    const ModelVariant variant = parse_model_variant(j.at("variant").get<std::string>());
    const auto& c = j.at("config");
    Rng unused(0);
    MetaModel model = variant == ModelVariant::DenseLstm
                          ? MetaModel::dense({c.at("dim_x").get<Index>(), c.at("hidden").get<Index>(),
                                              c.at("layers").get<int>()},
                                             unused)
                          : MetaModel::conv({c.at("channels").get<int>(), c.at("kernel").get<int>()}, unused);
    const auto& tensors = j.at("tensors");
    if (tensors.size() != model.layout().size()) throw Error(ErrorCode::CorruptFile, "wrong number of tensors");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const TensorInfo& t = model.layout()[k];
      const auto& jt = tensors[k];
      if (jt.at("name").get<std::string>() != t.name || jt.at("shape").get<std::vector<Index>>() != t.shape) {
        throw Error(ErrorCode::CorruptFile, "tensor " + t.name + " has unexpected name or shape");
      }
      const auto data = jt.at("data").get<std::vector<double>>();
      if (static_cast<Index>(data.size()) != t.size()) throw Error(ErrorCode::CorruptFile, t.name + " has wrong length");
      std::copy(data.begin(), data.end(), model.params_.data() + t.offset);
    }
    if (!all_finite(model.params_)) throw Error(ErrorCode::CorruptFile, "model has non-finite parameters");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("model JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::VersionMismatch || e.code() == ErrorCode::CorruptFile) throw;
    throw Error(ErrorCode::CorruptFile, std::string("model JSON: ") + e.what());
  }
}

void save_model(const MetaModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out << model_to_json(model) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

MetaModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace lsnet
