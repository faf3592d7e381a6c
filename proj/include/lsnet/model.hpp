#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lsnet/classical.hpp"
#include "lsnet/features.hpp"

namespace lsnet {

enum class ModelVariant { DenseLstm, ConvLstm };

std::string_view to_string(ModelVariant variant);
ModelVariant parse_model_variant(std::string_view name);

inline constexpr int kModelVersion = 1;

/// Nine feature channels, the current inverse depth, and the broadcast global vector.
inline constexpr int kConvInputChannels = kPixelChannels + 1 + kGlobalFeatures;

using ConstMatrixMap = Eigen::Map<const MatrixX<double>>;
using MatrixMap = Eigen::Map<MatrixX<double>>;

/// One named tensor inside the flat parameter vector.
struct TensorInfo {
  std::string name;
  std::vector<Index> shape;
  Index offset = 0;

  Index size() const;
  /// 2-D view shape: all leading dimensions are folded into the rows.
  Index view_rows() const;
  Index view_cols() const;
};

struct DenseLstmConfig {
  Index dim_x = 2;
  Index hidden = 32;
  int layers = 2;
};

struct ConvLstmConfig {
  int channels = 16;
  int kernel = 3;
};

/// Parameters of the learned update predictor.
///
/// All tensors live in one flat vector so that ADAM, gradient checks and the
/// file format treat them uniformly. Dense variant tensors: input.weight,
/// input.bias, cell<k>.weight, cell<k>.bias, output.weight, output.bias. Gate
/// rows are ordered (input, forget, output, candidate). The conv cell weight
/// is stored per kernel tap as a (4C) x (Cin + C) block, taps in row-major order.
class MetaModel {
 public:
  static MetaModel dense(const DenseLstmConfig& config, Rng& rng);
  static MetaModel conv(const ConvLstmConfig& config, Rng& rng);

  ModelVariant variant() const { return variant_; }
  const DenseLstmConfig& dense_config() const { return dense_; }
  const ConvLstmConfig& conv_config() const { return conv_; }

  /// Dense: feature length + dim_x. Conv: input channel count.
  Index input_dim() const;
  /// Hidden units (dense) or channels (conv).
  Index hidden() const;

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  Index parameter_count() const { return params_.size(); }
  const std::vector<TensorInfo>& layout() const { return layout_; }

  const TensorInfo& info(std::string_view name) const;
  ConstMatrixMap tensor(std::string_view name) const;
  MatrixMap tensor(std::string_view name);
  /// View of a tensor inside any vector laid out like parameters(), e.g. a gradient.
  MatrixMap tensor_in(Vector& flat, std::string_view name) const;

  bool operator==(const MetaModel& other) const;

 private:
  friend MetaModel model_from_json(const std::string& text);
  void add(std::string name, std::vector<Index> shape);

  ModelVariant variant_ = ModelVariant::DenseLstm;
  DenseLstmConfig dense_;
  ConvLstmConfig conv_;
  Vector params_;
  std::vector<TensorInfo> layout_;
};

struct HiddenState {
  MatrixX<double> h;  // units x batch (dense) or channels x pixels (conv)
  MatrixX<double> c;
};

/// One HiddenState per stacked cell.
using RecurrentState = std::vector<HiddenState>;

/// Zero state; columns = batch size (dense) or pixel count (conv).
RecurrentState zero_state(const MetaModel& model, Index columns = 1);

/// Forward values kept for the backward pass.
struct LstmCache {
  MatrixX<double> stacked;  // [input; h]
  MatrixX<double> gates;    // activated i, f, o, g
  MatrixX<double> c_prev;
  MatrixX<double> tanh_c;
};

/// Gate equations on column batches with an explicit weight matrix
/// W ((4H) x (in + H)) and bias b (4H).
HiddenState lstm_forward(const MatrixX<double>& input, const HiddenState& state, const ConstMatrixMap& W,
                         const ConstMatrixMap& b, LstmCache* cache = nullptr);

struct LstmGradients {
  MatrixX<double> input;
  MatrixX<double> h_prev;
  MatrixX<double> c_prev;
};

/// Reverse pass of lstm_forward. dW and db are accumulated.
LstmGradients lstm_backward(const LstmCache& cache, const MatrixX<double>& dh, const MatrixX<double>& dc,
                            const ConstMatrixMap& W, MatrixMap dW, MatrixMap db);

/// Dense-variant cell `layer` applied to one input column (or a batch).
HiddenState lstm_cell(const MatrixX<double>& input, const HiddenState& state, const MetaModel& model, int layer = 0);

/// Same-size 2-D cross-correlation with zero padding. `in` is channels x
/// (width * height); W stacks kernel*kernel blocks of Cout x Cin.
MatrixX<double> conv2d(const MatrixX<double>& in, int width, int height, const ConstMatrixMap& W, int kernel);

/// Reverse pass of conv2d: accumulates dW and returns d(in).
MatrixX<double> conv2d_backward(const MatrixX<double>& in, const MatrixX<double>& d_out, int width, int height,
                                const ConstMatrixMap& W, int kernel, MatrixMap dW);

/// Conv-LSTM cell on an image; gate products become 3x3 convolutions.
HiddenState conv_lstm_forward(const MatrixX<double>& input, int width, int height, const HiddenState& state,
                              const ConstMatrixMap& W, const ConstMatrixMap& b, int kernel,
                              LstmCache* cache = nullptr);

HiddenState conv_lstm_cell(const MatrixX<double>& input, int width, int height, const HiddenState& state,
                           const MetaModel& model);

/// Reverse pass of conv_lstm_forward. dW and db are accumulated.
LstmGradients conv_lstm_backward(const LstmCache& cache, const MatrixX<double>& dh, const MatrixX<double>& dc,
                                 int width, int height, const ConstMatrixMap& W, int kernel, MatrixMap dW,
                                 MatrixMap db);

/// [phi, x] for the dense variant.
Vector dense_input(const Vector& phi, const Vector& x);
/// Feature channels, z_p channel and broadcast global features for the conv variant.
MatrixX<double> conv_input(const FeatureImage& features, const Vector& z);

struct UpdatePrediction {
  Vector dx;
  RecurrentState state;
};

/// Dense variant; phi from phi_small.
UpdatePrediction predict_update(const MetaModel& model, const Vector& phi, const RecurrentState& state,
                                const Vector& x);
/// Conv variant; x = [z (pixels), pose].
UpdatePrediction predict_update(const MetaModel& model, const FeatureImage& features, const RecurrentState& state,
                                const Vector& x);

inline constexpr double kDefaultEarlyExit = 1e-6;

/// Learned iteration x_{i+1} = x_i + dx_i with zero initial hidden state.
///
/// Stops after N updates, with StepTolerance when |dx| < epsilon (the update
/// is not applied), with NonFiniteEvaluation when the new iterate cannot be
/// evaluated, and with Diverged on objective blow-up. Rejected iterates are
/// not recorded. The dense variant needs dim_x <= 8; the conv variant needs a
/// StereoProblem.
SolverTrace ls_net_solve(const Problem& problem, const MetaModel& model, const Vector& x0, int N,
                         double epsilon = kDefaultEarlyExit);

struct StereoSolveConfig {
  ClassicalConfig classical;
  /// Iteration count for the learned solver.
  int iterations = 15;
  double epsilon = kDefaultEarlyExit;
  /// Depth used for the constant initial inverse depth.
  double mean_depth = 2.0;
};

/// Classical LM when model is null, learned solver otherwise.
StereoSolution solve_stereo(const StereoInstance& instance, const MetaModel* model, const StereoInit& init = {},
                            const StereoSolveConfig& config = {});

std::string model_to_json(const MetaModel& model);
/// Throws VersionMismatch or CorruptFile.
MetaModel model_from_json(const std::string& text);
void save_model(const MetaModel& model, const std::string& path);
/// Throws IoError, VersionMismatch or CorruptFile.
MetaModel load_model(const std::string& path);

}  // namespace lsnet
