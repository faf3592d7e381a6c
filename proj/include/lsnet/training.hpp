#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lsnet/curves.hpp"
#include "lsnet/model.hpp"

namespace lsnet {

struct LossWeights {
  double param = 1.0;  // curves
  double depth = 1.0;  // stereo, mean |z - z~| over pixels
  double pose = 1.0;   // stereo, |t - t~|_1 + |alpha - alpha~|_1
};

/// Loss of a single iterate against its target, with optional gradient.
class IterateLoss {
 public:
  /// w * |x - truth|_1; with swap_invariant the two parameters may be exchanged
  /// (the ExpSum family is symmetric in a and b).
  static IterateLoss parameters(Vector truth, double weight, bool swap_invariant = false);
  /// w_depth * mean |z - z~| + w_pose * |pose - pose~|_1 for x = [z, pose].
  static IterateLoss stereo(const Vector& truth, double w_depth, double w_pose);

  double operator()(const Vector& x, Vector* gradient = nullptr) const;
  Index dim() const { return truth_.size(); }

 private:
  enum class Kind { Parameters, Stereo } kind_ = Kind::Parameters;
  Vector truth_;
  double w_a_ = 1.0;
  double w_b_ = 0.0;
  bool swap_ = false;
};

/// Sum of the iterate losses over iterations 1..N; x0 comes from a fixed
/// initializer and is excluded. N = 0 uses every recorded iterate; a larger N
/// holds the last recorded iterate, matching the training unroll. Throws
/// DimensionMismatch when the iterates do not match the target.
double meta_loss(const SolverTrace& trace, const IterateLoss& loss, int N = 0);

/// One meta-training example for the dense variant.
struct DenseTrainingInstance {
  std::shared_ptr<const Problem> problem;
  Vector x0;
  IterateLoss loss = IterateLoss::parameters(Vector(), 1.0);
};

struct StereoTrainingInstance {
  std::shared_ptr<const StereoProblem> problem;
  Vector x0;
  IterateLoss loss = IterateLoss::parameters(Vector(), 1.0);
};

/// Stop-gradient inputs and control decisions of one unrolled batch.
///
/// Replaying a tape re-runs the differentiable part (network, additive chain)
/// with the recorded features, so the replayed loss is a function of the
/// parameters alone; BPTT computes exactly its gradient.
struct Tape {
  int N = 0;
  /// features[i][b]: phi (dense) or the flattened feature image (conv) at step i.
  std::vector<std::vector<Vector>> features;
  /// accepted[i][b]: whether update i of instance b was kept.
  std::vector<std::vector<char>> accepted;
  /// clamped[i][b]: per-coordinate depth-clamp mask for stereo (empty for dense).
  std::vector<std::vector<std::vector<char>>> clamped;
  double loss = 0.0;
};

struct BpttResult {
  double loss = 0.0;      // mean meta-loss over the batch
  Vector gradient;        // after clipping
  double grad_norm = 0.0;  // before clipping
  Tape tape;
};

/// Batch-mean meta-loss and its exact reverse-mode gradient under the
/// stop-gradient convention. Instances whose iterate fails to evaluate (or
/// diverges) hold their last good iterate for the remaining steps. Throws
/// NonFiniteGradient when the loss or gradient is not finite. clip <= 0
/// disables clipping.
BpttResult bptt_gradients(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, int N,
                          double clip = 0.0);
BpttResult bptt_gradients(const MetaModel& model, const std::vector<StereoTrainingInstance>& batch, int N,
                          double clip = 0.0);

/// Forward-only loss of a recorded tape with the current parameters.
double replay_loss(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, const Tape& tape);
double replay_loss(const MetaModel& model, const std::vector<StereoTrainingInstance>& batch, const Tape& tape);

/// Forward-only batch-mean meta-loss (no tape replay; features are recomputed).
double batch_loss(const MetaModel& model, const std::vector<DenseTrainingInstance>& batch, int N);
double batch_loss(const MetaModel& model, const std::vector<StereoTrainingInstance>& batch, int N);

/// Scales g to at most max_norm (direction preserved); returns the norm before clipping.
double clip_global_norm(Vector& g, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

/// Bias-corrected ADAM. A default-constructed state is sized on first use;
/// otherwise mismatched sizes throw ShapeMismatch.
void adam_step(Vector& params, const Vector& grad, AdamState& state, const AdamConfig& config);

struct MetaTrainConfig {
  int unroll = 15;
  int batch_size = 32;
  int outer_steps = 20000;
  AdamConfig adam;
  LossWeights weights;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  int validation_size = 64;
  int validate_every = 250;
  int log_every = 50;
  /// 0 disables periodic checkpoints.
  int checkpoint_every = 1000;
  std::string checkpoint_path;
  std::string csv_path;
  /// Fraction of outer steps whose batch may be discarded before training aborts.
  double failure_budget = 0.01;
  DenseLstmConfig dense;
  ConvLstmConfig conv;
  /// Echo progress lines to stdout.
  bool verbose = false;

  void validate() const;
};

struct TrainingRow {
  int outer_step;
  double train_loss;
  double val_loss;
  double grad_norm;
  double wall_ms;
};

struct TrainingResult {
  MetaModel best;
  MetaModel last;
  double best_val_loss;
  int steps_done;
  int discarded_batches;
  std::vector<TrainingRow> rows;
};

/// Instance counters are partitioned by seed: every tenth counter
/// (k % 10 == 9) is reserved for validation.
std::uint64_t training_counter(std::uint64_t k);
std::uint64_t validation_counter(std::uint64_t m);

using DenseGenerator = std::function<DenseTrainingInstance(std::uint64_t counter)>;
using StereoGenerator = std::function<StereoTrainingInstance(std::uint64_t counter)>;

/// Meta-trains a dense model; with resume_from set training continues from a
/// checkpoint written by an earlier run with the same configuration.
TrainingResult train_meta(const MetaTrainConfig& config, const DenseGenerator& generator,
                          const std::string& resume_from = "");
TrainingResult train_meta(const MetaTrainConfig& config, const StereoGenerator& generator,
                          const std::string& resume_from = "");

/// Random family from the four curve families, standard ranges, midpoint start.
DenseTrainingInstance curve_training_instance(std::uint64_t root_seed, std::uint64_t counter, double sigma = 0.1,
                                              double w_param = 1.0);
DenseGenerator curve_generator(std::uint64_t root_seed, double sigma = 0.1, double w_param = 1.0);

StereoTrainingInstance stereo_training_instance(std::uint64_t root_seed, std::uint64_t counter,
                                                const SceneConfig& scene, const LossWeights& weights);
StereoGenerator stereo_generator(std::uint64_t root_seed, const SceneConfig& scene, const LossWeights& weights);

void write_training_csv(const std::string& path, const std::vector<TrainingRow>& rows, bool append);

}  // namespace lsnet
