#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <fstream>
#include <sstream>

#include "lsnet/diagnostics.hpp"
#include "lsnet/training.hpp"

using namespace lsnet;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("lsnet_test_" + name)).string();
}

DenseGenerator fixed_linear_generator() {
  Matrix A(4, 2);
  A << 1.0, 0.5, -0.3, 2.0, 0.7, 0.1, 0.0, 1.2;
  const Vector truth{{0.8, -0.6}};
  auto problem = std::make_shared<LinearProblem>(A, A * truth, truth);
  return [=](std::uint64_t) {
    DenseTrainingInstance inst;
    inst.problem = problem;
    inst.x0 = Vector::Zero(2);
    inst.loss = IterateLoss::parameters(truth, 1.0);
    return inst;
  };
}

MetaTrainConfig small_config() {
  MetaTrainConfig cfg;
  cfg.dense = {2, 8, 2};
  cfg.unroll = 3;
  cfg.batch_size = 4;
  cfg.outer_steps = 30;
  cfg.validation_size = 8;
  cfg.validate_every = 10;
  cfg.log_every = 5;
  cfg.checkpoint_every = 0;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST(MetaLoss, Examples) {
  SolverTrace at_truth;
  for (int i = 0; i < 4; ++i) at_truth.push(Vector{{0.5, 0.5}}, 0.0, 0.0, 0.0);
  EXPECT_EQ(meta_loss(at_truth, IterateLoss::parameters(Vector{{0.5, 0.5}}, 1.0)), 0.0);

  SolverTrace single;
  single.push(Vector{{9.0, 9.0}}, 0.0, 0.0, 0.0);
  single.push(Vector{{1.0, 2.0}}, 0.0, 0.0, 0.0);
  EXPECT_EQ(meta_loss(single, IterateLoss::parameters(Vector::Zero(2), 1.0)), 3.0);
  // Holding the last iterate over a longer unroll.
  EXPECT_EQ(meta_loss(single, IterateLoss::parameters(Vector::Zero(2), 1.0), 3), 9.0);
  EXPECT_THROW(meta_loss(single, IterateLoss::parameters(Vector::Zero(3), 1.0)), Error);
}

TEST(MetaLoss, SwapInvariant) {
  const IterateLoss loss = IterateLoss::parameters(Vector{{-0.5, 0.25}}, 2.0, true);
  EXPECT_EQ(loss(Vector{{0.25, -0.5}}), 0.0);
  EXPECT_EQ(loss(Vector{{-0.5, 0.5}}), 0.5);
}

TEST(MetaLoss, StereoMatchesPixelLoop) {
  Rng rng(3);
  const Index P = 48;
  const double wd = 0.7, wp = 1.9;
  Vector truth(P + 6);
  for (auto& v : truth) v = rng.uniform(0.2, 1.0);
  const IterateLoss loss = IterateLoss::stereo(truth, wd, wp);
  SolverTrace trace;
  for (int i = 0; i < 5; ++i) {
    Vector x(P + 6);
    for (auto& v : x) v = rng.uniform(0.0, 1.2);
    trace.push(x, 0.0, 0.0, 0.0);
  }
  double expected = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    double depth = 0, pose = 0;
    for (Index p = 0; p < P; ++p) depth += std::abs(trace.iterates[i][p] - truth[p]);
    for (Index c = P; c < P + 6; ++c) pose += std::abs(trace.iterates[i][c] - truth[c]);
    expected += wd * depth / double(P) + wp * pose;
  }
  EXPECT_NEAR(meta_loss(trace, loss), expected, 1e-12 * expected);
}

TEST(IterateLoss, SubgradientMatchesFiniteDifferences) {
  Rng rng(4);
  const Vector truth{{0.1, -0.4}};
  const IterateLoss loss = IterateLoss::parameters(truth, 1.5, true);
  for (int k = 0; k < 50; ++k) {
    const Vector x{{rng.uniform(-1, 1), rng.uniform(-1, 1)}};
    Vector g;
    loss(x, &g);
    const Matrix n = finite_diff_jacobian([&](const Vector& v) { return Vector::Constant(1, loss(v)); }, x, 1e-7);
    EXPECT_NEAR(g[0], n(0, 0), 1e-6);
    EXPECT_NEAR(g[1], n(0, 1), 1e-6);
  }
}

TEST(Bptt, ZeroGradientAtMinimum) {
  Rng rng(5);
  const MetaModel model = MetaModel::dense({2, 8, 2}, rng);
  std::vector<DenseTrainingInstance> batch;
  for (std::uint64_t k = 0; k < 4; ++k) {
    DenseTrainingInstance inst = curve_training_instance(9, k);
    const Vector truth = *inst.problem->ground_truth();
    inst.x0 = truth;
    inst.loss = IterateLoss::parameters(truth, 1.0);
    batch.push_back(inst);
  }
  const BpttResult r = bptt_gradients(model, batch, 4);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.gradient.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Bptt, TinyModelFiniteDifferences) {
  const CheckResult one = check_bptt_gradients(1, 2, 1e-4, 6);
  EXPECT_TRUE(one.passed) << one.worst;
  const CheckResult many = check_bptt_gradients(8, 3, 1e-4, 7);
  EXPECT_TRUE(many.passed) << many.worst;
}

TEST(Bptt, ReplayReproducesLoss) {
  Rng rng(8);
  MetaModel model = MetaModel::dense({2, 8, 2}, rng);
  for (double& v : model.tensor("output.weight").reshaped()) v = rng.uniform(-0.2, 0.2);
  std::vector<DenseTrainingInstance> batch;
  for (std::uint64_t k = 0; k < 6; ++k) batch.push_back(curve_training_instance(10, k));
  const BpttResult r = bptt_gradients(model, batch, 5);
  EXPECT_EQ(replay_loss(model, batch, r.tape), r.loss);
  EXPECT_EQ(r.tape.loss, r.loss);
  EXPECT_EQ(batch_loss(model, batch, 5), r.loss);
}

TEST(Bptt, LinearInLossWeights) {
  Rng rng(9);
  MetaModel model = MetaModel::dense({2, 8, 2}, rng);
  for (double& v : model.tensor("output.weight").reshaped()) v = rng.uniform(-0.2, 0.2);
  std::vector<DenseTrainingInstance> one, two;
  for (std::uint64_t k = 0; k < 6; ++k) {
    one.push_back(curve_training_instance(11, k, 0.1, 1.0));
    two.push_back(curve_training_instance(11, k, 0.1, 2.0));
  }
  const BpttResult a = bptt_gradients(model, one, 4), b = bptt_gradients(model, two, 4);
  EXPECT_EQ(b.loss, 2.0 * a.loss);
  EXPECT_EQ(b.gradient, (2.0 * a.gradient).eval());
}

TEST(Bptt, StereoReplay) {
  Rng rng(10);
  MetaModel model = MetaModel::conv({4, 3}, rng);
  for (const char* name : {"depth.weight", "pose.weight"})
    for (double& v : model.tensor(name).reshaped()) v = rng.uniform(-1e-3, 1e-3);
  SceneConfig sc;
  sc.width = 8;
  sc.height = 6;
  std::vector<StereoTrainingInstance> batch;
  for (std::uint64_t k = 0; k < 2; ++k) batch.push_back(stereo_training_instance(12, k, sc, {}));
  const BpttResult r = bptt_gradients(model, batch, 3);
  EXPECT_EQ(replay_loss(model, batch, r.tape), r.loss);
  EXPECT_TRUE(all_finite(r.gradient));
  EXPECT_GT(r.grad_norm, 0.0);
  // Directional finite difference of the replayed loss.
  Vector dir(model.parameter_count());
  for (auto& v : dir) v = rng.uniform(-1, 1);
  const double h = 1e-6;
  MetaModel plus = model, minus = model;
  plus.parameters() += h * dir;
  minus.parameters() -= h * dir;
  const double numeric = (replay_loss(plus, batch, r.tape) - replay_loss(minus, batch, r.tape)) / (2 * h);
  const double analytic = r.gradient.dot(dir);
  EXPECT_NEAR(analytic, numeric, 1e-4 * std::max(1.0, std::abs(analytic)));
}

TEST(Clip, PreservesDirection) {
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    Vector g(10);
    for (auto& v : g) v = rng.uniform(-10, 10);
    const Vector before = g;
    const double norm = clip_global_norm(g, 5.0);
    EXPECT_DOUBLE_EQ(norm, before.norm());
    EXPECT_NEAR(g.norm(), std::min(5.0, before.norm()), 1e-12);
    const double scale = g.dot(before) / before.squaredNorm();
    EXPECT_GT(scale, 0.0);
    EXPECT_LT((g - scale * before).cwiseAbs().maxCoeff(), 1e-12);
  }
  Vector small{{0.1, 0.2}};
  clip_global_norm(small, 5.0);
  EXPECT_EQ(small, (Vector{{0.1, 0.2}}));
}

TEST(Adam, Examples) {
  AdamConfig cfg;
  Vector p{{1.0, -2.0}};
  AdamState s;
  adam_step(p, Vector::Zero(2), s, cfg);
  EXPECT_EQ(p, (Vector{{1.0, -2.0}}));
  EXPECT_EQ(s.step, 1);

  Vector q{{0.0}};
  AdamState t;
  adam_step(q, Vector{{3.0}}, t, cfg);
  EXPECT_NEAR(q[0], -cfg.lr * 3.0 / (3.0 + cfg.eps), 1e-18);

  AdamState wrong;
  wrong.m = Vector::Zero(3);
  wrong.v = Vector::Zero(3);
  EXPECT_THROW(adam_step(p, Vector::Zero(2), wrong, cfg), Error);
}

TEST(Adam, QuadraticAgainstReference) {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Vector p{{1.0}};
  AdamState s;
  double ref = 1.0, m = 0, v = 0;
  for (int k = 1; k <= 100; ++k) {
    adam_step(p, Vector{{2.0 * p[0]}}, s, cfg);
    const double g = 2.0 * ref;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mh = m / (1 - std::pow(cfg.beta1, k)), vh = v / (1 - std::pow(cfg.beta2, k));
    ref -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    const double before = p[0];
    EXPECT_NEAR(before, ref, 1e-12);
  }
  EXPECT_LT(std::abs(p[0]), 0.05);
}

TEST(Adam, UpdatesBoundedByLearningRate) {
  Rng rng(12);
  AdamConfig cfg;
  Vector p = Vector::Zero(5);
  AdamState s;
  for (int k = 0; k < 200; ++k) {
    Vector g(5);
    for (auto& v : g) v = rng.normal() * std::pow(10.0, rng.uniform(-3, 3));
    const Vector before = p;
    adam_step(p, g, s, cfg);
    // |m_hat| / sqrt(v_hat) can exceed 1 only through the beta mismatch
    // (at most (1 - b1) / sqrt(1 - b2) ~ 3.2) on heavy-tailed gradients.
    EXPECT_LE((p - before).cwiseAbs().maxCoeff(), cfg.lr * 3.17);
  }
  Vector q = Vector::Zero(1);
  AdamState t;
  for (int k = 0; k < 50; ++k) {
    const Vector before = q;
    adam_step(q, Vector{{0.7}}, t, cfg);
    EXPECT_LE(std::abs(q[0] - before[0]), cfg.lr * (1 + 1e-7));
  }
}

TEST(Counters, PartitionedBySeed) {
  std::set<std::uint64_t> train, val;
  for (std::uint64_t k = 0; k < 900; ++k) train.insert(training_counter(k));
  for (std::uint64_t m = 0; m < 100; ++m) val.insert(validation_counter(m));
  EXPECT_EQ(train.size(), 900u);
  EXPECT_EQ(val.size(), 100u);
  for (std::uint64_t c : val) {
    EXPECT_EQ(c % 10, 9u);
    EXPECT_EQ(train.count(c), 0u);
  }
  EXPECT_EQ(*train.rbegin(), 998u);
}

TEST(TrainConfig, Validate) {
  MetaTrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.unroll = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.adam.lr = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(TrainMeta, FixedLinearProblem) {
  MetaTrainConfig cfg;
  cfg.batch_size = 4;
  cfg.outer_steps = 2000;
  cfg.validation_size = 1;
  cfg.validate_every = 100;
  cfg.log_every = 100;
  cfg.checkpoint_every = 0;
  cfg.seed = 3;
  const TrainingResult r = train_meta(cfg, fixed_linear_generator());
  ASSERT_FALSE(r.rows.empty());
  const double initial = r.rows.front().val_loss;
  EXPECT_EQ(r.rows.front().outer_step, 0);
  EXPECT_LE(r.best_val_loss, 0.1 * initial) << initial << " -> " << r.best_val_loss;
  EXPECT_EQ(r.steps_done, 2000);
  EXPECT_EQ(r.discarded_batches, 0);
}

TEST(TrainMeta, DeterministicCsv) {
  Stopwatch::set_deterministic(true);
  MetaTrainConfig cfg = small_config();
  cfg.csv_path = temp_path("train_a.csv");
  const TrainingResult a = train_meta(cfg, curve_generator(cfg.seed));
  cfg.csv_path = temp_path("train_b.csv");
  const TrainingResult b = train_meta(cfg, curve_generator(cfg.seed));
  Stopwatch::set_deterministic(false);
  const std::string ca = read_file(temp_path("train_a.csv")), cb = read_file(temp_path("train_b.csv"));
  EXPECT_EQ(ca, cb);
  EXPECT_EQ(ca.substr(0, ca.find('\n')), "outer_step,train_loss,val_loss,grad_norm,wall_ms");
  EXPECT_EQ(std::count(ca.begin(), ca.end(), '\n'), 1 + 1 + 30 / 5);
  EXPECT_TRUE(a.best == b.best);
  EXPECT_TRUE(a.last == b.last);
  std::filesystem::remove(temp_path("train_a.csv"));
  std::filesystem::remove(temp_path("train_b.csv"));
}

TEST(TrainMeta, ResumeMatchesUninterrupted) {
  Stopwatch::set_deterministic(true);
  MetaTrainConfig cfg = small_config();
  cfg.csv_path = temp_path("full.csv");
  const TrainingResult full = train_meta(cfg, curve_generator(cfg.seed));

  // Split on a validation step: a run always validates at its last step.
  MetaTrainConfig first = cfg;
  first.outer_steps = 20;
  first.csv_path = temp_path("resumed.csv");
  first.checkpoint_path = temp_path("ckpt.json");
  train_meta(first, curve_generator(cfg.seed));
  MetaTrainConfig second = cfg;
  second.csv_path = first.csv_path;
  second.checkpoint_path = first.checkpoint_path;
  const TrainingResult resumed = train_meta(second, curve_generator(cfg.seed), first.checkpoint_path);
  Stopwatch::set_deterministic(false);

  EXPECT_TRUE(resumed.last == full.last);
  EXPECT_TRUE(resumed.best == full.best);
  EXPECT_EQ(resumed.best_val_loss, full.best_val_loss);
  EXPECT_EQ(read_file(temp_path("resumed.csv")), read_file(temp_path("full.csv")));
  for (const char* f : {"full.csv", "resumed.csv", "ckpt.json"}) std::filesystem::remove(temp_path(f));
}

TEST(TrainMeta, CheckpointErrors) {
  MetaTrainConfig cfg = small_config();
  EXPECT_THROW(train_meta(cfg, curve_generator(1), "/nonexistent/ckpt.json"), Error);
  const std::string bad = temp_path("bad_ckpt.json");
  std::ofstream(bad) << "{\"format\": \"lsnet-checkpoint\", \"version\": 99}";
  try {
    train_meta(cfg, curve_generator(1), bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionMismatch);
  }
  std::filesystem::remove(bad);
}

TEST(TrainMeta, FailureBudget) {
  // Every batch produces a non-finite loss, so training aborts once the
  // discarded-batch budget is exceeded.
  const DenseGenerator poisoned = [](std::uint64_t) {
    DenseTrainingInstance inst;
    inst.problem = std::make_shared<LinearProblem>(Matrix::Identity(2, 2), Vector::Zero(2), Vector::Zero(2));
    inst.x0 = Vector::Zero(2);
    inst.loss = IterateLoss::parameters(Vector::Constant(2, std::nan("")), 1.0);
    return inst;
  };
  MetaTrainConfig cfg = small_config();
  cfg.outer_steps = 200;
  cfg.validation_size = 1;
  try {
    train_meta(cfg, poisoned);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
  }
}
