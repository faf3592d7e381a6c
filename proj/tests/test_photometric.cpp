#include <gtest/gtest.h>

#include <filesystem>

#include "lsnet/model.hpp"
#include "lsnet/photometric.hpp"
#include "oracles.hpp"

using namespace lsnet;

namespace {

Vector6 pose_of(double tx, double ty, double tz, double ax, double ay, double az) {
  Vector6 p;
  p << tx, ty, tz, ax, ay, az;
  return p;
}

/// Back-projects through K^-1 in homogeneous coordinates and applies T as a 4x4.
Vector2 homogeneous_projection(const CameraIntrinsics& K, const Matrix4& T, double z, const Vector2& p) {
  Matrix3 Km;
  Km << K.fx, 0, K.cx, 0, K.fy, K.cy, 0, 0, 1;
  const Vector3 ray = Km.inverse() * Vector3(p.x(), p.y(), 1.0);
  const Eigen::Vector4d X(ray.x() / z, ray.y() / z, ray.z() / z, 1.0);
  const Eigen::Vector4d Y = T * X;
  const Vector3 h = Km * Y.head<3>();
  return {h.x() / h.z(), h.y() / h.z()};
}

StereoInstance scene(std::uint64_t seed, SceneConfig config = {}) {
  Rng rng(seed);
  return synth_scene(rng, config);
}

}  // namespace

TEST(Project, IdentityIsExact) {
  const CameraIntrinsics K = CameraIntrinsics::centred(32, 24, 0.5);
  for (double z : {1e-4, 0.5, 3.0}) {
    const Projection pr = project(K, Matrix4::Identity(), z, Vector2(3.25, 17.5));
    EXPECT_TRUE(pr.in_front);
    EXPECT_EQ(pr.pixel, Vector2(3.25, 17.5));
  }
}

TEST(Project, LateralParallax) {
  const CameraIntrinsics K = CameraIntrinsics::centred(32, 24, 0.5);
  const double d = 2.0, tx = 0.05;
  const Projection pr = project(K, se3_exp(pose_of(tx, 0, 0, 0, 0, 0)), 1 / d, Vector2(7, 9));
  EXPECT_NEAR(pr.pixel.x(), 7 + K.fx * tx / d, 1e-12);
  EXPECT_NEAR(pr.pixel.y(), 9, 1e-12);
}

TEST(Project, MatchesHomogeneousOracle) {
  const CameraIntrinsics K{20.0, 22.0, 15.5, 11.5, 32, 24};
  Rng rng(5);
  for (int k = 0; k < 500; ++k) {
    const Vector6 p = pose_of(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                              rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    const Matrix4 T = se3_exp(p);
    const double z = rng.uniform(0.2, 1.0);
    const Vector2 pt(rng.uniform(0, 31), rng.uniform(0, 23));
    const Projection pr = project(K, T, z, pt);
    ASSERT_TRUE(pr.in_front);
    EXPECT_LT((pr.pixel - homogeneous_projection(K, T, z, pt)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Project, BehindCamera) {
  const CameraIntrinsics K = CameraIntrinsics::centred(32, 24, 0.5);
  const Projection pr = project(K, se3_exp(pose_of(0, 0, -3.0, 0, 0, 0)), 0.5, Vector2(16, 12));
  EXPECT_FALSE(pr.in_front);
}

TEST(Bilinear, Nodes) {
  Image I(3, 4);
  I << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.0, 0.25;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      const BilinearSample s = bilinear_sample(I, Vector2(x, y));
      EXPECT_TRUE(s.in_bounds);
      EXPECT_EQ(s.value, I(y, x));
    }
  EXPECT_FALSE(bilinear_sample(I, Vector2(-1e-9, 1)).in_bounds);
  EXPECT_FALSE(bilinear_sample(I, Vector2(3.0001, 1)).in_bounds);
  EXPECT_FALSE(bilinear_sample(I, Vector2(1, 2.5)).in_bounds);
  EXPECT_EQ(bilinear_sample(I, Vector2(1, 2.5)).value, 0.0);
}

TEST(Bilinear, CentreOfBlock) {
  Image I(2, 2);
  I << 0, 1, 1, 0;
  EXPECT_EQ(bilinear_sample(I, Vector2(0.5, 0.5)).value, 0.5);
}

TEST(Bilinear, WeightedSumOracle) {
  Rng rng(6);
  Image I(6, 7);
  for (Index i = 0; i < I.size(); ++i) I.data()[i] = rng.uniform();
  for (int k = 0; k < 1000; ++k) {
    const Vector2 p(rng.uniform(0, 5.999), rng.uniform(0, 4.999));
    const int x0 = int(std::floor(p.x())), y0 = int(std::floor(p.y()));
    const double a = p.x() - x0, b = p.y() - y0;
    const double expected = (1 - a) * (1 - b) * I(y0, x0) + a * (1 - b) * I(y0, x0 + 1) + (1 - a) * b * I(y0 + 1, x0) +
                            a * b * I(y0 + 1, x0 + 1);
    const BilinearSample s = bilinear_sample(I, p);
    ASSERT_TRUE(s.in_bounds);
    EXPECT_NEAR(s.value, expected, 1e-12);
    const double gx = (1 - b) * (I(y0, x0 + 1) - I(y0, x0)) + b * (I(y0 + 1, x0 + 1) - I(y0 + 1, x0));
    const double gy = (1 - a) * (I(y0 + 1, x0) - I(y0, x0)) + a * (I(y0 + 1, x0 + 1) - I(y0, x0 + 1));
    EXPECT_NEAR(s.gradient.x(), gx, 1e-12);
    EXPECT_NEAR(s.gradient.y(), gy, 1e-12);
  }
}

TEST(Residuals, SmallAtGroundTruth) {
  for (SceneType type : {SceneType::FrontoParallel, SceneType::Slanted, SceneType::TwoPlane}) {
    SceneConfig sc;
    sc.type = type;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const StereoInstance inst = scene(seed, sc);
      const PhotometricResiduals r = photometric_residuals(inst, inst.inverse_depth, inst.pose);
      double worst = 0;
      for (Index p = 0; p < r.r.size(); ++p) {
        if (r.mask[p]) worst = std::max(worst, std::abs(r.r[p]));
        else EXPECT_EQ(r.r[p], 0.0);
      }
      EXPECT_LT(worst, 2e-2) << to_string(type) << " " << seed;
      EXPECT_GT(r.valid_count(), inst.pixel_count() / 2);
    }
  }
}

TEST(Residuals, SelfWarpIsZero) {
  StereoInstance inst = scene(3);
  inst.source = inst.target;
  const Image z = Image::Constant(inst.intrinsics.height, inst.intrinsics.width, 0.37);
  const PhotometricResiduals r = photometric_residuals(inst, z, Vector6::Zero());
  EXPECT_EQ(r.r.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.valid_count(), inst.pixel_count());
}

TEST(Residuals, GroundTruthIsLocalMinimumInPose) {
  Rng rng(12);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const StereoProblem problem(scene(seed));
    const Vector gt = *problem.ground_truth();
    const double e0 = objective(problem, gt);
    for (int k = 0; k < 20; ++k) {
      Vector x = gt;
      for (int c = 0; c < 6; ++c) x[problem.instance().pixel_count() + c] += rng.uniform(-0.01, 0.01);
      EXPECT_GT(objective(problem, x), e0) << seed << " " << k;
    }
  }
}

TEST(Jacobian, Structure) {
  const StereoInstance inst = scene(4);
  const StructuredJacobian J = photometric_jacobian(inst, inst.inverse_depth, inst.pose);
  const Matrix D = J.dense();
  const Index P = inst.pixel_count();
  ASSERT_EQ(D.rows(), P);
  ASSERT_EQ(D.cols(), P + 6);
  const PhotometricResiduals r = photometric_residuals(inst, inst.inverse_depth, inst.pose);
  for (Index j = 0; j < D.rows(); ++j) {
    Index nonzero = 0;
    for (Index c = 0; c < P; ++c) nonzero += D(j, c) != 0.0;
    EXPECT_LE(nonzero, 1);
    EXPECT_EQ(D(j, J.row_pixel[j]), J.jz[j]);
    if (!r.mask[J.row_pixel[j]]) EXPECT_EQ(D.row(j).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Jacobian, ZeroGradientRowsVanish) {
  SceneConfig sc;
  sc.texture_amplitude = 0.0;
  const StereoInstance inst = scene(5, sc);
  const StructuredJacobian J = photometric_jacobian(inst, inst.inverse_depth, inst.pose);
  EXPECT_EQ(J.jz.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(J.jp.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Jacobian, AgainstFiniteDifferences) {
  SceneConfig sc;
  sc.type = SceneType::TwoPlane;
  const StereoProblem problem(scene(6, sc));
  Vector x = *problem.ground_truth();
  x.tail<6>() *= 0.5;
  const std::vector<char> smooth = smooth_rows(problem.instance(), problem.depth_of(x), StereoProblem::pose_of(x), 1e-5);
  const Matrix numeric = finite_diff_jacobian([&](const Vector& v) { return problem.residual(v); }, x);
  const Matrix analytic = problem.jacobian(x);
  const double scale = 1e-3 * std::max(1.0, analytic.cwiseAbs().maxCoeff());
  Index checked = 0;
  for (Index j = 0; j < analytic.rows(); ++j) {
    if (!smooth[j]) continue;
    ++checked;
    for (Index c = 0; c < analytic.cols(); ++c) {
      const double a = analytic(j, c), n = numeric(j, c);
      EXPECT_LT(std::abs(a - n) / std::max({std::abs(a), std::abs(n), scale}), 1e-3) << j << " " << c;
    }
  }
  EXPECT_GT(checked, analytic.rows() / 2);
}

TEST(NormalBlocks, MatchDenseProduct) {
  SceneConfig sc;
  sc.width = 16;
  sc.height = 12;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    sc.type = static_cast<SceneType>(seed % 3);
    const StereoProblem problem(scene(seed, sc));
    Vector x = stereo_initial_iterate(problem, sc.mean_depth);
    x.tail<6>() = 0.5 * problem.ground_truth()->tail<6>();
    const Linearization lin = problem.linearize(x);
    const NormalBlocks blocks = normal_blocks(lin.jacobian, lin.residuals.r);
    const Matrix D = lin.jacobian.dense();
    const Eigen::MatrixXd H = oracle::gram(D);
    const Eigen::VectorXd g = oracle::gram_rhs(D, lin.residuals.r);
    const Matrix Hb = blocks.dense_hessian();
    ASSERT_EQ(Hb.rows(), H.rows());
    for (Index i = 0; i < H.rows(); ++i)
      for (Index k = 0; k < H.cols(); ++k) {
        EXPECT_EQ(Hb(i, k) == 0.0, H(i, k) == 0.0) << seed << " " << i << " " << k;
        EXPECT_LE(std::abs(Hb(i, k) - H(i, k)), 1e-10 * std::max(1.0, std::abs(H(i, k))));
      }
    EXPECT_LT((blocks.dense_gradient() - g).cwiseAbs().maxCoeff(), 1e-10);
    const NormalEquations ne = problem.normal_equations(x);
    EXPECT_LT((ne.hessian - H).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SynthScene, ZeroBaseline) {
  SceneConfig sc;
  sc.max_rotation_deg = 0;
  sc.max_translation = 0;
  sc.min_translation = 0;
  const StereoInstance inst = scene(7, sc);
  EXPECT_EQ(inst.pose, Vector6::Zero());
  EXPECT_EQ((inst.target - inst.source).abs().maxCoeff(), 0.0);
}

TEST(SynthScene, FrontoParallelDepth) {
  SceneConfig sc;
  sc.mean_depth = 2.5;
  const StereoInstance inst = scene(8, sc);
  EXPECT_LT((inst.inverse_depth - 1 / 2.5).abs().maxCoeff(), 1e-12);
  EXPECT_NO_THROW(inst.validate());
}

TEST(SynthScene, BaselineWithinConfig) {
  SceneConfig sc;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const StereoInstance inst = scene(seed, sc);
    const double t = inst.pose.head<3>().norm() / sc.mean_depth;
    EXPECT_GE(t, sc.min_translation - 1e-12);
    EXPECT_LE(t, sc.max_translation + 1e-12);
    EXPECT_LE(inst.pose.tail<3>().norm(), sc.max_rotation_deg * std::numbers::pi / 180 + 1e-12);
    EXPECT_EQ(inst.seed, scene(seed, sc).seed);
    EXPECT_EQ((inst.target - scene(seed, sc).target).abs().maxCoeff(), 0.0);
  }
}

TEST(SynthScene, Degenerate) {
  SceneConfig sc;
  sc.max_translation = 3.0;
  sc.min_translation = 3.0;
  int thrown = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    try {
      const StereoInstance inst = scene(seed, sc);
      EXPECT_GE(2 * std::count(inst.mask.begin(), inst.mask.end(), char(1)), inst.pixel_count());
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateScene);
      ++thrown;
    }
  }
  EXPECT_GT(thrown, 0);
}

TEST(SolveStereo, StartAtOptimum) {
  // With identical views the zero-pose ground truth is an exact stationary point.
  SceneConfig sc;
  sc.max_rotation_deg = 0;
  sc.max_translation = 0;
  sc.min_translation = 0;
  const StereoInstance inst = scene(10, sc);
  const StereoInit init{inst.inverse_depth, inst.pose};
  const StereoSolution lm = solve_stereo(inst, nullptr, init);
  EXPECT_EQ(lm.trace.termination, Termination::StepTolerance);
  EXPECT_EQ(lm.trace.size(), 1u);
  Rng rng(1);
  MetaModel zero = MetaModel::conv({4, 3}, rng);
  zero.parameters().setZero();
  const StereoSolution learned = solve_stereo(inst, &zero, init);
  EXPECT_EQ(learned.trace.termination, Termination::StepTolerance);
  EXPECT_EQ(learned.trace.size(), 1u);
  ASSERT_EQ(learned.metrics.size(), 1u);
  EXPECT_EQ(learned.metrics[0].depth_l1, 0.0);
  EXPECT_EQ(learned.metrics[0].rotation_error_deg, 0.0);
}

TEST(SolveStereo, LmImprovesTexturedPlane) {
  const StereoInstance inst = scene(1);
  const StereoSolution sol = solve_stereo(inst, nullptr);
  ASSERT_GE(sol.metrics.size(), 2u);
  EXPECT_LE(sol.metrics.back().rmse, 0.5 * sol.metrics.front().rmse);
  for (std::size_t i = 1; i < sol.trace.size(); ++i) EXPECT_LE(sol.trace.objectives[i], sol.trace.objectives[i - 1]);
  EXPECT_GE(sol.z.minCoeff(), kMinInverseDepth);
}

TEST(SolveStereo, TexturelessRankDeficiency) {
  SceneConfig sc;
  sc.texture_amplitude = 0.0;
  const StereoProblem problem(scene(11, sc));
  const Vector x0 = stereo_initial_iterate(problem, sc.mean_depth);
  const SolverTrace gn = solve_classical(problem, x0, ClassicalConfig{}, ClassicalMethod::GaussNewton);
  EXPECT_EQ(gn.termination, Termination::SolveFailed);
  const SolverTrace lm = solve_classical(problem, x0, ClassicalConfig{}, ClassicalMethod::LevenbergMarquardt);
  EXPECT_NE(lm.termination, Termination::SolveFailed);
  EXPECT_NE(lm.termination, Termination::Diverged);
  for (const Vector& x : lm.iterates) EXPECT_LT((x - x0).norm(), 1.0);
}

TEST(Io, PgmRoundTrip) {
  const StereoInstance inst = scene(12);
  const std::string path = (std::filesystem::temp_directory_path() / "lsnet_test_image.pgm").string();
  write_pgm(path, inst.target);
  const Image back = read_pgm(path);
  ASSERT_EQ(back.rows(), inst.target.rows());
  ASSERT_EQ(back.cols(), inst.target.cols());
  EXPECT_LE((back - inst.target).abs().maxCoeff(), 0.5 / 255 + 1e-12);
  std::filesystem::remove(path);
  EXPECT_THROW(read_pgm(path), Error);
}

TEST(Io, JsonRoundTrip) {
  const StereoInstance a = scene(13);
  const StereoInstance b = stereo_instance_from_json(stereo_instance_to_json(a));
  EXPECT_EQ((a.target - b.target).abs().maxCoeff(), 0.0);
  EXPECT_EQ((a.source - b.source).abs().maxCoeff(), 0.0);
  EXPECT_EQ((a.inverse_depth - b.inverse_depth).abs().maxCoeff(), 0.0);
  EXPECT_EQ(a.pose, b.pose);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.intrinsics.fx, b.intrinsics.fx);
  EXPECT_THROW(stereo_instance_from_json("[]"), Error);
}

TEST(Intrinsics, Validate) {
  EXPECT_NO_THROW(CameraIntrinsics::centred(32, 24).validate());
  EXPECT_THROW((CameraIntrinsics{-1, 1, 16, 12, 32, 24}.validate()), Error);
  EXPECT_THROW((CameraIntrinsics{1, 1, 40, 12, 32, 24}.validate()), Error);
  EXPECT_EQ(parse_scene_type(to_string(SceneType::TwoPlane)), SceneType::TwoPlane);
}
