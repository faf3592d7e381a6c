#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lsnet/lie.hpp"
#include "lsnet/problem.hpp"

namespace lsnet {

/// Grayscale image or per-pixel map, indexed (row = y, col = x).
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector2 = Eigen::Vector2d;
using PoseBlock = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Inverse depths are clamped to at least this value.
inline constexpr double kMinInverseDepth = 1e-4;
/// Points closer than this to the source camera count as behind it.
inline constexpr double kMinDepth = 1e-3;

struct CameraIntrinsics {
  double fx, fy, cx, cy;
  int width, height;

  void validate() const;
  Index pixel_count() const { return Index(width) * height; }
  /// Principal point at the image centre, focal length focal_scale * width.
  static CameraIntrinsics centred(int width, int height, double focal_scale = 1.0);
  /// Normalised ray direction (x, y, 1) through pixel (u, v).
  Vector3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
};

struct Projection {
  Vector2 pixel;        // continuous source coordinate
  Vector3 scaled;       // R m + z V t; the source-frame point times z
  bool in_front = false;
};

/// Back-projects pixel p_t with depth 1/z, applies T and projects with K.
/// in_front is false when the source depth is at most 1e-3.
Projection project(const CameraIntrinsics& K, const Matrix4& T, double z, const Vector2& p_t);

struct BilinearSample {
  double value = 0.0;
  bool in_bounds = false;
  Vector2 gradient = Vector2::Zero();  // derivative of the interpolant
};

/// Four-neighbour bilinear interpolation. Out-of-bounds (any neighbour
/// outside) samples return value 0 with in_bounds = false.
BilinearSample bilinear_sample(const Image& image, const Vector2& p);

/// Target/source pair with ground truth. Poses map target to source coordinates.
struct StereoInstance {
  Image target;
  Image source;
  CameraIntrinsics intrinsics;
  Image inverse_depth;   // ground truth z
  Vector6 pose;          // ground truth (t, alpha)
  std::vector<char> mask;  // 1 where the ground-truth warp lands in bounds
  std::uint64_t seed = 0;

  Index pixel_count() const { return intrinsics.pixel_count(); }
  void validate() const;
};

struct PhotometricResiduals {
  Vector r;                // one per pixel, row-major; 0 when masked
  std::vector<char> mask;  // 1 when the warp is valid
  Index valid_count() const;
};

PhotometricResiduals photometric_residuals(const StereoInstance& instance, const Image& z, const Vector6& pose);

/// Block form of the photometric Jacobian: residual row p depends only on z_p
/// (one entry per row) and on the six pose parameters.
struct StructuredJacobian {
  int width = 0;
  int height = 0;
  Vector jz;                   // dr_p / dz_p
  PoseBlock jp;                // dr_p / dpose
  std::vector<Index> row_pixel;  // residual row -> pixel index

  Index rows() const { return jz.size(); }
  /// rows x (rows + 6) matrix with columns [z (row-major pixels), pose].
  Matrix dense() const;
};

/// The non-zero blocks of J^T J and J^T r.
struct NormalBlocks {
  Vector hzz;   // diagonal depth block
  PoseBlock hzp;  // depth-pose coupling, one row per pixel
  Matrix6 hpp;  // pose block
  Vector gz;
  Vector6 gp;

  Matrix dense_hessian() const;
  Vector dense_gradient() const;
};

NormalBlocks normal_blocks(const StructuredJacobian& J, const Vector& r);

struct Linearization {
  PhotometricResiduals residuals;
  StructuredJacobian jacobian;
};

/// Residuals and analytic Jacobian. The pose block is the exact derivative
/// with respect to the additively updated 6-vector.
Linearization linearize_photometric(const StereoInstance& instance, const Image& z, const Vector6& pose);
StructuredJacobian photometric_jacobian(const StereoInstance& instance, const Image& z, const Vector6& pose);

/// Rows whose central-difference stencil (step h on z_p and on each pose
/// coordinate) keeps the warp valid and inside a single bilinear cell.
std::vector<char> smooth_rows(const StereoInstance& instance, const Image& z, const Vector6& pose, double h);

enum class SceneType { FrontoParallel, Slanted, TwoPlane };

std::string to_string(SceneType type);
SceneType parse_scene_type(const std::string& name);

struct SceneConfig {
  int width = 32;
  int height = 24;
  SceneType type = SceneType::FrontoParallel;
  double mean_depth = 2.0;
  double focal_scale = 0.5;
  double max_rotation_deg = 1.0;
  /// Translation magnitude as a fraction of the mean depth.
  double max_translation = 0.05;
  double min_translation = 0.02;
  int texture_components = 6;
  /// Texture frequencies in radians per pixel at the farthest visible depth.
  double min_frequency = 0.15;
  double max_frequency = 0.45;
  /// Zero amplitude gives the constant image used by the rank-deficiency probe.
  double texture_amplitude = 0.42;
  double slant_deg = 25.0;
};

/// Renders both views by ray-surface intersection against an analytic texture.
/// Throws DegenerateScene when fewer than half of the pixels are mutually visible.
StereoInstance synth_scene(Rng& rng, const SceneConfig& config);

/// x = [z (pixels, row-major), t, alpha].
class StereoProblem final : public Problem {
 public:
  explicit StereoProblem(StereoInstance instance);

  Index dim_x() const override { return instance_.pixel_count() + 6; }
  Index dim_r() const override { return instance_.pixel_count(); }
  Vector residual(const Vector& x) const override;
  /// Dense materialisation; intended for tests and diagnostics.
  Matrix jacobian(const Vector& x) const override;
  NormalEquations normal_equations(const Vector& x) const override;
  void project(Vector& x) const override;
  std::optional<Vector> ground_truth() const override;
  std::string family() const override { return "stereo"; }

  Linearization linearize(const Vector& x) const;
  const StereoInstance& instance() const { return instance_; }

  Image depth_of(const Vector& x) const;
  static Vector6 pose_of(const Vector& x);
  Vector pack(const Image& z, const Vector6& pose) const;

 private:
  StereoInstance instance_;
};

/// Per-iterate accuracy against ground truth.
struct StereoMetrics {
  double rotation_error_deg;
  double translation_direction_error_deg;
  double depth_l1;  // mean |z - z~| over pixels
  double rmse;      // photometric RMSE over valid pixels
};

StereoMetrics stereo_metrics(const StereoProblem& problem, const Vector& x);

struct StereoInit {
  std::optional<Image> z;      // default: constant 1 / mean depth
  std::optional<Vector6> pose;  // default: zero
};

struct StereoSolution {
  Image z;
  Vector6 pose;
  SolverTrace trace;
  std::vector<StereoMetrics> metrics;
};

/// Default initial iterate: constant inverse depth and zero pose.
Vector stereo_initial_iterate(const StereoProblem& problem, double mean_depth, const StereoInit& init = {});

/// Writes an 8-bit binary PGM, mapping [lo, hi] to [0, 255].
void write_pgm(const std::string& path, const Image& image, double lo = 0.0, double hi = 1.0);
/// Reads an 8-bit binary PGM into [0, 1].
Image read_pgm(const std::string& path);
void write_grid_csv(const std::string& path, const Image& image);

std::string stereo_instance_to_json(const StereoInstance& instance);
StereoInstance stereo_instance_from_json(const std::string& text);

}  // namespace lsnet
