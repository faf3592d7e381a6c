#pragma once

#include "lsnet/photometric.hpp"

namespace lsnet {

/// Largest dim_x accepted by the fixed-length small-problem features.
inline constexpr Index kMaxSmallDim = 8;

inline Index small_feature_length(Index dim_x) { return dim_x * dim_x + dim_x + 1; }

/// [vec(J^T J) (row-major), J^T r, 1/2 |r|^2] before scale compression.
Vector phi_small_raw(const Matrix& J, const Vector& r);

/// phi_small_raw passed elementwise through scale_compress.
Vector phi_small(const Matrix& J, const Vector& r);

/// Same features from already assembled normal equations.
Vector phi_small(const NormalEquations& ne);

inline constexpr int kPixelChannels = 9;
inline constexpr int kGlobalFeatures = 42;

/// Compressed photometric J^T J / J^T r.
///
/// Per-pixel channels (rows of `channels`, one column per pixel):
///   0      (J^T J)_{z_p z_p}
///   1..6   (J^T J)_{z_p, pose_k}
///   7      (J^T r)_{z_p}
///   8      mean residual of the pixel
/// Global vector: upper triangle of the pose block (21, row-major), (J^T r)_pose
/// (6), diag of the pose block (6), E, previous step norm, iteration / N, zeros.
/// Everything is stored after scale_compress.
struct FeatureImage {
  int width = 0;
  int height = 0;
  MatrixX<double> channels;  // kPixelChannels x (width * height)
  Vector global;             // kGlobalFeatures

  Index pixel_count() const { return Index(width) * height; }
};

struct StepContext {
  double previous_step_norm = 0.0;
  int iteration = 0;
  int iterations = 1;
};

/// Throws LayoutMismatch when the residual-to-pixel map does not cover the
/// image exactly once.
FeatureImage phi_dense(const StructuredJacobian& J, const Vector& r, const StepContext& context = {});

/// Undoes the compression: the non-zero blocks of J^T J and J^T r.
NormalBlocks expand_blocks(const FeatureImage& features);

}  // namespace lsnet
