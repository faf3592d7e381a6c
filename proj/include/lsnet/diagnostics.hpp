#pragma once

#include <string>
#include <vector>

#include "lsnet/curves.hpp"
#include "lsnet/photometric.hpp"
#include "lsnet/training.hpp"

namespace lsnet {

/// Outcome of one derivative check over a set of seeded instances.
struct CheckResult {
  std::string name;
  bool passed = true;
  int instances = 0;
  double worst_error = 0.0;
  /// Human-readable description of the worst offender.
  std::string worst;
};

/// Analytic curve Jacobians against central differences at random (a, b)
/// inside the family box. flip_sign negates the analytic Jacobian (a fault
/// hook for exercising the failure path).
CheckResult check_curve_jacobian(CurveTag tag, int instances, double tol, std::uint64_t seed,
                                 bool flip_sign = false);

/// Photometric Jacobian on rows whose stencil stays inside one bilinear cell,
/// evaluated at a random perturbation of the ground truth.
CheckResult check_photometric_jacobian(int instances, double tol, std::uint64_t seed, int width = 32,
                                       int height = 24, bool flip_sign = false);

/// Dense-model tape replay written out with scalar loops in extended
/// precision; the finite-difference oracle for BPTT. Assumes unit loss weights.
long double reference_dense_replay_loss(const MetaModel& model, const std::vector<long double>& params,
                                        const std::vector<DenseTrainingInstance>& batch, const Tape& tape);

/// BPTT gradients of a small dense model (hidden 2, two cells, at most 200
/// parameters) against central differences of the reference replay, step
/// 1e-6 * max(1, |theta|). Parameters are drawn uniformly in [-0.5, 0.5] so
/// that no gradient entry vanishes structurally.
CheckResult check_bptt_gradients(int instances, int unroll, double tol, std::uint64_t seed);

}  // namespace lsnet
