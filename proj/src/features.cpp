#include "lsnet/features.hpp"

namespace lsnet {

namespace {

Vector compress(Vector v) {
  for (Index k = 0; k < v.size(); ++k) v[k] = scale_compress(v[k]);
  return v;
}

Vector pack_small(const Matrix& JtJ, const Vector& Jtr, double E) {
  const Index d = Jtr.size();
  if (d > kMaxSmallDim) throw Error(ErrorCode::InvalidArgument, "small-problem features need dim_x <= 8");
  Vector phi(small_feature_length(d));
  phi.head(d * d) = Eigen::Map<const Vector>(JtJ.data(), d * d);
  phi.segment(d * d, d) = Jtr;
  phi[d * d + d] = E;
  if (!all_finite(phi)) throw Error(ErrorCode::NonFiniteEvaluation, "non-finite feature");
  return phi;
}

}  // namespace

Vector phi_small_raw(const Matrix& J, const Vector& r) {
  if (J.rows() != r.size()) throw Error(ErrorCode::DimensionMismatch, "phi_small: rows(J) != len(r)");
  return pack_small(J.transpose() * J, J.transpose() * r, half_squared_norm(r));
}

Vector phi_small(const Matrix& J, const Vector& r) { return compress(phi_small_raw(J, r)); }

Vector phi_small(const NormalEquations& ne) {
  return compress(pack_small(ne.hessian, ne.gradient, half_squared_norm(ne.residual)));
}

FeatureImage phi_dense(const StructuredJacobian& J, const Vector& r, const StepContext& context) {
  const Index n = Index(J.width) * J.height;
  if (J.rows() != n || r.size() != n || static_cast<Index>(J.row_pixel.size()) != n) {
    throw Error(ErrorCode::LayoutMismatch, "residual count does not match the image shape");
  }
  std::vector<char> seen(n, 0);
  for (Index p : J.row_pixel) {
    if (p < 0 || p >= n || seen[p]) throw Error(ErrorCode::LayoutMismatch, "residual-to-pixel map is not a bijection");
    seen[p] = 1;
  }

  FeatureImage f;
  f.width = J.width;
  f.height = J.height;
  f.channels = MatrixX<double>::Zero(kPixelChannels, n);
  const NormalBlocks nb = normal_blocks(J, r);
  f.channels.row(0) = nb.hzz.transpose();
  f.channels.middleRows(1, 6) = nb.hzp.transpose();
  f.channels.row(7) = nb.gz.transpose();
  for (Index row = 0; row < n; ++row) f.channels(8, J.row_pixel[row]) += r[row];

  f.global = Vector::Zero(kGlobalFeatures);
  Index k = 0;
  for (int a = 0; a < 6; ++a) {
    for (int b = a; b < 6; ++b) f.global[k++] = nb.hpp(a, b);
  }
  f.global.segment<6>(21) = nb.gp;
  f.global.segment<6>(27) = nb.hpp.diagonal();
  f.global[33] = half_squared_norm(r);
  f.global[34] = context.previous_step_norm;
  f.global[35] = double(context.iteration) / double(std::max(context.iterations, 1));

  if (!all_finite(f.channels) || !all_finite(f.global)) {
    throw Error(ErrorCode::NonFiniteEvaluation, "non-finite feature image");
  }
  f.channels = f.channels.unaryExpr([](double v) { return scale_compress(v); });
  f.global = f.global.unaryExpr([](double v) { return scale_compress(v); });
  return f;
}

NormalBlocks expand_blocks(const FeatureImage& features) {
  const auto expand = [](double v) { return scale_expand(v); };
  NormalBlocks nb;
  nb.hzz = features.channels.row(0).transpose().unaryExpr(expand);
  nb.hzp = features.channels.middleRows(1, 6).transpose().unaryExpr(expand);
  nb.gz = features.channels.row(7).transpose().unaryExpr(expand);
  const Vector g = features.global.unaryExpr(expand);
  Index k = 0;
  for (int a = 0; a < 6; ++a) {
    for (int b = a; b < 6; ++b) {
      nb.hpp(a, b) = g[k];
      nb.hpp(b, a) = g[k];
      ++k;
    }
  }
  nb.gp = g.segment<6>(21);
  return nb;
}

}  // namespace lsnet
