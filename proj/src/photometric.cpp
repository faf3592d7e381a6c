#include "lsnet/photometric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace lsnet {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || width <= 0 || height <= 0 || !(cx > 0) || !(cx < width) || !(cy > 0) ||
      !(cy < height)) {
    throw Error(ErrorCode::InvalidArgument, "camera intrinsics out of range");
  }
}

CameraIntrinsics CameraIntrinsics::centred(int width, int height, double focal_scale) {
  const double f = focal_scale * width;
  return {f, f, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
}

namespace {

Projection project_ray(const CameraIntrinsics& K, const Matrix3& R, const Vector3& tau, double z, const Vector3& m) {
  Projection out;
  out.scaled = R * m + z * tau;
  const double qz = out.scaled.z();
  out.in_front = z > 0.0 && qz > kMinDepth * z;
  if (out.in_front) {
    out.pixel = {K.fx * out.scaled.x() / qz + K.cx, K.fy * out.scaled.y() / qz + K.cy};
  } else {
    out.pixel = {kNaN, kNaN};
  }
  return out;
}

// Bilinear cell of p, or false if p is outside [0, w-1] x [0, h-1]. The last
// row/column reuse the previous cell so that nodes on the border stay exact.
bool bilinear_cell(Index w, Index h, const Vector2& p, Index& x0, Index& y0) {
  if (w < 2 || h < 2) return false;
  if (!(p.x() >= 0.0 && p.x() <= double(w - 1) && p.y() >= 0.0 && p.y() <= double(h - 1))) return false;
  x0 = std::min<Index>(static_cast<Index>(std::floor(p.x())), w - 2);
  y0 = std::min<Index>(static_cast<Index>(std::floor(p.y())), h - 2);
  return true;
}

}  // namespace

Projection project(const CameraIntrinsics& K, const Matrix4& T, double z, const Vector2& p_t) {
  const Matrix3 R = T.topLeftCorner<3, 3>();
  const Vector3 tau = T.topRightCorner<3, 1>();
  return project_ray(K, R, tau, z, K.ray(p_t.x(), p_t.y()));
}

BilinearSample bilinear_sample(const Image& image, const Vector2& p) {
  BilinearSample s;
  Index x0, y0;
  if (!bilinear_cell(image.cols(), image.rows(), p, x0, y0)) return s;
  const double fx = p.x() - double(x0);
  const double fy = p.y() - double(y0);
  const double i00 = image(y0, x0), i01 = image(y0, x0 + 1);
  const double i10 = image(y0 + 1, x0), i11 = image(y0 + 1, x0 + 1);
  const double top = i00 + fx * (i01 - i00);
  const double bottom = i10 + fx * (i11 - i10);
  s.value = top + fy * (bottom - top);
  s.in_bounds = true;
  s.gradient = {(1.0 - fy) * (i01 - i00) + fy * (i11 - i10), bottom - top};
  return s;
}

void StereoInstance::validate() const {
  intrinsics.validate();
  const Index h = intrinsics.height, w = intrinsics.width;
  if (target.rows() != h || target.cols() != w || source.rows() != h || source.cols() != w ||
      inverse_depth.rows() != h || inverse_depth.cols() != w) {
    throw Error(ErrorCode::ShapeMismatch, "stereo instance images do not match the intrinsics");
  }
  if (static_cast<Index>(mask.size()) != w * h) throw Error(ErrorCode::ShapeMismatch, "stereo mask has wrong length");
}

Index PhotometricResiduals::valid_count() const { return std::count(mask.begin(), mask.end(), char(1)); }

namespace {

void check_shapes(const StereoInstance& instance, const Image& z) {
  if (z.rows() != instance.intrinsics.height || z.cols() != instance.intrinsics.width) {
    throw Error(ErrorCode::ShapeMismatch, "inverse-depth map does not match the image");
  }
}

// Shared per-pixel evaluation. With a non-null jacobian the analytic rows are
// filled as well.
PhotometricResiduals evaluate(const StereoInstance& instance, const Image& z, const Vector6& pose,
                              StructuredJacobian* jacobian) {
  check_shapes(instance, z);
  const CameraIntrinsics& K = instance.intrinsics;
  const Index w = K.width, h = K.height, n = w * h;
  const WarpPointJacobian<double> D(pose);
  const Matrix3& R = D.rotation();
  const Vector3 tau = so3_left_jacobian(Vector3(pose.tail<3>())) * pose.head<3>();

  PhotometricResiduals out;
  out.r = Vector::Zero(n);
  out.mask.assign(n, 0);
  if (jacobian) {
    jacobian->width = int(w);
    jacobian->height = int(h);
    jacobian->jz = Vector::Zero(n);
    jacobian->jp = PoseBlock::Zero(n, 6);
    jacobian->row_pixel.resize(n);
  }
  for (Index v = 0; v < h; ++v) {
    for (Index u = 0; u < w; ++u) {
      const Index i = v * w + u;
      if (jacobian) jacobian->row_pixel[i] = i;
      const double zi = z(v, u);
      const Vector3 m = K.ray(double(u), double(v));
      const Projection proj = project_ray(K, R, tau, zi, m);
      if (!proj.in_front) continue;
      const BilinearSample s = bilinear_sample(instance.source, proj.pixel);
      if (!s.in_bounds) continue;
      out.mask[i] = 1;
      out.r[i] = instance.target(v, u) - s.value;
      if (!jacobian) continue;
      const Vector3& q = proj.scaled;
      const double iz = 1.0 / q.z();
      // dr/dq = -grad(I_s) * dpi/dq
      Eigen::RowVector3d drdq;
      drdq << -s.gradient.x() * K.fx * iz, -s.gradient.y() * K.fy * iz,
          (s.gradient.x() * K.fx * q.x() + s.gradient.y() * K.fy * q.y()) * iz * iz;
      jacobian->jz[i] = drdq.dot(tau);
      jacobian->jp.row(i) = drdq * D(m, zi);
    }
  }
  return out;
}

}  // namespace

PhotometricResiduals photometric_residuals(const StereoInstance& instance, const Image& z, const Vector6& pose) {
  return evaluate(instance, z, pose, nullptr);
}

Linearization linearize_photometric(const StereoInstance& instance, const Image& z, const Vector6& pose) {
  Linearization lin;
  lin.residuals = evaluate(instance, z, pose, &lin.jacobian);
  return lin;
}

StructuredJacobian photometric_jacobian(const StereoInstance& instance, const Image& z, const Vector6& pose) {
  return linearize_photometric(instance, z, pose).jacobian;
}

Matrix StructuredJacobian::dense() const {
  const Index n = Index(width) * height;
  Matrix J = Matrix::Zero(rows(), n + 6);
  for (Index row = 0; row < rows(); ++row) {
    J(row, row_pixel[row]) = jz[row];
    J.row(row).tail<6>() = jp.row(row);
  }
  return J;
}

NormalBlocks normal_blocks(const StructuredJacobian& J, const Vector& r) {
  if (r.size() != J.rows()) throw Error(ErrorCode::DimensionMismatch, "normal_blocks: len(r) != rows(J)");
  const Index n = Index(J.width) * J.height;
  NormalBlocks nb;
  nb.hzz = Vector::Zero(n);
  nb.hzp = PoseBlock::Zero(n, 6);
  nb.gz = Vector::Zero(n);
  nb.hpp = J.jp.transpose() * J.jp;
  nb.gp = J.jp.transpose() * r;
  for (Index row = 0; row < J.rows(); ++row) {
    const Index p = J.row_pixel[row];
    nb.hzz[p] += J.jz[row] * J.jz[row];
    nb.hzp.row(p) += J.jz[row] * J.jp.row(row);
    nb.gz[p] += J.jz[row] * r[row];
  }
  return nb;
}

Matrix NormalBlocks::dense_hessian() const {
  const Index n = hzz.size();
  Matrix H = Matrix::Zero(n + 6, n + 6);
  H.diagonal().head(n) = hzz;
  H.topRightCorner(n, 6) = hzp;
  H.bottomLeftCorner(6, n) = hzp.transpose();
  H.bottomRightCorner<6, 6>() = hpp;
  return H;
}

Vector NormalBlocks::dense_gradient() const {
  Vector g(gz.size() + 6);
  g << gz, gp;
  return g;
}

std::vector<char> smooth_rows(const StereoInstance& instance, const Image& z, const Vector6& pose, double h) {
  check_shapes(instance, z);
  const CameraIntrinsics& K = instance.intrinsics;
  const Index w = K.width, hh = K.height;
  struct Warp {
    Matrix3 R;
    Vector3 tau;
  };
  auto make = [](const Vector6& p) {
    const Matrix4 T = se3_exp(p);
    return Warp{T.topLeftCorner<3, 3>(), T.topRightCorner<3, 1>()};
  };
  const Warp centre = make(pose);
  std::vector<Warp> probes;
  for (int k = 0; k < 6; ++k) {
    for (double sign : {1.0, -1.0}) {
      Vector6 p = pose;
      p[k] += sign * h;
      probes.push_back(make(p));
    }
  }

  auto cell_of = [&](const Warp& warp, double zi, const Vector3& m, Index& x0, Index& y0) {
    const Projection proj = project_ray(K, warp.R, warp.tau, zi, m);
    return proj.in_front && bilinear_cell(w, hh, proj.pixel, x0, y0);
  };

  std::vector<char> ok(w * hh, 0);
  for (Index v = 0; v < hh; ++v) {
    for (Index u = 0; u < w; ++u) {
      const double zi = z(v, u);
      const Vector3 m = K.ray(double(u), double(v));
      Index cx, cy;
      if (!cell_of(centre, zi, m, cx, cy)) continue;
      bool smooth = true;
      auto same = [&](const Warp& warp, double zz) {
        Index x0, y0;
        return cell_of(warp, zz, m, x0, y0) && x0 == cx && y0 == cy;
      };
      smooth = same(centre, zi + h) && same(centre, zi - h);
      for (const Warp& warp : probes) smooth = smooth && same(warp, zi);
      ok[v * w + u] = smooth ? 1 : 0;
    }
  }
  return ok;
}

std::string to_string(SceneType type) {
  switch (type) {
    case SceneType::FrontoParallel: return "fronto";
    case SceneType::Slanted: return "slanted";
    case SceneType::TwoPlane: return "two-plane";
  }
  return "unknown";
}

SceneType parse_scene_type(const std::string& name) {
  for (SceneType t : {SceneType::FrontoParallel, SceneType::Slanted, SceneType::TwoPlane}) {
    if (name == to_string(t)) return t;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown scene type '" + name + "'");
}

namespace {

// Plane n.X = d, optionally restricted to the half-space c.X >= 0.
struct Facet {
  Vector3 n;
  double d;
  std::optional<Vector3> keep;
};

struct Surface {
  std::vector<Facet> facets;

  // Nearest positive ray parameter of o + s * dir, or NaN when the ray misses.
  double intersect(const Vector3& o, const Vector3& dir) const {
    double best = kNaN;
    for (const Facet& f : facets) {
      const double denom = f.n.dot(dir);
      if (denom == 0.0) continue;
      const double s = (f.d - f.n.dot(o)) / denom;
      if (!(s > 0.0)) continue;
      if (f.keep && f.keep->dot(o + s * dir) < 0.0) continue;
      if (!(s >= best)) best = s;
    }
    return best;
  }
};

struct Texture {
  struct Wave {
    double wx, wy, phase, amplitude;
  };
  std::vector<Wave> waves;

  double operator()(const Vector3& X) const {
    double value = 0.5;
    for (const Wave& w : waves) value += w.amplitude * std::sin(w.wx * X.x() + w.wy * X.y() + w.phase);
    return value;
  }
};

Vector3 random_direction(Rng& rng) {
  Vector3 d;
  do {
    d = {rng.normal(), rng.normal(), rng.normal()};
  } while (d.norm() < 1e-8);
  return d.normalized();
}

Surface make_surface(const SceneConfig& config, Rng& rng) {
  const double d0 = config.mean_depth;
  const double slant = config.slant_deg * kPi / 180.0;
  Surface surface;
  switch (config.type) {
    case SceneType::FrontoParallel:
      surface.facets.push_back({Vector3::UnitZ(), d0, std::nullopt});
      break;
    case SceneType::Slanted: {
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const Vector3 n(std::sin(slant) * std::cos(phi), std::sin(slant) * std::sin(phi), std::cos(slant));
      surface.facets.push_back({n, n.z() * d0, std::nullopt});
      break;
    }
    case SceneType::TwoPlane: {
      // Ridge along the vertical line X = 0, Z = d0, pointing at the camera.
      const Vector3 right(std::sin(slant), 0.0, std::cos(slant));
      const Vector3 left(-std::sin(slant), 0.0, std::cos(slant));
      surface.facets.push_back({right, right.z() * d0, Vector3::UnitX()});
      surface.facets.push_back({left, left.z() * d0, Vector3(-Vector3::UnitX())});
      break;
    }
  }
  return surface;
}

// `depth` is the distance at which the per-pixel frequency range applies.
Texture make_texture(const SceneConfig& config, double focal, double depth, Rng& rng) {
  Texture tex;
  const int k = std::max(config.texture_components, 0);
  std::vector<double> weights(k);
  double total = 0.0;
  for (double& wgt : weights) total += (wgt = rng.uniform(0.5, 1.0));
  const double to_world = focal / depth;
  for (int i = 0; i < k; ++i) {
    const double freq = rng.uniform(config.min_frequency, config.max_frequency) * to_world;
    const double dir = rng.uniform(0.0, 2.0 * kPi);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    tex.waves.push_back({freq * std::cos(dir), freq * std::sin(dir), phase,
                         config.texture_amplitude * weights[i] / total});
  }
  return tex;
}

}  // namespace

StereoInstance synth_scene(Rng& rng, const SceneConfig& config) {
  if (config.width < 2 || config.height < 2 || config.width > 128 || config.height > 96) {
    throw Error(ErrorCode::InvalidArgument, "scene resolution must lie between 2x2 and 128x96");
  }
  if (!(config.mean_depth > 0) || !(config.focal_scale > 0) || !(config.min_translation >= 0) ||
      !(config.max_translation >= config.min_translation) || !(config.max_rotation_deg >= 0) ||
      !(config.max_rotation_deg < 180) || !(config.max_frequency >= config.min_frequency) ||
      !(config.texture_amplitude >= 0) || !(config.texture_amplitude <= 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "invalid scene configuration");
  }

  StereoInstance inst;
  inst.seed = rng.seed();
  inst.intrinsics = CameraIntrinsics::centred(config.width, config.height, config.focal_scale);
  const CameraIntrinsics& K = inst.intrinsics;

  Rng geometry = rng.derive("geometry");
  Rng texture_rng = rng.derive("texture");
  Rng pose_rng = rng.derive("pose");
  const Surface surface = make_surface(config, geometry);
  // Band-limit the texture at the farthest visible point; nearer pixels see
  // lower frequencies, so bilinear interpolation error stays bounded everywhere.
  double far = config.mean_depth;
  for (int v = 0; v < K.height; ++v) {
    for (int u = 0; u < K.width; ++u) {
      const double s = surface.intersect(Vector3::Zero(), K.ray(u, v));
      if (std::isfinite(s)) far = std::max(far, s);
    }
  }
  const Texture texture = make_texture(config, K.fx, far, texture_rng);

  const double angle = pose_rng.uniform(0.0, config.max_rotation_deg) * kPi / 180.0;
  const Vector3 alpha = angle * random_direction(pose_rng);
  const double baseline = pose_rng.uniform(config.min_translation, config.max_translation) * config.mean_depth;
  const Vector3 t = baseline * random_direction(pose_rng);
  inst.pose << t, alpha;

  const Matrix4 T = se3_exp(inst.pose);
  const Matrix3 R = T.topLeftCorner<3, 3>();
  const Vector3 tau = T.topRightCorner<3, 1>();

  // Both views go through the same routine: a ray origin and direction in the
  // target frame. X_s = R X_t + tau, so the source centre is -R^T tau.
  auto render = [&](const Vector3& origin, const Matrix3& to_target, Image& image, Image* inverse_depth) {
    image.resize(K.height, K.width);
    if (inverse_depth) inverse_depth->resize(K.height, K.width);
    for (int v = 0; v < K.height; ++v) {
      for (int u = 0; u < K.width; ++u) {
        const Vector3 dir = to_target * K.ray(u, v);
        const double s = surface.intersect(origin, dir);
        if (!std::isfinite(s)) {
          if (inverse_depth) throw Error(ErrorCode::DegenerateScene, "target ray misses the surface");
          image(v, u) = 0.5;
          continue;
        }
        image(v, u) = texture(origin + s * dir);
        // The ray has unit z-component in the camera frame, so s is the depth.
        if (inverse_depth) (*inverse_depth)(v, u) = 1.0 / s;
      }
    }
  };
  render(Vector3::Zero(), Matrix3::Identity(), inst.target, &inst.inverse_depth);
  render(-(R.transpose() * tau), R.transpose(), inst.source, nullptr);

  inst.mask = photometric_residuals(inst, inst.inverse_depth, inst.pose).mask;
  const Index visible = std::count(inst.mask.begin(), inst.mask.end(), char(1));
  if (2 * visible < inst.pixel_count()) {
    throw Error(ErrorCode::DegenerateScene, "fewer than half of the pixels are visible in both views");
  }
  return inst;
}

StereoProblem::StereoProblem(StereoInstance instance) : instance_(std::move(instance)) { instance_.validate(); }

Image StereoProblem::depth_of(const Vector& x) const {
  if (x.size() != dim_x()) throw Error(ErrorCode::DimensionMismatch, "stereo iterate has wrong length");
  const auto& K = instance_.intrinsics;
  return Eigen::Map<const Image>(x.data(), K.height, K.width);
}

Vector6 StereoProblem::pose_of(const Vector& x) { return x.tail<6>(); }

Vector StereoProblem::pack(const Image& z, const Vector6& pose) const {
  check_shapes(instance_, z);
  Vector x(dim_x());
  x.head(instance_.pixel_count()) = Eigen::Map<const Vector>(z.data(), z.size());
  x.tail<6>() = pose;
  return x;
}

Vector StereoProblem::residual(const Vector& x) const {
  return photometric_residuals(instance_, depth_of(x), pose_of(x)).r;
}

Linearization StereoProblem::linearize(const Vector& x) const {
  return linearize_photometric(instance_, depth_of(x), pose_of(x));
}

Matrix StereoProblem::jacobian(const Vector& x) const { return linearize(x).jacobian.dense(); }

NormalEquations StereoProblem::normal_equations(const Vector& x) const {
  Linearization lin = linearize(x);
  const NormalBlocks nb = normal_blocks(lin.jacobian, lin.residuals.r);
  return {nb.dense_hessian(), nb.dense_gradient(), std::move(lin.residuals.r)};
}

void StereoProblem::project(Vector& x) const {
  auto z = x.head(instance_.pixel_count());
  z = z.cwiseMax(kMinInverseDepth);
}

std::optional<Vector> StereoProblem::ground_truth() const {
  return pack(instance_.inverse_depth, instance_.pose);
}

namespace {

double angle_between_deg(const Vector3& a, const Vector3& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 180.0;
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c) * 180.0 / kPi;
}

}  // namespace

StereoMetrics stereo_metrics(const StereoProblem& problem, const Vector& x) {
  const StereoInstance& inst = problem.instance();
  const Vector6 pose = StereoProblem::pose_of(x);
  const Matrix4 T = se3_exp(pose);
  const Matrix4 T_true = se3_exp(inst.pose);
  const Matrix3 dR = T.topLeftCorner<3, 3>() * T_true.topLeftCorner<3, 3>().transpose();

  StereoMetrics m;
  m.rotation_error_deg = so3_log(dR).norm() * 180.0 / kPi;
  m.translation_direction_error_deg =
      angle_between_deg(T.topRightCorner<3, 1>(), T_true.topRightCorner<3, 1>());
  m.depth_l1 = (problem.depth_of(x) - inst.inverse_depth).abs().mean();
  const PhotometricResiduals res = photometric_residuals(inst, problem.depth_of(x), pose);
  const Index valid = res.valid_count();
  m.rmse = valid > 0 ? std::sqrt(res.r.squaredNorm() / double(valid)) : 0.0;
  return m;
}

Vector stereo_initial_iterate(const StereoProblem& problem, double mean_depth, const StereoInit& init) {
  if (!(mean_depth > 0)) throw Error(ErrorCode::InvalidArgument, "mean depth must be positive");
  const auto& K = problem.instance().intrinsics;
  const Image z = init.z ? *init.z : Image::Constant(K.height, K.width, 1.0 / mean_depth);
  Vector x = problem.pack(z, init.pose ? *init.pose : Vector6::Zero());
  problem.project(x);
  return x;
}

void write_pgm(const std::string& path, const Image& image, double lo, double hi) {
  if (!(hi > lo)) throw Error(ErrorCode::InvalidArgument, "write_pgm: empty intensity range");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  for (Index v = 0; v < image.rows(); ++v) {
    for (Index u = 0; u < image.cols(); ++u) {
      const double s = std::clamp((image(v, u) - lo) / (hi - lo), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * s))));
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (in >> std::ws && in.peek() == '#') std::getline(in, t);
    in >> t;
    return t;
  };
  if (token() != "P5") throw Error(ErrorCode::CorruptFile, path + " is not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::CorruptFile, path + ": bad PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw Error(ErrorCode::CorruptFile, path + ": bad PGM header");
  in.get();
  std::vector<unsigned char> bytes(std::size_t(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (in.gcount() != std::streamsize(bytes.size())) throw Error(ErrorCode::CorruptFile, path + ": truncated PGM");
  Image image(h, w);
  for (int i = 0; i < w * h; ++i) image.data()[i] = bytes[i] / double(maxval);
  return image;
}

void write_grid_csv(const std::string& path, const Image& image) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  for (Index v = 0; v < image.rows(); ++v) {
    for (Index u = 0; u < image.cols(); ++u) {
      if (u) out << ',';
      out << format_double(image(v, u));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

namespace {

nlohmann::json image_json(const Image& image) { return std::vector<double>(image.data(), image.data() + image.size()); }

Image image_from_json(const nlohmann::json& j, int w, int h) {
  const auto values = j.get<std::vector<double>>();
  if (values.size() != std::size_t(w) * h) throw Error(ErrorCode::CorruptFile, "image array has wrong length");
  return Eigen::Map<const Image>(values.data(), h, w);
}

}  // namespace

std::string stereo_instance_to_json(const StereoInstance& instance) {
  const auto& K = instance.intrinsics;
  nlohmann::json j;
  j["seed"] = instance.seed;
  j["intrinsics"] = {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
  j["target"] = image_json(instance.target);
  j["source"] = image_json(instance.source);
  j["inverse_depth"] = image_json(instance.inverse_depth);
  j["pose"] = std::vector<double>(instance.pose.data(), instance.pose.data() + 6);
  std::vector<int> mask(instance.mask.begin(), instance.mask.end());
  j["mask"] = mask;
  return j.dump();
}

StereoInstance stereo_instance_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    StereoInstance inst;
    inst.seed = j.at("seed").get<std::uint64_t>();
    const auto& k = j.at("intrinsics");
    inst.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                       k.at("cy").get<double>(), k.at("width").get<int>(),   k.at("height").get<int>()};
    inst.intrinsics.validate();
    const int w = inst.intrinsics.width, h = inst.intrinsics.height;
    inst.target = image_from_json(j.at("target"), w, h);
    inst.source = image_from_json(j.at("source"), w, h);
    inst.inverse_depth = image_from_json(j.at("inverse_depth"), w, h);
    const auto pose = j.at("pose").get<std::vector<double>>();
    if (pose.size() != 6) throw Error(ErrorCode::CorruptFile, "pose must have six entries");
    inst.pose = Eigen::Map<const Vector6>(pose.data());
    const auto mask = j.at("mask").get<std::vector<int>>();
    inst.mask.assign(mask.begin(), mask.end());
    inst.validate();
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("stereo instance JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptFile) throw;
    throw Error(ErrorCode::CorruptFile, std::string("stereo instance JSON: ") + e.what());
  }
}

}  // namespace lsnet
