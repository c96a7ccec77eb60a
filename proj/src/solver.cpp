#include "deskpose/solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "deskpose/common.hpp"
#include "deskpose/rng.hpp"

namespace deskpose {

namespace {

// Similarity that moves the pixels to a zero centroid with mean distance
// sqrt(2) — the standard conditioning step before a DLT solve.
Eigen::Matrix3d normalize_pixels(const std::vector<Correspondence2D3D>& corrs,
                                 std::vector<Eigen::Vector2d>* out) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& c : corrs) centroid += Eigen::Vector2d(c.pixel.u, c.pixel.v);
  centroid /= static_cast<double>(corrs.size());
  double mean_dist = 0.0;
  for (const auto& c : corrs)
    mean_dist += (Eigen::Vector2d(c.pixel.u, c.pixel.v) - centroid).norm();
  mean_dist /= static_cast<double>(corrs.size());
  double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;

  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = t(1, 1) = scale;
  t(0, 2) = -scale * centroid.x();
  t(1, 2) = -scale * centroid.y();
  out->clear();
  for (const auto& c : corrs)
    out->push_back(scale * (Eigen::Vector2d(c.pixel.u, c.pixel.v) - centroid));
  return t;
}

Eigen::Matrix4d normalize_points(const std::vector<Correspondence2D3D>& corrs,
                                 std::vector<Eigen::Vector3d>* out) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& c : corrs) centroid += c.point;
  centroid /= static_cast<double>(corrs.size());
  double mean_dist = 0.0;
  for (const auto& c : corrs) mean_dist += (c.point - centroid).norm();
  mean_dist /= static_cast<double>(corrs.size());
  double scale = mean_dist > 1e-12 ? std::sqrt(3.0) / mean_dist : 1.0;

  Eigen::Matrix4d u = Eigen::Matrix4d::Identity();
  u.topLeftCorner<3, 3>() *= scale;
  u.topRightCorner<3, 1>() = -scale * centroid;
  out->clear();
  for (const auto& c : corrs) out->push_back(scale * (c.point - centroid));
  return u;
}

double reprojection_error(const CameraIntrinsics& k, const RigidTransform& pose,
                          const Correspondence2D3D& c) {
  auto px = project(k, pose, c.point);
  if (!px) return std::numeric_limits<double>::infinity();
  return std::hypot(px->u - c.pixel.u, px->v - c.pixel.v);
}

double total_cost(const CameraIntrinsics& k, const RigidTransform& pose,
                  const std::vector<Correspondence2D3D>& corrs) {
  double cost = 0.0;
  for (const auto& c : corrs) {
    auto px = project(k, pose, c.point);
    if (!px) return std::numeric_limits<double>::infinity();
    double du = px->u - c.pixel.u, dv = px->v - c.pixel.v;
    cost += du * du + dv * dv;
  }
  return cost;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

RigidTransform apply_delta(const RigidTransform& pose, const Eigen::Vector3d& omega,
                           const Eigen::Vector3d& tau) {
  double angle = omega.norm();
  Eigen::Quaterniond dq = Eigen::Quaterniond::Identity();
  if (angle > 1e-12) dq = Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
  return RigidTransform(dq * pose.rotation(), pose.translation() + tau);
}

}  // namespace

std::optional<RigidTransform> pnp_dlt(const std::vector<Correspondence2D3D>& correspondences,
                                      const CameraIntrinsics& intrinsics) {
  const size_t n = correspondences.size();
  if (n < 6) throw ValidationError("DLT needs at least six correspondences");
  if (!intrinsics.valid()) throw ValidationError("invalid intrinsics");

  std::vector<Eigen::Vector2d> px;
  std::vector<Eigen::Vector3d> pt;
  Eigen::Matrix3d t2 = normalize_pixels(correspondences, &px);
  Eigen::Matrix4d t3 = normalize_points(correspondences, &pt);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), 12);
  for (size_t i = 0; i < n; ++i) {
    Eigen::RowVector4d xh(pt[i].x(), pt[i].y(), pt[i].z(), 1.0);
    a.block<1, 4>(static_cast<Eigen::Index>(2 * i), 0) = xh;
    a.block<1, 4>(static_cast<Eigen::Index>(2 * i), 8) = -px[i].x() * xh;
    a.block<1, 4>(static_cast<Eigen::Index>(2 * i + 1), 4) = xh;
    a.block<1, 4>(static_cast<Eigen::Index>(2 * i + 1), 8) = -px[i].y() * xh;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  // More than a one-dimensional solution family (e.g. collinear points)
  // makes the smallest singular vector meaningless.
  if (sv(10) < 1e-9 * sv(0)) return std::nullopt;

  Eigen::VectorXd h = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> p_norm;
  p_norm.row(0) = h.segment<4>(0).transpose();
  p_norm.row(1) = h.segment<4>(4).transpose();
  p_norm.row(2) = h.segment<4>(8).transpose();

  // Undo both normalizations, then strip the intrinsics.
  Eigen::Matrix<double, 3, 4> p = t2.inverse() * p_norm * t3;
  Eigen::Matrix<double, 3, 4> b = intrinsics.matrix().inverse() * p;

  double scale = b.row(2).head<3>().norm();
  if (scale < 1e-12) return std::nullopt;
  b /= scale;

  // Fix the global sign so the majority of the points sit in front.
  int positive = 0;
  for (const auto& c : correspondences) {
    double depth = b.row(2).head<3>().dot(c.point) + b(2, 3);
    if (depth > 0.0) ++positive;
  }
  if (2 * positive < static_cast<int>(n)) b = -b;

  Eigen::Matrix3d m = b.leftCols<3>();
  Eigen::JacobiSVD<Eigen::Matrix3d> rsvd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d uv = rsvd.matrixU() * rsvd.matrixV().transpose();
  Eigen::Matrix3d r = rsvd.matrixU() *
                      Eigen::Vector3d(1, 1, uv.determinant() < 0 ? -1.0 : 1.0).asDiagonal() *
                      rsvd.matrixV().transpose();
  return RigidTransform::from_matrix(r, b.col(3));
}

RefineResult refine_gauss_newton(const RigidTransform& init,
                                 const std::vector<Correspondence2D3D>& correspondences,
                                 const CameraIntrinsics& intrinsics, int max_iters, double tol) {
  if (correspondences.empty()) throw ValidationError("refinement needs correspondences");
  if (max_iters < 0 || tol <= 0.0) throw ValidationError("bad refinement parameters");

  RefineResult result;
  result.pose = init;
  double cost = total_cost(intrinsics, init, correspondences);
  result.cost_history.push_back(cost);
  if (!std::isfinite(cost)) {
    // A point behind the camera at the start: nothing to linearize around.
    result.singular = true;
    return result;
  }

  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    const Eigen::Matrix3d rot = result.pose.rotation_matrix();
    for (const auto& c : correspondences) {
      Eigen::Vector3d pc = result.pose.apply(c.point);
      double z = pc.z();
      Eigen::Matrix<double, 2, 3> dpi;
      dpi << intrinsics.fx / z, 0, -intrinsics.fx * pc.x() / (z * z), 0, intrinsics.fy / z,
          -intrinsics.fy * pc.y() / (z * z);
      Eigen::Matrix<double, 2, 6> jac;
      jac.leftCols<3>() = -dpi * skew(rot * c.point);  // rotation block (left update)
      jac.rightCols<3>() = dpi;
      Eigen::Vector2d residual(intrinsics.fx * pc.x() / z + intrinsics.cx - c.pixel.u,
                               intrinsics.fy * pc.y() / z + intrinsics.cy - c.pixel.v);
      h += jac.transpose() * jac;
      g += jac.transpose() * residual;
    }

    Eigen::JacobiSVD<Eigen::Matrix<double, 6, 6>> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(5) < 1e-12 * svd.singularValues()(0)) {
      result.singular = true;
      return result;
    }
    Eigen::Matrix<double, 6, 1> delta = -svd.solve(g);

    // Step halving: shrink until the cost stops increasing.
    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 20; ++halving, step *= 0.5) {
      RigidTransform candidate =
          apply_delta(result.pose, step * delta.head<3>(), step * delta.tail<3>());
      double candidate_cost = total_cost(intrinsics, candidate, correspondences);
      if (candidate_cost <= cost) {
        result.pose = candidate;
        cost = candidate_cost;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    ++result.iterations;
    result.cost_history.push_back(cost);
    if ((step * delta).norm() < tol) break;
  }
  return result;
}

void RansacConfig::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be at least 1");
  if (inlier_threshold_px <= 0.0) throw ValidationError("inlier threshold must be positive");
  if (min_inliers < 1) throw ValidationError("min_inliers must be positive");
  if (sample_size < 6) throw ValidationError("sample_size must be at least 6");
}

std::optional<PnPResult> ransac_pnp(const std::vector<Correspondence2D3D>& correspondences,
                                    const CameraIntrinsics& intrinsics,
                                    const RansacConfig& config) {
  config.validate();
  const int n = static_cast<int>(correspondences.size());
  if (n < config.sample_size) return std::nullopt;

  SplitMix64 rng = stream_rng(config.seed, Stream::kRansac);
  std::vector<int> indices(static_cast<size_t>(n));
  std::iota(indices.begin(), indices.end(), 0);

  int best_count = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  std::vector<int> best_inliers;
  RigidTransform best_pose;

  std::vector<Correspondence2D3D> sample(static_cast<size_t>(config.sample_size));
  for (int iter = 0; iter < config.iterations; ++iter) {
    for (int i = 0; i < config.sample_size; ++i) {
      int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(n - i)));
      std::swap(indices[static_cast<size_t>(i)], indices[static_cast<size_t>(j)]);
      sample[static_cast<size_t>(i)] = correspondences[static_cast<size_t>(indices[static_cast<size_t>(i)])];
    }
    auto pose = pnp_dlt(sample, intrinsics);
    if (!pose) continue;

    std::vector<int> inliers;
    double err_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      double err = reprojection_error(intrinsics, *pose, correspondences[static_cast<size_t>(i)]);
      if (err < config.inlier_threshold_px) {
        inliers.push_back(i);
        err_sum += err;
      }
    }
    if (inliers.empty()) continue;
    double mean = err_sum / static_cast<double>(inliers.size());
    if (static_cast<int>(inliers.size()) > best_count ||
        (static_cast<int>(inliers.size()) == best_count && mean < best_mean)) {
      best_count = static_cast<int>(inliers.size());
      best_mean = mean;
      best_inliers = std::move(inliers);
      best_pose = *pose;
    }
  }

  if (best_count < config.min_inliers) return std::nullopt;

  std::vector<Correspondence2D3D> inlier_corrs;
  inlier_corrs.reserve(best_inliers.size());
  for (int i : best_inliers) inlier_corrs.push_back(correspondences[static_cast<size_t>(i)]);
  RefineResult refined = refine_gauss_newton(best_pose, inlier_corrs, intrinsics);

  PnPResult result;
  result.pose = refined.pose;
  result.inlier_indices = std::move(best_inliers);
  double err_sum = 0.0;
  for (int i : result.inlier_indices)
    err_sum += reprojection_error(intrinsics, result.pose, correspondences[static_cast<size_t>(i)]);
  result.mean_reproj_error = err_sum / static_cast<double>(result.inlier_indices.size());
  return result;
}

}  // namespace deskpose
