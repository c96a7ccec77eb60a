#include "deskpose/geometry.hpp"

#include <cmath>

namespace deskpose {

bool CameraIntrinsics::valid() const {
  return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx > 0.0 && cx < width && cy > 0.0 &&
         cy < height;
}

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

RigidTransform::RigidTransform(const Eigen::Quaterniond& rotation,
                               const Eigen::Vector3d& translation)
    : rotation_(rotation.normalized()), translation_(translation) {}

RigidTransform RigidTransform::from_matrix(const Eigen::Matrix3d& rotation,
                                           const Eigen::Vector3d& translation) {
  return RigidTransform(Eigen::Quaterniond(rotation), translation);
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  const Eigen::Quaterniond q = a.rotation() * b.rotation();
  const Eigen::Vector3d t = a.rotation() * b.translation() + a.translation();
  return RigidTransform(q, t);  // constructor renormalizes
}

RigidTransform invert(const RigidTransform& t) {
  const Eigen::Quaterniond q = t.rotation().conjugate();
  return RigidTransform(q, -(q * t.translation()));
}

bool BoundingBox3::valid() const {
  return dimensions.x() > 0.0 && dimensions.y() > 0.0 && dimensions.z() > 0.0 && yaw >= -M_PI &&
         yaw < M_PI;
}

bool contains(const BoundingBox3& box, const Eigen::Vector3d& p) {
  const Eigen::Vector3d d = p - box.center;
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  // rotate by -yaw into the box frame
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  const double lz = d.z();
  return std::abs(lx) <= 0.5 * box.dimensions.x() && std::abs(ly) <= 0.5 * box.dimensions.y() &&
         std::abs(lz) <= 0.5 * box.dimensions.z();
}

std::optional<Pixel> project(const CameraIntrinsics& intrinsics,
                             const RigidTransform& camera_from_object, const Eigen::Vector3d& p) {
  const Eigen::Vector3d q = camera_from_object.apply(p);
  if (q.z() <= kDepthEpsilon) {
    return std::nullopt;
  }
  return Pixel{intrinsics.fx * q.x() / q.z() + intrinsics.cx,
               intrinsics.fy * q.y() / q.z() + intrinsics.cy};
}

Eigen::Vector3d unproject(const CameraIntrinsics& intrinsics, const Pixel& pixel, double depth) {
  return {(pixel.u - intrinsics.cx) / intrinsics.fx * depth,
          (pixel.v - intrinsics.cy) / intrinsics.fy * depth, depth};
}

PoseDelta pose_delta(const RigidTransform& estimate, const RigidTransform& ground_truth) {
  const Eigen::Quaterniond rel = estimate.rotation() * ground_truth.rotation().conjugate();
  const double angle = 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
  PoseDelta delta;
  delta.rotation_deg = angle * 180.0 / M_PI;
  delta.translation = (estimate.translation() - ground_truth.translation()).norm();
  return delta;
}

}  // namespace deskpose
