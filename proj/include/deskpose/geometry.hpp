#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

namespace deskpose {

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

// Pinhole intrinsics in pixels. The principal point must lie strictly inside
// the image.
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool valid() const;
  Eigen::Matrix3d matrix() const;
};

// SE(3) transform stored as a scalar-first unit quaternion plus a
// translation. The rotation is renormalized after every construction and
// composition so long chains do not drift.
class RigidTransform {
 public:
  RigidTransform()
      : rotation_(Eigen::Quaterniond::Identity()), translation_(Eigen::Vector3d::Zero()) {}
  RigidTransform(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);

  static RigidTransform from_matrix(const Eigen::Matrix3d& rotation,
                                    const Eigen::Vector3d& translation);
  static RigidTransform identity() { return RigidTransform(); }

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }

  // R * p + t
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

 private:
  Eigen::Quaterniond rotation_;
  Eigen::Vector3d translation_;
};

// Applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

// Box oriented by a yaw rotation about the z axis through its center.
struct BoundingBox3 {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d dimensions = Eigen::Vector3d::Zero();
  double yaw = 0.0;

  bool valid() const;
};

// True iff p, expressed in the box frame, is within half the extent on every
// axis (boundary included).
bool contains(const BoundingBox3& box, const Eigen::Vector3d& p);

inline constexpr double kDepthEpsilon = 1e-9;

// Projects an object-frame point through camera_from_object. Returns nullopt
// when the point lands at or behind the camera plane (z <= kDepthEpsilon).
std::optional<Pixel> project(const CameraIntrinsics& intrinsics,
                             const RigidTransform& camera_from_object,
                             const Eigen::Vector3d& p);

// Inverse pinhole: pixel plus depth to a camera-frame point.
Eigen::Vector3d unproject(const CameraIntrinsics& intrinsics, const Pixel& pixel, double depth);

struct PoseDelta {
  double rotation_deg = 0.0;
  double translation = 0.0;  // scene units
};

// Rotation error is the geodesic angle of estimate * ground_truth^-1 in
// degrees; translation error is the Euclidean distance between the two
// translation vectors.
PoseDelta pose_delta(const RigidTransform& estimate, const RigidTransform& ground_truth);

// Camera with known pose, the unit consumed by triangulation and mapping.
struct PosedCamera {
  int id = 0;
  RigidTransform camera_from_object;
  CameraIntrinsics intrinsics;
};

}  // namespace deskpose
