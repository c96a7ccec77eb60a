#include "deskpose/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "deskpose/common.hpp"
#include "deskpose/rng.hpp"

namespace deskpose {

namespace {

// All scenes use the same camera model: a 512x512 sensor with centered
// principal point and equal focal lengths.
CameraIntrinsics fixed_intrinsics() {
  CameraIntrinsics k;
  k.fx = 500.0;
  k.fy = 500.0;
  k.cx = 256.0;
  k.cy = 256.0;
  k.width = 512;
  k.height = 512;
  return k;
}

Eigen::VectorXd random_unit_vector(SplitMix64& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.next_normal();
  double n = v.norm();
  if (n < 1e-12) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / n;
}

// Uniform point inside an oriented box: sample in the local frame, rotate by
// yaw, then translate to the center.
Eigen::Vector3d random_point_in_box(SplitMix64& rng, const BoundingBox3& box) {
  Eigen::Vector3d local(
      (rng.next_double() - 0.5) * box.dimensions.x(),
      (rng.next_double() - 0.5) * box.dimensions.y(),
      (rng.next_double() - 0.5) * box.dimensions.z());
  double c = std::cos(box.yaw), s = std::sin(box.yaw);
  Eigen::Vector3d world(c * local.x() - s * local.y(),
                        s * local.x() + c * local.y(),
                        local.z());
  return box.center + world;
}

// Camera pose looking from eye toward target, z forward, x right, y down-ish;
// the basis is orthonormal with determinant +1 by construction.
RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Eigen::Vector3d::UnitY();
  Eigen::Vector3d z_c = forward;
  Eigen::Vector3d x_c = up.cross(z_c).normalized();
  Eigen::Vector3d y_c = z_c.cross(x_c);
  Eigen::Matrix3d world_from_cam_rot;
  world_from_cam_rot.col(0) = x_c;
  world_from_cam_rot.col(1) = y_c;
  world_from_cam_rot.col(2) = z_c;
  Eigen::Matrix3d r = world_from_cam_rot.transpose();  // camera_from_world rotation
  return RigidTransform::from_matrix(r, -r * eye);
}

}  // namespace

void SceneConfig::validate() const {
  if (num_points < 8) throw ValidationError("num_points must be at least 8");
  if (!bbox.valid()) throw ValidationError("bbox is degenerate");
  if (num_map_views < 2) throw ValidationError("num_map_views must be at least 2");
  if (num_query_views < 0) throw ValidationError("num_query_views must be non-negative");
  if (orbit_radius <= 0.0) throw ValidationError("orbit_radius must be positive");
  if (orbit_height_range.second < orbit_height_range.first)
    throw ValidationError("orbit_height_range is inverted");
  if (descriptor_dim < 4) throw ValidationError("descriptor_dim must be at least 4");
  if (sigma_desc < 0.0 || sigma_px < 0.0)
    throw ValidationError("noise std must be non-negative");
  if (clutter_rate < 0.0 || clutter_rate >= 1.0)
    throw ValidationError("clutter_rate must be in [0, 1)");
}

std::vector<int> SyntheticScene::map_camera_ids() const {
  std::vector<int> ids;
  ids.reserve(config.num_map_views);
  for (int i = 0; i < config.num_map_views; ++i) ids.push_back(i);
  return ids;
}

std::vector<int> SyntheticScene::query_camera_ids() const {
  std::vector<int> ids;
  ids.reserve(config.num_query_views);
  for (int i = 0; i < config.num_query_views; ++i) ids.push_back(config.num_map_views + i);
  return ids;
}

const PosedCamera& SyntheticScene::camera(int camera_id) const {
  for (const auto& cam : cameras)
    if (cam.id == camera_id) return cam;
  throw ValidationError("unknown camera id " + std::to_string(camera_id));
}

SyntheticScene generate_scene(const SceneConfig& config) {
  config.validate();

  SyntheticScene scene;
  scene.config = config;
  scene.bbox = config.bbox;

  scene.points.reserve(config.num_points);
  for (int i = 0; i < config.num_points; ++i) {
    SplitMix64 rng = stream_rng(config.seed, Stream::kScenePoint, static_cast<uint64_t>(i));
    ScenePoint p;
    p.id = i;
    p.position = random_point_in_box(rng, config.bbox);
    p.latent = random_unit_vector(rng, config.descriptor_dim);
    scene.points.push_back(std::move(p));
  }

  const int total_views = config.num_map_views + config.num_query_views;
  const double sector = 2.0 * std::numbers::pi / total_views;
  scene.cameras.reserve(total_views);
  for (int i = 0; i < total_views; ++i) {
    SplitMix64 rng = stream_rng(config.seed, Stream::kCameraPose, static_cast<uint64_t>(i));
    // Evenly spaced base angles with per-camera jitter keep the orbit well
    // spread without ever stacking two cameras on the same ray.
    double theta = sector * i + (rng.next_double() - 0.5) * 0.5 * sector;
    double h = config.orbit_height_range.first +
               rng.next_double() *
                   (config.orbit_height_range.second - config.orbit_height_range.first);
    Eigen::Vector3d eye = config.bbox.center +
                          Eigen::Vector3d(config.orbit_radius * std::cos(theta),
                                          config.orbit_radius * std::sin(theta), h);
    PosedCamera cam;
    cam.id = i;
    cam.intrinsics = fixed_intrinsics();
    cam.camera_from_object = look_at(eye, config.bbox.center);
    scene.cameras.push_back(cam);
  }
  return scene;
}

std::vector<int> visible_point_ids(const SyntheticScene& scene, int camera_id) {
  const PosedCamera& cam = scene.camera(camera_id);
  std::vector<int> ids;
  for (const auto& p : scene.points) {
    auto px = project(cam.intrinsics, cam.camera_from_object, p.position);
    if (!px) continue;
    if (px->u < 0.0 || px->u > cam.intrinsics.width || px->v < 0.0 ||
        px->v > cam.intrinsics.height)
      continue;
    ids.push_back(p.id);
  }
  return ids;
}

ViewObservation render_view(const SyntheticScene& scene, int camera_id, double sigma_px,
                            double sigma_desc, double clutter_rate, uint64_t seed) {
  if (sigma_px < 0.0 || sigma_desc < 0.0)
    throw ValidationError("noise std must be non-negative");
  if (clutter_rate < 0.0 || clutter_rate >= 1.0)
    throw ValidationError("clutter_rate must be in [0, 1)");
  const PosedCamera& cam = scene.camera(camera_id);
  const int d = scene.config.descriptor_dim;
  const double w = cam.intrinsics.width;
  const double h = cam.intrinsics.height;

  ViewObservation obs;
  obs.view_id = camera_id;

  std::vector<Eigen::VectorXd> descs;
  for (const auto& p : scene.points) {
    auto px = project(cam.intrinsics, cam.camera_from_object, p.position);
    if (!px || px->u < 0.0 || px->u > w || px->v < 0.0 || px->v > h) continue;

    Pixel noisy = *px;
    if (sigma_px > 0.0) {
      SplitMix64 rng = stream_rng(seed, Stream::kKeypointNoise, static_cast<uint64_t>(camera_id),
                                  static_cast<uint64_t>(p.id));
      noisy.u += sigma_px * rng.next_normal();
      noisy.v += sigma_px * rng.next_normal();
      // Keep detections on the sensor; at realistic noise levels this never
      // fires because visible points sit well inside the frame.
      noisy.u = std::clamp(noisy.u, 0.0, w);
      noisy.v = std::clamp(noisy.v, 0.0, h);
    }

    Eigen::VectorXd desc = p.latent;
    if (sigma_desc > 0.0) {
      SplitMix64 rng = stream_rng(seed, Stream::kDescriptorNoise, static_cast<uint64_t>(camera_id),
                                  static_cast<uint64_t>(p.id));
      for (int i = 0; i < d; ++i) desc[i] += sigma_desc * rng.next_normal();
      double n = desc.norm();
      if (n < 1e-12) {
        desc = p.latent;  // noise exactly cancelled the latent; keep the clean one
      } else {
        desc /= n;
      }
    }

    obs.keypoints.push_back(noisy);
    obs.gt_point_ids.push_back(p.id);
    descs.push_back(std::move(desc));
  }

  // Dilated tight rectangle over the real keypoints, clipped to the frame.
  if (!obs.keypoints.empty()) {
    double umin = obs.keypoints[0].u, umax = obs.keypoints[0].u;
    double vmin = obs.keypoints[0].v, vmax = obs.keypoints[0].v;
    for (const auto& p : obs.keypoints) {
      umin = std::min(umin, p.u);
      umax = std::max(umax, p.u);
      vmin = std::min(vmin, p.v);
      vmax = std::max(vmax, p.v);
    }
    const double dilate = 5.0;
    obs.bbox2d.umin = std::max(0.0, umin - dilate);
    obs.bbox2d.vmin = std::max(0.0, vmin - dilate);
    obs.bbox2d.umax = std::min(w, umax + dilate);
    obs.bbox2d.vmax = std::min(h, vmax + dilate);
  }

  // Spurious detections: uniform over the full image with random unit
  // descriptors, count proportional to the number of real detections.
  const int num_clutter =
      static_cast<int>(clutter_rate * static_cast<double>(obs.keypoints.size()));
  for (int i = 0; i < num_clutter; ++i) {
    SplitMix64 rng = stream_rng(seed, Stream::kClutter, static_cast<uint64_t>(camera_id),
                                static_cast<uint64_t>(i));
    Pixel px{rng.next_double() * w, rng.next_double() * h};
    obs.keypoints.push_back(px);
    obs.gt_point_ids.push_back(kClutterId);
    descs.push_back(random_unit_vector(rng, d));
  }

  obs.descriptors.resize(d, static_cast<Eigen::Index>(descs.size()));
  for (size_t i = 0; i < descs.size(); ++i) obs.descriptors.col(static_cast<Eigen::Index>(i)) = descs[i];
  return obs;
}

}  // namespace deskpose
