#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

#include "deskpose/geometry.hpp"

namespace deskpose {

// Synthetic-scene generation parameters. The seed fully determines the scene
// and every rendered observation.
struct SceneConfig {
  int num_points = 200;
  BoundingBox3 bbox{Eigen::Vector3d::Zero(), Eigen::Vector3d(0.3, 0.3, 0.25), 0.0};
  int num_map_views = 20;
  int num_query_views = 10;
  double orbit_radius = 0.8;                          // scene units from the bbox center, xy-plane
  std::pair<double, double> orbit_height_range{0.25, 0.55};
  int descriptor_dim = 32;
  double sigma_desc = 0.0;   // descriptor noise std, pre-normalization
  double sigma_px = 0.0;     // keypoint noise std in pixels
  double clutter_rate = 0.0; // spurious keypoints per visible keypoint, [0, 1)
  uint64_t seed = 0;

  void validate() const;  // throws ValidationError
};

struct ScenePoint {
  int id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::VectorXd latent;  // unit norm
};

// Ground-truth world: points with latent descriptors inside the bounding box
// and posed cameras orbiting it. The first num_map_views cameras are the
// mapping scan, the rest are queries.
struct SyntheticScene {
  SceneConfig config;
  std::vector<ScenePoint> points;
  std::vector<PosedCamera> cameras;
  BoundingBox3 bbox;

  std::vector<int> map_camera_ids() const;
  std::vector<int> query_camera_ids() const;
  const PosedCamera& camera(int camera_id) const;  // throws ValidationError if absent
};

SyntheticScene generate_scene(const SceneConfig& config);

// Axis-aligned pixel rectangle.
struct BoundingBox2 {
  double umin = 0.0, vmin = 0.0, umax = 0.0, vmax = 0.0;
  bool contains(const Pixel& p) const {
    return p.u >= umin && p.u <= umax && p.v >= vmin && p.v <= vmax;
  }
};

inline constexpr int kClutterId = -1;

// One rendered view: noisy keypoints with descriptors, aligned ground-truth
// point ids (kClutterId marks spurious detections), and the dilated 2D box
// around the real keypoints.
struct ViewObservation {
  int view_id = 0;
  std::vector<Pixel> keypoints;
  Eigen::MatrixXd descriptors;  // d x n, column k belongs to keypoints[k]
  std::vector<int> gt_point_ids;
  BoundingBox2 bbox2d;

  int num_keypoints() const { return static_cast<int>(keypoints.size()); }
};

// Renders the view seen by camera_id. Deterministic in (scene, camera_id,
// seed) and independent of any other view having been rendered.
ViewObservation render_view(const SyntheticScene& scene, int camera_id, double sigma_px,
                            double sigma_desc, double clutter_rate, uint64_t seed);

// Scene-point ids whose exact projection is in front of the camera and inside
// the frame. This is the visibility oracle used by mapping tests and gt match
// construction.
std::vector<int> visible_point_ids(const SyntheticScene& scene, int camera_id);

}  // namespace deskpose
