#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "deskpose/geometry.hpp"

namespace deskpose {

struct Correspondence2D3D {
  Pixel pixel;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double confidence = 1.0;
};

// Direct linear transform PnP over at least six correspondences: Hartley
// normalization on both sides, SVD solution of the 2n x 12 system, then the
// projection matrix factored into intrinsics-free rotation (nearest rotation
// via SVD) and translation, with the sign fixed so most points land in front
// of the camera. Returns nullopt for rank-deficient (degenerate) systems.
std::optional<RigidTransform> pnp_dlt(const std::vector<Correspondence2D3D>& correspondences,
                                      const CameraIntrinsics& intrinsics);

struct RefineResult {
  RigidTransform pose;
  bool singular = false;            // normal equations were unusable; pose is the input
  int iterations = 0;               // accepted Gauss-Newton steps
  std::vector<double> cost_history; // sum of squared pixel residuals, starts at the init cost
};

// Gauss-Newton on the sum of squared reprojection errors over a 6-parameter
// local update (axis-angle left-applied to the rotation, additive
// translation), with step halving so the returned pose never has a higher
// cost than the initialization.
RefineResult refine_gauss_newton(const RigidTransform& init,
                                 const std::vector<Correspondence2D3D>& correspondences,
                                 const CameraIntrinsics& intrinsics, int max_iters = 20,
                                 double tol = 1e-10);

struct RansacConfig {
  int iterations = 1000;
  double inlier_threshold_px = 3.0;
  int min_inliers = 8;
  int sample_size = 6;
  uint64_t seed = 0;

  void validate() const;  // throws ValidationError
};

struct PnPResult {
  RigidTransform pose;
  std::vector<int> inlier_indices;
  double mean_reproj_error = 0.0;  // pixels, over the inliers
};

// Seeded RANSAC around pnp_dlt: minimal samples, inliers counted by
// reprojection error under the threshold with positive depth, best hypothesis
// by inlier count (ties by lower mean error), refined on its inlier set.
// Returns nullopt when no hypothesis reaches min_inliers or there are fewer
// correspondences than sample_size.
std::optional<PnPResult> ransac_pnp(const std::vector<Correspondence2D3D>& correspondences,
                                    const CameraIntrinsics& intrinsics, const RansacConfig& config);

}  // namespace deskpose
