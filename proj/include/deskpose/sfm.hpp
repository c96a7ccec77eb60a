#pragma once

#include <Eigen/Core>
#include <optional>
#include <utility>
#include <vector>

#include "deskpose/geometry.hpp"
#include "deskpose/scene.hpp"

namespace deskpose {

// Mutual nearest-neighbor descriptor matching with a ratio test applied in
// both directions. Distances are compared squared, so the test is
// d1 < ratio^2 * d2; a side with fewer than two candidates passes its test.
// Returns (index in a, index in b) pairs, ordered by the first index.
std::vector<std::pair<int, int>> match_views_nn(const Eigen::MatrixXd& desc_a,
                                                const Eigen::MatrixXd& desc_b, double ratio);

struct PairMatches {
  int view_a = 0;
  int view_b = 0;
  std::vector<std::pair<int, int>> pairs;  // (keypoint in view_a, keypoint in view_b)
};

// A multi-view feature track: the connected component of pairwise matches a
// single physical point produced.
struct FeatureTrack {
  int track_id = 0;
  std::vector<std::pair<int, int>> observations;  // (view_id, keypoint index), sorted
  Eigen::MatrixXd descriptors;                    // d x m, column j for observations[j]

  int length() const { return static_cast<int>(observations.size()); }
};

// Connected components of match pairs. Components that claim two different
// keypoints in the same view are contradictory and are dropped whole, as are
// single-observation components. The result is canonical: observations sorted
// by (view, keypoint), tracks sorted by their first observation, ids assigned
// in that order — independent of the order matches were supplied in.
std::vector<FeatureTrack> build_tracks(const std::vector<ViewObservation>& views,
                                       const std::vector<PairMatches>& matches);

// Multi-view midpoint-free DLT triangulation: two linear rows per view, solved
// by SVD. Returns nullopt when the system is rank-deficient (near-parallel
// rays), the homogeneous scale vanishes, or the point falls behind any camera.
std::optional<Eigen::Vector3d> triangulate(const std::vector<PosedCamera>& cameras,
                                           const std::vector<Pixel>& pixels);

// Mean of the track's observation descriptors, unit-normalized. Nullopt when
// the mean direction is numerically zero.
std::optional<Eigen::VectorXd> init_3d_descriptor(const Eigen::MatrixXd& descriptors);

struct MapBuildParams {
  double match_ratio = 0.9;
  double reproj_threshold_px = 3.0;  // mean over the track's observations
  int min_points = 8;
};

// The object map: triangulated points with their tracks and aggregated
// descriptors. Column i of positions/desc3d belongs to tracks[i].
struct ObjectMap {
  std::vector<int> point_ids;
  Eigen::MatrixXd positions;  // 3 x M
  Eigen::MatrixXd desc3d;     // d x M, unit columns
  std::vector<FeatureTrack> tracks;
  BoundingBox3 bbox;

  int num_points() const { return static_cast<int>(point_ids.size()); }
};

// Full mapping pass over a posed scan: exhaustive pairwise matching, track
// building, triangulation, then filtering to points inside the box whose mean
// reprojection error stays under the threshold. Throws ValidationError on
// malformed input and NumericError when fewer than min_points survive.
ObjectMap build_object_map(const std::vector<ViewObservation>& views,
                           const std::vector<PosedCamera>& cameras, const BoundingBox3& bbox,
                           const MapBuildParams& params = {});

}  // namespace deskpose
