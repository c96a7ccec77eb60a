#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "deskpose/matcher.hpp"

namespace deskpose {

// Unit-normalized track mean — the same definition the map builder uses for
// its initial 3D descriptors. Throws NumericError when the mean vanishes.
Eigen::VectorXd aggregate_mean(const Eigen::MatrixXd& track);

// Lloyd's k-means over the track columns with k-means++ seeding, at most 50
// iterations, deterministic in the seed; k is reduced to the track size when
// larger. Returns d x k unit-normalized centers. wcss_history, when given,
// receives the within-cluster sum of squares after each assignment step,
// which never increases.
Eigen::MatrixXd aggregate_kmeans(const Eigen::MatrixXd& track, int k, uint64_t seed,
                                 std::vector<double>* wcss_history = nullptr);

// Mutual nearest-neighbor matching of query descriptors against one
// descriptor per map point, ratio test in both directions (as in the
// two-view matcher, but producing a MatchSet for the pose pipeline).
MatchSet match_nearest_neighbor(const Eigen::MatrixXd& query_desc,
                                const Eigen::MatrixXd& point_desc, double ratio);

// Same rule when each map point carries several centers: the query-to-point
// distance is the smallest distance to any of its centers.
MatchSet match_nearest_neighbor_multi(const Eigen::MatrixXd& query_desc,
                                      const std::vector<Eigen::MatrixXd>& point_centers,
                                      double ratio);

}  // namespace deskpose
