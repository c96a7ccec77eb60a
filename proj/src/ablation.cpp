#include "deskpose/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "deskpose/common.hpp"
#include "deskpose/rng.hpp"

namespace deskpose {

namespace {

// Mutual nearest-neighbor selection on a Q x J squared-distance matrix with a
// bidirectional ratio test; a side with fewer than two candidates passes.
MatchSet mutual_nn_from_distances(const Eigen::MatrixXd& sq_dist, double ratio) {
  if (ratio <= 0.0 || ratio > 1.0) throw ValidationError("match ratio must be in (0, 1]");
  const double ratio_sq = ratio * ratio;
  const Eigen::Index qn = sq_dist.rows(), jn = sq_dist.cols();

  auto two_smallest = [](const Eigen::VectorXd& v, int& best) {
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = d1;
    best = -1;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v[i] < d1) {
        d2 = d1;
        d1 = v[i];
        best = static_cast<int>(i);
      } else if (v[i] < d2) {
        d2 = v[i];
      }
    }
    return std::make_pair(d1, d2);
  };

  std::vector<int> row_best(static_cast<size_t>(qn)), col_best(static_cast<size_t>(jn));
  std::vector<bool> row_ok(static_cast<size_t>(qn)), col_ok(static_cast<size_t>(jn));
  for (Eigen::Index q = 0; q < qn; ++q) {
    auto [d1, d2] = two_smallest(sq_dist.row(q).transpose(), row_best[static_cast<size_t>(q)]);
    row_ok[static_cast<size_t>(q)] = !std::isfinite(d2) || d1 < ratio_sq * d2;
  }
  for (Eigen::Index j = 0; j < jn; ++j) {
    auto [d1, d2] = two_smallest(sq_dist.col(j), col_best[static_cast<size_t>(j)]);
    col_ok[static_cast<size_t>(j)] = !std::isfinite(d2) || d1 < ratio_sq * d2;
  }

  MatchSet set;
  for (Eigen::Index q = 0; q < qn; ++q) {
    if (!row_ok[static_cast<size_t>(q)]) continue;
    int j = row_best[static_cast<size_t>(q)];
    if (col_best[static_cast<size_t>(j)] != q || !col_ok[static_cast<size_t>(j)]) continue;
    set.matches.push_back({static_cast<int>(q), j, 1.0});
  }
  return set;
}

Eigen::MatrixXd normalize_centers(Eigen::MatrixXd centers) {
  for (Eigen::Index j = 0; j < centers.cols(); ++j) {
    double n = centers.col(j).norm();
    if (n > 1e-12) centers.col(j) /= n;
  }
  return centers;
}

}  // namespace

Eigen::VectorXd aggregate_mean(const Eigen::MatrixXd& track) {
  if (track.cols() == 0) throw ValidationError("cannot aggregate an empty track");
  Eigen::VectorXd mean = track.rowwise().mean();
  double n = mean.norm();
  if (n < 1e-12) throw NumericError("track mean vanished");
  return mean / n;
}

Eigen::MatrixXd aggregate_kmeans(const Eigen::MatrixXd& track, int k, uint64_t seed,
                                 std::vector<double>* wcss_history) {
  const int n = static_cast<int>(track.cols());
  if (n == 0) throw ValidationError("cannot aggregate an empty track");
  if (k < 1) throw ValidationError("k must be positive");
  k = std::min(k, n);
  if (wcss_history) wcss_history->clear();

  SplitMix64 rng = stream_rng(seed, Stream::kKMeans);
  Eigen::MatrixXd centers(track.rows(), k);

  // k-means++ seeding: each next center drawn proportionally to the squared
  // distance from the centers chosen so far.
  centers.col(0) = track.col(static_cast<Eigen::Index>(rng.next_below(static_cast<uint64_t>(n))));
  Eigen::VectorXd nearest_sq =
      (track.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
  for (int c = 1; c < k; ++c) {
    double total = nearest_sq.sum();
    Eigen::Index pick;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.next_below(static_cast<uint64_t>(n)));
    } else {
      double r = rng.next_double() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest_sq[i];
        if (r < acc) {
          pick = i;
          break;
        }
      }
    }
    centers.col(c) = track.col(pick);
    nearest_sq =
        nearest_sq.cwiseMin((track.colwise() - centers.col(c)).colwise().squaredNorm().transpose());
  }

  std::vector<int> assignment(static_cast<size_t>(n), -1);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    double wcss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (track.col(i) - centers.col(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double d = (track.col(i) - centers.col(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      wcss += best_d;
      if (assignment[static_cast<size_t>(i)] != best) {
        assignment[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }
    if (wcss_history) wcss_history->push_back(wcss);
    if (!changed) break;

    for (int c = 0; c < k; ++c) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(track.rows());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (assignment[static_cast<size_t>(i)] != c) continue;
        sum += track.col(i);
        ++count;
      }
      if (count > 0) centers.col(c) = sum / count;  // empty clusters keep their center
    }
  }
  return normalize_centers(std::move(centers));
}

MatchSet match_nearest_neighbor(const Eigen::MatrixXd& query_desc,
                                const Eigen::MatrixXd& point_desc, double ratio) {
  if (query_desc.cols() == 0) throw ValidationError("no query descriptors");
  if (query_desc.rows() != point_desc.rows())
    throw ValidationError("descriptor dimensions disagree");
  Eigen::MatrixXd sq_dist(query_desc.cols(), point_desc.cols());
  for (Eigen::Index j = 0; j < point_desc.cols(); ++j)
    sq_dist.col(j) = (query_desc.colwise() - point_desc.col(j)).colwise().squaredNorm();
  return mutual_nn_from_distances(sq_dist, ratio);
}

MatchSet match_nearest_neighbor_multi(const Eigen::MatrixXd& query_desc,
                                      const std::vector<Eigen::MatrixXd>& point_centers,
                                      double ratio) {
  if (query_desc.cols() == 0) throw ValidationError("no query descriptors");
  if (point_centers.empty()) throw ValidationError("no map points to match against");
  Eigen::MatrixXd sq_dist(query_desc.cols(), static_cast<Eigen::Index>(point_centers.size()));
  for (size_t j = 0; j < point_centers.size(); ++j) {
    const Eigen::MatrixXd& centers = point_centers[j];
    if (centers.rows() != query_desc.rows())
      throw ValidationError("descriptor dimensions disagree");
    if (centers.cols() == 0) throw ValidationError("map point without centers");
    for (Eigen::Index q = 0; q < query_desc.cols(); ++q) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < centers.cols(); ++c)
        best = std::min(best, (query_desc.col(q) - centers.col(c)).squaredNorm());
      sq_dist(q, static_cast<Eigen::Index>(j)) = best;
    }
  }
  return mutual_nn_from_distances(sq_dist, ratio);
}

}  // namespace deskpose
