#include "deskpose/sfm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "deskpose/common.hpp"

namespace deskpose {

namespace {

// Nearest and second-nearest squared distances from column i of a to columns
// of b, with the winning index. First index wins ties so results never depend
// on evaluation order.
struct TwoNearest {
  int best = -1;
  double d1 = std::numeric_limits<double>::infinity();
  double d2 = std::numeric_limits<double>::infinity();
};

TwoNearest two_nearest(const Eigen::MatrixXd& b, const Eigen::VectorXd& query) {
  TwoNearest r;
  for (int j = 0; j < b.cols(); ++j) {
    double d = (b.col(j) - query).squaredNorm();
    if (d < r.d1) {
      r.d2 = r.d1;
      r.d1 = d;
      r.best = j;
    } else if (d < r.d2) {
      r.d2 = d;
    }
  }
  return r;
}

bool passes_ratio(const TwoNearest& n, double ratio_sq) {
  if (!std::isfinite(n.d2)) return true;  // only one candidate
  return n.d1 < ratio_sq * n.d2;
}

// Union-find with path compression; rank-free union keyed on the smaller
// root so merging is order-independent at the representative level.
class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<int> parent_;
};

}  // namespace

std::vector<std::pair<int, int>> match_views_nn(const Eigen::MatrixXd& desc_a,
                                                const Eigen::MatrixXd& desc_b, double ratio) {
  if (desc_a.rows() != desc_b.rows())
    throw ValidationError("descriptor dimensions disagree");
  if (ratio <= 0.0 || ratio > 1.0) throw ValidationError("match ratio must be in (0, 1]");
  const double ratio_sq = ratio * ratio;

  std::vector<TwoNearest> a_to_b(static_cast<size_t>(desc_a.cols()));
  for (int i = 0; i < desc_a.cols(); ++i) a_to_b[static_cast<size_t>(i)] = two_nearest(desc_b, desc_a.col(i));
  std::vector<TwoNearest> b_to_a(static_cast<size_t>(desc_b.cols()));
  for (int j = 0; j < desc_b.cols(); ++j) b_to_a[static_cast<size_t>(j)] = two_nearest(desc_a, desc_b.col(j));

  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < desc_a.cols(); ++i) {
    const TwoNearest& fwd = a_to_b[static_cast<size_t>(i)];
    if (fwd.best < 0 || !passes_ratio(fwd, ratio_sq)) continue;
    const TwoNearest& bwd = b_to_a[static_cast<size_t>(fwd.best)];
    if (bwd.best != i || !passes_ratio(bwd, ratio_sq)) continue;
    pairs.emplace_back(i, fwd.best);
  }
  return pairs;
}

std::vector<FeatureTrack> build_tracks(const std::vector<ViewObservation>& views,
                                       const std::vector<PairMatches>& matches) {
  std::map<int, const ViewObservation*> view_by_id;
  for (const auto& v : views) view_by_id[v.view_id] = &v;

  // Register every matched observation as a node. std::map keeps node numbering
  // canonical in (view, keypoint) order regardless of match order.
  std::map<std::pair<int, int>, int> node_of;
  auto register_node = [&](int view, int kp) {
    auto it = view_by_id.find(view);
    if (it == view_by_id.end()) throw ValidationError("match references unknown view");
    if (kp < 0 || kp >= it->second->num_keypoints())
      throw ValidationError("match references keypoint out of range");
    node_of.emplace(std::make_pair(view, kp), 0);
  };
  for (const auto& pm : matches) {
    for (const auto& [ka, kb] : pm.pairs) {
      register_node(pm.view_a, ka);
      register_node(pm.view_b, kb);
    }
  }
  int next = 0;
  for (auto& [key, idx] : node_of) idx = next++;

  DisjointSets sets(next);
  for (const auto& pm : matches)
    for (const auto& [ka, kb] : pm.pairs)
      sets.unite(node_of.at({pm.view_a, ka}), node_of.at({pm.view_b, kb}));

  std::map<int, std::vector<std::pair<int, int>>> components;
  for (const auto& [key, idx] : node_of) components[sets.find(idx)].push_back(key);

  std::vector<FeatureTrack> tracks;
  for (auto& [root, obs] : components) {
    if (obs.size() < 2) continue;
    std::sort(obs.begin(), obs.end());
    bool conflict = false;
    for (size_t i = 1; i < obs.size(); ++i)
      if (obs[i].first == obs[i - 1].first) conflict = true;
    if (conflict) continue;

    FeatureTrack t;
    t.observations = std::move(obs);
    const int d = static_cast<int>(views.front().descriptors.rows());
    t.descriptors.resize(d, static_cast<Eigen::Index>(t.observations.size()));
    for (size_t j = 0; j < t.observations.size(); ++j) {
      const auto& [view, kp] = t.observations[j];
      t.descriptors.col(static_cast<Eigen::Index>(j)) = view_by_id.at(view)->descriptors.col(kp);
    }
    tracks.push_back(std::move(t));
  }

  std::sort(tracks.begin(), tracks.end(), [](const FeatureTrack& a, const FeatureTrack& b) {
    return a.observations.front() < b.observations.front();
  });
  for (size_t i = 0; i < tracks.size(); ++i) tracks[i].track_id = static_cast<int>(i);
  return tracks;
}

std::optional<Eigen::Vector3d> triangulate(const std::vector<PosedCamera>& cameras,
                                           const std::vector<Pixel>& pixels) {
  if (cameras.size() != pixels.size()) throw ValidationError("camera/pixel count mismatch");
  if (cameras.size() < 2) throw ValidationError("triangulation needs at least two views");

  Eigen::MatrixXd a(2 * cameras.size(), 4);
  for (size_t i = 0; i < cameras.size(); ++i) {
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = cameras[i].camera_from_object.rotation_matrix();
    p.col(3) = cameras[i].camera_from_object.translation();
    p = cameras[i].intrinsics.matrix() * p;
    a.row(static_cast<Eigen::Index>(2 * i)) = pixels[i].u * p.row(2) - p.row(0);
    a.row(static_cast<Eigen::Index>(2 * i + 1)) = pixels[i].v * p.row(2) - p.row(1);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  // A well-posed system has a one-dimensional nullspace. When the
  // second-smallest singular value also collapses the rays are parallel (for
  // example a zero baseline) and any solution would be arbitrary.
  if (sv(2) < 1e-9 * sv(0)) return std::nullopt;
  Eigen::Vector4d x = svd.matrixV().col(3);
  if (std::abs(x(3)) < 1e-12) return std::nullopt;
  Eigen::Vector3d point = x.head<3>() / x(3);

  for (const auto& cam : cameras)
    if (cam.camera_from_object.apply(point).z() <= kDepthEpsilon) return std::nullopt;
  return point;
}

std::optional<Eigen::VectorXd> init_3d_descriptor(const Eigen::MatrixXd& descriptors) {
  if (descriptors.cols() == 0) return std::nullopt;
  Eigen::VectorXd mean = descriptors.rowwise().mean();
  double n = mean.norm();
  if (n < 1e-12) return std::nullopt;
  return mean / n;
}

ObjectMap build_object_map(const std::vector<ViewObservation>& views,
                           const std::vector<PosedCamera>& cameras, const BoundingBox3& bbox,
                           const MapBuildParams& params) {
  if (views.size() < 2) throw ValidationError("mapping needs at least two views");
  if (!bbox.valid()) throw ValidationError("mapping box is degenerate");
  if (params.min_points < 1) throw ValidationError("min_points must be positive");

  std::map<int, const PosedCamera*> cam_by_id;
  for (const auto& c : cameras) cam_by_id[c.id] = &c;
  for (const auto& v : views)
    if (!cam_by_id.count(v.view_id)) throw ValidationError("view without a posed camera");

  std::vector<PairMatches> matches;
  for (size_t i = 0; i < views.size(); ++i) {
    for (size_t j = i + 1; j < views.size(); ++j) {
      PairMatches pm;
      pm.view_a = views[i].view_id;
      pm.view_b = views[j].view_id;
      pm.pairs = match_views_nn(views[i].descriptors, views[j].descriptors, params.match_ratio);
      if (!pm.pairs.empty()) matches.push_back(std::move(pm));
    }
  }

  std::map<int, const ViewObservation*> view_by_id;
  for (const auto& v : views) view_by_id[v.view_id] = &v;

  ObjectMap map;
  map.bbox = bbox;
  std::vector<Eigen::Vector3d> kept_positions;
  std::vector<Eigen::VectorXd> kept_descs;

  for (FeatureTrack& track : build_tracks(views, matches)) {
    std::vector<PosedCamera> cams;
    std::vector<Pixel> pixels;
    for (const auto& [view, kp] : track.observations) {
      cams.push_back(*cam_by_id.at(view));
      pixels.push_back(view_by_id.at(view)->keypoints[static_cast<size_t>(kp)]);
    }
    auto point = triangulate(cams, pixels);
    if (!point || !contains(bbox, *point)) continue;

    double err_sum = 0.0;
    bool projects = true;
    for (size_t i = 0; i < cams.size(); ++i) {
      auto px = project(cams[i].intrinsics, cams[i].camera_from_object, *point);
      if (!px) {
        projects = false;
        break;
      }
      err_sum += std::hypot(px->u - pixels[i].u, px->v - pixels[i].v);
    }
    if (!projects || err_sum / static_cast<double>(cams.size()) > params.reproj_threshold_px)
      continue;

    auto desc = init_3d_descriptor(track.descriptors);
    if (!desc) continue;

    track.track_id = static_cast<int>(kept_positions.size());
    map.point_ids.push_back(track.track_id);
    map.tracks.push_back(std::move(track));
    kept_positions.push_back(*point);
    kept_descs.push_back(std::move(*desc));
  }

  if (static_cast<int>(kept_positions.size()) < params.min_points)
    throw NumericError("mapping kept " + std::to_string(kept_positions.size()) +
                       " points, fewer than the required " + std::to_string(params.min_points));

  map.positions.resize(3, static_cast<Eigen::Index>(kept_positions.size()));
  map.desc3d.resize(kept_descs.front().size(), static_cast<Eigen::Index>(kept_descs.size()));
  for (size_t i = 0; i < kept_positions.size(); ++i) {
    map.positions.col(static_cast<Eigen::Index>(i)) = kept_positions[i];
    map.desc3d.col(static_cast<Eigen::Index>(i)) = kept_descs[i];
  }
  return map;
}

}  // namespace deskpose
