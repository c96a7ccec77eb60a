#include "deskpose/bench.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <unordered_map>

#include "deskpose/ablation.hpp"
#include "deskpose/common.hpp"
#include "deskpose/rng.hpp"

namespace deskpose {

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

bool needs_weights(MatcherVariant variant) {
  return variant == MatcherVariant::kGat || variant == MatcherVariant::kMeanAttention;
}

// Everything share-able across a scene's query frames: one pose-free failure
// prototype plus a per-variant matcher closure.
struct FilteredView {
  std::vector<Pixel> pixels;
  Eigen::MatrixXd descriptors;
};

FilteredView restrict_to_bbox(const ViewObservation& view) {
  std::vector<int> keep;
  for (int k = 0; k < view.num_keypoints(); ++k)
    if (view.bbox2d.contains(view.keypoints[static_cast<size_t>(k)])) keep.push_back(k);
  FilteredView out;
  out.descriptors.resize(view.descriptors.rows(), static_cast<Eigen::Index>(keep.size()));
  for (size_t i = 0; i < keep.size(); ++i) {
    out.pixels.push_back(view.keypoints[static_cast<size_t>(keep[i])]);
    out.descriptors.col(static_cast<Eigen::Index>(i)) = view.descriptors.col(keep[i]);
  }
  return out;
}

PoseErrorRecord failure_record(int view_id, SolverStatus status, int num_matches) {
  PoseErrorRecord rec;
  rec.view_id = view_id;
  rec.rot_err_deg = std::numeric_limits<double>::infinity();
  rec.trans_err_units = std::numeric_limits<double>::infinity();
  rec.num_matches = num_matches;
  rec.solver_status = status;
  return rec;
}

ReportRow summarize(const std::string& variant, const std::vector<PoseErrorRecord>& records,
                    const std::vector<double>& frame_ms) {
  ReportRow row;
  row.variant = variant;
  if (records.empty()) return row;  // a scene without query views scores zero
  row.r1 = recall_at(records, 1.0, 1.0);
  row.r3 = recall_at(records, 3.0, 3.0);
  row.r5 = recall_at(records, 5.0, 5.0);
  double total = 0.0;
  for (const auto& rec : records) total += rec.num_matches;
  row.mean_matches = total / static_cast<double>(records.size());
  row.median_ms = median(frame_ms);
  return row;
}

std::vector<PoseErrorRecord> map_failure_records(const SyntheticScene& scene) {
  std::vector<PoseErrorRecord> records;
  for (int id : scene.query_camera_ids())
    records.push_back(failure_record(id, SolverStatus::kMapFailure, 0));
  return records;
}

}  // namespace

std::string to_string(SolverStatus status) {
  switch (status) {
    case SolverStatus::kOk: return "ok";
    case SolverStatus::kMapFailure: return "map_failure";
    case SolverStatus::kMatchFailure: return "match_failure";
    case SolverStatus::kSolverFailure: return "solver_failure";
  }
  throw ValidationError("unknown solver status");
}

std::string variant_name(MatcherVariant variant) {
  switch (variant) {
    case MatcherVariant::kGat: return "gat";
    case MatcherVariant::kMeanAttention: return "mean_attention";
    case MatcherVariant::kMeanNN: return "mean_nn";
    case MatcherVariant::kKMeansNN: return "kmeans_nn";
  }
  throw ValidationError("unknown matcher variant");
}

double recall_at(const std::vector<PoseErrorRecord>& records, double t_cm, double t_deg) {
  if (records.empty()) throw ValidationError("recall over an empty record set");
  if (t_cm <= 0.0 || t_deg <= 0.0) throw ValidationError("recall thresholds must be positive");
  const double t_units = t_cm / 100.0;
  int hits = 0;
  for (const auto& rec : records) {
    if (rec.solver_status == SolverStatus::kOk && rec.trans_err_units <= t_units &&
        rec.rot_err_deg <= t_deg)
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

// Per-variant matching state, prepared once per scene/map pair and applied to
// any number of query views.
class VariantMatcher {
 public:
  VariantMatcher(const ObjectMap& map, const PipelineOptions& options,
                 const MatcherWeights* weights)
      : map_(map), options_(options), active_(weights) {
    if (needs_weights(options.variant) && weights == nullptr)
      throw ValidationError("attention variants need matcher weights");
    switch (options.variant) {
      case MatcherVariant::kGat:
      case MatcherVariant::kMeanAttention:
        if (options.variant == MatcherVariant::kMeanAttention) {
          local_weights_ = *weights;
          local_weights_.config.aggregation = AggregationMode::kMean;
          active_ = &local_weights_;
        }
        track_feats_ =
            sample_map_tracks(map, active_->config.track_sample, options.match_seed);
        break;
      case MatcherVariant::kMeanNN:
        break;  // map.desc3d already holds the unit track means
      case MatcherVariant::kKMeansNN:
        for (size_t i = 0; i < map.tracks.size(); ++i) {
          uint64_t seed = stream_rng(options.match_seed, Stream::kKMeans,
                                     static_cast<uint64_t>(i)).next_u64();
          centers_.push_back(
              aggregate_kmeans(map_.tracks[i].descriptors, options.kmeans_clusters, seed));
        }
        break;
    }
  }

  MatchSet match(const Eigen::MatrixXd& query_desc) const {
    switch (options_.variant) {
      case MatcherVariant::kGat:
      case MatcherVariant::kMeanAttention: {
        MatchScores scores = matcher_forward(*active_, query_desc, map_.desc3d, track_feats_);
        return select_matches(scores.confidence, active_->config.confidence_threshold);
      }
      case MatcherVariant::kMeanNN:
        return match_nearest_neighbor(query_desc, map_.desc3d, options_.nn_ratio);
      case MatcherVariant::kKMeansNN:
        return match_nearest_neighbor_multi(query_desc, centers_, options_.nn_ratio);
    }
    throw ValidationError("unknown matcher variant");
  }

 private:
  const ObjectMap& map_;
  PipelineOptions options_;
  const MatcherWeights* active_;
  MatcherWeights local_weights_;
  Eigen::MatrixXd track_feats_;
  std::vector<Eigen::MatrixXd> centers_;
};

PipelineResult evaluate_queries(const SyntheticScene& scene, const ObjectMap& map,
                                const PipelineOptions& options, const MatcherWeights* weights) {
  options.ransac.validate();
  const SceneConfig& cfg = scene.config;
  const VariantMatcher matcher(map, options, weights);

  PipelineResult result;
  std::vector<double> all_ms;
  for (int view_id : scene.query_camera_ids()) {
    ViewObservation view = render_view(scene, view_id, cfg.sigma_px, cfg.sigma_desc,
                                       cfg.clutter_rate, cfg.seed);
    const auto started = std::chrono::steady_clock::now();
    auto elapsed_ms = [&started]() {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                       started).count();
    };

    FilteredView filtered = restrict_to_bbox(view);
    if (filtered.pixels.empty()) {
      result.records.push_back(failure_record(view_id, SolverStatus::kMatchFailure, 0));
      all_ms.push_back(elapsed_ms());
      continue;
    }

    MatchSet matches = matcher.match(filtered.descriptors);

    if (matches.size() < options.ransac.sample_size) {
      result.records.push_back(
          failure_record(view_id, SolverStatus::kMatchFailure, matches.size()));
      all_ms.push_back(elapsed_ms());
      continue;
    }

    std::vector<Correspondence2D3D> corrs;
    for (const auto& m : matches.matches)
      corrs.push_back({filtered.pixels[static_cast<size_t>(m.query)],
                       map.positions.col(m.point), m.confidence});
    RansacConfig ransac = options.ransac;
    ransac.seed =
        stream_rng(options.ransac.seed, Stream::kRansac, static_cast<uint64_t>(view_id))
            .next_u64();
    auto solved = ransac_pnp(corrs, scene.camera(view_id).intrinsics, ransac);
    const double ms = elapsed_ms();
    all_ms.push_back(ms);

    if (!solved) {
      result.records.push_back(
          failure_record(view_id, SolverStatus::kSolverFailure, matches.size()));
      continue;
    }
    PoseDelta delta = pose_delta(solved->pose, scene.camera(view_id).camera_from_object);
    PoseErrorRecord rec;
    rec.view_id = view_id;
    rec.rot_err_deg = delta.rotation_deg;
    rec.trans_err_units = delta.translation;
    rec.num_matches = matches.size();
    rec.solver_status = SolverStatus::kOk;
    result.records.push_back(rec);
  }

  // The first frames pay cache and allocator warm-up; drop them from the
  // timing statistics (but never all of them).
  const size_t warmup = std::min<size_t>(3, all_ms.empty() ? 0 : all_ms.size() - 1);
  result.frame_ms.assign(all_ms.begin() + static_cast<long>(warmup), all_ms.end());
  result.row = summarize(variant_name(options.variant), result.records, result.frame_ms);
  return result;
}

LocalizeOutcome localize_view(const SyntheticScene& scene, const ObjectMap& map, int camera_id,
                              const PipelineOptions& options, const MatcherWeights* weights) {
  options.ransac.validate();
  const SceneConfig& cfg = scene.config;
  const VariantMatcher matcher(map, options, weights);

  ViewObservation view =
      render_view(scene, camera_id, cfg.sigma_px, cfg.sigma_desc, cfg.clutter_rate, cfg.seed);
  FilteredView filtered = restrict_to_bbox(view);

  LocalizeOutcome outcome;
  if (filtered.pixels.empty()) return outcome;
  MatchSet matches = matcher.match(filtered.descriptors);
  outcome.num_matches = matches.size();
  if (matches.size() < options.ransac.sample_size) return outcome;

  std::vector<Correspondence2D3D> corrs;
  for (const auto& m : matches.matches)
    corrs.push_back({filtered.pixels[static_cast<size_t>(m.query)], map.positions.col(m.point),
                     m.confidence});
  RansacConfig ransac = options.ransac;
  ransac.seed =
      stream_rng(options.ransac.seed, Stream::kRansac, static_cast<uint64_t>(camera_id)).next_u64();
  outcome.solve = ransac_pnp(corrs, scene.camera(camera_id).intrinsics, ransac);
  return outcome;
}

PipelineResult run_pipeline(const SceneConfig& scene_config, const PipelineOptions& options,
                            const MatcherWeights* weights) {
  scene_config.validate();
  SyntheticScene scene = generate_scene(scene_config);
  std::vector<ViewObservation> views;
  std::vector<PosedCamera> cameras;
  for (int id : scene.map_camera_ids()) {
    views.push_back(render_view(scene, id, scene_config.sigma_px, scene_config.sigma_desc,
                                scene_config.clutter_rate, scene_config.seed));
    cameras.push_back(scene.camera(id));
  }

  ObjectMap map;
  try {
    map = build_object_map(views, cameras, scene.bbox, options.map_params);
  } catch (const NumericError&) {
    PipelineResult result;
    result.records = map_failure_records(scene);
    result.row = summarize(variant_name(options.variant), result.records, result.frame_ms);
    return result;
  }
  return evaluate_queries(scene, map, options, weights);
}

BenchmarkReport run_ablation(const std::vector<SceneConfig>& scenes,
                             const MatcherWeights& weights, const PipelineOptions& base) {
  if (scenes.empty()) throw ValidationError("ablation needs at least one scene");

  // Build every scene and its map once, scenes in parallel.
  struct Prepared {
    SyntheticScene scene;
    std::optional<ObjectMap> map;
  };
  std::vector<std::future<Prepared>> prep_futures;
  for (const SceneConfig& cfg : scenes) {
    prep_futures.push_back(std::async(std::launch::async, [&base, cfg]() {
      cfg.validate();
      Prepared prep{generate_scene(cfg), std::nullopt};
      std::vector<ViewObservation> views;
      std::vector<PosedCamera> cameras;
      for (int id : prep.scene.map_camera_ids()) {
        views.push_back(
            render_view(prep.scene, id, cfg.sigma_px, cfg.sigma_desc, cfg.clutter_rate, cfg.seed));
        cameras.push_back(prep.scene.camera(id));
      }
      try {
        prep.map = build_object_map(views, cameras, prep.scene.bbox, base.map_params);
      } catch (const NumericError&) {
        // Left empty: every variant reports this scene's queries as failed.
      }
      return prep;
    }));
  }
  std::vector<Prepared> prepared;
  for (auto& f : prep_futures) prepared.push_back(f.get());

  const MatcherVariant variants[] = {MatcherVariant::kGat, MatcherVariant::kMeanAttention,
                                     MatcherVariant::kMeanNN, MatcherVariant::kKMeansNN};
  BenchmarkReport report;
  for (MatcherVariant variant : variants) {
    PipelineOptions options = base;
    options.variant = variant;
    std::vector<std::future<PipelineResult>> futures;
    for (const Prepared& prep : prepared) {
      futures.push_back(std::async(std::launch::async, [&options, &weights, &prep]() {
        if (!prep.map.has_value()) {
          PipelineResult result;
          result.records = map_failure_records(prep.scene);
          result.row = summarize(variant_name(options.variant), result.records, result.frame_ms);
          return result;
        }
        return evaluate_queries(prep.scene, *prep.map, options, &weights);
      }));
    }
    std::vector<PoseErrorRecord> records;
    std::vector<double> frame_ms;
    for (auto& f : futures) {
      PipelineResult result = f.get();
      records.insert(records.end(), result.records.begin(), result.records.end());
      frame_ms.insert(frame_ms.end(), result.frame_ms.begin(), result.frame_ms.end());
    }
    report.rows.push_back(summarize(variant_name(variant), records, frame_ms));
  }
  return report;
}

std::vector<SceneConfig> default_eval_suite(uint64_t base_seed) {
  std::vector<SceneConfig> scenes;
  for (uint64_t i = 0; i < 5; ++i) {
    SceneConfig cfg;
    cfg.sigma_desc = 0.15;
    cfg.sigma_px = 1.0;
    cfg.clutter_rate = 0.2;
    cfg.num_query_views = 10;
    cfg.seed = stream_rng(base_seed, Stream::kEval, i).next_u64();
    scenes.push_back(cfg);
  }
  return scenes;
}

std::vector<SceneConfig> default_train_suite(uint64_t base_seed, int num_scenes) {
  if (num_scenes < 1) throw ValidationError("training suite needs at least one scene");
  std::vector<SceneConfig> scenes;
  for (uint64_t i = 0; i < static_cast<uint64_t>(num_scenes); ++i) {
    SceneConfig cfg;
    cfg.sigma_desc = 0.15;
    cfg.sigma_px = 1.0;
    cfg.clutter_rate = 0.2;
    cfg.num_query_views = 10;
    // Ids 100+ keep these scenes disjoint from any evaluation suite drawn from
    // the same base seed.
    cfg.seed = stream_rng(base_seed, Stream::kEval, 100 + i).next_u64();
    scenes.push_back(cfg);
  }
  return scenes;
}

std::vector<int> map_point_gt_labels(const ObjectMap& map,
                                     const std::vector<ViewObservation>& views) {
  std::vector<int> labels;
  for (const FeatureTrack& track : map.tracks) {
    std::map<int, int> votes;
    for (const auto& [view_idx, kp] : track.observations) {
      if (view_idx < 0 || view_idx >= static_cast<int>(views.size()))
        throw ValidationError("track observation outside the given views");
      const ViewObservation& view = views[static_cast<size_t>(view_idx)];
      if (kp < 0 || kp >= view.num_keypoints())
        throw ValidationError("track observation outside its view");
      ++votes[view.gt_point_ids[static_cast<size_t>(kp)]];
    }
    int best_id = -1, best_count = 0;
    for (const auto& [id, count] : votes) {
      if (count > best_count) {  // ascending ids: ties keep the smaller id
        best_id = id;
        best_count = count;
      }
    }
    labels.push_back(best_id);
  }
  return labels;
}

TrainingSet build_training_set(const std::vector<SceneConfig>& scenes,
                               const MatcherConfig& matcher_config,
                               const MapBuildParams& map_params, uint64_t sample_seed) {
  matcher_config.validate();
  TrainingSet data;
  for (size_t s = 0; s < scenes.size(); ++s) {
    const SceneConfig& cfg = scenes[s];
    cfg.validate();
    SyntheticScene scene = generate_scene(cfg);
    std::vector<ViewObservation> views;
    std::vector<PosedCamera> cameras;
    for (int id : scene.map_camera_ids()) {
      views.push_back(render_view(scene, id, cfg.sigma_px, cfg.sigma_desc, cfg.clutter_rate,
                                  cfg.seed));
      cameras.push_back(scene.camera(id));
    }
    ObjectMap map = build_object_map(views, cameras, scene.bbox, map_params);

    std::vector<int> labels = map_point_gt_labels(map, views);
    std::unordered_map<int, int> first_point_with_label;
    for (size_t j = 0; j < labels.size(); ++j)
      if (labels[j] >= 0) first_point_with_label.emplace(labels[j], static_cast<int>(j));

    SceneTensors tensors;
    tensors.point_desc = map.desc3d;
    uint64_t track_seed =
        stream_rng(sample_seed, Stream::kTrackSample, static_cast<uint64_t>(s)).next_u64();
    tensors.track_feats = sample_map_tracks(map, matcher_config.track_sample, track_seed);

    for (int id : scene.query_camera_ids()) {
      ViewObservation view =
          render_view(scene, id, cfg.sigma_px, cfg.sigma_desc, cfg.clutter_rate, cfg.seed);
      TrainingSample sample;
      std::vector<int> gt;
      std::vector<int> keep;
      for (int k = 0; k < view.num_keypoints(); ++k) {
        if (!view.bbox2d.contains(view.keypoints[static_cast<size_t>(k)])) continue;
        keep.push_back(k);
        int point_id = view.gt_point_ids[static_cast<size_t>(k)];
        auto hit = point_id >= 0 ? first_point_with_label.find(point_id)
                                 : first_point_with_label.end();
        gt.push_back(hit == first_point_with_label.end() ? -1 : hit->second);
      }
      if (keep.empty()) continue;  // a query view the detector lost entirely
      sample.query_desc.resize(view.descriptors.rows(), static_cast<Eigen::Index>(keep.size()));
      for (size_t i = 0; i < keep.size(); ++i)
        sample.query_desc.col(static_cast<Eigen::Index>(i)) = view.descriptors.col(keep[i]);
      sample.gt_point_for_query = std::move(gt);
      tensors.samples.push_back(std::move(sample));
    }
    if (tensors.samples.empty())
      throw NumericError("scene produced no usable training views");
    data.push_back(std::move(tensors));
  }
  return data;
}

}  // namespace deskpose
