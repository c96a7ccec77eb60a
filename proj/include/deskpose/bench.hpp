#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deskpose/matcher.hpp"
#include "deskpose/matcher_train.hpp"
#include "deskpose/scene.hpp"
#include "deskpose/sfm.hpp"
#include "deskpose/solver.hpp"

namespace deskpose {

// Where a query frame's pose estimate stopped, if it did.
enum class SolverStatus {
  kOk,
  kMapFailure,     // the scene's map could not be built at all
  kMatchFailure,   // not enough matches to attempt a pose
  kSolverFailure,  // RANSAC found no acceptable consensus
};

std::string to_string(SolverStatus status);

// One query frame's outcome. Failed frames carry infinite errors so any
// threshold treats them as misses.
struct PoseErrorRecord {
  int view_id = 0;
  double rot_err_deg = 0.0;
  double trans_err_units = 0.0;  // scene units (1 unit = 1 m, so 1 cm = 0.01)
  int num_matches = 0;
  SolverStatus solver_status = SolverStatus::kOk;
};

// Fraction of records with translation error <= t_cm/100 units AND rotation
// error <= t_deg degrees; frames that never produced a pose count as misses.
// Throws ValidationError on an empty record set.
double recall_at(const std::vector<PoseErrorRecord>& records, double t_cm, double t_deg);

// The matching front-ends compared by the ablation harness.
enum class MatcherVariant {
  kGat,            // attention aggregation + attention matching
  kMeanAttention,  // mean aggregation + attention matching
  kMeanNN,         // mean aggregation + mutual nearest neighbor
  kKMeansNN,       // k-means centers + mutual nearest neighbor
};

// Stable lowercase identifier used in reports and CSV files.
std::string variant_name(MatcherVariant variant);

struct ReportRow {
  std::string variant;
  double r1 = 0.0;  // recall at 1 cm / 1 deg
  double r3 = 0.0;  // recall at 3 cm / 3 deg
  double r5 = 0.0;  // recall at 5 cm / 5 deg
  double mean_matches = 0.0;
  double median_ms = 0.0;  // per query frame, warm-up excluded
};

struct BenchmarkReport {
  std::vector<ReportRow> rows;
};

struct PipelineOptions {
  MatcherVariant variant = MatcherVariant::kGat;
  double nn_ratio = 0.9;      // ratio test for the nearest-neighbor variants
  int kmeans_clusters = 4;    // centers per track for the k-means variant
  MapBuildParams map_params;
  RansacConfig ransac;
  uint64_t match_seed = 0;  // track sampling, k-means seeding, per-view solver seeds
};

struct PipelineResult {
  std::vector<PoseErrorRecord> records;  // one per query view, in view order
  std::vector<double> frame_ms;          // wall clock of the timed (post warm-up) frames
  ReportRow row;
};

// Matches and solves every query view of an already-built scene/map pair.
// Query keypoints are first restricted to the view's 2D bounding box. The
// attention variants need weights; the nearest-neighbor variants ignore them.
PipelineResult evaluate_queries(const SyntheticScene& scene, const ObjectMap& map,
                                const PipelineOptions& options, const MatcherWeights* weights);

// One view of the same process, keeping the solved pose. solve is empty when
// matching leaves fewer correspondences than a minimal sample or every RANSAC
// hypothesis is rejected; num_matches is filled either way. Seeded exactly
// like evaluate_queries, so the solve for view v reproduces its record there.
struct LocalizeOutcome {
  std::optional<PnPResult> solve;
  int num_matches = 0;
};
LocalizeOutcome localize_view(const SyntheticScene& scene, const ObjectMap& map, int camera_id,
                              const PipelineOptions& options, const MatcherWeights* weights);

// Full pipeline for one scene: generate, render the map views, build the
// object map, then evaluate_queries. A failed map build yields a record per
// query view marked kMapFailure instead of an exception.
PipelineResult run_pipeline(const SceneConfig& scene_config, const PipelineOptions& options,
                            const MatcherWeights* weights);

// Runs all four variants over the same scenes (scenes in parallel, assembled
// in order) and emits one row per variant, aggregated across scenes.
BenchmarkReport run_ablation(const std::vector<SceneConfig>& scenes,
                             const MatcherWeights& weights, const PipelineOptions& base);

// The default evaluation suite: five noisy scenes with ten query views each,
// seeded from base_seed.
std::vector<SceneConfig> default_eval_suite(uint64_t base_seed);

// A matching training suite whose scene seeds never collide with the
// evaluation suite for the same base_seed.
std::vector<SceneConfig> default_train_suite(uint64_t base_seed, int num_scenes);

// Majority ground-truth scene point id per map point, voted over the track's
// observations (ties to the smaller id). views must be the ones the map was
// built from, in the same order.
std::vector<int> map_point_gt_labels(const ObjectMap& map,
                                     const std::vector<ViewObservation>& views);

// Builds matcher training tensors from scratch for each scene: map descriptors
// and sampled tracks plus per-query-view ground-truth assignments (clutter and
// unmapped points get -1). Scenes whose map cannot be built propagate the
// error.
TrainingSet build_training_set(const std::vector<SceneConfig>& scenes,
                               const MatcherConfig& matcher_config,
                               const MapBuildParams& map_params, uint64_t sample_seed);

}  // namespace deskpose
