// deskpose: desk-scale one-shot object pose estimation from synthetic scenes.
//
// Subcommands cover the full pipeline: synthesize a scene, build its object
// map, train matcher weights, localize single views, evaluate query sets,
// run the matcher ablation, and check analytic gradients. Every random
// decision is derived from an explicit --seed, so each command is
// reproducible byte for byte.
//
// Exit codes: 0 success, 2 invalid inputs or configuration, 3 numerical
// failure (degenerate geometry, diverging training, failed gradient check).
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deskpose/bench.hpp"
#include "deskpose/common.hpp"
#include "deskpose/matcher.hpp"
#include "deskpose/matcher_train.hpp"
#include "deskpose/scene.hpp"
#include "deskpose/serialization.hpp"
#include "deskpose/sfm.hpp"
#include "deskpose/solver.hpp"

namespace {

using namespace deskpose;

MatcherVariant parse_variant(const std::string& name) {
  if (name == "gat") return MatcherVariant::kGat;
  if (name == "mean_attention") return MatcherVariant::kMeanAttention;
  if (name == "mean_nn") return MatcherVariant::kMeanNN;
  if (name == "kmeans_nn") return MatcherVariant::kKMeansNN;
  throw ValidationError("unknown variant '" + name +
                        "' (expected gat, mean_attention, mean_nn, or kmeans_nn)");
}

// Flags shared by localize and eval: which matcher to run and how to solve.
struct MatchSolveArgs {
  std::string weights_path;
  std::string variant = "gat";
  double nn_ratio = 0.9;
  int kmeans_clusters = 4;
  int iterations = 1000;
  double threshold_px = 3.0;
  int min_inliers = 8;
  uint64_t seed = 0;

  void register_on(CLI::App* cmd) {
    cmd->add_option("--weights", weights_path,
                    "Matcher weights file (required for the attention variants)");
    cmd->add_option("--variant", variant,
                    "Matcher variant: gat, mean_attention, mean_nn, kmeans_nn")
        ->capture_default_str();
    cmd->add_option("--nn-ratio", nn_ratio, "Ratio test for the NN variants")
        ->capture_default_str();
    cmd->add_option("--clusters", kmeans_clusters, "Centers per track for kmeans_nn")
        ->capture_default_str();
    cmd->add_option("--iterations", iterations, "RANSAC iterations")->capture_default_str();
    cmd->add_option("--threshold-px", threshold_px, "RANSAC inlier threshold in pixels")
        ->capture_default_str();
    cmd->add_option("--min-inliers", min_inliers, "Minimum inlier support for a pose")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for track sampling, k-means, and the solver")
        ->capture_default_str();
  }

  PipelineOptions options() const {
    PipelineOptions opts;
    opts.variant = parse_variant(variant);
    opts.nn_ratio = nn_ratio;
    opts.kmeans_clusters = kmeans_clusters;
    opts.ransac.iterations = iterations;
    opts.ransac.inlier_threshold_px = threshold_px;
    opts.ransac.min_inliers = min_inliers;
    opts.ransac.seed = seed;
    opts.match_seed = seed;
    return opts;
  }

  std::optional<MatcherWeights> load() const {
    if (weights_path.empty()) return std::nullopt;
    return load_weights(weights_path);
  }
};

std::vector<ViewObservation> render_map_scan(const SyntheticScene& scene) {
  const SceneConfig& cfg = scene.config;
  std::vector<ViewObservation> views;
  for (int id : scene.map_camera_ids())
    views.push_back(
        render_view(scene, id, cfg.sigma_px, cfg.sigma_desc, cfg.clutter_rate, cfg.seed));
  return views;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"deskpose: one-shot object pose estimation on synthetic desk scenes"};
  app.require_subcommand(1);

  // ---- synth ----
  SceneConfig synth_cfg;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic scene and write it as JSON");
  synth->add_option("--out", synth_out, "Output scene JSON path")->required();
  synth->add_option("--seed", synth_cfg.seed, "Scene seed")->capture_default_str();
  synth->add_option("--points", synth_cfg.num_points, "Object points")->capture_default_str();
  synth->add_option("--map-views", synth_cfg.num_map_views, "Mapping scan views")
      ->capture_default_str();
  synth->add_option("--query-views", synth_cfg.num_query_views, "Query views")
      ->capture_default_str();
  synth->add_option("--dim", synth_cfg.descriptor_dim, "Descriptor dimension")
      ->capture_default_str();
  synth->add_option("--sigma-desc", synth_cfg.sigma_desc, "Descriptor noise std")
      ->capture_default_str();
  synth->add_option("--sigma-px", synth_cfg.sigma_px, "Keypoint noise std in pixels")
      ->capture_default_str();
  synth->add_option("--clutter", synth_cfg.clutter_rate, "Spurious keypoints per real one")
      ->capture_default_str();
  synth->add_option("--orbit-radius", synth_cfg.orbit_radius, "Camera orbit radius")
      ->capture_default_str();
  synth->callback([&] {
    SyntheticScene scene = generate_scene(synth_cfg);
    save_json(synth_out, scene_to_json(scene));
    std::cout << "scene with " << scene.points.size() << " points and " << scene.cameras.size()
              << " cameras -> " << synth_out << '\n';
  });

  // ---- map ----
  std::string map_scene_path, map_out;
  MapBuildParams map_params;
  CLI::App* mapc = app.add_subcommand("map", "Build the object map from a scene's mapping scan");
  mapc->add_option("--scene", map_scene_path, "Scene JSON path")->required();
  mapc->add_option("--out", map_out, "Output map JSON path")->required();
  mapc->add_option("--match-ratio", map_params.match_ratio, "Pairwise ratio-test threshold")
      ->capture_default_str();
  mapc->add_option("--reproj-px", map_params.reproj_threshold_px,
                   "Mean reprojection gate per track, pixels")
      ->capture_default_str();
  mapc->add_option("--min-points", map_params.min_points, "Minimum surviving map points")
      ->capture_default_str();
  mapc->callback([&] {
    SyntheticScene scene = scene_from_json(load_json(map_scene_path));
    std::vector<ViewObservation> views = render_map_scan(scene);
    std::vector<PosedCamera> cameras;
    for (int id : scene.map_camera_ids()) cameras.push_back(scene.camera(id));
    ObjectMap map = build_object_map(views, cameras, scene.bbox, map_params);
    save_json(map_out, map_to_json(map));
    std::cout << "object map with " << map.positions.cols() << " points -> " << map_out << '\n';
  });

  // ---- train ----
  std::string train_out, train_loss_csv;
  uint64_t train_seed = 0;
  int train_scenes = 4;
  MatcherConfig train_mc;
  TrainConfig train_tc;
  CLI::App* trainc =
      app.add_subcommand("train", "Train matcher weights on generated scenes, write loss CSV");
  trainc->add_option("--out", train_out, "Output weights path")->required();
  trainc->add_option("--loss-csv", train_loss_csv, "Optional loss curve CSV path");
  trainc->add_option("--seed", train_seed, "Seed for scenes, init, and batches")
      ->capture_default_str();
  trainc->add_option("--scenes", train_scenes, "Training scenes to generate")
      ->capture_default_str();
  trainc->add_option("--groups", train_mc.num_groups, "Attention groups")->capture_default_str();
  trainc->add_option("--dim", train_mc.descriptor_dim, "Descriptor dimension")
      ->capture_default_str();
  trainc->add_option("--track-sample", train_mc.track_sample, "Track features per point")
      ->capture_default_str();
  trainc->add_option("--steps", train_tc.steps, "Optimization steps")->capture_default_str();
  trainc->add_option("--lr", train_tc.learning_rate, "Learning rate")->capture_default_str();
  trainc->add_option("--batch", train_tc.batch_views, "Views per step")->capture_default_str();
  trainc->add_option("--gamma", train_tc.focal_gamma, "Focal loss exponent")
      ->capture_default_str();
  trainc->callback([&] {
    train_tc.seed = train_seed;
    std::vector<SceneConfig> configs = default_train_suite(train_seed, train_scenes);
    for (SceneConfig& cfg : configs) cfg.descriptor_dim = train_mc.descriptor_dim;
    TrainingSet data = build_training_set(configs, train_mc, MapBuildParams{}, train_seed);
    TrainResult result = train(data, train_mc, train_tc);
    save_weights(train_out, result.weights);
    if (!train_loss_csv.empty()) save_text(train_loss_csv, loss_curve_to_csv(result.loss_curve));
    std::cout << "trained " << result.weights.parameter_count() << " parameters over "
              << train_tc.steps << " steps: loss " << result.loss_curve.front() << " -> "
              << result.loss_curve.back() << ", weights -> " << train_out << '\n';
  });

  // ---- localize ----
  std::string loc_scene_path, loc_map_path, loc_out;
  int loc_view = -1;
  MatchSolveArgs loc_args;
  CLI::App* loc = app.add_subcommand("localize", "Solve one query view against a map");
  loc->add_option("--scene", loc_scene_path, "Scene JSON path")->required();
  loc->add_option("--map", loc_map_path, "Map JSON path")->required();
  loc->add_option("--view", loc_view, "Query camera id")->required();
  loc->add_option("--out", loc_out, "Output pose JSON path")->required();
  loc_args.register_on(loc);
  loc->callback([&] {
    SyntheticScene scene = scene_from_json(load_json(loc_scene_path));
    ObjectMap map = map_from_json(load_json(loc_map_path));
    std::optional<MatcherWeights> weights = loc_args.load();
    LocalizeOutcome outcome = localize_view(scene, map, loc_view, loc_args.options(),
                                            weights ? &*weights : nullptr);
    if (!outcome.solve)
      throw NumericError("view " + std::to_string(loc_view) + " could not be localized (" +
                         std::to_string(outcome.num_matches) + " matches)");
    save_json(loc_out, pose_to_json(loc_view, *outcome.solve, outcome.num_matches));
    std::cout << "view " << loc_view << ": " << outcome.solve->inlier_indices.size() << "/"
              << outcome.num_matches << " matches inline, mean reprojection "
              << outcome.solve->mean_reproj_error << " px -> " << loc_out << '\n';
  });

  // ---- eval ----
  std::string eval_scene_path, eval_map_path, eval_out;
  MatchSolveArgs eval_args;
  CLI::App* evalc = app.add_subcommand("eval", "Evaluate every query view of a scene against a map");
  evalc->add_option("--scene", eval_scene_path, "Scene JSON path")->required();
  evalc->add_option("--map", eval_map_path, "Map JSON path")->required();
  evalc->add_option("--out", eval_out, "Output records CSV path")->required();
  eval_args.register_on(evalc);
  evalc->callback([&] {
    SyntheticScene scene = scene_from_json(load_json(eval_scene_path));
    ObjectMap map = map_from_json(load_json(eval_map_path));
    std::optional<MatcherWeights> weights = eval_args.load();
    PipelineResult result =
        evaluate_queries(scene, map, eval_args.options(), weights ? &*weights : nullptr);
    save_text(eval_out, records_to_csv(result.records));
    std::cout << result.row.variant << ": recall " << result.row.r1 << " / " << result.row.r3
              << " / " << result.row.r5 << " at 1/3/5 cm-deg over " << result.records.size()
              << " views -> " << eval_out << '\n';
  });

  // ---- ablate ----
  std::string abl_weights_path, abl_out, abl_json;
  uint64_t abl_seed = 0;
  int abl_scenes = 5;
  MatchSolveArgs abl_args;
  CLI::App* abl = app.add_subcommand("ablate", "Compare all matcher variants on a scene suite");
  abl->add_option("--weights", abl_weights_path, "Trained matcher weights")->required();
  abl->add_option("--out", abl_out, "Output report CSV path")->required();
  abl->add_option("--report-json", abl_json, "Optional report JSON path");
  abl->add_option("--seed", abl_seed, "Evaluation suite seed")->capture_default_str();
  abl->add_option("--scenes", abl_scenes, "Scenes in the suite (at most 5)")
      ->capture_default_str();
  abl->callback([&] {
    MatcherWeights weights = load_weights(abl_weights_path);
    std::vector<SceneConfig> suite = default_eval_suite(abl_seed);
    if (abl_scenes < 1 || abl_scenes > static_cast<int>(suite.size()))
      throw ValidationError("--scenes must be in [1, " + std::to_string(suite.size()) + "]");
    suite.resize(static_cast<size_t>(abl_scenes));
    for (SceneConfig& cfg : suite) cfg.descriptor_dim = weights.config.descriptor_dim;
    PipelineOptions base;
    base.match_seed = abl_seed;
    base.ransac.seed = abl_seed;
    BenchmarkReport report = run_ablation(suite, weights, base);
    save_text(abl_out, report_to_csv(report));
    if (!abl_json.empty()) save_json(abl_json, report_to_json(report));
    std::cout << report_to_csv(report) << "report -> " << abl_out << '\n';
  });

  // ---- gradcheck ----
  GradCheckOptions gc;
  CLI::App* gcc = app.add_subcommand(
      "gradcheck", "Compare analytic matcher gradients against finite differences");
  gcc->add_option("--seed", gc.base_seed, "Base seed for the random instances")
      ->capture_default_str();
  gcc->add_option("--seeds", gc.num_seeds, "Number of instances")->capture_default_str();
  gcc->add_option("--dim", gc.descriptor_dim, "Descriptor dimension")->capture_default_str();
  gcc->add_option("--groups", gc.num_groups, "Attention groups")->capture_default_str();
  gcc->add_option("--points", gc.num_points, "Map points per instance")->capture_default_str();
  gcc->add_option("--queries", gc.num_queries, "Query descriptors per instance")
      ->capture_default_str();
  gcc->add_option("--track-sample", gc.track_sample, "Track features per point")
      ->capture_default_str();
  gcc->add_option("--gamma", gc.focal_gamma, "Focal loss exponent")->capture_default_str();
  gcc->add_option("--fd-step", gc.fd_step, "Finite-difference step")->capture_default_str();
  gcc->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  gcc->callback([&] {
    GradCheckResult result = gradient_check(gc);
    std::cout << "checked " << result.parameters_checked << " parameters over " << gc.num_seeds
              << " instances: max relative error " << result.max_rel_error << '\n';
    if (!result.passed)
      throw NumericError("gradient check failed: max relative error " +
                         std::to_string(result.max_rel_error) + " (seed " +
                         std::to_string(result.worst_seed) + ", parameter " +
                         std::to_string(result.worst_parameter) + ")");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);       // prints the message or requested help text
    return code == 0 ? 0 : 2;           // any command-line mistake is a validation error
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const deskpose::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const deskpose::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
}
