// Benchmark harness and on-disk formats: recall accounting, ground-truth
// labeling, training-set assembly, end-to-end pipelines over all matcher
// variants, and the JSON/CSV/weights round trips.
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deskpose/bench.hpp"
#include "deskpose/common.hpp"
#include "deskpose/matcher.hpp"
#include "deskpose/matcher_train.hpp"
#include "deskpose/rng.hpp"
#include "deskpose/scene.hpp"
#include "deskpose/serialization.hpp"
#include "deskpose/sfm.hpp"
#include "deskpose/solver.hpp"
#include "doctest.h"

namespace deskpose {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

PoseErrorRecord ok_record(int view_id, double rot_deg, double trans_units, int matches = 20) {
  PoseErrorRecord rec;
  rec.view_id = view_id;
  rec.rot_err_deg = rot_deg;
  rec.trans_err_units = trans_units;
  rec.num_matches = matches;
  rec.solver_status = SolverStatus::kOk;
  return rec;
}

PoseErrorRecord failed_record(int view_id, SolverStatus status) {
  PoseErrorRecord rec;
  rec.view_id = view_id;
  rec.rot_err_deg = kInf;
  rec.trans_err_units = kInf;
  rec.num_matches = 0;
  rec.solver_status = status;
  return rec;
}

SceneConfig small_config(uint64_t seed, int points = 80, int map_views = 8, int query_views = 3,
                         int dim = 16) {
  SceneConfig cfg;
  cfg.num_points = points;
  cfg.num_map_views = map_views;
  cfg.num_query_views = query_views;
  cfg.descriptor_dim = dim;
  cfg.seed = seed;
  return cfg;
}

// Renders the mapping scan of a scene with per-view seeds, mirroring what the
// pipeline consumes, but under the test's control.
std::vector<ViewObservation> render_map_views(const SyntheticScene& scene, double sigma_px,
                                              double sigma_desc, double clutter,
                                              uint64_t seed_base) {
  std::vector<ViewObservation> views;
  for (int id : scene.map_camera_ids())
    views.push_back(
        render_view(scene, id, sigma_px, sigma_desc, clutter, seed_base + static_cast<uint64_t>(id)));
  return views;
}

TEST_CASE("recall counts poses under both thresholds at once") {
  SUBCASE("both errors must clear their threshold") {
    CHECK(recall_at({ok_record(0, 0.9, 0.009)}, 1.0, 1.0) == 1.0);
    CHECK(recall_at({ok_record(0, 0.9, 0.020)}, 1.0, 1.0) == 0.0);  // translation too large
    CHECK(recall_at({ok_record(0, 2.0, 0.005)}, 1.0, 1.0) == 0.0);  // rotation too large
    CHECK(recall_at({ok_record(0, 0.9, 0.020)}, 3.0, 3.0) == 1.0);
  }

  SUBCASE("thresholds are inclusive") {
    CHECK(recall_at({ok_record(0, 1.0, 0.01)}, 1.0, 1.0) == 1.0);
  }

  SUBCASE("hand-enumerated mixed set") {
    std::vector<PoseErrorRecord> recs{ok_record(0, 0.2, 0.004), ok_record(1, 0.9, 0.009),
                                      ok_record(2, 1.5, 0.012), ok_record(3, 2.9, 0.029),
                                      ok_record(4, 10.0, 0.200)};
    CHECK(recall_at(recs, 1.0, 1.0) == doctest::Approx(2.0 / 5.0));
    CHECK(recall_at(recs, 3.0, 3.0) == doctest::Approx(4.0 / 5.0));
    CHECK(recall_at(recs, 5.0, 5.0) == doctest::Approx(4.0 / 5.0));
  }

  SUBCASE("failed frames are misses at any threshold") {
    std::vector<PoseErrorRecord> recs{ok_record(0, 0.1, 0.001),
                                      failed_record(1, SolverStatus::kSolverFailure),
                                      failed_record(2, SolverStatus::kMatchFailure),
                                      failed_record(3, SolverStatus::kMapFailure)};
    CHECK(recall_at(recs, 1.0, 1.0) == doctest::Approx(0.25));
    CHECK(recall_at(recs, 1e9, 1e9) == doctest::Approx(0.25));
  }

  SUBCASE("recall is monotone in both thresholds") {
    SplitMix64 rng = stream_rng(77, Stream::kEval, 0);
    std::vector<PoseErrorRecord> recs;
    for (int i = 0; i < 60; ++i)
      recs.push_back(ok_record(i, rng.next_uniform(0.0, 8.0), rng.next_uniform(0.0, 0.08)));
    double prev = 0.0;
    for (double t : {0.5, 1.0, 2.0, 3.0, 5.0, 8.0}) {
      double r = recall_at(recs, t, t);
      CHECK(r >= prev);
      prev = r;
    }
    CHECK(recall_at(recs, 9.0, 9.0) == 1.0);
  }

  SUBCASE("rejects empty sets and non-positive thresholds") {
    CHECK_THROWS_AS(recall_at({}, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(recall_at({ok_record(0, 0.1, 0.001)}, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(recall_at({ok_record(0, 0.1, 0.001)}, 1.0, -1.0), ValidationError);
  }
}

TEST_CASE("map points inherit the majority ground-truth label of their track") {
  SUBCASE("hand-built votes") {
    auto make_view = [](int view_id, std::vector<int> gt) {
      ViewObservation v;
      v.view_id = view_id;
      v.keypoints.resize(gt.size());
      v.descriptors = Eigen::MatrixXd::Zero(4, static_cast<int>(gt.size()));
      v.gt_point_ids = std::move(gt);
      return v;
    };
    std::vector<ViewObservation> views{make_view(0, {7, 9}), make_view(1, {7, 4}),
                                       make_view(2, {3, 4})};

    ObjectMap map;
    map.point_ids = {0, 1};
    map.positions = Eigen::MatrixXd::Zero(3, 2);
    map.desc3d = Eigen::MatrixXd::Zero(4, 2);
    FeatureTrack majority;  // labels 7, 7, 3 -> 7 wins
    majority.track_id = 0;
    majority.observations = {{0, 0}, {1, 0}, {2, 0}};
    FeatureTrack tie;  // labels 9, 4 -> tie broken toward 4
    tie.track_id = 1;
    tie.observations = {{0, 1}, {1, 1}};
    map.tracks = {majority, tie};

    CHECK(map_point_gt_labels(map, views) == std::vector<int>{7, 4});

    FeatureTrack stray = majority;
    stray.observations.push_back({5, 0});  // no view 5 was given
    map.tracks = {stray};
    CHECK_THROWS_AS(map_point_gt_labels(map, views), ValidationError);
  }

  SUBCASE("a clean scene labels every map point with its true source") {
    SyntheticScene scene = generate_scene(small_config(91));
    std::vector<ViewObservation> views = render_map_views(scene, 0.0, 0.0, 0.0, 100);
    ObjectMap map = build_object_map(views, scene.cameras, scene.bbox);
    std::vector<int> labels = map_point_gt_labels(map, views);

    REQUIRE(labels.size() == map.tracks.size());
    std::vector<int> seen;
    for (size_t j = 0; j < labels.size(); ++j) {
      REQUIRE(labels[j] >= 0);
      seen.push_back(labels[j]);
      const ScenePoint& gt = scene.points[static_cast<size_t>(labels[j])];
      CHECK(gt.id == labels[j]);
      CHECK((map.positions.col(static_cast<int>(j)) - gt.position).norm() < 1e-6);
    }
    std::sort(seen.begin(), seen.end());
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());  // one point, one label
  }
}

TEST_CASE("training sets carry map descriptors, sampled tracks, and true assignments") {
  SceneConfig cfg = small_config(123, 60, 6, 3);
  MatcherConfig mc;
  mc.num_groups = 2;
  mc.descriptor_dim = 16;
  mc.track_sample = 4;

  TrainingSet set = build_training_set({cfg}, mc, {}, 5);
  REQUIRE(set.size() == 1);
  const SceneTensors& scene_tensors = set[0];
  const int num_points = static_cast<int>(scene_tensors.point_desc.cols());

  REQUIRE(num_points >= 8);
  CHECK(scene_tensors.point_desc.rows() == 16);
  CHECK(scene_tensors.track_feats.rows() == 16);
  CHECK(scene_tensors.track_feats.cols() == num_points * mc.track_sample);
  for (int j = 0; j < num_points; ++j)
    CHECK(scene_tensors.point_desc.col(j).norm() == doctest::Approx(1.0).epsilon(1e-9));

  REQUIRE(scene_tensors.samples.size() == 3);  // every noise-free query view is usable
  int assigned = 0, total = 0;
  for (const TrainingSample& sample : scene_tensors.samples) {
    const int queries = static_cast<int>(sample.query_desc.cols());
    REQUIRE(queries > 0);
    REQUIRE(sample.gt_point_for_query.size() == static_cast<size_t>(queries));
    for (int q = 0; q < queries; ++q) {
      const int j = sample.gt_point_for_query[static_cast<size_t>(q)];
      REQUIRE(j >= -1);
      REQUIRE(j < num_points);
      ++total;
      if (j < 0) continue;
      ++assigned;
      // Noise-free descriptors are the latent itself on both sides, so a
      // correct assignment means literal equality.
      CHECK((sample.query_desc.col(q) - scene_tensors.point_desc.col(j)).norm() < 1e-9);
    }
  }
  CHECK(assigned > total / 2);  // without clutter, most detections are mapped points

  TrainingSet again = build_training_set({cfg}, mc, {}, 5);
  CHECK(again[0].point_desc == scene_tensors.point_desc);
  CHECK(again[0].track_feats == scene_tensors.track_feats);
  CHECK(again[0].samples[1].gt_point_for_query == scene_tensors.samples[1].gt_point_for_query);

  // Seed sensitivity only shows on noisy tracks: noise-free observations of a
  // track are all the same latent, so any sample of them is equal.
  SceneConfig noisy = cfg;
  noisy.sigma_desc = 0.1;
  Eigen::MatrixXd feats5 = build_training_set({noisy}, mc, {}, 5)[0].track_feats;
  Eigen::MatrixXd feats6 = build_training_set({noisy}, mc, {}, 6)[0].track_feats;
  CHECK(feats5 != feats6);
}

TEST_CASE("a noise-free scene localizes every query view exactly") {
  SceneConfig cfg = small_config(41, 120, 10, 5, 32);
  PipelineOptions options;
  options.variant = MatcherVariant::kMeanNN;

  PipelineResult result = run_pipeline(cfg, options, nullptr);

  REQUIRE(result.records.size() == 5);
  for (const PoseErrorRecord& rec : result.records) {
    CHECK(rec.solver_status == SolverStatus::kOk);
    CHECK(rec.rot_err_deg < 0.01);
    CHECK(rec.trans_err_units < 1e-4);
    CHECK(rec.num_matches >= 10);
  }
  CHECK(result.row.r1 == 1.0);
  CHECK(result.row.variant == "mean_nn");
  CHECK(result.frame_ms.size() == 2);  // three warm-up frames dropped from five
  for (double ms : result.frame_ms) CHECK(ms >= 0.0);
}

TEST_CASE("pipelines are deterministic for fixed seeds") {
  SceneConfig cfg = small_config(52, 80, 8, 4);
  cfg.sigma_desc = 0.1;
  cfg.sigma_px = 0.5;
  cfg.clutter_rate = 0.2;

  MatcherConfig mc;
  mc.num_groups = 2;
  mc.descriptor_dim = 16;
  mc.track_sample = 4;
  MatcherWeights weights = MatcherWeights::random_init(mc, 7);

  PipelineOptions options;
  options.variant = MatcherVariant::kGat;
  options.match_seed = 9;
  options.ransac.seed = 13;

  PipelineResult a = run_pipeline(cfg, options, &weights);
  PipelineResult b = run_pipeline(cfg, options, &weights);

  REQUIRE(a.records.size() == b.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].view_id == b.records[i].view_id);
    CHECK(a.records[i].rot_err_deg == b.records[i].rot_err_deg);  // bit-equal, not approximate
    CHECK(a.records[i].trans_err_units == b.records[i].trans_err_units);
    CHECK(a.records[i].num_matches == b.records[i].num_matches);
    CHECK(a.records[i].solver_status == b.records[i].solver_status);
  }
  CHECK(a.row.r1 == b.row.r1);
  CHECK(a.row.mean_matches == b.row.mean_matches);
}

TEST_CASE("the ablation harness reports all variants over noisy scenes") {
  std::vector<SceneConfig> scenes;
  for (uint64_t s : {31, 32}) {
    SceneConfig cfg = small_config(s, 80, 8, 3);
    cfg.sigma_desc = 0.1;
    cfg.sigma_px = 0.5;
    cfg.clutter_rate = 0.2;
    scenes.push_back(cfg);
  }

  MatcherConfig mc;
  mc.num_groups = 2;
  mc.descriptor_dim = 16;
  mc.track_sample = 4;
  MatcherWeights weights = MatcherWeights::random_init(mc, 3);

  BenchmarkReport report = run_ablation(scenes, weights, PipelineOptions{});

  REQUIRE(report.rows.size() == 4);
  CHECK(report.rows[0].variant == "gat");
  CHECK(report.rows[1].variant == "mean_attention");
  CHECK(report.rows[2].variant == "mean_nn");
  CHECK(report.rows[3].variant == "kmeans_nn");
  for (const ReportRow& row : report.rows) {
    CHECK(row.r1 >= 0.0);
    CHECK(row.r1 <= row.r3);
    CHECK(row.r3 <= row.r5);
    CHECK(row.r5 <= 1.0);
    CHECK(row.mean_matches >= 0.0);
    CHECK(std::isfinite(row.median_ms));
  }
}

TEST_CASE("the default evaluation suite is fixed and seed-derived") {
  std::vector<SceneConfig> suite = default_eval_suite(17);
  REQUIRE(suite.size() == 5);
  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < suite.size(); ++i) {
    CHECK(suite[i].num_query_views == 10);
    CHECK(suite[i].sigma_desc == 0.15);
    CHECK(suite[i].sigma_px == 1.0);
    CHECK(suite[i].clutter_rate == 0.2);
    CHECK(suite[i].seed == stream_rng(17, Stream::kEval, static_cast<uint64_t>(i)).next_u64());
    seeds.push_back(suite[i].seed);
  }
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());

  std::vector<SceneConfig> again = default_eval_suite(17);
  for (size_t i = 0; i < suite.size(); ++i) CHECK(again[i].seed == suite[i].seed);
  CHECK(default_eval_suite(18)[0].seed != suite[0].seed);
}

TEST_CASE("the default training suite avoids the evaluation scene seeds") {
  std::vector<SceneConfig> train = default_train_suite(17, 8);
  std::vector<SceneConfig> eval = default_eval_suite(17);
  REQUIRE(train.size() == 8);

  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].sigma_desc == 0.15);
    CHECK(train[i].sigma_px == 1.0);
    CHECK(train[i].clutter_rate == 0.2);
    seeds.push_back(train[i].seed);
  }
  for (const SceneConfig& e : eval) seeds.push_back(e.seed);
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());

  std::vector<SceneConfig> again = default_train_suite(17, 8);
  for (size_t i = 0; i < train.size(); ++i) CHECK(again[i].seed == train[i].seed);
  CHECK_THROWS_AS(default_train_suite(17, 0), ValidationError);
}

TEST_CASE("localizing one view reproduces its benchmark record") {
  SceneConfig cfg = small_config(64, 100, 8, 4);
  cfg.sigma_desc = 0.1;
  cfg.sigma_px = 0.8;
  cfg.clutter_rate = 0.2;
  SyntheticScene scene = generate_scene(cfg);

  std::vector<ViewObservation> views;
  for (int id : scene.map_camera_ids())
    views.push_back(render_view(scene, id, cfg.sigma_px, cfg.sigma_desc, cfg.clutter_rate, cfg.seed));
  ObjectMap map = build_object_map(views, scene.cameras, scene.bbox);

  PipelineOptions options;
  options.variant = MatcherVariant::kKMeansNN;  // exercises the seed-dependent prep path
  options.match_seed = 21;
  options.ransac.seed = 34;

  PipelineResult result = evaluate_queries(scene, map, options, nullptr);
  std::vector<int> ids = scene.query_camera_ids();
  REQUIRE(result.records.size() == ids.size());

  for (size_t i = 0; i < ids.size(); ++i) {
    const PoseErrorRecord& rec = result.records[i];
    CHECK(rec.view_id == ids[i]);
    LocalizeOutcome out = localize_view(scene, map, ids[i], options, nullptr);
    CHECK(out.num_matches == rec.num_matches);
    if (rec.solver_status == SolverStatus::kOk) {
      REQUIRE(out.solve.has_value());
      PoseDelta delta = pose_delta(out.solve->pose, scene.camera(ids[i]).camera_from_object);
      CHECK(delta.rotation_deg == rec.rot_err_deg);  // bit-equal: same seeding end to end
      CHECK(delta.translation == rec.trans_err_units);
    } else {
      CHECK(!out.solve.has_value());
    }
  }
}

TEST_CASE("scenes survive a JSON file round trip exactly") {
  SceneConfig cfg = small_config(7, 40, 4, 2, 8);
  cfg.sigma_desc = 0.05;
  cfg.sigma_px = 0.3;
  cfg.clutter_rate = 0.1;
  SyntheticScene scene = generate_scene(cfg);

  nlohmann::json j = scene_to_json(scene);
  CHECK(j.at("version").get<int>() == kSchemaVersion);
  CHECK(j.at("kind").get<std::string>() == "scene");

  const std::filesystem::path path = std::filesystem::temp_directory_path() / "deskpose_scene.json";
  save_json(path.string(), j);
  SyntheticScene back = scene_from_json(load_json(path.string()));

  CHECK(back.config.num_points == cfg.num_points);
  CHECK(back.config.seed == cfg.seed);
  CHECK(back.config.sigma_desc == cfg.sigma_desc);
  CHECK(back.config.sigma_px == cfg.sigma_px);
  CHECK(back.config.clutter_rate == cfg.clutter_rate);
  CHECK(back.config.orbit_height_range == cfg.orbit_height_range);
  CHECK(back.bbox.center == scene.bbox.center);
  CHECK(back.bbox.dimensions == scene.bbox.dimensions);
  CHECK(back.bbox.yaw == scene.bbox.yaw);

  REQUIRE(back.points.size() == scene.points.size());
  for (size_t i = 0; i < scene.points.size(); ++i) {
    CHECK(back.points[i].id == scene.points[i].id);
    CHECK(back.points[i].position == scene.points[i].position);  // exact, not approximate
    CHECK(back.points[i].latent == scene.points[i].latent);
  }
  REQUIRE(back.cameras.size() == scene.cameras.size());
  for (size_t i = 0; i < scene.cameras.size(); ++i) {
    CHECK(back.cameras[i].id == scene.cameras[i].id);
    CHECK(back.cameras[i].camera_from_object.rotation().coeffs() ==
          scene.cameras[i].camera_from_object.rotation().coeffs());
    CHECK(back.cameras[i].camera_from_object.translation() ==
          scene.cameras[i].camera_from_object.translation());
    CHECK(back.cameras[i].intrinsics.fx == scene.cameras[i].intrinsics.fx);
    CHECK(back.cameras[i].intrinsics.width == scene.cameras[i].intrinsics.width);
  }

  SUBCASE("tampered documents are rejected") {
    nlohmann::json wrong_version = j;
    wrong_version["version"] = kSchemaVersion + 1;
    CHECK_THROWS_AS(scene_from_json(wrong_version), ValidationError);

    nlohmann::json wrong_kind = j;
    wrong_kind["kind"] = "object_map";
    CHECK_THROWS_AS(scene_from_json(wrong_kind), ValidationError);

    nlohmann::json missing = j;
    missing.erase("points");
    CHECK_THROWS_AS(scene_from_json(missing), ValidationError);

    CHECK_THROWS_AS(scene_from_json(nlohmann::json::object()), ValidationError);
    CHECK_THROWS_AS(scene_from_json(nlohmann::json::array()), ValidationError);
  }
}

TEST_CASE("object maps survive a JSON file round trip exactly") {
  SyntheticScene scene = generate_scene(small_config(19, 50, 5, 2, 8));
  std::vector<ViewObservation> views = render_map_views(scene, 0.0, 0.0, 0.0, 200);
  ObjectMap map = build_object_map(views, scene.cameras, scene.bbox);
  REQUIRE(map.tracks.size() >= 8);

  const std::filesystem::path path = std::filesystem::temp_directory_path() / "deskpose_map.json";
  save_json(path.string(), map_to_json(map));
  ObjectMap back = map_from_json(load_json(path.string()));

  CHECK(back.point_ids == map.point_ids);
  CHECK(back.positions == map.positions);
  CHECK(back.desc3d == map.desc3d);
  REQUIRE(back.tracks.size() == map.tracks.size());
  for (size_t i = 0; i < map.tracks.size(); ++i) {
    CHECK(back.tracks[i].track_id == map.tracks[i].track_id);
    CHECK(back.tracks[i].observations == map.tracks[i].observations);
    CHECK(back.tracks[i].descriptors == map.tracks[i].descriptors);
  }

  nlohmann::json wrong = map_to_json(map);
  wrong["kind"] = "scene";
  CHECK_THROWS_AS(map_from_json(wrong), ValidationError);
}

TEST_CASE("pose documents carry the solve and its support") {
  PnPResult result;
  result.pose = RigidTransform(
      Eigen::Quaterniond(Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitY())),
      Eigen::Vector3d(0.05, -0.1, 0.9));
  result.inlier_indices = {0, 2, 5};
  result.mean_reproj_error = 0.75;

  nlohmann::json j = pose_to_json(4, result, 11);
  CHECK(j.at("version").get<int>() == kSchemaVersion);
  CHECK(j.at("kind").get<std::string>() == "pose");
  CHECK(j.at("view_id").get<int>() == 4);
  CHECK(j.at("num_matches").get<int>() == 11);
  CHECK(j.at("num_inliers").get<int>() == 3);
  CHECK(j.at("inlier_indices").get<std::vector<int>>() == std::vector<int>{0, 2, 5});
  CHECK(j.at("mean_reproj_error_px").get<double>() == 0.75);
  REQUIRE(j.at("rotation_wxyz").size() == 4);
  CHECK(j.at("rotation_wxyz")[0].get<double>() == result.pose.rotation().w());
  CHECK(j.at("translation")[2].get<double>() == 0.9);
}

TEST_CASE("reports round trip through JSON and print fixed CSV columns") {
  BenchmarkReport report;
  ReportRow a{"gat", 0.123456789012345, 0.5, 1.0, 37.25, 1.75};
  ReportRow b{"mean_nn", 0.0, 0.25, 0.3, 12.0, 0.5};
  report.rows = {a, b};

  BenchmarkReport back = report_from_json(report_to_json(report));
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].variant == "gat");
  CHECK(back.rows[0].r1 == a.r1);  // doubles survive exactly
  CHECK(back.rows[1].mean_matches == b.mean_matches);
  CHECK(back.rows[1].median_ms == b.median_ms);

  std::string csv = report_to_csv(report);
  CHECK(csv.substr(0, csv.find('\n')) == "variant,r1,r3,r5,matches,ms");
  CHECK(csv.find("\ngat,") != std::string::npos);
  CHECK(csv.find("\nmean_nn,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  nlohmann::json wrong = report_to_json(report);
  wrong["version"] = 0;
  CHECK_THROWS_AS(report_from_json(wrong), ValidationError);
}

TEST_CASE("record CSVs keep failures visible") {
  std::vector<PoseErrorRecord> recs{ok_record(0, 0.25, 0.03125, 15),  // binary-exact values
                                    failed_record(1, SolverStatus::kSolverFailure)};
  std::string csv = records_to_csv(recs);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "view_id,rot_err_deg,trans_err_units,num_matches,solver_status");
  CHECK(csv.find("0,0.25,0.03125,15,ok") != std::string::npos);
  CHECK(csv.find("1,inf,inf,0,solver_failure") != std::string::npos);
}

TEST_CASE("loss curves print one step per line") {
  std::string csv = loss_curve_to_csv({1.0, 0.5, 0.25});
  CHECK(csv == "step,loss\n0,1\n1,0.5\n2,0.25\n");
}

TEST_CASE("weights round trip bit-exactly and reject corrupted files") {
  MatcherConfig mc;
  mc.num_groups = 2;
  mc.descriptor_dim = 8;
  mc.track_sample = 3;
  mc.confidence_threshold = 0.15;
  MatcherWeights weights = MatcherWeights::random_init(mc, 99);

  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / "deskpose_weights.bin";
  save_weights(path.string(), weights);
  MatcherWeights back = load_weights(path.string());

  CHECK(back.config.num_groups == 2);
  CHECK(back.config.descriptor_dim == 8);
  CHECK(back.config.track_sample == 3);
  CHECK(back.config.confidence_threshold == 0.15);
  CHECK(back.config.score_temperature == mc.score_temperature);
  CHECK(back.config.aggregation == AggregationMode::kAttention);
  CHECK(back.to_flat() == weights.to_flat());  // every bit preserved

  SUBCASE("a second save of the loaded weights is byte-identical") {
    const std::filesystem::path copy =
        std::filesystem::temp_directory_path() / "deskpose_weights2.bin";
    save_weights(copy.string(), back);
    CHECK(load_text(path.string()) == load_text(copy.string()));
  }

  SUBCASE("corruptions are rejected") {
    std::string bytes = load_text(path.string());

    std::string bad_magic = bytes;
    bad_magic[bad_magic.find("v1")] = 'x';
    save_text(path.string(), bad_magic);
    CHECK_THROWS_AS(load_weights(path.string()), ValidationError);

    save_text(path.string(), bytes.substr(0, bytes.size() - 8));  // truncated payload
    CHECK_THROWS_AS(load_weights(path.string()), ValidationError);

    save_text(path.string(), bytes + std::string(4, '\0'));  // trailing garbage
    CHECK_THROWS_AS(load_weights(path.string()), ValidationError);

    std::string bad_shape = bytes;
    const size_t pos = bad_shape.find("matrices 34");
    REQUIRE(pos != std::string::npos);
    bad_shape.replace(pos, 11, "matrices 35");
    save_text(path.string(), bad_shape);
    CHECK_THROWS_AS(load_weights(path.string()), ValidationError);

    CHECK_THROWS_AS(load_weights("/nonexistent/weights.bin"), ValidationError);
  }
}

}  // namespace
}  // namespace deskpose
