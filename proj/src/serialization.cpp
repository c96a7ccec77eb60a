#include "deskpose/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "deskpose/common.hpp"

namespace deskpose {

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a, Eigen::Index expected = -1) {
  if (!a.is_array()) throw ValidationError("expected a JSON array of numbers");
  if (expected >= 0 && static_cast<Eigen::Index>(a.size()) != expected)
    throw ValidationError("JSON vector has the wrong length");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

// Matrices travel as arrays of columns.
json matrix_to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(vec_to_json(m.col(c)));
  return a;
}

Eigen::MatrixXd matrix_from_json(const json& a, Eigen::Index rows) {
  if (!a.is_array()) throw ValidationError("expected a JSON array of columns");
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(a.size()));
  for (size_t c = 0; c < a.size(); ++c)
    m.col(static_cast<Eigen::Index>(c)) = vec_from_json(a[c], rows);
  return m;
}

json box_to_json(const BoundingBox3& box) {
  return json{{"center", vec_to_json(box.center)},
              {"dimensions", vec_to_json(box.dimensions)},
              {"yaw", box.yaw}};
}

BoundingBox3 box_from_json(const json& j) {
  BoundingBox3 box;
  box.center = vec_from_json(j.at("center"), 3);
  box.dimensions = vec_from_json(j.at("dimensions"), 3);
  box.yaw = j.at("yaw").get<double>();
  return box;
}

json pose_fields(const RigidTransform& pose) {
  const Eigen::Quaterniond& q = pose.rotation();
  return json{{"rotation_wxyz", json::array({q.w(), q.x(), q.y(), q.z()})},
              {"translation", vec_to_json(pose.translation())}};
}

RigidTransform pose_from_fields(const json& j) {
  const json& r = j.at("rotation_wxyz");
  if (!r.is_array() || r.size() != 4) throw ValidationError("rotation must have four entries");
  Eigen::Quaterniond q(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                       r[3].get<double>());
  return RigidTransform(q, vec_from_json(j.at("translation"), 3));
}

void check_version(const json& j, const std::string& kind) {
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  if (j.value("kind", std::string{}) != kind)
    throw ValidationError("JSON document is not a " + kind);
  if (j.at("version").get<int>() != kSchemaVersion)
    throw ValidationError("unsupported " + kind + " schema version");
}

// Doubles in the weights header print with enough digits to round-trip.
std::string exact(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

void to_little_endian(std::vector<unsigned char>& bytes) {
  if constexpr (std::endian::native == std::endian::big) {
    for (size_t i = 0; i + 8 <= bytes.size(); i += 8)
      std::reverse(bytes.begin() + static_cast<long>(i), bytes.begin() + static_cast<long>(i + 8));
  }
}

}  // namespace

json scene_to_json(const SyntheticScene& scene) {
  const SceneConfig& c = scene.config;
  json config{{"num_points", c.num_points},
              {"bbox", box_to_json(c.bbox)},
              {"num_map_views", c.num_map_views},
              {"num_query_views", c.num_query_views},
              {"orbit_radius", c.orbit_radius},
              {"orbit_height_range", json::array({c.orbit_height_range.first,
                                                  c.orbit_height_range.second})},
              {"descriptor_dim", c.descriptor_dim},
              {"sigma_desc", c.sigma_desc},
              {"sigma_px", c.sigma_px},
              {"clutter_rate", c.clutter_rate},
              {"seed", c.seed}};
  json points = json::array();
  for (const ScenePoint& p : scene.points)
    points.push_back(json{{"id", p.id},
                          {"position", vec_to_json(p.position)},
                          {"latent", vec_to_json(p.latent)}});
  json cameras = json::array();
  for (const PosedCamera& cam : scene.cameras) {
    json entry = pose_fields(cam.camera_from_object);
    entry["camera_id"] = cam.id;
    entry["intrinsics"] = json{{"fx", cam.intrinsics.fx}, {"fy", cam.intrinsics.fy},
                               {"cx", cam.intrinsics.cx}, {"cy", cam.intrinsics.cy},
                               {"width", cam.intrinsics.width},
                               {"height", cam.intrinsics.height}};
    cameras.push_back(std::move(entry));
  }
  return json{{"version", kSchemaVersion}, {"kind", "scene"},   {"config", std::move(config)},
              {"points", std::move(points)}, {"cameras", std::move(cameras)}};
}

SyntheticScene scene_from_json(const json& j) try {
  check_version(j, "scene");
  const json& jc = j.at("config");
  SceneConfig c;
  c.num_points = jc.at("num_points").get<int>();
  c.bbox = box_from_json(jc.at("bbox"));
  c.num_map_views = jc.at("num_map_views").get<int>();
  c.num_query_views = jc.at("num_query_views").get<int>();
  c.orbit_radius = jc.at("orbit_radius").get<double>();
  const json& range = jc.at("orbit_height_range");
  if (!range.is_array() || range.size() != 2)
    throw ValidationError("orbit_height_range must have two entries");
  c.orbit_height_range = {range[0].get<double>(), range[1].get<double>()};
  c.descriptor_dim = jc.at("descriptor_dim").get<int>();
  c.sigma_desc = jc.at("sigma_desc").get<double>();
  c.sigma_px = jc.at("sigma_px").get<double>();
  c.clutter_rate = jc.at("clutter_rate").get<double>();
  c.seed = jc.at("seed").get<uint64_t>();
  c.validate();

  SyntheticScene scene;
  scene.config = c;
  scene.bbox = c.bbox;
  for (const json& jp : j.at("points")) {
    ScenePoint p;
    p.id = jp.at("id").get<int>();
    p.position = vec_from_json(jp.at("position"), 3);
    p.latent = vec_from_json(jp.at("latent"), c.descriptor_dim);
    scene.points.push_back(std::move(p));
  }
  if (static_cast<int>(scene.points.size()) != c.num_points)
    throw ValidationError("scene point count does not match its config");
  for (const json& jcam : j.at("cameras")) {
    PosedCamera cam;
    cam.id = jcam.at("camera_id").get<int>();
    cam.camera_from_object = pose_from_fields(jcam);
    const json& ji = jcam.at("intrinsics");
    cam.intrinsics.fx = ji.at("fx").get<double>();
    cam.intrinsics.fy = ji.at("fy").get<double>();
    cam.intrinsics.cx = ji.at("cx").get<double>();
    cam.intrinsics.cy = ji.at("cy").get<double>();
    cam.intrinsics.width = ji.at("width").get<int>();
    cam.intrinsics.height = ji.at("height").get<int>();
    if (!cam.intrinsics.valid()) throw ValidationError("invalid camera intrinsics");
    scene.cameras.push_back(std::move(cam));
  }
  if (static_cast<int>(scene.cameras.size()) != c.num_map_views + c.num_query_views)
    throw ValidationError("scene camera count does not match its config");
  return scene;
} catch (const json::exception& e) {
  throw ValidationError(std::string("malformed scene JSON: ") + e.what());
}

json map_to_json(const ObjectMap& map) {
  json points = json::array();
  for (int i = 0; i < map.num_points(); ++i)
    points.push_back(json{{"point_id", map.point_ids[static_cast<size_t>(i)]},
                          {"position", vec_to_json(map.positions.col(i))},
                          {"descriptor", vec_to_json(map.desc3d.col(i))}});
  json tracks = json::array();
  for (const FeatureTrack& t : map.tracks) {
    json obs = json::array();
    for (const auto& [view, kp] : t.observations) obs.push_back(json::array({view, kp}));
    tracks.push_back(json{{"track_id", t.track_id},
                          {"observations", std::move(obs)},
                          {"descriptors", matrix_to_json(t.descriptors)}});
  }
  return json{{"version", kSchemaVersion},
              {"kind", "object_map"},
              {"descriptor_dim", map.desc3d.rows()},
              {"bbox", box_to_json(map.bbox)},
              {"points", std::move(points)},
              {"tracks", std::move(tracks)}};
}

ObjectMap map_from_json(const json& j) try {
  check_version(j, "object_map");
  const auto dim = j.at("descriptor_dim").get<Eigen::Index>();
  if (dim < 1) throw ValidationError("descriptor_dim must be positive");
  ObjectMap map;
  map.bbox = box_from_json(j.at("bbox"));
  const json& points = j.at("points");
  map.positions.resize(3, static_cast<Eigen::Index>(points.size()));
  map.desc3d.resize(dim, static_cast<Eigen::Index>(points.size()));
  for (size_t i = 0; i < points.size(); ++i) {
    const json& jp = points[i];
    map.point_ids.push_back(jp.at("point_id").get<int>());
    map.positions.col(static_cast<Eigen::Index>(i)) = vec_from_json(jp.at("position"), 3);
    map.desc3d.col(static_cast<Eigen::Index>(i)) = vec_from_json(jp.at("descriptor"), dim);
  }
  for (const json& jt : j.at("tracks")) {
    FeatureTrack t;
    t.track_id = jt.at("track_id").get<int>();
    for (const json& jo : jt.at("observations")) {
      if (!jo.is_array() || jo.size() != 2)
        throw ValidationError("track observation must be a [view, keypoint] pair");
      t.observations.emplace_back(jo[0].get<int>(), jo[1].get<int>());
    }
    t.descriptors = matrix_from_json(jt.at("descriptors"), dim);
    if (t.descriptors.cols() != static_cast<Eigen::Index>(t.observations.size()))
      throw ValidationError("track descriptor count does not match its observations");
    map.tracks.push_back(std::move(t));
  }
  if (map.tracks.size() != map.point_ids.size())
    throw ValidationError("map track count does not match its points");
  return map;
} catch (const json::exception& e) {
  throw ValidationError(std::string("malformed map JSON: ") + e.what());
}

json pose_to_json(int view_id, const PnPResult& result, int num_matches) {
  json j = pose_fields(result.pose);
  j["version"] = kSchemaVersion;
  j["kind"] = "pose";
  j["view_id"] = view_id;
  j["num_matches"] = num_matches;
  j["num_inliers"] = result.inlier_indices.size();
  j["inlier_indices"] = result.inlier_indices;
  j["mean_reproj_error_px"] = result.mean_reproj_error;
  return j;
}

json report_to_json(const BenchmarkReport& report) {
  json rows = json::array();
  for (const ReportRow& row : report.rows)
    rows.push_back(json{{"variant", row.variant},
                        {"r1", row.r1},
                        {"r3", row.r3},
                        {"r5", row.r5},
                        {"matches", row.mean_matches},
                        {"ms", row.median_ms}});
  return json{{"version", kSchemaVersion}, {"kind", "report"}, {"rows", std::move(rows)}};
}

BenchmarkReport report_from_json(const json& j) try {
  check_version(j, "report");
  BenchmarkReport report;
  for (const json& jr : j.at("rows")) {
    ReportRow row;
    row.variant = jr.at("variant").get<std::string>();
    row.r1 = jr.at("r1").get<double>();
    row.r3 = jr.at("r3").get<double>();
    row.r5 = jr.at("r5").get<double>();
    row.mean_matches = jr.at("matches").get<double>();
    row.median_ms = jr.at("ms").get<double>();
    report.rows.push_back(std::move(row));
  }
  return report;
} catch (const json::exception& e) {
  throw ValidationError(std::string("malformed report JSON: ") + e.what());
}

std::string report_to_csv(const BenchmarkReport& report) {
  std::ostringstream out;
  out << std::setprecision(17) << "variant,r1,r3,r5,matches,ms\n";
  for (const ReportRow& row : report.rows)
    out << row.variant << ',' << row.r1 << ',' << row.r3 << ',' << row.r5 << ','
        << row.mean_matches << ',' << row.median_ms << '\n';
  return out.str();
}

std::string records_to_csv(const std::vector<PoseErrorRecord>& records) {
  std::ostringstream out;
  out << std::setprecision(17) << "view_id,rot_err_deg,trans_err_units,num_matches,solver_status\n";
  for (const PoseErrorRecord& rec : records)
    out << rec.view_id << ',' << rec.rot_err_deg << ',' << rec.trans_err_units << ','
        << rec.num_matches << ',' << to_string(rec.solver_status) << '\n';
  return out.str();
}

std::string loss_curve_to_csv(const std::vector<double>& curve) {
  std::ostringstream out;
  out << std::setprecision(17) << "step,loss\n";
  for (size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
  return out.str();
}

void save_weights(const std::string& path, const MatcherWeights& weights) {
  const MatcherConfig& c = weights.config;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << "deskpose-weights v1\n"
      << "num_groups " << c.num_groups << '\n'
      << "descriptor_dim " << c.descriptor_dim << '\n'
      << "track_sample " << c.track_sample << '\n'
      << "confidence_threshold " << exact(c.confidence_threshold) << '\n'
      << "kernel_epsilon " << exact(c.kernel_epsilon) << '\n'
      << "score_temperature " << exact(c.score_temperature) << '\n'
      << "aggregation "
      << (c.aggregation == AggregationMode::kAttention ? "attention" : "mean") << '\n'
      << "matrices " << c.num_groups * kMatricesPerGroup << ' ' << c.descriptor_dim << ' '
      << c.descriptor_dim << '\n'
      << "data\n";

  const Eigen::VectorXd flat = weights.to_flat();
  std::vector<unsigned char> bytes(static_cast<size_t>(flat.size()) * 8);
  std::memcpy(bytes.data(), flat.data(), bytes.size());
  to_little_endian(bytes);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (!out) throw ValidationError("failed writing weights to " + path);
}

MatcherWeights load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "deskpose-weights v1")
    throw ValidationError("not a weights file: " + path);

  MatcherConfig c;
  long matrices = -1, rows = -1, cols = -1;
  bool found_data = false;
  while (std::getline(in, line)) {
    if (line == "data") {
      found_data = true;
      break;
    }
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "num_groups") fields >> c.num_groups;
    else if (key == "descriptor_dim") fields >> c.descriptor_dim;
    else if (key == "track_sample") fields >> c.track_sample;
    else if (key == "confidence_threshold") fields >> c.confidence_threshold;
    else if (key == "kernel_epsilon") fields >> c.kernel_epsilon;
    else if (key == "score_temperature") fields >> c.score_temperature;
    else if (key == "aggregation") {
      std::string mode;
      fields >> mode;
      if (mode == "attention") c.aggregation = AggregationMode::kAttention;
      else if (mode == "mean") c.aggregation = AggregationMode::kMean;
      else throw ValidationError("unknown aggregation mode: " + mode);
    } else if (key == "matrices") {
      fields >> matrices >> rows >> cols;
    } else {
      throw ValidationError("unknown weights header field: " + key);
    }
    if (fields.fail()) throw ValidationError("malformed weights header line: " + line);
  }
  if (!found_data) throw ValidationError("weights header is missing its data section");
  c.validate();
  if (matrices != static_cast<long>(c.num_groups) * kMatricesPerGroup ||
      rows != c.descriptor_dim || cols != c.descriptor_dim)
    throw ValidationError("weights shape manifest disagrees with the config");

  const size_t count = static_cast<size_t>(matrices) * static_cast<size_t>(rows) *
                       static_cast<size_t>(cols);
  std::vector<unsigned char> bytes(count * 8);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<long>(bytes.size()));
  if (static_cast<size_t>(in.gcount()) != bytes.size())
    throw ValidationError("weights file is truncated");
  if (in.get() != std::ifstream::traits_type::eof())
    throw ValidationError("weights file has trailing bytes");
  to_little_endian(bytes);  // an involution: converts back on big-endian hosts
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  std::memcpy(flat.data(), bytes.data(), bytes.size());
  return MatcherWeights::from_flat(c, flat);
}

void save_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << content;
  if (!out) throw ValidationError("failed writing " + path);
}

std::string load_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open for reading: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void save_json(const std::string& path, const json& j) { save_text(path, j.dump(2) + "\n"); }

json load_json(const std::string& path) {
  try {
    return json::parse(load_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("invalid JSON in " + path + ": " + e.what());
  }
}

}  // namespace deskpose
