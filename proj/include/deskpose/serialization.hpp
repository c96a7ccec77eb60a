#pragma once

#include <string>
#include <vector>

#include "deskpose/bench.hpp"
#include "deskpose/matcher.hpp"
#include "deskpose/scene.hpp"
#include "deskpose/sfm.hpp"
#include "deskpose/solver.hpp"
#include "json.hpp"

namespace deskpose {

// Version stamped into every JSON document this library writes; loaders
// reject documents from a different major version.
inline constexpr int kSchemaVersion = 1;

// Scenes: full ground truth (config, points with latents, cameras).
nlohmann::json scene_to_json(const SyntheticScene& scene);
SyntheticScene scene_from_json(const nlohmann::json& j);

// Object maps: points, 3D descriptors, and the tracks behind them.
nlohmann::json map_to_json(const ObjectMap& map);
ObjectMap map_from_json(const nlohmann::json& j);

// One localized query frame.
nlohmann::json pose_to_json(int view_id, const PnPResult& result, int num_matches);

// Benchmark reports, JSON and CSV (fixed column order:
// variant, r1, r3, r5, matches, ms).
nlohmann::json report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const nlohmann::json& j);
std::string report_to_csv(const BenchmarkReport& report);

// Per-frame evaluation records as CSV.
std::string records_to_csv(const std::vector<PoseErrorRecord>& records);

// Training loss curve as CSV (step, loss).
std::string loss_curve_to_csv(const std::vector<double>& curve);

// Matcher weights on disk: a short text header (config echo plus the shape
// manifest) terminated by a "data" line, followed by the flat parameter
// vector as little-endian IEEE-754 doubles. Round trips are bit-exact.
void save_weights(const std::string& path, const MatcherWeights& weights);
MatcherWeights load_weights(const std::string& path);

// Small file helpers shared by the CLI.
void save_text(const std::string& path, const std::string& content);
std::string load_text(const std::string& path);
void save_json(const std::string& path, const nlohmann::json& j);
nlohmann::json load_json(const std::string& path);

}  // namespace deskpose
