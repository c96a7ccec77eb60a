#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "deskpose/matcher.hpp"

namespace deskpose {

// Focal loss over the confidence matrix, averaged over all Q*J cells.
// gt_point_for_query[q] is the matching point index or -1 when query q has no
// counterpart; the matched cell contributes -(1-C)^gamma * log C, every other
// cell -(C)^gamma * log(1-C). Probabilities are clamped to [1e-12, 1].
double focal_loss(const Eigen::MatrixXd& confidence, const std::vector<int>& gt_point_for_query,
                  double focal_gamma);

// Analytic reverse-mode gradient of focal_loss after matcher_forward, taken
// with respect to every weight entry. Adds into *gradient (callers zero it or
// accumulate over a batch) and returns the loss. Throws NumericError naming
// the layer if any gradient entry comes out non-finite.
double loss_and_gradient(const MatcherWeights& weights, const Eigen::MatrixXd& query_desc,
                         const Eigen::MatrixXd& point_desc, const Eigen::MatrixXd& track_feats,
                         const std::vector<int>& gt_point_for_query, double focal_gamma,
                         MatcherWeights* gradient);

// One query view against its scene's map.
struct TrainingSample {
  Eigen::MatrixXd query_desc;           // d x Q
  std::vector<int> gt_point_for_query;  // length Q, -1 for unmatched
};

// One scene's fixed training tensors: the map descriptors, the tracks already
// sampled to K columns, and the query views. Sampling once up front makes
// every training run a pure function of the tensors and the seed.
struct SceneTensors {
  Eigen::MatrixXd point_desc;   // d x J
  Eigen::MatrixXd track_feats;  // d x (J*K)
  std::vector<TrainingSample> samples;
};

using TrainingSet = std::vector<SceneTensors>;

struct TrainConfig {
  double focal_gamma = 2.0;
  double learning_rate = 1e-3;
  int steps = 200;
  int batch_views = 8;  // samples per step; capped at the dataset size
  uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  MatcherWeights weights;
  std::vector<double> loss_curve;  // batch loss at each step, before the update
};

// First-order training with per-parameter moment-based step scaling, seeded
// and bit-deterministic. Throws NumericError when the loss diverges past
// 1000x its initial value.
TrainResult train(const TrainingSet& data, const MatcherConfig& config,
                  const TrainConfig& train_config);

struct GradCheckOptions {
  int descriptor_dim = 8;
  int num_groups = 2;
  int num_points = 6;
  int num_queries = 6;
  int track_sample = 4;
  double focal_gamma = 2.0;
  double fd_step = 1e-5;
  double tolerance = 1e-4;  // relative, |a-n| / max(|a|, |n|, 1e-6)
  int num_seeds = 5;
  uint64_t base_seed = 0;  // instance i uses base_seed + i
};

struct GradCheckResult {
  bool passed = false;
  double max_rel_error = 0.0;
  int parameters_checked = 0;
  uint64_t worst_seed = 0;
  int worst_parameter = -1;
};

// Central finite differences over every weight entry of small random
// instances, compared against the analytic gradient.
GradCheckResult gradient_check(const GradCheckOptions& options);

}  // namespace deskpose
