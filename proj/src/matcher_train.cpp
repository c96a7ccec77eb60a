#include "deskpose/matcher_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "deskpose/common.hpp"
#include "deskpose/rng.hpp"

namespace deskpose {

namespace {

Eigen::MatrixXd random_unit_columns(SplitMix64& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = rng.next_normal();
    m.col(c).normalize();
  }
  return m;
}

}  // namespace

void TrainConfig::validate() const {
  if (focal_gamma < 0.0) throw ValidationError("focal_gamma must be non-negative");
  if (learning_rate < 0.0) throw ValidationError("learning_rate must be non-negative");
  if (steps < 0) throw ValidationError("steps must be non-negative");
  if (batch_views < 1) throw ValidationError("batch_views must be positive");
}

TrainResult train(const TrainingSet& data, const MatcherConfig& config,
                  const TrainConfig& train_config) {
  config.validate();
  train_config.validate();
  if (data.empty()) throw ValidationError("training set is empty");

  // Fixed enumeration of every (scene, view) pair; batches index into it.
  std::vector<std::pair<size_t, size_t>> pool;
  for (size_t s = 0; s < data.size(); ++s) {
    const SceneTensors& scene = data[s];
    if (scene.samples.empty()) throw ValidationError("scene without training samples");
    if (scene.point_desc.cols() * config.track_sample != scene.track_feats.cols())
      throw ValidationError("scene track features do not match its point count");
    for (size_t v = 0; v < scene.samples.size(); ++v) pool.emplace_back(s, v);
  }
  const int batch_size = std::min<int>(train_config.batch_views, static_cast<int>(pool.size()));

  TrainResult result;
  result.weights = MatcherWeights::random_init(config, train_config.seed);
  Eigen::VectorXd flat = result.weights.to_flat();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(flat.size());
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(flat.size());
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  auto draw_batch = [&](int step) {
    std::vector<size_t> picks(pool.size());
    std::iota(picks.begin(), picks.end(), size_t{0});
    if (batch_size < static_cast<int>(pool.size())) {
      SplitMix64 rng =
          stream_rng(train_config.seed, Stream::kTrainBatch, static_cast<uint64_t>(step));
      for (int i = 0; i < batch_size; ++i) {
        size_t j = static_cast<size_t>(i) +
                   static_cast<size_t>(rng.next_below(pool.size() - static_cast<size_t>(i)));
        std::swap(picks[static_cast<size_t>(i)], picks[j]);
      }
      picks.resize(static_cast<size_t>(batch_size));
      std::sort(picks.begin(), picks.end());  // fixed accumulation order
    }
    return picks;
  };

  auto batch_loss_and_gradient = [&](const std::vector<size_t>& picks,
                                     MatcherWeights* gradient) {
    double loss_sum = 0.0;
    for (size_t pick : picks) {
      const auto& [s, v] = pool[pick];
      const SceneTensors& scene = data[s];
      const TrainingSample& sample = scene.samples[v];
      if (gradient) {
        loss_sum += loss_and_gradient(result.weights, sample.query_desc, scene.point_desc,
                                      scene.track_feats, sample.gt_point_for_query,
                                      train_config.focal_gamma, gradient);
      } else {
        MatchScores scores = matcher_forward(result.weights, sample.query_desc, scene.point_desc,
                                             scene.track_feats);
        loss_sum += focal_loss(scores.confidence, sample.gt_point_for_query,
                               train_config.focal_gamma);
      }
    }
    return loss_sum / static_cast<double>(picks.size());
  };

  std::vector<size_t> picks;
  double initial_loss = 0.0;
  for (int step = 0; step < train_config.steps; ++step) {
    picks = draw_batch(step);
    MatcherWeights gradient = MatcherWeights::zeros(config);
    double loss = batch_loss_and_gradient(picks, &gradient);
    if (!std::isfinite(loss)) throw NumericError("training loss is non-finite");
    if (step == 0) initial_loss = loss;
    if (loss > 1000.0 * initial_loss)
      throw NumericError("training diverged at step " + std::to_string(step) + ": loss " +
                         std::to_string(loss) + " vs initial " + std::to_string(initial_loss));
    result.loss_curve.push_back(loss);

    Eigen::VectorXd g = gradient.to_flat() / static_cast<double>(picks.size());
    const double t = static_cast<double>(step + 1);
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
    Eigen::VectorXd m1_hat = m1 / (1.0 - std::pow(kBeta1, t));
    Eigen::VectorXd m2_hat = m2 / (1.0 - std::pow(kBeta2, t));
    flat -= train_config.learning_rate *
            m1_hat.cwiseQuotient((m2_hat.cwiseSqrt().array() + kAdamEps).matrix());
    result.weights = MatcherWeights::from_flat(config, flat);
  }

  // Final loss on the last batch with the trained weights closes the curve,
  // keeping it at steps + 1 entries; with zero steps that is one plain
  // evaluation of the first batch.
  if (train_config.steps == 0) picks = draw_batch(0);
  double final_loss = batch_loss_and_gradient(picks, nullptr);
  if (initial_loss > 0.0 && final_loss > 1000.0 * initial_loss)
    throw NumericError("training diverged: final loss " + std::to_string(final_loss));
  result.loss_curve.push_back(final_loss);
  return result;
}

GradCheckResult gradient_check(const GradCheckOptions& options) {
  if (options.num_seeds < 1 || options.fd_step <= 0.0 || options.tolerance <= 0.0)
    throw ValidationError("bad gradient check options");

  MatcherConfig cfg;
  cfg.descriptor_dim = options.descriptor_dim;
  cfg.num_groups = options.num_groups;
  cfg.track_sample = options.track_sample;
  cfg.validate();

  GradCheckResult result;
  result.passed = true;

  for (uint64_t seed = 0; seed < static_cast<uint64_t>(options.num_seeds); ++seed) {
    SplitMix64 rng = stream_rng(options.base_seed + seed, Stream::kGradCheck);
    Eigen::MatrixXd queries = random_unit_columns(rng, cfg.descriptor_dim, options.num_queries);
    Eigen::MatrixXd points = random_unit_columns(rng, cfg.descriptor_dim, options.num_points);
    Eigen::MatrixXd tracks =
        random_unit_columns(rng, cfg.descriptor_dim, options.num_points * cfg.track_sample);
    // Every other query gets a distinct counterpart; the rest are unmatched,
    // so both focal-loss branches are exercised.
    std::vector<int> gt(static_cast<size_t>(options.num_queries), -1);
    for (int q = 0; q < options.num_queries; q += 2)
      if (q < options.num_points) gt[static_cast<size_t>(q)] = q;

    MatcherWeights weights = MatcherWeights::random_init(cfg, seed);
    MatcherWeights gradient = MatcherWeights::zeros(cfg);
    loss_and_gradient(weights, queries, points, tracks, gt, options.focal_gamma, &gradient);
    Eigen::VectorXd analytic = gradient.to_flat();

    Eigen::VectorXd flat = weights.to_flat();
    auto loss_at = [&](const Eigen::VectorXd& w) {
      MatchScores s = matcher_forward(MatcherWeights::from_flat(cfg, w), queries, points, tracks);
      return focal_loss(s.confidence, gt, options.focal_gamma);
    };
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
      Eigen::VectorXd w = flat;
      w[i] = flat[i] + options.fd_step;
      double up = loss_at(w);
      w[i] = flat[i] - options.fd_step;
      double down = loss_at(w);
      double numeric = (up - down) / (2.0 * options.fd_step);
      double rel = std::abs(analytic[i] - numeric) /
                   std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      ++result.parameters_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_seed = options.base_seed + seed;
        result.worst_parameter = static_cast<int>(i);
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace deskpose
