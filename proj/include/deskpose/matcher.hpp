#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "deskpose/rng.hpp"
#include "deskpose/sfm.hpp"

namespace deskpose {

// How per-track 2D features are fused into the evolving 3D descriptor at the
// start of every attention group: learned attention over the track, or a
// plain mean (the ablation baseline).
enum class AggregationMode { kAttention, kMean };

struct MatcherConfig {
  int num_groups = 4;        // stacked attention groups
  int descriptor_dim = 32;   // d
  int track_sample = 8;      // K features sampled or padded per track
  double confidence_threshold = 0.2;
  double kernel_epsilon = 1e-6;   // linear-attention denominator guard
  double score_temperature = 0.1; // divides the final cosine scores
  AggregationMode aggregation = AggregationMode::kAttention;

  void validate() const;  // throws ValidationError
};

// One attention layer: query/key/value projections plus the output
// projection applied before the residual add. All d x d.
struct AttentionLayerWeights {
  Eigen::MatrixXd query, key, value, output;
};

// One attention group: the aggregation projection followed by self attention
// on each side and cross attention in both directions.
struct GroupWeights {
  Eigen::MatrixXd aggregation;
  AttentionLayerWeights self_query, self_point, cross_query, cross_point;
};

inline constexpr int kMatricesPerGroup = 17;

// Full parameter set. The flat layout (used by the optimizer and the weights
// file) concatenates groups in order; within a group: aggregation, then
// self_query, self_point, cross_query, cross_point, each as query, key,
// value, output; matrices are column-major.
struct MatcherWeights {
  MatcherConfig config;
  std::vector<GroupWeights> groups;

  static MatcherWeights zeros(const MatcherConfig& config);
  // Gaussian entries with standard deviation 1/sqrt(d).
  static MatcherWeights random_init(const MatcherConfig& config, uint64_t seed);

  int parameter_count() const;
  Eigen::VectorXd to_flat() const;
  static MatcherWeights from_flat(const MatcherConfig& config, const Eigen::VectorXd& flat);
  void set_zero();
  // this += scale * other; shapes must agree.
  void add_scaled(const MatcherWeights& other, double scale);
};

// Exactly K columns per track: a seeded sample without replacement when the
// track is long enough, otherwise cyclic repetition of what is there.
Eigen::MatrixXd sample_or_pad_track(const Eigen::MatrixXd& track_descriptors, int k,
                                    SplitMix64& rng);

// All map tracks sampled to K columns and packed side by side: point j owns
// columns [j*K, (j+1)*K).
Eigen::MatrixXd sample_map_tracks(const ObjectMap& map, int k, uint64_t seed);

// One track fused into one vector: alpha = softmax over the track of
// <W f_k, W f3d>, output = f3d + sum_k alpha_k f_k. alpha_out, when given,
// receives the coefficients. Throws NumericError on non-finite similarity.
Eigen::VectorXd aggregation_attention(const Eigen::MatrixXd& track_feats,
                                      const Eigen::VectorXd& f3d, const Eigen::MatrixXd& w,
                                      Eigen::VectorXd* alpha_out = nullptr);

// Saved intermediates of one linear-attention evaluation, enough to run the
// layer backward.
struct LinearAttentionCache {
  Eigen::MatrixXd zq, zk;        // pre-activation projections
  Eigen::MatrixXd phi_q, phi_k;  // elu(z) + 1
  Eigen::MatrixXd values;        // value projection of the key-side input
  Eigen::MatrixXd kv;            // values * phi_k^T, d x d
  Eigen::VectorXd key_sum;       // rowwise sum of phi_k
  Eigen::VectorXd den;           // per query: phi_q . key_sum + epsilon
  Eigen::MatrixXd attn;          // attention output before the output projection
};

// Linear attention in feature space: phi(x) = elu(x) + 1,
// out_i = (sum_k phi(K_k) V_k^T)^T phi(Q_i) / (phi(Q_i) . sum_k phi(K_k) + eps).
// Returns the d x Q attention output before the output projection; cache,
// when given, is filled for the backward pass.
Eigen::MatrixXd linear_attention(const Eigen::MatrixXd& x_query, const Eigen::MatrixXd& x_keyval,
                                 const AttentionLayerWeights& w, double epsilon,
                                 LinearAttentionCache* cache = nullptr);

struct GroupCache {
  Eigen::MatrixXd q_in, p_in;
  Eigen::MatrixXd alpha;          // K x J aggregation coefficients
  Eigen::MatrixXd p_agg;          // after aggregation
  LinearAttentionCache self_q, self_p, cross_q, cross_p;
  Eigen::MatrixXd q_self, p_self; // after the self-attention layers
};

struct MatcherForwardCache {
  std::vector<GroupCache> groups;
  Eigen::MatrixXd q_prenorm, p_prenorm;  // transformed descriptors before unit normalization
  Eigen::MatrixXd q_final, p_final;      // unit columns used for scoring
  Eigen::MatrixXd scores;                // Q x J
  Eigen::MatrixXd row_soft, col_soft;
  Eigen::MatrixXd confidence;
};

struct MatchScores {
  Eigen::MatrixXd scores;      // Q x J
  Eigen::MatrixXd confidence;  // Q x J, dual-softmax of scores
};

// The full transformer: per group, track aggregation into the point
// descriptors, self attention on each side, then cross attention in both
// directions (reading the post-self tensors), residual connections
// throughout; track features stay fixed across groups. Both final descriptor
// sets are re-unit-normalized, scored by scaled inner products, and turned
// into confidences by the dual softmax.
//   query_desc  d x Q, point_desc  d x J, track_feats  d x (J*K).
MatchScores matcher_forward(const MatcherWeights& weights, const Eigen::MatrixXd& query_desc,
                            const Eigen::MatrixXd& point_desc, const Eigen::MatrixXd& track_feats,
                            MatcherForwardCache* cache = nullptr);

// Convenience entry for the pipeline: samples each map track with the given
// seed and matches the query descriptors against the map.
MatchScores match_against_map(const MatcherWeights& weights, const ObjectMap& map,
                              const Eigen::MatrixXd& query_desc, uint64_t sample_seed);

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s);
Eigen::MatrixXd col_softmax(const Eigen::MatrixXd& s);
// Elementwise product of the row-wise and column-wise softmaxes.
Eigen::MatrixXd dual_softmax(const Eigen::MatrixXd& s);

struct Match {
  int query = 0;
  int point = 0;
  double confidence = 0.0;
};

struct MatchSet {
  std::vector<Match> matches;  // ordered by query index

  int size() const { return static_cast<int>(matches.size()); }
};

// Mutual-maximum selection: (q, j) is kept iff it is the argmax of row q and
// of column j (first index wins ties) and its confidence reaches the
// threshold. Each query and each point appears at most once.
MatchSet select_matches(const Eigen::MatrixXd& confidence, double threshold);

}  // namespace deskpose
