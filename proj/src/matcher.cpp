#include "deskpose/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "deskpose/common.hpp"

namespace deskpose {

namespace {

inline double elu1(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

Eigen::MatrixXd elu1(const Eigen::MatrixXd& m) {
  return m.unaryExpr([](double x) { return elu1(x); });
}

// Columnwise unit normalization with a tiny floor so a pathological zero
// column cannot divide by zero.
Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    double n = std::max(out.col(j).norm(), 1e-12);
    out.col(j) /= n;
  }
  return out;
}

void fill_gaussian(Eigen::MatrixXd& m, SplitMix64& rng, double std) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = std * rng.next_normal();
}

// Enumerates the group's matrices in the canonical flat order.
template <typename Group, typename Fn>
void for_each_matrix(Group& g, Fn&& fn) {
  fn(g.aggregation);
  for (auto* layer : {&g.self_query, &g.self_point, &g.cross_query, &g.cross_point}) {
    fn(layer->query);
    fn(layer->key);
    fn(layer->value);
    fn(layer->output);
  }
}

}  // namespace

void MatcherConfig::validate() const {
  if (num_groups < 1) throw ValidationError("num_groups must be at least 1");
  if (descriptor_dim < 1) throw ValidationError("descriptor_dim must be at least 1");
  if (track_sample < 1) throw ValidationError("track_sample must be at least 1");
  if (confidence_threshold <= 0.0 || confidence_threshold >= 1.0)
    throw ValidationError("confidence_threshold must be in (0, 1)");
  if (kernel_epsilon <= 0.0) throw ValidationError("kernel_epsilon must be positive");
  if (score_temperature <= 0.0) throw ValidationError("score_temperature must be positive");
}

MatcherWeights MatcherWeights::zeros(const MatcherConfig& config) {
  config.validate();
  MatcherWeights w;
  w.config = config;
  w.groups.resize(static_cast<size_t>(config.num_groups));
  const int d = config.descriptor_dim;
  for (auto& g : w.groups)
    for_each_matrix(g, [d](Eigen::MatrixXd& m) { m = Eigen::MatrixXd::Zero(d, d); });
  return w;
}

MatcherWeights MatcherWeights::random_init(const MatcherConfig& config, uint64_t seed) {
  MatcherWeights w = zeros(config);
  SplitMix64 rng = stream_rng(seed, Stream::kWeightInit);
  const double std = 1.0 / std::sqrt(static_cast<double>(config.descriptor_dim));
  for (auto& g : w.groups)
    for_each_matrix(g, [&](Eigen::MatrixXd& m) { fill_gaussian(m, rng, std); });
  return w;
}

int MatcherWeights::parameter_count() const {
  return config.num_groups * kMatricesPerGroup * config.descriptor_dim * config.descriptor_dim;
}

Eigen::VectorXd MatcherWeights::to_flat() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index at = 0;
  for (const auto& g : groups)
    for_each_matrix(g, [&](const Eigen::MatrixXd& m) {
      flat.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
      at += m.size();
    });
  return flat;
}

MatcherWeights MatcherWeights::from_flat(const MatcherConfig& config,
                                         const Eigen::VectorXd& flat) {
  MatcherWeights w = zeros(config);
  if (flat.size() != w.parameter_count())
    throw ValidationError("flat weight vector has the wrong length");
  Eigen::Index at = 0;
  for (auto& g : w.groups)
    for_each_matrix(g, [&](Eigen::MatrixXd& m) {
      Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = flat.segment(at, m.size());
      at += m.size();
    });
  return w;
}

void MatcherWeights::set_zero() {
  for (auto& g : groups)
    for_each_matrix(g, [](Eigen::MatrixXd& m) { m.setZero(); });
}

void MatcherWeights::add_scaled(const MatcherWeights& other, double scale) {
  if (groups.size() != other.groups.size() ||
      config.descriptor_dim != other.config.descriptor_dim)
    throw ValidationError("weight shapes disagree");
  for (size_t i = 0; i < groups.size(); ++i) {
    auto& g = groups[i];
    const auto& o = other.groups[i];
    g.aggregation += scale * o.aggregation;
    const AttentionLayerWeights* olayers[] = {&o.self_query, &o.self_point, &o.cross_query,
                                              &o.cross_point};
    AttentionLayerWeights* layers[] = {&g.self_query, &g.self_point, &g.cross_query,
                                       &g.cross_point};
    for (int l = 0; l < 4; ++l) {
      layers[l]->query += scale * olayers[l]->query;
      layers[l]->key += scale * olayers[l]->key;
      layers[l]->value += scale * olayers[l]->value;
      layers[l]->output += scale * olayers[l]->output;
    }
  }
}

Eigen::MatrixXd sample_or_pad_track(const Eigen::MatrixXd& track_descriptors, int k,
                                    SplitMix64& rng) {
  const int m = static_cast<int>(track_descriptors.cols());
  if (m == 0) throw ValidationError("cannot sample an empty track");
  if (k < 1) throw ValidationError("sample size must be positive");

  Eigen::MatrixXd out(track_descriptors.rows(), k);
  if (m >= k) {
    // Partial Fisher-Yates: the first k slots of a shuffle, no replacement.
    std::vector<int> idx(static_cast<size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(m - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
      out.col(i) = track_descriptors.col(idx[static_cast<size_t>(i)]);
    }
  } else {
    for (int i = 0; i < k; ++i) out.col(i) = track_descriptors.col(i % m);
  }
  return out;
}

Eigen::MatrixXd sample_map_tracks(const ObjectMap& map, int k, uint64_t seed) {
  const Eigen::Index d = map.desc3d.rows();
  Eigen::MatrixXd feats(d, static_cast<Eigen::Index>(map.tracks.size()) * k);
  for (size_t j = 0; j < map.tracks.size(); ++j) {
    SplitMix64 rng = stream_rng(seed, Stream::kTrackSample, static_cast<uint64_t>(j));
    feats.middleCols(static_cast<Eigen::Index>(j) * k, k) =
        sample_or_pad_track(map.tracks[j].descriptors, k, rng);
  }
  return feats;
}

Eigen::VectorXd aggregation_attention(const Eigen::MatrixXd& track_feats,
                                      const Eigen::VectorXd& f3d, const Eigen::MatrixXd& w,
                                      Eigen::VectorXd* alpha_out) {
  if (track_feats.rows() != f3d.size()) throw ValidationError("track feature dimension mismatch");
  Eigen::VectorXd logits = (w * track_feats).transpose() * (w * f3d);
  if (!logits.allFinite()) throw NumericError("non-finite aggregation similarity");
  Eigen::VectorXd alpha = (logits.array() - logits.maxCoeff()).exp();
  alpha /= alpha.sum();
  if (alpha_out) *alpha_out = alpha;
  return f3d + track_feats * alpha;
}

Eigen::MatrixXd linear_attention(const Eigen::MatrixXd& x_query, const Eigen::MatrixXd& x_keyval,
                                 const AttentionLayerWeights& w, double epsilon,
                                 LinearAttentionCache* cache) {
  Eigen::MatrixXd zq = w.query * x_query;
  Eigen::MatrixXd zk = w.key * x_keyval;
  Eigen::MatrixXd phi_q = elu1(zq);
  Eigen::MatrixXd phi_k = elu1(zk);
  Eigen::MatrixXd values = w.value * x_keyval;

  Eigen::MatrixXd kv = values * phi_k.transpose();          // d x d
  Eigen::VectorXd key_sum = phi_k.rowwise().sum();          // d
  Eigen::VectorXd den = (phi_q.transpose() * key_sum).array() + epsilon;  // Q
  Eigen::MatrixXd attn = (kv * phi_q) * den.cwiseInverse().asDiagonal();

  if (cache) {
    cache->zq = std::move(zq);
    cache->zk = std::move(zk);
    cache->phi_q = std::move(phi_q);
    cache->phi_k = std::move(phi_k);
    cache->values = std::move(values);
    cache->kv = std::move(kv);
    cache->key_sum = std::move(key_sum);
    cache->den = std::move(den);
    cache->attn = attn;
  }
  return attn;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::ArrayXd row = (s.row(i).array() - s.row(i).maxCoeff()).exp();
    out.row(i) = row / row.sum();
  }
  return out;
}

Eigen::MatrixXd col_softmax(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    Eigen::ArrayXd col = (s.col(j).array() - s.col(j).maxCoeff()).exp();
    out.col(j) = col / col.sum();
  }
  return out;
}

Eigen::MatrixXd dual_softmax(const Eigen::MatrixXd& s) {
  return row_softmax(s).cwiseProduct(col_softmax(s));
}

MatchScores matcher_forward(const MatcherWeights& weights, const Eigen::MatrixXd& query_desc,
                            const Eigen::MatrixXd& point_desc, const Eigen::MatrixXd& track_feats,
                            MatcherForwardCache* cache) {
  const MatcherConfig& cfg = weights.config;
  cfg.validate();
  const int d = cfg.descriptor_dim;
  const Eigen::Index jn = point_desc.cols();
  const int k = cfg.track_sample;
  if (query_desc.rows() != d || point_desc.rows() != d || track_feats.rows() != d)
    throw ValidationError("descriptor dimension does not match the matcher config");
  if (query_desc.cols() == 0 || jn == 0) throw ValidationError("empty descriptor set");
  if (track_feats.cols() != jn * k)
    throw ValidationError("track features must hold exactly K columns per point");
  if (static_cast<int>(weights.groups.size()) != cfg.num_groups)
    throw ValidationError("weight group count does not match the matcher config");

  Eigen::MatrixXd q = query_desc;
  Eigen::MatrixXd p = point_desc;
  if (cache) cache->groups.resize(weights.groups.size());

  for (size_t g = 0; g < weights.groups.size(); ++g) {
    const GroupWeights& gw = weights.groups[g];
    GroupCache* gc = cache ? &cache->groups[g] : nullptr;
    if (gc) {
      gc->q_in = q;
      gc->p_in = p;
    }

    // Track aggregation into the point descriptors.
    Eigen::MatrixXd p_agg(d, jn);
    Eigen::MatrixXd alpha(k, jn);
    if (cfg.aggregation == AggregationMode::kAttention) {
      Eigen::MatrixXd wt = gw.aggregation * track_feats;  // d x J*K
      Eigen::MatrixXd wp = gw.aggregation * p;            // d x J
      for (Eigen::Index j = 0; j < jn; ++j) {
        Eigen::VectorXd logits = wt.middleCols(j * k, k).transpose() * wp.col(j);
        if (!logits.allFinite())
          throw NumericError("non-finite aggregation similarity in group " + std::to_string(g));
        Eigen::VectorXd a = (logits.array() - logits.maxCoeff()).exp();
        a /= a.sum();
        alpha.col(j) = a;
        p_agg.col(j) = p.col(j) + track_feats.middleCols(j * k, k) * a;
      }
    } else {
      alpha.setConstant(1.0 / k);
      for (Eigen::Index j = 0; j < jn; ++j)
        p_agg.col(j) = p.col(j) + track_feats.middleCols(j * k, k).rowwise().mean();
    }
    if (gc) {
      gc->alpha = alpha;
      gc->p_agg = p_agg;
    }

    // Self attention on each side, then cross attention in both directions
    // reading the post-self tensors; residual connections throughout.
    Eigen::MatrixXd q_self =
        q + gw.self_query.output *
                linear_attention(q, q, gw.self_query, cfg.kernel_epsilon, gc ? &gc->self_q : nullptr);
    Eigen::MatrixXd p_self =
        p_agg + gw.self_point.output * linear_attention(p_agg, p_agg, gw.self_point,
                                                        cfg.kernel_epsilon, gc ? &gc->self_p : nullptr);
    if (gc) {
      gc->q_self = q_self;
      gc->p_self = p_self;
    }
    Eigen::MatrixXd q_next =
        q_self + gw.cross_query.output * linear_attention(q_self, p_self, gw.cross_query,
                                                          cfg.kernel_epsilon,
                                                          gc ? &gc->cross_q : nullptr);
    Eigen::MatrixXd p_next =
        p_self + gw.cross_point.output * linear_attention(p_self, q_self, gw.cross_point,
                                                          cfg.kernel_epsilon,
                                                          gc ? &gc->cross_p : nullptr);
    q = std::move(q_next);
    p = std::move(p_next);
  }

  Eigen::MatrixXd q_final = normalize_columns(q);
  Eigen::MatrixXd p_final = normalize_columns(p);

  MatchScores result;
  result.scores = (q_final.transpose() * p_final) / cfg.score_temperature;
  if (!result.scores.allFinite()) throw NumericError("non-finite match scores");
  Eigen::MatrixXd row_soft = row_softmax(result.scores);
  Eigen::MatrixXd col_soft = col_softmax(result.scores);
  result.confidence = row_soft.cwiseProduct(col_soft);

  if (cache) {
    cache->q_prenorm = std::move(q);
    cache->p_prenorm = std::move(p);
    cache->q_final = std::move(q_final);
    cache->p_final = std::move(p_final);
    cache->scores = result.scores;
    cache->row_soft = std::move(row_soft);
    cache->col_soft = std::move(col_soft);
    cache->confidence = result.confidence;
  }
  return result;
}

MatchScores match_against_map(const MatcherWeights& weights, const ObjectMap& map,
                              const Eigen::MatrixXd& query_desc, uint64_t sample_seed) {
  if (map.num_points() == 0) throw ValidationError("cannot match against an empty map");
  Eigen::MatrixXd tracks = sample_map_tracks(map, weights.config.track_sample, sample_seed);
  return matcher_forward(weights, query_desc, map.desc3d, tracks);
}

MatchSet select_matches(const Eigen::MatrixXd& confidence, double threshold) {
  const Eigen::Index rows = confidence.rows(), cols = confidence.cols();
  std::vector<Eigen::Index> row_best(static_cast<size_t>(rows));
  std::vector<Eigen::Index> col_best(static_cast<size_t>(cols));
  for (Eigen::Index q = 0; q < rows; ++q) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < cols; ++j)
      if (confidence(q, j) > confidence(q, best)) best = j;
    row_best[static_cast<size_t>(q)] = best;
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index q = 1; q < rows; ++q)
      if (confidence(q, j) > confidence(best, j)) best = q;
    col_best[static_cast<size_t>(j)] = best;
  }

  MatchSet set;
  for (Eigen::Index q = 0; q < rows; ++q) {
    Eigen::Index j = row_best[static_cast<size_t>(q)];
    if (col_best[static_cast<size_t>(j)] != q) continue;
    if (confidence(q, j) < threshold) continue;
    set.matches.push_back(
        {static_cast<int>(q), static_cast<int>(j), confidence(q, j)});
  }
  return set;
}

}  // namespace deskpose
