#include <cmath>
#include <string>

#include "deskpose/common.hpp"
#include "deskpose/matcher_train.hpp"

namespace deskpose {

namespace {

constexpr double kProbFloor = 1e-12;

inline double elu1_derivative(double z) { return z > 0.0 ? 1.0 : std::exp(z); }

// d/dc of -(1-c)^gamma * log(c); the focal term for a cell whose target
// probability is c. The clamp below the floor makes the term constant there,
// so its derivative is zero.
double focal_term_derivative(double c, double gamma) {
  if (c < kProbFloor) return 0.0;
  if (gamma == 0.0) return -1.0 / std::min(c, 1.0);
  if (c >= 1.0) return 0.0;  // the limit for every gamma > 0
  return gamma * std::pow(1.0 - c, gamma - 1.0) * std::log(c) - std::pow(1.0 - c, gamma) / c;
}

double focal_term(double c, double gamma) {
  c = std::min(std::max(c, kProbFloor), 1.0);
  return -std::pow(1.0 - c, gamma) * std::log(c);
}

// Backward through one linear-attention layer given the gradient of its
// output (before the output projection). Accumulates projection-weight
// gradients and returns the input gradients via dx_query / dx_keyval.
void linear_attention_backward(const Eigen::MatrixXd& x_query, const Eigen::MatrixXd& x_keyval,
                               const AttentionLayerWeights& w, const LinearAttentionCache& cache,
                               const Eigen::MatrixXd& d_attn, AttentionLayerWeights* dw,
                               Eigen::MatrixXd* dx_query, Eigen::MatrixXd* dx_keyval) {
  // attn_i = kv * phi_q_i / den_i with kv = values * phi_k^T,
  // den_i = phi_q_i . key_sum + eps.
  Eigen::VectorXd inv_den = cache.den.cwiseInverse();
  Eigen::MatrixXd d_num = d_attn * inv_den.asDiagonal();
  // d den_i = -(d_attn_i . attn_i) / den_i
  Eigen::VectorXd d_den =
      -(d_attn.cwiseProduct(cache.attn).colwise().sum().transpose().cwiseProduct(inv_den));

  Eigen::MatrixXd d_kv = d_num * cache.phi_q.transpose();
  Eigen::MatrixXd d_phi_q = cache.kv.transpose() * d_num + cache.key_sum * d_den.transpose();
  Eigen::VectorXd d_key_sum = cache.phi_q * d_den;

  Eigen::MatrixXd d_values = d_kv * cache.phi_k;
  Eigen::MatrixXd d_phi_k = d_kv.transpose() * cache.values;
  d_phi_k.colwise() += d_key_sum;

  Eigen::MatrixXd d_zq =
      d_phi_q.cwiseProduct(cache.zq.unaryExpr([](double z) { return elu1_derivative(z); }));
  Eigen::MatrixXd d_zk =
      d_phi_k.cwiseProduct(cache.zk.unaryExpr([](double z) { return elu1_derivative(z); }));

  dw->query += d_zq * x_query.transpose();
  dw->key += d_zk * x_keyval.transpose();
  dw->value += d_values * x_keyval.transpose();
  *dx_query += w.query.transpose() * d_zq;
  *dx_keyval += w.key.transpose() * d_zk + w.value.transpose() * d_values;
}

// Backward of columnwise unit normalization y = x / max(|x|, floor):
// dx = (g - (g.y) y) / |x|.
Eigen::MatrixXd normalize_columns_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                           const Eigen::MatrixXd& dy) {
  Eigen::MatrixXd dx(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double n = std::max(x.col(j).norm(), 1e-12);
    dx.col(j) = (dy.col(j) - dy.col(j).dot(y.col(j)) * y.col(j)) / n;
  }
  return dx;
}

// Softmax backward along rows of a: ds = a .* (dy - rowwise <a, dy>).
Eigen::MatrixXd row_softmax_backward(const Eigen::MatrixXd& a, const Eigen::MatrixXd& dy) {
  Eigen::MatrixXd ds(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double dot = a.row(i).dot(dy.row(i));
    ds.row(i) = a.row(i).cwiseProduct((dy.row(i).array() - dot).matrix());
  }
  return ds;
}

Eigen::MatrixXd col_softmax_backward(const Eigen::MatrixXd& a, const Eigen::MatrixXd& dy) {
  Eigen::MatrixXd ds(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double dot = a.col(j).dot(dy.col(j));
    ds.col(j) = a.col(j).cwiseProduct((dy.col(j).array() - dot).matrix());
  }
  return ds;
}

void check_finite(const Eigen::MatrixXd& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite gradient in " + where);
}

}  // namespace

double focal_loss(const Eigen::MatrixXd& confidence, const std::vector<int>& gt_point_for_query,
                  double focal_gamma) {
  if (static_cast<Eigen::Index>(gt_point_for_query.size()) != confidence.rows())
    throw ValidationError("ground-truth assignment length mismatch");
  if (focal_gamma < 0.0) throw ValidationError("focal_gamma must be non-negative");
  double sum = 0.0;
  for (Eigen::Index q = 0; q < confidence.rows(); ++q) {
    int gt = gt_point_for_query[static_cast<size_t>(q)];
    if (gt < -1 || gt >= confidence.cols()) throw ValidationError("ground-truth point out of range");
    for (Eigen::Index j = 0; j < confidence.cols(); ++j) {
      double target = (j == gt) ? confidence(q, j) : 1.0 - confidence(q, j);
      sum += focal_term(target, focal_gamma);
    }
  }
  return sum / static_cast<double>(confidence.size());
}

double loss_and_gradient(const MatcherWeights& weights, const Eigen::MatrixXd& query_desc,
                         const Eigen::MatrixXd& point_desc, const Eigen::MatrixXd& track_feats,
                         const std::vector<int>& gt_point_for_query, double focal_gamma,
                         MatcherWeights* gradient) {
  MatcherForwardCache cache;
  matcher_forward(weights, query_desc, point_desc, track_feats, &cache);
  const MatcherConfig& cfg = weights.config;
  const int k = cfg.track_sample;
  const Eigen::Index qn = query_desc.cols(), jn = point_desc.cols();

  double loss = focal_loss(cache.confidence, gt_point_for_query, focal_gamma);

  // Loss -> confidence. Negative cells flip the sign because their target
  // probability is 1 - C.
  Eigen::MatrixXd d_conf(qn, jn);
  const double cell_weight = 1.0 / static_cast<double>(qn * jn);
  for (Eigen::Index q = 0; q < qn; ++q) {
    int gt = gt_point_for_query[static_cast<size_t>(q)];
    for (Eigen::Index j = 0; j < jn; ++j) {
      double c = cache.confidence(q, j);
      d_conf(q, j) = (j == gt) ? cell_weight * focal_term_derivative(c, focal_gamma)
                               : -cell_weight * focal_term_derivative(1.0 - c, focal_gamma);
    }
  }

  // Confidence = row_soft .* col_soft -> scores.
  Eigen::MatrixXd d_scores =
      row_softmax_backward(cache.row_soft, d_conf.cwiseProduct(cache.col_soft)) +
      col_softmax_backward(cache.col_soft, d_conf.cwiseProduct(cache.row_soft));

  // scores = q_final^T p_final / temperature.
  Eigen::MatrixXd dq = (cache.p_final * d_scores.transpose()) / cfg.score_temperature;
  Eigen::MatrixXd dp = (cache.q_final * d_scores) / cfg.score_temperature;

  dq = normalize_columns_backward(cache.q_prenorm, cache.q_final, dq);
  dp = normalize_columns_backward(cache.p_prenorm, cache.p_final, dp);

  for (int g = cfg.num_groups - 1; g >= 0; --g) {
    const GroupWeights& gw = weights.groups[static_cast<size_t>(g)];
    GroupWeights& dgw = gradient->groups[static_cast<size_t>(g)];
    const GroupCache& gc = cache.groups[static_cast<size_t>(g)];

    // Cross attention: out = x_self + W_o * attn(x_self -> other_self).
    Eigen::MatrixXd dq_self = dq;  // residual
    Eigen::MatrixXd dp_self = dp;
    dgw.cross_query.output += dq * gc.cross_q.attn.transpose();
    dgw.cross_point.output += dp * gc.cross_p.attn.transpose();
    linear_attention_backward(gc.q_self, gc.p_self, gw.cross_query, gc.cross_q,
                              gw.cross_query.output.transpose() * dq, &dgw.cross_query, &dq_self,
                              &dp_self);
    linear_attention_backward(gc.p_self, gc.q_self, gw.cross_point, gc.cross_p,
                              gw.cross_point.output.transpose() * dp, &dgw.cross_point, &dp_self,
                              &dq_self);

    // Self attention: out = x + W_o * attn(x -> x); the input feeds the
    // query, key, and value paths as well as the residual.
    Eigen::MatrixXd dq_in = dq_self;
    Eigen::MatrixXd dp_agg = dp_self;
    dgw.self_query.output += dq_self * gc.self_q.attn.transpose();
    dgw.self_point.output += dp_self * gc.self_p.attn.transpose();
    linear_attention_backward(gc.q_in, gc.q_in, gw.self_query, gc.self_q,
                              gw.self_query.output.transpose() * dq_self, &dgw.self_query, &dq_in,
                              &dq_in);
    linear_attention_backward(gc.p_agg, gc.p_agg, gw.self_point, gc.self_p,
                              gw.self_point.output.transpose() * dp_self, &dgw.self_point, &dp_agg,
                              &dp_agg);

    // Aggregation: p_agg_j = p_j + T_j alpha_j, alpha = softmax(T_j^T W^T W p_j).
    Eigen::MatrixXd dp_in = dp_agg;  // residual
    if (cfg.aggregation == AggregationMode::kAttention) {
      const Eigen::MatrixXd& w = gw.aggregation;
      for (Eigen::Index j = 0; j < jn; ++j) {
        const auto t = track_feats.middleCols(j * k, k);
        const Eigen::VectorXd alpha = gc.alpha.col(j);
        Eigen::VectorXd d_alpha = t.transpose() * dp_agg.col(j);
        Eigen::VectorXd d_logits =
            alpha.cwiseProduct((d_alpha.array() - alpha.dot(d_alpha)).matrix());
        // logits_k = (W t_k) . (W p_j)
        Eigen::VectorXd td = t * d_logits;             // sum_k d_logits_k t_k
        Eigen::VectorXd wp = w * gc.p_in.col(j);
        dgw.aggregation += wp * td.transpose() + (w * td) * gc.p_in.col(j).transpose();
        dp_in.col(j) += w.transpose() * (w * td);
      }
    }
    dq = std::move(dq_in);
    dp = std::move(dp_in);
  }

  for (size_t g = 0; g < gradient->groups.size(); ++g) {
    const GroupWeights& dgw = gradient->groups[g];
    const std::string tag = "group " + std::to_string(g);
    check_finite(dgw.aggregation, tag + " aggregation");
    const std::pair<const AttentionLayerWeights*, const char*> layers[] = {
        {&dgw.self_query, " self_query"},
        {&dgw.self_point, " self_point"},
        {&dgw.cross_query, " cross_query"},
        {&dgw.cross_point, " cross_point"}};
    for (const auto& [layer, name] : layers) {
      check_finite(layer->query, tag + name + " query");
      check_finite(layer->key, tag + name + " key");
      check_finite(layer->value, tag + name + " value");
      check_finite(layer->output, tag + name + " output");
    }
  }
  return loss;
}

}  // namespace deskpose
