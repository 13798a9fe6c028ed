#pragma once

// Encoder-decoder grounding network.
//
//   clips   -> linear -> + sinusoidal position -> pre-norm encoder -> V_enc
//   queries -> linear (F_q) -> + sentence-index embedding -> pre-norm decoder
//              (self-attention, cosine cross-attention to V_enc, FFN)
//           -> linear head -> (center, width) -> [start, end]
//
// Every function takes parameters by const reference; the forward pass can
// run on a gradient tape (training) or on a constant tape (inference).

#include <Eigen/Dense>
#include "json.hpp"  // nlohmann/json, vendored

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ccl/autodiff.hpp"
#include "ccl/errors.hpp"
#include "ccl/rng.hpp"
#include "ccl/synthetic_data.hpp"
#include "ccl/temporal_math.hpp"

namespace ccl {

struct ModelConfig {
  int video_dim = 32;
  int query_dim = 32;
  int D = 32;
  int enc_layers = 3;
  int dec_layers = 3;
  int heads = 4;
  int ffn_dim = 64;
  double attn_scale_init = 10.0;
  int max_sentences = 8;

  int head_dim() const { return D / heads; }

  void validate() const {
    if (video_dim < 1 || query_dim < 1) throw ValidationError("model: input dims must be >= 1");
    if (D < 1 || heads < 1 || D % heads != 0) {
      throw ValidationError("model: hidden size " + std::to_string(D) + " is not divisible by " +
                            std::to_string(heads) + " heads");
    }
    if (enc_layers < 1 || dec_layers < 1) throw ValidationError("model: need at least one encoder and decoder layer");
    if (ffn_dim < 1) throw ValidationError("model: ffn_dim must be >= 1");
    if (max_sentences < 1) throw ValidationError("model: max_sentences must be >= 1");
    if (!std::isfinite(attn_scale_init)) throw ValidationError("model: attn_scale_init must be finite");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, video_dim, query_dim, D, enc_layers, dec_layers, heads,
                                                ffn_dim, attn_scale_init, max_sentences)

using TensorMap = std::map<std::string, Matrix>;
using GradMap = TensorMap;

/// All learnable tensors of one network, addressed by name.
struct ModelParams {
  ModelConfig config;
  TensorMap tensors;

  const Matrix& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }
  Matrix& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors) n += static_cast<std::size_t>(m.size());
    return n;
  }

  /// First parameter holding a NaN or infinity, if any.
  std::optional<std::string> first_non_finite() const {
    for (const auto& [name, m] : tensors) {
      if (!m.allFinite()) return name;
    }
    return std::nullopt;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.config == b.config) || a.tensors.size() != b.tensors.size()) return false;
    for (const auto& [name, m] : a.tensors) {
      auto it = b.tensors.find(name);
      if (it == b.tensors.end()) return false;
      if (it->second.rows() != m.rows() || it->second.cols() != m.cols() || it->second != m) return false;
    }
    return true;
  }
};

/// Throws if the two maps do not hold the same names with the same shapes.
inline void require_same_layout(const TensorMap& a, const TensorMap& b, const char* what) {
  if (a.size() != b.size()) throw ValidationError(std::string(what) + ": parameter count mismatch");
  for (const auto& [name, m] : a) {
    auto it = b.find(name);
    if (it == b.end()) throw ValidationError(std::string(what) + ": missing parameter '" + name + "'");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw ValidationError(std::string(what) + ": shape mismatch for parameter '" + name + "'");
    }
  }
}

namespace detail {

inline void add_linear(TensorMap& t, Rng& rng, const std::string& prefix, int fan_in, int fan_out) {
  t[prefix + ".weight"] = gaussian_matrix(rng, fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  t[prefix + ".bias"] = Matrix::Zero(1, fan_out);
}

inline void add_norm(TensorMap& t, const std::string& prefix, int width) {
  t[prefix + ".gain"] = Matrix::Ones(1, width);
  t[prefix + ".bias"] = Matrix::Zero(1, width);
}

inline void add_attention(TensorMap& t, Rng& rng, const std::string& prefix, int d) {
  add_linear(t, rng, prefix + ".q", d, d);
  add_linear(t, rng, prefix + ".k", d, d);
  add_linear(t, rng, prefix + ".v", d, d);
  add_linear(t, rng, prefix + ".out", d, d);
}

inline void add_ffn(TensorMap& t, Rng& rng, const std::string& prefix, int d, int hidden) {
  add_linear(t, rng, prefix + ".fc1", d, hidden);
  add_linear(t, rng, prefix + ".fc2", hidden, d);
}

}  // namespace detail

inline std::string enc_prefix(int layer) { return "enc." + std::to_string(layer); }
inline std::string dec_prefix(int layer) { return "dec." + std::to_string(layer); }

/// Deterministic in (cfg, seed). Linear weights ~ Normal(0, 1/fan_in).
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  p.config = cfg;
  TensorMap& t = p.tensors;
  // Insertion order is irrelevant (std::map), draw order is fixed below.
  detail::add_linear(t, rng, "video_proj", cfg.video_dim, cfg.D);
  detail::add_linear(t, rng, "query_proj", cfg.query_dim, cfg.D);
  t["sentence_embed"] = detail::gaussian_matrix(rng, cfg.max_sentences, cfg.D, 0.1);
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string e = enc_prefix(l);
    detail::add_norm(t, e + ".norm1", cfg.D);
    detail::add_attention(t, rng, e + ".attn", cfg.D);
    detail::add_norm(t, e + ".norm2", cfg.D);
    detail::add_ffn(t, rng, e + ".ffn", cfg.D, cfg.ffn_dim);
  }
  detail::add_norm(t, "enc.final_norm", cfg.D);
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string d = dec_prefix(l);
    detail::add_norm(t, d + ".norm1", cfg.D);
    detail::add_attention(t, rng, d + ".self", cfg.D);
    detail::add_norm(t, d + ".norm2", cfg.D);
    detail::add_attention(t, rng, d + ".cross", cfg.D);
    t[d + ".cross.scale"] = Matrix::Constant(1, 1, cfg.attn_scale_init);
    detail::add_norm(t, d + ".norm3", cfg.D);
    detail::add_ffn(t, rng, d + ".ffn", cfg.D, cfg.ffn_dim);
  }
  detail::add_norm(t, "dec.final_norm", cfg.D);
  detail::add_linear(t, rng, "head", cfg.D, 2);
  return p;
}

/// Fixed sinusoidal position table, T x D.
inline Matrix sinusoidal_positions(int T, int D) {
  Matrix pe(T, D);
  for (int pos = 0; pos < T; ++pos) {
    for (int i = 0; i < D; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(D));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Graph construction

/// Parameters bound to a tape as leaves.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ModelParams& params, bool requires_grad) : tape_(&tape), params_(&params) {
    for (const auto& [name, m] : params.tensors) vars_.emplace(name, tape.leaf(m, requires_grad));
  }

  ad::Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ValidationError("unknown parameter '" + name + "'");
    return it->second;
  }

  const ModelConfig& config() const { return params_->config; }
  ad::Tape& tape() const { return *tape_; }

  /// Gradients after tape.backward(); parameters untouched by the loss get zeros.
  GradMap gradients() const {
    GradMap out;
    for (const auto& [name, v] : vars_) {
      const Matrix& g = v.grad();
      out.emplace(name, g.size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : g);
    }
    return out;
  }

 private:
  ad::Tape* tape_;
  const ModelParams* params_;
  std::map<std::string, ad::Var> vars_;
};

namespace graph {

inline ad::Var linear(const BoundParams& p, ad::Var x, const std::string& prefix) {
  return ad::linear(x, p[prefix + ".weight"], p[prefix + ".bias"]);
}

inline ad::Var norm(const BoundParams& p, ad::Var x, const std::string& prefix) {
  return ad::layer_norm(x, p[prefix + ".gain"], p[prefix + ".bias"]);
}

inline ad::Var ffn(const BoundParams& p, ad::Var x, const std::string& prefix) {
  return linear(p, ad::gelu(linear(p, x, prefix + ".fc1")), prefix + ".fc2");
}

/// Attention logits softmax(s · cos(q, k)) for one head.
inline ad::Var cosine_attention_weights(ad::Var q, ad::Var k, ad::Var scale) {
  return ad::softmax_rows(ad::scale_by(ad::matmul_nt(ad::normalize_rows(q), ad::normalize_rows(k)), scale));
}

struct AttentionOut {
  ad::Var out;
  ad::Var weights;  // head-averaged, rows sum to 1
};

/// Multi-head attention. With `cosine_scale` defined the logits are
/// s · cos(q, k); otherwise scaled dot products.
inline AttentionOut attention(const BoundParams& p, ad::Var queries, ad::Var keys, const std::string& prefix,
                              std::optional<ad::Var> cosine_scale) {
  const int heads = p.config().heads;
  const int dh = p.config().head_dim();
  const ad::Var q = linear(p, queries, prefix + ".q");
  const ad::Var k = linear(p, keys, prefix + ".k");
  const ad::Var v = linear(p, keys, prefix + ".v");
  std::vector<ad::Var> outs, weights;
  for (int h = 0; h < heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * dh, dh);
    const ad::Var kh = ad::slice_cols(k, h * dh, dh);
    const ad::Var vh = ad::slice_cols(v, h * dh, dh);
    ad::Var w;
    if (cosine_scale) {
      w = cosine_attention_weights(qh, kh, *cosine_scale);
    } else {
      w = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
    }
    weights.push_back(w);
    outs.push_back(ad::matmul(w, vh));
  }
  const ad::Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
  return {linear(p, merged, prefix + ".out"), heads == 1 ? weights.front() : ad::average(weights)};
}

/// raw (N x 2) -> [clamp(c - w/2), clamp(c + w/2)] with c, w = logistic(raw).
inline ad::Var interval_head(ad::Var raw) {
  ad::Tape& t = *raw.tape();
  const Matrix& r = raw.value();
  const Eigen::Index n = r.rows();
  Matrix out(n, 2);
  Matrix pass(n, 2);  // 1 where the clamp is inactive
  Matrix cw(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = ad::logistic(r(i, 0));
    const double w = ad::logistic(r(i, 1));
    cw(i, 0) = c;
    cw(i, 1) = w;
    const double s = c - 0.5 * w;
    const double e = c + 0.5 * w;
    out(i, 0) = std::clamp(s, 0.0, 1.0);
    out(i, 1) = std::clamp(e, 0.0, 1.0);
    pass(i, 0) = (s > 0.0 && s < 1.0) ? 1.0 : 0.0;
    pass(i, 1) = (e > 0.0 && e < 1.0) ? 1.0 : 0.0;
  }
  const int ir = raw.id();
  return t.record(std::move(out), {raw}, [ir, pass, cw](ad::Tape& tp, const Matrix& g) {
    Matrix d(pass.rows(), 2);
    for (Eigen::Index i = 0; i < pass.rows(); ++i) {
      const double gs = g(i, 0) * pass(i, 0);
      const double ge = g(i, 1) * pass(i, 1);
      const double dc = gs + ge;
      const double dw = 0.5 * (ge - gs);
      d(i, 0) = dc * cw(i, 0) * (1.0 - cw(i, 0));
      d(i, 1) = dw * cw(i, 1) * (1.0 - cw(i, 1));
    }
    tp.accumulate(ir, d);
  });
}

}  // namespace graph

/// Tape handles for one forward pass.
struct ForwardGraph {
  ad::Var boundaries;          // N x 2, columns (start, end)
  ad::Var v_enc;               // T x D
  std::vector<ad::Var> attn;   // per decoder layer, N x T
  ad::Var query_proj;          // N x D
};

inline ForwardGraph forward_graph(const BoundParams& p, const Matrix& video_feats, const Matrix& query_feats) {
  const ModelConfig& cfg = p.config();
  if (video_feats.cols() != cfg.video_dim || query_feats.cols() != cfg.query_dim) {
    throw ValidationError("forward: input widths (" + std::to_string(video_feats.cols()) + ", " +
                          std::to_string(query_feats.cols()) + ") do not match model (" +
                          std::to_string(cfg.video_dim) + ", " + std::to_string(cfg.query_dim) + ")");
  }
  if (query_feats.rows() < 1 || query_feats.rows() > cfg.max_sentences) {
    throw ValidationError("forward: " + std::to_string(query_feats.rows()) + " sentences, model supports 1.." +
                          std::to_string(cfg.max_sentences));
  }
  if (video_feats.rows() < 1) throw ValidationError("forward: empty video");
  ad::Tape& t = p.tape();
  const int T = static_cast<int>(video_feats.rows());
  const int N = static_cast<int>(query_feats.rows());

  ad::Var x = graph::linear(p, t.constant(video_feats), "video_proj");
  x = ad::add(x, t.constant(sinusoidal_positions(T, cfg.D)));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    const std::string e = enc_prefix(l);
    const ad::Var h = graph::norm(p, x, e + ".norm1");
    x = ad::add(x, graph::attention(p, h, h, e + ".attn", std::nullopt).out);
    x = ad::add(x, graph::ffn(p, graph::norm(p, x, e + ".norm2"), e + ".ffn"));
  }
  const ad::Var v_enc = graph::norm(p, x, "enc.final_norm");

  const ad::Var q_proj = graph::linear(p, t.constant(query_feats), "query_proj");
  std::vector<int> positions(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) positions[static_cast<std::size_t>(i)] = i;
  ad::Var y = ad::add(q_proj, ad::gather_rows(p["sentence_embed"], positions));
  std::vector<ad::Var> attn;
  for (int l = 0; l < cfg.dec_layers; ++l) {
    const std::string d = dec_prefix(l);
    const ad::Var h1 = graph::norm(p, y, d + ".norm1");
    y = ad::add(y, graph::attention(p, h1, h1, d + ".self", std::nullopt).out);
    const auto cross = graph::attention(p, graph::norm(p, y, d + ".norm2"), v_enc, d + ".cross", p[d + ".cross.scale"]);
    y = ad::add(y, cross.out);
    attn.push_back(cross.weights);
    y = ad::add(y, graph::ffn(p, graph::norm(p, y, d + ".norm3"), d + ".ffn"));
  }
  const ad::Var raw = graph::linear(p, graph::norm(p, y, "dec.final_norm"), "head");
  return {graph::interval_head(raw), v_enc, std::move(attn), q_proj};
}

inline IntervalSet to_intervals(const Matrix& boundaries) {
  IntervalSet out(static_cast<std::size_t>(boundaries.rows()));
  for (Eigen::Index i = 0; i < boundaries.rows(); ++i) out[static_cast<std::size_t>(i)] = {boundaries(i, 0), boundaries(i, 1)};
  return out;
}

struct ForwardOutput {
  IntervalSet intervals;
  Matrix v_enc;
  std::vector<Matrix> attn;
  Matrix query_proj;
};

namespace detail {

inline void require_finite_graph(const ModelParams& params, const ForwardGraph& g) {
  bool ok = g.boundaries.value().allFinite() && g.v_enc.value().allFinite() && g.query_proj.value().allFinite();
  for (const auto& a : g.attn) ok = ok && a.value().allFinite();
  if (ok) return;
  const auto bad = params.first_non_finite();
  throw DivergenceError("forward: non-finite activation; first offending parameter: " +
                        (bad ? *bad : std::string("<none, activations overflowed>")));
}

}  // namespace detail

/// Inference pass; no gradient bookkeeping.
inline ForwardOutput forward(const ModelParams& params, const Matrix& video_feats, const Matrix& query_feats) {
  if (const auto bad = params.first_non_finite()) {
    throw DivergenceError("forward: non-finite activation; first offending parameter: " + *bad);
  }
  ad::Tape tape;
  const BoundParams bound(tape, params, false);
  const ForwardGraph g = forward_graph(bound, video_feats, query_feats);
  detail::require_finite_graph(params, g);
  ForwardOutput out;
  out.intervals = to_intervals(g.boundaries.value());
  out.v_enc = g.v_enc.value();
  for (const auto& a : g.attn) out.attn.push_back(a.value());
  out.query_proj = g.query_proj.value();
  return out;
}

/// Intervals only.
inline IntervalSet predict(const ModelParams& params, const Matrix& video_feats, const Matrix& query_feats) {
  return forward(params, video_feats, query_feats).intervals;
}

// ---------------------------------------------------------------------------
// Moment pooling and attention targets

/// Clips whose centers lie inside `iv`; falls back to the clip nearest the
/// interval midpoint (ties to the lower index) when none does.
inline std::vector<int> member_clips(const Interval& iv, int T) {
  std::vector<int> members;
  for (int j = 0; j < T; ++j) {
    const double c = clip_center(j, T);
    if (iv.start <= c && c <= iv.end) members.push_back(j);
  }
  if (members.empty()) {
    const double mid = iv.midpoint();
    int best = 0;
    double best_dist = std::abs(clip_center(0, T) - mid);
    for (int j = 1; j < T; ++j) {
      const double d = std::abs(clip_center(j, T) - mid);
      if (d < best_dist) {
        best = j;
        best_dist = d;
      }
    }
    members.push_back(best);
  }
  return members;
}

/// N x T row-stochastic matrix, uniform over each interval's member clips.
inline Matrix membership_weights(const IntervalSet& intervals, int T) {
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(intervals.size()), T);
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto members = member_clips(intervals[i], T);
    const double share = 1.0 / static_cast<double>(members.size());
    for (int j : members) w(static_cast<Eigen::Index>(i), j) = share;
  }
  return w;
}

/// Row i is the mean of the V_enc rows inside interval i.
inline Matrix moment_pool(const Matrix& v_enc, const IntervalSet& intervals, int T) {
  if (v_enc.rows() != T) throw ValidationError("moment_pool: V_enc has " + std::to_string(v_enc.rows()) + " rows, T=" + std::to_string(T));
  return membership_weights(intervals, T) * v_enc;
}

/// Differentiable in V_enc only; the membership mask is a constant.
inline ad::Var moment_pool(ad::Var v_enc, const IntervalSet& intervals) {
  const int T = static_cast<int>(v_enc.rows());
  return ad::matmul(v_enc.tape()->constant(membership_weights(intervals, T)), v_enc);
}

namespace graph {

/// Mean over rows of −Σ_j target(i,j) · log(attn(i,j) + 1e-9).
inline ad::Var attention_cross_entropy(ad::Var attn, const Matrix& target) {
  ad::detail::require_same_shape(attn.value(), target, "attention_cross_entropy");
  const Matrix& a = attn.value();
  const double inv_n = 1.0 / static_cast<double>(a.rows());
  const double loss = -(target.array() * (a.array() + 1e-9).log()).sum() * inv_n;
  const int ia = attn.id();
  return attn.tape()->record(Matrix::Constant(1, 1, loss), {attn}, [ia, target, inv_n](ad::Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    tp.accumulate(ia, (-(target.array() / (av.array() + 1e-9)) * (inv_n * g(0, 0))).matrix());
  });
}

}  // namespace graph

/// Averages the per-layer cross-entropy against uniform-inside-GT targets.
inline ad::Var attention_loss(std::span<const ad::Var> attn, const IntervalSet& gt, int T) {
  if (attn.empty()) throw ValidationError("attention_loss: no attention layers");
  if (static_cast<Eigen::Index>(gt.size()) != attn.front().rows()) {
    throw ValidationError("attention_loss: " + std::to_string(gt.size()) + " targets for " +
                          std::to_string(attn.front().rows()) + " sentences");
  }
  const Matrix target = membership_weights(gt, T);
  std::vector<ad::Var> per_layer;
  std::vector<double> weights;
  for (const ad::Var& a : attn) {
    per_layer.push_back(graph::attention_cross_entropy(a, target));
    weights.push_back(1.0 / static_cast<double>(attn.size()));
  }
  return ad::weighted_sum(*attn.front().tape(), per_layer, weights);
}

inline double attention_loss(const std::vector<Matrix>& attn, const IntervalSet& gt, int T) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Matrix& a : attn) {
    if (a.cols() != T) throw ValidationError("attention_loss: attention width does not match T");
    vars.push_back(tape.constant(a));
  }
  return attention_loss(vars, gt, T).scalar();
}

// ---------------------------------------------------------------------------
// Differentiable localization losses

namespace detail {

/// ∂max(a, b)/∂a with ties split evenly.
inline double dmax_da(double a, double b) { return a > b ? 1.0 : (a < b ? 0.0 : 0.5); }
inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// giou(pred, target) and its partials in pred.start, pred.end.
struct GiouGrad {
  double value, d_start, d_end;
};

inline GiouGrad giou_with_grad(double s1, double e1, double s2, double e2) {
  const double hi_s = std::max(s1, s2), lo_e = std::min(e1, e2);
  const double raw_inter = lo_e - hi_s;
  const double inter = std::max(0.0, raw_inter);
  const double d_inter_active = raw_inter > 0.0 ? 1.0 : (raw_inter < 0.0 ? 0.0 : 0.5);
  // ∂inter/∂s1 = −∂max(s1,s2)/∂s1, ∂inter/∂e1 = ∂min(e1,e2)/∂e1
  const double di_s = -d_inter_active * dmax_da(s1, s2);
  const double di_e = d_inter_active * dmax_da(e2, e1);
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  const double du_s = -1.0 - di_s;
  const double du_e = 1.0 - di_e;
  const double enc = std::max(e1, e2) - std::min(s1, s2);
  const double dc_s = -dmax_da(s2, s1);
  const double dc_e = dmax_da(e1, e2);

  GiouGrad out{0.0, 0.0, 0.0};
  if (uni > 0.0) {
    out.value = inter / uni;
    out.d_start = (di_s * uni - inter * du_s) / (uni * uni);
    out.d_end = (di_e * uni - inter * du_e) / (uni * uni);
  }
  if (enc > 0.0) {
    // giou = iou − (enc − uni)/enc = iou − 1 + uni/enc
    out.value += uni / enc - 1.0;
    out.d_start += (du_s * enc - uni * dc_s) / (enc * enc);
    out.d_end += (du_e * enc - uni * dc_e) / (enc * enc);
  }
  return out;
}

}  // namespace detail

namespace graph {

/// Mean over sentences of |Δstart| + |Δend| + (1 − giou).
inline ad::Var location_loss(ad::Var boundaries, const IntervalSet& target) {
  const Matrix& b = boundaries.value();
  if (static_cast<Eigen::Index>(target.size()) != b.rows()) {
    throw ValidationError("location_loss: " + std::to_string(b.rows()) + " predictions for " +
                          std::to_string(target.size()) + " targets");
  }
  const Eigen::Index n = b.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  Matrix d(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Interval& tg = target[static_cast<std::size_t>(i)];
    const auto gi = detail::giou_with_grad(b(i, 0), b(i, 1), tg.start, tg.end);
    loss += std::abs(b(i, 0) - tg.start) + std::abs(b(i, 1) - tg.end) + 1.0 - gi.value;
    d(i, 0) = (detail::sign0(b(i, 0) - tg.start) - gi.d_start) * inv_n;
    d(i, 1) = (detail::sign0(b(i, 1) - tg.end) - gi.d_end) * inv_n;
  }
  const int ib = boundaries.id();
  return boundaries.tape()->record(Matrix::Constant(1, 1, loss * inv_n), {boundaries},
                                   [ib, d](ad::Tape& tp, const Matrix& g) { tp.accumulate(ib, d * g(0, 0)); });
}

/// Mean over sentences of |Δstart| + |Δend|; prediction-consistency term.
inline ad::Var l1_loss(ad::Var boundaries, const IntervalSet& target) {
  const Matrix& b = boundaries.value();
  if (static_cast<Eigen::Index>(target.size()) != b.rows()) throw ValidationError("l1_loss: length mismatch");
  const Eigen::Index n = b.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  Matrix d(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Interval& tg = target[static_cast<std::size_t>(i)];
    loss += std::abs(b(i, 0) - tg.start) + std::abs(b(i, 1) - tg.end);
    d(i, 0) = detail::sign0(b(i, 0) - tg.start) * inv_n;
    d(i, 1) = detail::sign0(b(i, 1) - tg.end) * inv_n;
  }
  const int ib = boundaries.id();
  return boundaries.tape()->record(Matrix::Constant(1, 1, loss * inv_n), {boundaries},
                                   [ib, d](ad::Tape& tp, const Matrix& g) { tp.accumulate(ib, d * g(0, 0)); });
}

/// Symmetric InfoNCE between moment features and sentence features, cosine
/// similarity over temperature tau, positives on matching rows.
inline ad::Var contrastive_consistency(ad::Var moments, ad::Var sentences, double tau) {
  if (!(tau > 0.0)) throw ValidationError("contrastive loss: tau must be > 0");
  if (moments.rows() != sentences.rows() || moments.cols() != sentences.cols() || moments.rows() < 1) {
    throw ValidationError("contrastive loss: feature matrices must both be K x D with K >= 1");
  }
  const ad::Var sims = ad::matmul_nt(ad::normalize_rows(moments), ad::normalize_rows(sentences));
  return ad::symmetric_info_nce(ad::scale(sims, 1.0 / tau));
}

}  // namespace graph

// ---------------------------------------------------------------------------
// Loss specification and gradients

/// A weighted combination of differentiable loss terms for one sample.
struct LossSpec {
  double loc_weight = 0.0;
  double att_weight = 0.0;
  double con_weight = 0.0;
  double l1_weight = 0.0;
  std::optional<IntervalSet> targets;         // loc, att and l1 terms
  std::optional<IntervalSet> pool_intervals;  // con term: moment pooling mask
  double tau = 0.01;

  void validate() const {
    for (double w : {loc_weight, att_weight, con_weight, l1_weight}) {
      if (!std::isfinite(w) || w < 0.0) throw ValidationError("loss spec: weights must be finite and >= 0");
    }
    if (loc_weight == 0.0 && att_weight == 0.0 && con_weight == 0.0 && l1_weight == 0.0) {
      throw ValidationError("loss spec: no differentiable term selected");
    }
    if ((loc_weight > 0.0 || att_weight > 0.0 || l1_weight > 0.0) && !targets) {
      throw ValidationError("loss spec: localization terms need target intervals");
    }
    if (con_weight > 0.0 && !pool_intervals) {
      throw ValidationError("loss spec: contrastive term needs pooling intervals");
    }
  }
};

struct LossTerms {
  double total = 0.0;
  double loc = 0.0;
  double att = 0.0;
  double con = 0.0;
  double l1 = 0.0;
};

/// Appends the spec's loss for one forward graph; returns the weighted total.
inline ad::Var build_loss(const ForwardGraph& g, const LossSpec& spec, LossTerms* terms = nullptr) {
  spec.validate();
  ad::Tape& t = *g.boundaries.tape();
  const int T = static_cast<int>(g.v_enc.rows());
  std::vector<ad::Var> parts;
  std::vector<double> weights;
  LossTerms local;
  if (spec.loc_weight > 0.0) {
    parts.push_back(graph::location_loss(g.boundaries, *spec.targets));
    weights.push_back(spec.loc_weight);
    local.loc = parts.back().scalar();
  }
  if (spec.att_weight > 0.0) {
    parts.push_back(attention_loss(g.attn, *spec.targets, T));
    weights.push_back(spec.att_weight);
    local.att = parts.back().scalar();
  }
  if (spec.l1_weight > 0.0) {
    parts.push_back(graph::l1_loss(g.boundaries, *spec.targets));
    weights.push_back(spec.l1_weight);
    local.l1 = parts.back().scalar();
  }
  if (spec.con_weight > 0.0) {
    const ad::Var moments = moment_pool(g.v_enc, *spec.pool_intervals);
    parts.push_back(graph::contrastive_consistency(moments, g.query_proj, spec.tau));
    weights.push_back(spec.con_weight);
    local.con = parts.back().scalar();
  }
  ad::Var total = ad::weighted_sum(t, parts, weights);
  local.total = total.scalar();
  if (terms != nullptr) *terms = local;
  return total;
}

struct GradientResult {
  LossTerms loss;
  GradMap grads;
};

/// Loss value and its gradient with respect to every parameter.
inline GradientResult compute_gradients(const ModelParams& params, const Matrix& video_feats, const Matrix& query_feats,
                                        const LossSpec& spec) {
  spec.validate();
  ad::Tape tape;
  const BoundParams bound(tape, params, true);
  const ForwardGraph g = forward_graph(bound, video_feats, query_feats);
  GradientResult out;
  const ad::Var total = build_loss(g, spec, &out.loss);
  tape.backward(total);
  out.grads = bound.gradients();
  return out;
}

/// Loss value only.
inline LossTerms evaluate_loss(const ModelParams& params, const Matrix& video_feats, const Matrix& query_feats,
                               const LossSpec& spec) {
  ad::Tape tape;
  const BoundParams bound(tape, params, false);
  const ForwardGraph g = forward_graph(bound, video_feats, query_feats);
  LossTerms terms;
  build_loss(g, spec, &terms);
  return terms;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  TensorMap m;
  TensorMap v;
  long step = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(ModelParams& params, const GradMap& grads, AdamState& state, const AdamConfig& cfg = {}) {
  require_same_layout(params.tensors, grads, "adam_step");
  if (state.m.empty()) {
    for (const auto& [name, p] : params.tensors) {
      state.m.emplace(name, Matrix::Zero(p.rows(), p.cols()));
      state.v.emplace(name, Matrix::Zero(p.rows(), p.cols()));
    }
  } else {
    require_same_layout(params.tensors, state.m, "adam_step (optimizer state)");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params.tensors) {
    const Matrix& g = grads.at(name);
    Matrix& m = state.m.at(name);
    Matrix& v = state.v.at(name);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

}  // namespace ccl
