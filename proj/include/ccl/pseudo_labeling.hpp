#pragma once

// Consistency-scored pseudo labels and retraining from scratch.
//
// A sample's context consistency C is the mean IoU between the teacher's
// predictions on the full paragraph and on paragraphs reduced to k sentences,
// averaged over k = 1..N-1. Labels are bucketed by C; low-consistency labels
// are dropped and the rest are mixed with ground truth at per-source weights.

#include "json.hpp"  // nlohmann/json, vendored

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ccl/context_augmentation.hpp"
#include "ccl/errors.hpp"
#include "ccl/grounding_model.hpp"
#include "ccl/rng.hpp"
#include "ccl/synthetic_data.hpp"
#include "ccl/temporal_math.hpp"
#include "ccl/training.hpp"

namespace ccl {

enum class Bucket { low, mid, high };

NLOHMANN_JSON_SERIALIZE_ENUM(Bucket, {{Bucket::low, "low"}, {Bucket::mid, "mid"}, {Bucket::high, "high"}})

inline const char* to_string(Bucket b) {
  switch (b) {
    case Bucket::low: return "low";
    case Bucket::mid: return "mid";
    case Bucket::high: return "high";
  }
  return "?";
}

struct Thresholds {
  double low = 0.4;
  double high = 0.7;

  void validate() const {
    if (!(0.0 <= low && low < high && high <= 1.0)) {
      throw ValidationError("thresholds must satisfy 0 <= low < high <= 1");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Thresholds, low, high)

struct Stage2Config {
  double lambda3 = 2.0;  // ground truth
  double lambda4 = 4.0;  // high-consistency pseudo labels
  double lambda5 = 2.0;  // mid-consistency pseudo labels
  Thresholds thresholds;
  int repeats = 1;  // subset draws per k
  int steps = 1000;
  int batch = 16;
  double lr = 1e-4;
  std::uint64_t seed = 2;

  void validate() const {
    thresholds.validate();
    for (double l : {lambda3, lambda4, lambda5}) {
      if (!std::isfinite(l) || l < 0.0) throw ValidationError("stage2: lambdas must be finite and >= 0");
    }
    if (repeats < 1) throw ValidationError("stage2: repeats must be >= 1");
    if (steps < 0 || batch < 1) throw ValidationError("stage2: steps must be >= 0 and batch >= 1");
    if (!(lr > 0.0)) throw ValidationError("stage2: lr must be > 0");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Stage2Config, lambda3, lambda4, lambda5, thresholds, repeats, steps,
                                                batch, lr, seed)

struct PseudoLabel {
  std::string sample_id;
  IntervalSet intervals;
  double consistency = 1.0;
  Bucket bucket = Bucket::high;
  bool single_sentence = false;  // C fixed at 1 because nothing can be removed

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

inline Bucket bucket(double c, const Thresholds& t = {}) {
  if (c < t.low) return Bucket::low;
  if (c < t.high) return Bucket::mid;
  return Bucket::high;
}

/// C for one sample. `predict_fn(video, query) -> IntervalSet` is any model;
/// `original` is its prediction on the full paragraph.
template <class Predictor>
double context_consistency(Predictor&& predict_fn, const Matrix& video, const Matrix& query,
                           const IntervalSet& original, int repeats, Rng& rng) {
  const int n = static_cast<int>(query.rows());
  if (static_cast<int>(original.size()) != n) throw ValidationError("context_consistency: prediction length mismatch");
  if (repeats < 1) throw ValidationError("context_consistency: repeats must be >= 1");
  if (n == 1) return 1.0;
  double sum_over_k = 0.0;
  for (int k = 1; k <= n - 1; ++k) {
    double term = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const RemovalPlan plan = RemovalPlan::keeping(random_subset(n, k, rng), n);
      const IntervalSet reduced = predict_fn(video, apply_removal(query, plan));
      if (static_cast<int>(reduced.size()) != k) throw ValidationError("context_consistency: predictor returned wrong count");
      const IntervalSet mapped = map_targets(original, plan);
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += iou(reduced[static_cast<std::size_t>(j)], mapped[static_cast<std::size_t>(j)]);
      term += s / k;
    }
    sum_over_k += term / repeats;
  }
  return sum_over_k / (n - 1);
}

/// C for one sample under a trained model.
inline double context_consistency(const ModelParams& teacher, const Sample& s, int repeats, Rng& rng) {
  const auto fn = [&](const Matrix& v, const Matrix& q) { return predict(teacher, v, q); };
  return context_consistency(fn, s.video_feats, s.query_feats, predict(teacher, s.video_feats, s.query_feats),
                             repeats, rng);
}

/// One label per unlabeled training sample, in split order.
inline std::vector<PseudoLabel> generate_pseudo_labels(const ModelParams& teacher, const DatasetSplit& split,
                                                       const Stage2Config& cfg) {
  cfg.validate();
  std::vector<PseudoLabel> out;
  out.reserve(split.train_unlabeled.size());
  const auto fn = [&](const Matrix& v, const Matrix& q) { return predict(teacher, v, q); };
  for (std::size_t i = 0; i < split.train_unlabeled.size(); ++i) {
    const Sample& s = split.train_unlabeled[i];
    Rng rng(derive_seed(cfg.seed, {stream::kConsistency, fnv1a64(s.id.data(), s.id.size())}));
    PseudoLabel pl;
    pl.sample_id = s.id;
    pl.intervals = predict(teacher, s.video_feats, s.query_feats);
    pl.consistency = context_consistency(fn, s.video_feats, s.query_feats, pl.intervals, cfg.repeats, rng);
    pl.bucket = bucket(pl.consistency, cfg.thresholds);
    pl.single_sentence = s.query_feats.rows() == 1;
    out.push_back(std::move(pl));
  }
  return out;
}

inline void save_pseudo_labels(const std::vector<PseudoLabel>& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  for (const PseudoLabel& pl : labels) {
    nlohmann::json iv = nlohmann::json::array();
    for (const Interval& i : pl.intervals) iv.push_back({i.start, i.end});
    nlohmann::json j{{"sample_id", pl.sample_id},
                     {"intervals", std::move(iv)},
                     {"consistency", pl.consistency},
                     {"bucket", pl.bucket},
                     {"single_sentence", pl.single_sentence}};
    out << j.dump() << '\n';
  }
}

inline std::vector<PseudoLabel> load_pseudo_labels(const std::filesystem::path& path, const Thresholds& t = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<PseudoLabel> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      PseudoLabel pl;
      pl.sample_id = j.at("sample_id").get<std::string>();
      for (const auto& iv : j.at("intervals")) {
        if (!iv.is_array() || iv.size() != 2) throw ValidationError("interval must be [start, end]");
        pl.intervals.push_back({iv[0].get<double>(), iv[1].get<double>()});
        require_valid(pl.intervals.back());
      }
      pl.consistency = j.at("consistency").get<double>();
      if (!(pl.consistency >= 0.0 && pl.consistency <= 1.0)) throw ValidationError("consistency outside [0, 1]");
      pl.bucket = j.at("bucket").get<Bucket>();
      const std::string b = j.at("bucket").get<std::string>();
      if (b != "low" && b != "mid" && b != "high") throw ValidationError("unknown bucket '" + b + "'");
      if (pl.bucket != bucket(pl.consistency, t)) throw ValidationError("bucket disagrees with consistency");
      pl.single_sentence = j.value("single_sentence", false);
      out.push_back(std::move(pl));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

/// Training pool: ground truth at λ3, then high and mid pseudo labels at λ4
/// and λ5. Low labels and zero-weight sources are left out.
inline std::vector<TrainItem> retrain_pool(const DatasetSplit& split, const std::vector<PseudoLabel>& labels,
                                           const Stage2Config& cfg) {
  std::vector<TrainItem> pool;
  if (cfg.lambda3 > 0.0) pool = labeled_pool(split, cfg.lambda3);
  std::map<std::string, const Sample*> by_id;
  for (const Sample& s : split.train_unlabeled) by_id.emplace(s.id, &s);
  for (const PseudoLabel& pl : labels) {
    auto it = by_id.find(pl.sample_id);
    if (it == by_id.end()) throw ValidationError("pseudo label for unknown unlabeled sample '" + pl.sample_id + "'");
    if (static_cast<Eigen::Index>(pl.intervals.size()) != it->second->query_feats.rows()) {
      throw ValidationError(pl.sample_id + ": pseudo label has wrong number of intervals");
    }
    const double w = pl.bucket == Bucket::high ? cfg.lambda4 : pl.bucket == Bucket::mid ? cfg.lambda5 : 0.0;
    if (w > 0.0) pool.push_back({it->second, pl.intervals, w});
  }
  return pool;
}

/// Retrains from a fresh initialization on ground truth plus accepted pseudo labels.
inline SupervisedResult retrain(const DatasetSplit& split, const std::vector<PseudoLabel>& labels,
                                const ModelConfig& model_cfg, const Stage2Config& cfg,
                                const StepCallback& on_step = {}) {
  cfg.validate();
  const std::vector<TrainItem> pool = retrain_pool(split, labels, cfg);
  if (pool.empty()) throw ValidationError("retrain: no ground truth or accepted pseudo labels to train on");
  return train_supervised(pool, model_cfg, SupervisedConfig{cfg.steps, cfg.batch, cfg.lr, cfg.seed}, on_step);
}

}  // namespace ccl
