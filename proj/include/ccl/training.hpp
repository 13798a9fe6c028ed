#pragma once

// Shared training machinery: batch sampling, step logs, and the weighted
// fully supervised loop used by the labeled-only baseline and by retraining.

#include "json.hpp"  // nlohmann/json, vendored

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/grounding_model.hpp"
#include "ccl/rng.hpp"
#include "ccl/synthetic_data.hpp"

namespace ccl {

/// Seed-derivation tags; each purpose gets its own stream.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kLabeledBatches = 2;
inline constexpr std::uint64_t kUnlabeledBatches = 3;
inline constexpr std::uint64_t kRemoval = 4;
inline constexpr std::uint64_t kConsistency = 5;
inline constexpr std::uint64_t kRetrain = 6;
}  // namespace stream

/// Cycles through shuffled epochs of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    if (order_.empty()) return out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct StepLog {
  long step = 0;
  double loss_total = 0.0;
  double loss_loc = 0.0;
  double loss_att = 0.0;
  double loss_con = 0.0;

  friend bool operator==(const StepLog&, const StepLog&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StepLog, step, loss_total, loss_loc, loss_att, loss_con)

inline void write_log(const std::vector<StepLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  for (const StepLog& s : log) out << nlohmann::json(s).dump() << '\n';
}

/// A sample paired with the interval set it is trained against and its loss weight.
struct TrainItem {
  const Sample* sample = nullptr;
  IntervalSet targets;
  double weight = 1.0;
};

struct SupervisedConfig {
  int steps = 1000;
  int batch = 16;
  double lr = 1e-4;
  std::uint64_t seed = 1;
};

using StepCallback = std::function<void(long step, const ModelParams& model)>;

struct SupervisedResult {
  ModelParams model;
  std::vector<StepLog> log;
};

/// Runs one training step, attaching the step index to any divergence.
template <class F>
auto at_step(long step, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const DivergenceError& e) {
    if (e.step() >= 0) throw;
    throw DivergenceError(std::string(e.what()) + " (step " + std::to_string(step) + ")", step);
  }
}

/// One Adam step on Σ_i weight_i · (L_loc + L_att)_i / batch.
inline StepLog supervised_step(ModelParams& params, AdamState& opt, std::span<const TrainItem* const> batch,
                               double lr, long step) {
  StepLog log;
  log.step = step;
  if (batch.empty()) return log;
  ad::Tape tape;
  const BoundParams bound(tape, params, true);
  std::vector<ad::Var> terms;
  std::vector<double> weights;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const TrainItem* item : batch) {
    const ForwardGraph g = forward_graph(bound, item->sample->video_feats, item->sample->query_feats);
    LossSpec spec;
    spec.loc_weight = 1.0;
    spec.att_weight = 1.0;
    spec.targets = item->targets;
    LossTerms lt;
    terms.push_back(build_loss(g, spec, &lt));
    weights.push_back(item->weight * inv_b);
    log.loss_loc += lt.loc * inv_b;
    log.loss_att += lt.att * inv_b;
  }
  const ad::Var total = ad::weighted_sum(tape, terms, weights);
  log.loss_total = total.scalar();
  if (!std::isfinite(log.loss_total)) throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
  tape.backward(total);
  adam_step(params, bound.gradients(), opt, AdamConfig{.lr = lr});
  return log;
}

/// Fully supervised training from a fresh initialization.
inline SupervisedResult train_supervised(const std::vector<TrainItem>& pool, const ModelConfig& model_cfg,
                                         const SupervisedConfig& cfg, const StepCallback& on_step = {}) {
  if (pool.empty()) throw ValidationError("train_supervised: empty training set");
  SupervisedResult result{init_params(model_cfg, derive_seed(cfg.seed, {stream::kInit})), {}};
  AdamState opt;
  BatchSampler sampler(pool.size(), derive_seed(cfg.seed, {stream::kLabeledBatches}));
  result.log.reserve(static_cast<std::size_t>(std::max(cfg.steps, 0)));
  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<const TrainItem*> batch;
    for (std::size_t i : sampler.next(static_cast<std::size_t>(cfg.batch))) batch.push_back(&pool[i]);
    result.log.push_back(at_step(step, [&] { return supervised_step(result.model, opt, batch, cfg.lr, step); }));
    if (on_step) on_step(step, result.model);
  }
  return result;
}

/// Labeled training samples with their ground truth at a common weight.
inline std::vector<TrainItem> labeled_pool(const DatasetSplit& split, double weight) {
  std::vector<TrainItem> pool;
  pool.reserve(split.train_labeled.size());
  for (const Sample& s : split.train_labeled) {
    if (!s.gt_intervals) throw ValidationError(s.id + ": labeled sample without ground truth");
    pool.push_back({&s, *s.gt_intervals, weight});
  }
  return pool;
}

}  // namespace ccl
