#pragma once

// Context-consistent mean-teacher training.
//
// Each step combines a supervised term on labeled samples with a consistency
// term on unlabeled samples. The teacher sees the full paragraph; the student
// sees it with some sentences removed, and its moment features (pooled under
// the teacher's intervals) are contrasted against its own sentence features.
// Teacher outputs enter the student objective as constants only.

#include "json.hpp"  // nlohmann/json, vendored

#include <cmath>
#include <string>
#include <vector>

#include "ccl/context_augmentation.hpp"
#include "ccl/errors.hpp"
#include "ccl/grounding_model.hpp"
#include "ccl/rng.hpp"
#include "ccl/synthetic_data.hpp"
#include "ccl/training.hpp"

namespace ccl {

struct TeacherState {
  ModelParams params;
  double ema_gamma = 0.999;
  long step = 0;
};

struct Stage1Config {
  double lambda1 = 2.0;
  double lambda2 = 0.75;
  double tau = 0.01;
  double gamma = 0.999;
  int steps = 1000;
  int batch_labeled = 16;
  int batch_unlabeled = 16;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  double removal_max_fraction = 0.5;

  // Component switches. With mean_teacher off the unlabeled set is unused.
  bool mean_teacher = true;
  bool augment = true;
  bool contrastive = true;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ValidationError("stage1: tau must be > 0");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2)) {
      throw ValidationError("stage1: lambda1 and lambda2 must be finite and >= 0");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("stage1: gamma must lie in [0, 1)");
    if (steps < 0) throw ValidationError("stage1: steps must be >= 0");
    if (batch_labeled < 1 || batch_unlabeled < 0) throw ValidationError("stage1: batch sizes must be positive");
    if (!(lr > 0.0)) throw ValidationError("stage1: lr must be > 0");
    if (!(removal_max_fraction > 0.0 && removal_max_fraction <= 1.0)) {
      throw ValidationError("stage1: removal_max_fraction must lie in (0, 1]");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Stage1Config, lambda1, lambda2, tau, gamma, steps, batch_labeled,
                                                batch_unlabeled, lr, seed, removal_max_fraction, mean_teacher,
                                                augment, contrastive)

inline TeacherState make_teacher(const ModelParams& student, double gamma) {
  return {student, gamma, 0};
}

/// θ′ ← γθ′ + (1−γ)θ, elementwise; the student is not modified.
inline TeacherState ema_update(const TeacherState& teacher, const ModelParams& student) {
  if (teacher.params.tensors.size() != student.tensors.size()) {
    throw ValidationError("ema_update: teacher has " + std::to_string(teacher.params.tensors.size()) +
                          " tensors, student has " + std::to_string(student.tensors.size()));
  }
  TeacherState out{teacher.params, teacher.ema_gamma, teacher.step + 1};
  const double g = teacher.ema_gamma;
  for (auto& [name, t] : out.params.tensors) {
    auto it = student.tensors.find(name);
    if (it == student.tensors.end()) throw ValidationError("ema_update: student lacks parameter '" + name + "'");
    const Matrix& s = it->second;
    if (s.rows() != t.rows() || s.cols() != t.cols()) {
      throw ValidationError("ema_update: shape mismatch for parameter '" + name + "'");
    }
    t = g * t + (1.0 - g) * s;
  }
  return out;
}

/// Symmetric InfoNCE over cosine similarities, as a plain value.
inline double contrastive_consistency_loss(const Matrix& moments, const Matrix& sentences, double tau) {
  ad::Tape tape;
  return graph::contrastive_consistency(tape.constant(moments), tape.constant(sentences), tau).scalar();
}

/// A labeled sample as the student sees it (plan is the identity unless augmenting).
struct LabeledView {
  const Sample* sample = nullptr;
  RemovalPlan plan;
};

/// An unlabeled sample: removal plan plus the teacher's full-paragraph prediction.
struct UnlabeledView {
  const Sample* sample = nullptr;
  RemovalPlan plan;
  IntervalSet teacher_intervals;
};

struct Stage1Batch {
  std::vector<LabeledView> labeled;
  std::vector<UnlabeledView> unlabeled;
};

struct Stage1Objective {
  StepLog losses;
  GradMap grads;
};

/// Objective λ1·mean(L_loc + L_att) + λ2·mean(consistency) and its
/// gradient with respect to the student. Depends on the teacher only through
/// the intervals stored in the batch.
inline Stage1Objective stage1_objective(const ModelParams& student, const Stage1Batch& batch, const Stage1Config& cfg,
                                        long step = 0) {
  ad::Tape tape;
  const BoundParams bound(tape, student, true);
  std::vector<ad::Var> terms;
  std::vector<double> weights;
  Stage1Objective out;
  out.losses.step = step;

  if (!batch.labeled.empty()) {
    // Same arithmetic as supervised_step, so the labeled-only arm matches it bit for bit.
    const double inv_b = 1.0 / static_cast<double>(batch.labeled.size());
    for (const LabeledView& v : batch.labeled) {
      const Sample& s = *v.sample;
      if (!s.gt_intervals) throw ValidationError(s.id + ": labeled sample without ground truth");
      const ForwardGraph g = forward_graph(bound, s.video_feats, apply_removal(s.query_feats, v.plan));
      LossSpec spec;
      spec.loc_weight = 1.0;
      spec.att_weight = 1.0;
      spec.targets = map_targets(*s.gt_intervals, v.plan);
      LossTerms lt;
      terms.push_back(build_loss(g, spec, &lt));
      weights.push_back(cfg.lambda1 * inv_b);
      out.losses.loss_loc += lt.loc * inv_b;
      out.losses.loss_att += lt.att * inv_b;
    }
  }

  if (!batch.unlabeled.empty() && cfg.lambda2 > 0.0) {
    const double w = cfg.lambda2 / static_cast<double>(batch.unlabeled.size());
    for (const UnlabeledView& v : batch.unlabeled) {
      const Sample& s = *v.sample;
      const ForwardGraph g = forward_graph(bound, s.video_feats, apply_removal(s.query_feats, v.plan));
      const IntervalSet mapped = map_targets(v.teacher_intervals, v.plan);
      LossSpec spec;
      spec.tau = cfg.tau;
      if (cfg.contrastive) {
        spec.con_weight = 1.0;
        spec.pool_intervals = mapped;
      } else {
        spec.l1_weight = 1.0;
        spec.targets = mapped;
      }
      LossTerms lt;
      terms.push_back(build_loss(g, spec, &lt));
      weights.push_back(w);
      out.losses.loss_con += (cfg.contrastive ? lt.con : lt.l1) / static_cast<double>(batch.unlabeled.size());
    }
  }

  if (terms.empty()) throw ValidationError("stage1: empty batch");
  const ad::Var total = ad::weighted_sum(tape, terms, weights);
  out.losses.loss_total = total.scalar();
  if (!std::isfinite(out.losses.loss_total)) {
    throw DivergenceError("stage1: non-finite loss at step " + std::to_string(step), step);
  }
  tape.backward(total);
  out.grads = bound.gradients();
  return out;
}

/// Removal plan for one sample at one step, from its own RNG stream.
inline RemovalPlan step_removal(const Sample& s, std::size_t sample_index, long step, const Stage1Config& cfg) {
  Rng rng(derive_seed(cfg.seed, {stream::kRemoval, sample_index, static_cast<std::uint64_t>(step)}));
  return sample_removal(static_cast<int>(s.query_feats.rows()), RemovalPolicy{cfg.removal_max_fraction}, rng);
}

/// Assembles a batch: labeled views (removed only in the augmentation-without-
/// teacher arm) and, with the teacher enabled, unlabeled views carrying the
/// teacher's predictions on the original input.
inline Stage1Batch make_stage1_batch(const TeacherState& teacher, const std::vector<Sample>& labeled,
                                     std::span<const std::size_t> labeled_idx, const std::vector<Sample>& unlabeled,
                                     std::span<const std::size_t> unlabeled_idx, const Stage1Config& cfg, long step) {
  Stage1Batch batch;
  const bool augment_labeled = cfg.augment && !cfg.mean_teacher;
  for (std::size_t i : labeled_idx) {
    const Sample& s = labeled[i];
    const int n = static_cast<int>(s.query_feats.rows());
    // Labeled and unlabeled streams are kept apart by the high tag bit.
    batch.labeled.push_back({&s, augment_labeled ? step_removal(s, i | (1ULL << 63), step, cfg) : RemovalPlan::identity(n)});
  }
  if (cfg.mean_teacher) {
    for (std::size_t i : unlabeled_idx) {
      const Sample& s = unlabeled[i];
      const int n = static_cast<int>(s.query_feats.rows());
      UnlabeledView v{&s, cfg.augment ? step_removal(s, i, step, cfg) : RemovalPlan::identity(n),
                      predict(teacher.params, s.video_feats, s.query_feats)};
      batch.unlabeled.push_back(std::move(v));
    }
  }
  return batch;
}

/// One optimizer step on the student followed by the EMA teacher update.
inline StepLog stage1_step(ModelParams& student, TeacherState& teacher, AdamState& opt, const Stage1Batch& batch,
                           const Stage1Config& cfg, long step) {
  Stage1Objective obj = stage1_objective(student, batch, cfg, step);
  adam_step(student, obj.grads, opt, AdamConfig{.lr = cfg.lr});
  teacher = ema_update(teacher, student);
  return obj.losses;
}

struct Stage1Result {
  ModelParams student;
  TeacherState teacher;
  std::vector<StepLog> log;
};

using Stage1Callback = std::function<void(long step, const ModelParams& student, const TeacherState& teacher)>;

inline Stage1Result train_stage1(const DatasetSplit& split, const ModelConfig& model_cfg, const Stage1Config& cfg,
                                 const Stage1Callback& on_step = {}) {
  cfg.validate();
  if (split.train_labeled.empty()) throw ValidationError("stage1: split has no labeled samples");
  ModelParams student = init_params(model_cfg, derive_seed(cfg.seed, {stream::kInit}));
  Stage1Result result{student, make_teacher(student, cfg.gamma), {}};
  AdamState opt;
  BatchSampler labeled(split.train_labeled.size(), derive_seed(cfg.seed, {stream::kLabeledBatches}));
  BatchSampler unlabeled(split.train_unlabeled.size(), derive_seed(cfg.seed, {stream::kUnlabeledBatches}));
  result.log.reserve(static_cast<std::size_t>(cfg.steps));
  for (long step = 0; step < cfg.steps; ++step) {
    const auto li = labeled.next(static_cast<std::size_t>(cfg.batch_labeled));
    std::vector<std::size_t> ui;
    if (cfg.mean_teacher && cfg.lambda2 > 0.0) ui = unlabeled.next(static_cast<std::size_t>(cfg.batch_unlabeled));
    result.log.push_back(at_step(step, [&] {
      const Stage1Batch batch =
          make_stage1_batch(result.teacher, split.train_labeled, li, split.train_unlabeled, ui, cfg, step);
      return stage1_step(result.student, result.teacher, opt, batch, cfg, step);
    }));
    if (on_step) on_step(step, result.student, result.teacher);
  }
  return result;
}

}  // namespace ccl
