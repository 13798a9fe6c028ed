#pragma once

// Experiment driver: configuration, evaluation, the full two-stage pipeline
// over several seeds, and the metrics report.
//
// Output layout under the run directory:
//   config.json, dataset.jsonl (+ .meta.json), report.json
//   seed-<s>/{baseline,stage1_student,stage1_teacher,stage2}.ckpt.json
//   seed-<s>/{baseline,stage1,stage2}_log.jsonl, pseudo_labels.jsonl
//   seed-<s>/ious_<model>.jsonl   per-sample IoUs behind each report entry

#include "json.hpp"  // nlohmann/json, vendored

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ccl/ccl_stage1.hpp"
#include "ccl/checkpoint.hpp"
#include "ccl/errors.hpp"
#include "ccl/grounding_model.hpp"
#include "ccl/pseudo_labeling.hpp"
#include "ccl/synthetic_data.hpp"
#include "ccl/temporal_math.hpp"
#include "ccl/training.hpp"

namespace ccl {

namespace fs = std::filesystem;

/// Which framework components are active.
struct Ablation {
  bool mt = true;   // mean teacher with unlabeled consistency
  bool aug = true;  // sentence removal
  bool cr = true;   // contrastive consistency (otherwise L1 on teacher intervals)
  bool pl = true;   // consistency-guided pseudo labels and retraining

  void validate() const {
    if (cr && !mt) throw ValidationError("ablation: cr needs the mean teacher (mt)");
    if (pl && !mt) throw ValidationError("ablation: pl needs a stage-1 teacher (mt)");
  }
  bool any_stage1_component() const { return mt || aug || cr; }

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Ablation, mt, aug, cr, pl)

struct ExperimentConfig {
  SyntheticConfig data;
  ModelConfig model;
  Stage1Config stage1;  // component switches are taken from `ablation`
  Stage2Config stage2;  // seed is derived per run seed
  Ablation ablation;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int checkpoint_every = 0;  // stage-1 snapshots every k steps; 0 disables

  void validate() const {
    data.validate();
    model.validate();
    stage1.validate();
    stage2.validate();
    ablation.validate();
    if (data.video_dim != model.video_dim || data.query_dim != model.query_dim) {
      throw ValidationError("config: model input widths do not match the dataset");
    }
    if (model.max_sentences < data.max_sentences) {
      throw ValidationError("config: model.max_sentences is below data.max_sentences");
    }
    if (seeds.empty()) throw ValidationError("config: at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw ValidationError("config: seeds must be distinct");
    }
    if (checkpoint_every < 0) throw ValidationError("config: checkpoint_every must be >= 0");
  }

  /// Stage-1 settings for one run seed.
  Stage1Config stage1_for(std::uint64_t seed) const {
    Stage1Config c = stage1;
    c.seed = seed;
    c.mean_teacher = ablation.mt;
    c.augment = ablation.aug;
    c.contrastive = ablation.cr;
    return c;
  }

  Stage2Config stage2_for(std::uint64_t seed) const {
    Stage2Config c = stage2;
    c.seed = derive_seed(seed, {stream::kRetrain});
    return c;
  }

  SupervisedConfig baseline_for(std::uint64_t seed) const {
    return {stage1.steps, stage1.batch_labeled, stage1.lr, seed};
  }
};

namespace detail {

inline const char* const kSwitchKeys[] = {"mean_teacher", "augment", "contrastive"};

/// Throws on keys of `given` that `reference` does not have, recursively.
inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where) {
  if (!given.is_object() || !reference.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
    reject_unknown_keys(value, reference.at(key), path);
  }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json s1 = c.stage1;
  for (const char* k : detail::kSwitchKeys) s1.erase(k);
  nlohmann::json s2 = c.stage2;
  s2.erase("seed");
  j = nlohmann::json{{"data", c.data},         {"model", c.model},       {"stage1", s1},
                     {"stage2", s2},           {"ablation", c.ablation}, {"seeds", c.seeds},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  detail::reject_unknown_keys(j, nlohmann::json(ExperimentConfig{}), "");
  const ExperimentConfig defaults;
  c = defaults;
  c.data = j.value("data", nlohmann::json(defaults.data)).get<SyntheticConfig>();
  c.model = j.value("model", nlohmann::json(defaults.model)).get<ModelConfig>();
  c.stage1 = j.value("stage1", nlohmann::json::object()).get<Stage1Config>();
  c.stage2 = j.value("stage2", nlohmann::json::object()).get<Stage2Config>();
  c.ablation = j.value("ablation", nlohmann::json(defaults.ablation)).get<Ablation>();
  c.seeds = j.value("seeds", defaults.seeds);
  c.checkpoint_every = j.value("checkpoint_every", defaults.checkpoint_every);
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open config " + path.string());
  ExperimentConfig cfg;
  try {
    cfg = nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the canonical (key-sorted) JSON form of the config.
inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string s = nlohmann::json(cfg).dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

/// Hash of everything except the component switches; equal across arms of one ablation.
inline std::string base_config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg;
  j.erase("ablation");
  const std::string s = j.dump();
  return hex64(fnv1a64(s.data(), s.size()));
}

// ---------------------------------------------------------------------------
// Evaluation

struct Metrics {
  double r03 = 0.0;
  double r05 = 0.0;
  double r07 = 0.0;
  double miou = 0.0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline void to_json(nlohmann::json& j, const Metrics& m) {
  j = nlohmann::json{{"R@0.3", m.r03}, {"R@0.5", m.r05}, {"R@0.7", m.r07}, {"mIoU", m.miou}};
}

inline void from_json(const nlohmann::json& j, Metrics& m) {
  m.r03 = j.at("R@0.3").get<double>();
  m.r05 = j.at("R@0.5").get<double>();
  m.r07 = j.at("R@0.7").get<double>();
  m.miou = j.at("mIoU").get<double>();
}

/// Metrics over a flat list of per-sentence IoUs.
inline Metrics metrics_from_ious(std::span<const double> ious) {
  return {recall_at(ious, 0.3), recall_at(ious, 0.5), recall_at(ious, 0.7), mean_iou(ious)};
}

struct SampleIous {
  std::string sample_id;
  std::vector<double> ious;
};

struct Evaluation {
  Metrics metrics;
  std::vector<SampleIous> per_sample;  // split order
};

/// Full-paragraph predictions on every sample; IoUs per sentence.
/// `predict_fn(video, query) -> IntervalSet`.
template <class Predictor>
Evaluation evaluate_with(Predictor&& predict_fn, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  Evaluation ev;
  std::vector<double> all;
  for (const Sample& s : samples) {
    if (!s.gt_intervals) throw ValidationError("evaluate: sample " + s.id + " has no ground truth");
    const IntervalSet pred = predict_fn(s.video_feats, s.query_feats);
    ev.per_sample.push_back({s.id, pairwise_iou(pred, *s.gt_intervals)});
    all.insert(all.end(), ev.per_sample.back().ious.begin(), ev.per_sample.back().ious.end());
  }
  ev.metrics = metrics_from_ious(all);
  return ev;
}

inline Evaluation evaluate(const ModelParams& model, const std::vector<Sample>& samples) {
  return evaluate_with([&](const Matrix& v, const Matrix& q) { return predict(model, v, q); }, samples);
}

inline void save_sample_ious(const std::vector<SampleIous>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  for (const SampleIous& r : rows) out << nlohmann::json{{"sample_id", r.sample_id}, {"ious", r.ious}}.dump() << '\n';
}

inline std::vector<SampleIous> load_sample_ious(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<SampleIous> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      rows.push_back({j.at("sample_id").get<std::string>(), j.at("ious").get<std::vector<double>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), n, e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Prediction table

inline std::string format_interval(const Interval& iv) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "[%.4f, %.4f]", iv.start, iv.end);
  return buf;
}

/// Ground truth against one or two models' full-paragraph predictions, one row per sentence.
inline std::string dump_predictions(const ModelParams& stage1, const ModelParams* stage2, const DatasetSplit& split,
                                    const std::string& sample_id) {
  const Sample* s = split.find(sample_id);
  if (s == nullptr) throw ValidationError("dump: unknown sample id '" + sample_id + "'");
  const IntervalSet p1 = predict(stage1, s->video_feats, s->query_feats);
  const IntervalSet p2 = stage2 ? predict(*stage2, s->video_feats, s->query_feats) : IntervalSet{};
  const bool has_gt = s->gt_intervals.has_value();

  std::ostringstream os;
  os << "sample " << s->id << "  N=" << s->num_sentences() << "  T=" << s->T() << "  "
     << (has_gt ? "ground truth available" : "unlabeled, ground truth absent") << '\n';
  os << std::left << std::setw(6) << "sent" << std::setw(20) << "ground truth" << std::setw(20) << "stage 1"
     << std::setw(8) << "iou";
  if (stage2) os << std::setw(20) << "stage 2" << std::setw(8) << "iou";
  os << '\n';
  const auto iou_cell = [&](const Interval& p, std::size_t i) {
    if (!has_gt) return std::string("-");
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.4f", iou(p, (*s->gt_intervals)[i]));
    return std::string(buf);
  };
  for (std::size_t i = 0; i < p1.size(); ++i) {
    os << std::setw(6) << i << std::setw(20) << (has_gt ? format_interval((*s->gt_intervals)[i]) : "absent")
       << std::setw(20) << format_interval(p1[i]) << std::setw(8) << iou_cell(p1[i], i);
    if (stage2) os << std::setw(20) << format_interval(p2[i]) << std::setw(8) << iou_cell(p2[i], i);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Pipeline

/// Runs `f`, prefixing any failure with the stage name while keeping its kind.
template <class F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const DivergenceError& e) {
    throw DivergenceError("stage " + stage + ": " + e.what(), e.step());
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + stage + ": " + e.what());
  }
}

inline void save_model(const ModelParams& p, const fs::path& path) { save_checkpoint({p, std::nullopt, 0}, path); }

struct BucketCounts {
  int low = 0;
  int mid = 0;
  int high = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BucketCounts, low, mid, high)

struct SeedResult {
  std::uint64_t seed = 0;
  Metrics untrained;
  Metrics baseline;
  Metrics stage1;
  std::optional<Metrics> stage2;
  std::optional<BucketCounts> buckets;
};

inline BucketCounts count_buckets(const std::vector<PseudoLabel>& labels) {
  BucketCounts c;
  for (const PseudoLabel& pl : labels) {
    (pl.bucket == Bucket::low ? c.low : pl.bucket == Bucket::mid ? c.mid : c.high) += 1;
  }
  return c;
}

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed-" + std::to_string(seed)); }

/// Every stage for one seed; artifacts go to seed_dir(out, seed).
inline SeedResult run_seed(const ExperimentConfig& cfg, const DatasetSplit& split, std::uint64_t seed,
                           const fs::path& out, std::ostream* log = nullptr) {
  const fs::path dir = seed_dir(out, seed);
  fs::create_directories(dir);
  const auto note = [&](const std::string& msg) {
    if (log) *log << "[seed " << seed << "] " << msg << std::endl;
  };
  const auto eval_and_save = [&](const ModelParams& m, const std::string& name) {
    Evaluation ev = evaluate(m, split.test);
    save_sample_ious(ev.per_sample, dir / ("ious_" + name + ".jsonl"));
    note(name + " test mIoU " + std::to_string(ev.metrics.miou));
    return ev.metrics;
  };

  SeedResult r;
  r.seed = seed;
  const Stage1Config s1 = cfg.stage1_for(seed);
  r.untrained = run_stage("evaluate", [&] {
    return eval_and_save(init_params(cfg.model, derive_seed(seed, {stream::kInit})), "untrained");
  });

  note("labeled-only baseline");
  const SupervisedResult baseline = run_stage("baseline", [&] {
    return train_supervised(labeled_pool(split, s1.lambda1), cfg.model, cfg.baseline_for(seed));
  });
  save_model(baseline.model, dir / "baseline.ckpt.json");
  write_log(baseline.log, dir / "baseline_log.jsonl");
  r.baseline = run_stage("evaluate", [&] { return eval_and_save(baseline.model, "baseline"); });

  // Labeled-only stage 1 is the baseline itself.
  ModelParams stage1_product = baseline.model;
  if (cfg.ablation.any_stage1_component()) {
    note("stage 1");
    const Stage1Result st = run_stage("stage1", [&] {
      return train_stage1(split, cfg.model, s1, [&](long step, const ModelParams& student, const TeacherState& teacher) {
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
          const std::string tag = "stage1_step" + std::to_string(step + 1);
          save_model(student, dir / (tag + "_student.ckpt.json"));
          save_model(teacher.params, dir / (tag + "_teacher.ckpt.json"));
        }
      });
    });
    save_model(st.student, dir / "stage1_student.ckpt.json");
    save_model(st.teacher.params, dir / "stage1_teacher.ckpt.json");
    write_log(st.log, dir / "stage1_log.jsonl");
    stage1_product = cfg.ablation.mt ? st.teacher.params : st.student;
  }
  r.stage1 = run_stage("evaluate", [&] { return eval_and_save(stage1_product, "stage1"); });

  if (cfg.ablation.pl) {
    const Stage2Config s2 = cfg.stage2_for(seed);
    note("pseudo labels");
    const auto labels = run_stage("pseudo-label", [&] { return generate_pseudo_labels(stage1_product, split, s2); });
    save_pseudo_labels(labels, dir / "pseudo_labels.jsonl");
    r.buckets = count_buckets(labels);
    note("stage 2");
    const SupervisedResult st2 = run_stage("stage2", [&] { return retrain(split, labels, cfg.model, s2); });
    save_model(st2.model, dir / "stage2.ckpt.json");
    write_log(st2.log, dir / "stage2_log.jsonl");
    r.stage2 = run_stage("evaluate", [&] { return eval_and_save(st2.model, "stage2"); });
  }
  return r;
}

inline Metrics mean_metrics(const std::vector<Metrics>& ms) {
  Metrics m;
  for (const Metrics& x : ms) {
    m.r03 += x.r03;
    m.r05 += x.r05;
    m.r07 += x.r07;
    m.miou += x.miou;
  }
  const double n = static_cast<double>(ms.size());
  return {m.r03 / n, m.r05 / n, m.r07 / n, m.miou / n};
}

/// The report: per-model metrics per seed and averaged, plus config lineage.
inline nlohmann::json build_report(const ExperimentConfig& cfg, const std::vector<SeedResult>& results) {
  nlohmann::json models = nlohmann::json::object();
  const auto add_model = [&](const std::string& name, auto&& get) {
    nlohmann::json per_seed = nlohmann::json::array();
    std::vector<Metrics> ms;
    for (const SeedResult& r : results) {
      const std::optional<Metrics> m = get(r);
      if (!m) return;
      ms.push_back(*m);
      per_seed.push_back({{"seed", r.seed}, {"metrics", *m}});
    }
    models[name] = {{"per_seed", per_seed}, {"mean", mean_metrics(ms)}};
  };
  add_model("untrained", [](const SeedResult& r) { return std::optional<Metrics>(r.untrained); });
  add_model("baseline", [](const SeedResult& r) { return std::optional<Metrics>(r.baseline); });
  add_model("stage1", [](const SeedResult& r) { return std::optional<Metrics>(r.stage1); });
  add_model("stage2", [](const SeedResult& r) { return r.stage2; });

  nlohmann::json deltas = nlohmann::json::object();
  const auto mean_miou = [&](const char* name) { return models.at(name).at("mean").at("mIoU").get<double>(); };
  deltas["stage1_minus_baseline_mIoU"] = mean_miou("stage1") - mean_miou("baseline");
  if (models.contains("stage2")) deltas["stage2_minus_stage1_mIoU"] = mean_miou("stage2") - mean_miou("stage1");

  nlohmann::json buckets = nlohmann::json::array();
  for (const SeedResult& r : results) {
    if (r.buckets) buckets.push_back({{"seed", r.seed}, {"counts", *r.buckets}});
  }

  return {{"config_hash", config_hash(cfg)},
          {"base_config_hash", base_config_hash(cfg)},
          {"ablation", cfg.ablation},
          {"seeds", cfg.seeds},
          {"miou_unit", "sentence"},
          {"stage1_model", cfg.ablation.mt ? "teacher" : "student"},
          {"models", models},
          {"deltas", deltas},
          {"pseudo_label_buckets", buckets}};
}

inline void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline fs::path dataset_path(const fs::path& out) { return out / "dataset.jsonl"; }

/// Generates the dataset and runs every seed; writes report.json and returns it.
inline nlohmann::json run_experiment(const ExperimentConfig& cfg, const fs::path& out, std::ostream* log = nullptr) {
  cfg.validate();
  fs::create_directories(out);
  write_json(cfg, out / "config.json");
  const DatasetSplit split = run_stage("generate", [&] { return generate_dataset(cfg.data); });
  save_dataset(split, dataset_path(out));
  std::vector<SeedResult> results;
  for (std::uint64_t seed : cfg.seeds) results.push_back(run_seed(cfg, split, seed, out, log));
  const nlohmann::json report = build_report(cfg, results);
  write_json(report, out / "report.json");
  return report;
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationArm {
  std::string name;
  Ablation ablation;
};

struct AblationGrid {
  ExperimentConfig base;
  std::vector<AblationArm> arms;
};

/// Grid file: {"config": <experiment config object or path>, "arms": [{"name", "ablation"}]}.
/// A config path is resolved relative to the grid file.
inline AblationGrid load_ablation_grid(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open grid " + path.string());
  AblationGrid grid;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    const nlohmann::json& c = j.at("config");
    grid.base = c.is_string() ? load_experiment_config(path.parent_path() / c.get<std::string>())
                              : c.get<ExperimentConfig>();
    std::set<std::string> names;
    for (const auto& a : j.at("arms")) {
      AblationArm arm{a.at("name").get<std::string>(), a.at("ablation").get<Ablation>()};
      if (arm.name.empty() || arm.name.find_first_of("/\\") != std::string::npos || !names.insert(arm.name).second) {
        throw ValidationError("grid: arm names must be unique, non-empty and free of path separators");
      }
      grid.arms.push_back(std::move(arm));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("grid " + path.string() + ": " + e.what());
  }
  if (grid.arms.empty()) throw ValidationError("grid: no arms");
  for (const AblationArm& arm : grid.arms) {
    ExperimentConfig c = grid.base;
    c.ablation = arm.ablation;
    c.validate();
  }
  return grid;
}

/// Runs each arm under out/<name>/ and writes out/ablation.json.
inline nlohmann::json run_ablation(const AblationGrid& grid, const fs::path& out, std::ostream* log = nullptr) {
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationArm& arm : grid.arms) {
    ExperimentConfig c = grid.base;
    c.ablation = arm.ablation;
    if (log) *log << "[arm " << arm.name << "]" << std::endl;
    const nlohmann::json report = run_experiment(c, out / arm.name, log);
    const char* final_model = arm.ablation.pl ? "stage2" : "stage1";
    rows.push_back({{"name", arm.name},
                    {"ablation", arm.ablation},
                    {"config_hash", report.at("config_hash")},
                    {"base_config_hash", report.at("base_config_hash")},
                    {"final_model", final_model},
                    {"mean", report.at("models").at(final_model).at("mean")},
                    {"baseline_mean", report.at("models").at("baseline").at("mean")}});
  }
  const nlohmann::json summary{{"arms", rows}};
  write_json(summary, out / "ablation.json");
  return summary;
}

}  // namespace ccl
