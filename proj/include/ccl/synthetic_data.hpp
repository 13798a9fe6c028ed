#pragma once

// Synthetic video-paragraph grounding benchmark.
//
// Each sample plants N ordered, non-overlapping events in a T-clip video.
// Event i carries a unit concept vector c_i; clips whose centers fall inside
// the event read W_v·c_i + noise, all other clips read pure noise, and
// sentence i reads W_q·c_i + noise. W_v and W_q are drawn once per dataset.

#include <Eigen/Dense>
#include "json.hpp"  // nlohmann/json, vendored

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/rng.hpp"
#include "ccl/temporal_math.hpp"

namespace ccl {

using Matrix = Eigen::MatrixXd;

struct SyntheticConfig {
  int num_samples = 2000;  // training samples
  int num_test = 500;
  int T = 32;
  int video_dim = 32;
  int query_dim = 32;
  int min_sentences = 2;
  int max_sentences = 5;
  double noise_std = 0.1;
  int concept_dim = 8;
  double labeled_fraction = 0.25;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_samples < 0 || num_test < 0) throw ValidationError("synthetic: sample counts must be >= 0");
    if (T < 4) throw ValidationError("synthetic: T must be >= 4");
    if (video_dim < 2 || query_dim < 2 || concept_dim < 2) {
      throw ValidationError("synthetic: video_dim, query_dim and concept_dim must be >= 2");
    }
    if (min_sentences < 1 || max_sentences < min_sentences) {
      throw ValidationError("synthetic: sentence range must satisfy 1 <= min <= max");
    }
    if (!(noise_std >= 0.0)) throw ValidationError("synthetic: noise_std must be >= 0");
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
      throw ValidationError("synthetic: labeled_fraction must lie in (0, 1]");
    }
    if (static_cast<double>(max_sentences) / static_cast<double>(T) > 1.0) {
      throw ValidationError("synthetic: cannot place events: " + std::to_string(max_sentences) +
                            " events of minimum length 1/" + std::to_string(T) + " exceed the video");
    }
  }

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticConfig, num_samples, num_test, T, video_dim, query_dim,
                                                min_sentences, max_sentences, noise_std, concept_dim,
                                                labeled_fraction, seed)

struct Sample {
  std::string id;
  Matrix video_feats;  // T x video_dim
  Matrix query_feats;  // N x query_dim
  std::optional<IntervalSet> gt_intervals;
  bool labeled = false;

  int T() const noexcept { return static_cast<int>(video_feats.rows()); }
  int num_sentences() const noexcept { return static_cast<int>(query_feats.rows()); }

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.labeled == b.labeled && a.gt_intervals == b.gt_intervals &&
           a.video_feats.rows() == b.video_feats.rows() && a.video_feats.cols() == b.video_feats.cols() &&
           a.query_feats.rows() == b.query_feats.rows() && a.query_feats.cols() == b.query_feats.cols() &&
           a.video_feats == b.video_feats && a.query_feats == b.query_feats;
  }
};

struct DatasetSplit {
  std::vector<Sample> train_labeled;
  std::vector<Sample> train_unlabeled;
  std::vector<Sample> test;
  SyntheticConfig config;  // generator settings, restored from the sidecar on load

  std::size_t size() const noexcept { return train_labeled.size() + train_unlabeled.size() + test.size(); }

  /// Looks a sample up by id across all three lists.
  const Sample* find(const std::string& id) const {
    for (const auto* list : {&train_labeled, &train_unlabeled, &test}) {
      for (const Sample& s : *list) {
        if (s.id == id) return &s;
      }
    }
    return nullptr;
  }

  friend bool operator==(const DatasetSplit& a, const DatasetSplit& b) {
    return a.train_labeled == b.train_labeled && a.train_unlabeled == b.train_unlabeled && a.test == b.test;
  }
};

/// Normalized center of clip j in a T-clip video.
inline double clip_center(int j, int T) {
  if (T <= 0 || j < 0 || j >= T) {
    throw ValidationError("clip_center: clip " + std::to_string(j) + " out of range for T=" + std::to_string(T));
  }
  return (static_cast<double>(j) + 0.5) / static_cast<double>(T);
}

/// Rounds to 9 significant decimal digits, the on-disk precision.
inline double quantize9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return std::strtod(buf, nullptr);
}

/// Checks ordering and non-overlap of a sample's intervals.
inline void validate_event_layout(const IntervalSet& set, const std::string& where) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    require_valid(set[i], where + " interval " + std::to_string(i));
    if (i > 0 && set[i].start < set[i - 1].end) {
      throw ValidationError(where + ": intervals " + std::to_string(i - 1) + " and " + std::to_string(i) +
                            " overlap or are out of order");
    }
  }
}

inline void validate_sample(const Sample& s, bool require_gt) {
  if (s.id.empty()) throw ValidationError("sample has an empty id");
  if (s.video_feats.rows() < 1 || s.query_feats.rows() < 1) {
    throw ValidationError(s.id + ": empty video or query features");
  }
  if ((require_gt || s.labeled) && !s.gt_intervals) throw ValidationError(s.id + ": ground truth required");
  if (s.gt_intervals) {
    if (static_cast<int>(s.gt_intervals->size()) != s.num_sentences()) {
      throw ValidationError(s.id + ": " + std::to_string(s.gt_intervals->size()) + " intervals for " +
                            std::to_string(s.num_sentences()) + " sentences");
    }
    validate_event_layout(*s.gt_intervals, s.id);
  }
  if (!s.video_feats.allFinite() || !s.query_feats.allFinite()) throw ValidationError(s.id + ": non-finite feature");
}

namespace detail {

inline Matrix gaussian_matrix(Rng& rng, int rows, int cols, double stddev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = stddev * normal(rng);
  }
  return m;
}

/// N ordered, non-overlapping events of length at least 1/T: 2N sorted
/// uniforms on [0, 1 - N/T], with event i shifted right by i/T. This is the
/// uniform distribution over the feasible layouts, so no rejection loop.
inline IntervalSet place_events(Rng& rng, int n, int T) {
  const double unit = 1.0 / static_cast<double>(T);
  const double slack = 1.0 - static_cast<double>(n) * unit;
  std::uniform_real_distribution<double> uni(0.0, slack);
  std::vector<double> u(static_cast<std::size_t>(2 * n));
  for (double& x : u) x = uni(rng);
  std::sort(u.begin(), u.end());
  IntervalSet out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double s = quantize9(u[static_cast<std::size_t>(2 * i)] + i * unit);
    const double e = quantize9(u[static_cast<std::size_t>(2 * i + 1)] + (i + 1) * unit);
    out[static_cast<std::size_t>(i)] = {std::clamp(s, 0.0, 1.0), std::clamp(e, 0.0, 1.0)};
  }
  for (int i = 1; i < n; ++i) {
    auto& cur = out[static_cast<std::size_t>(i)];
    cur.start = std::max(cur.start, out[static_cast<std::size_t>(i - 1)].end);
    cur.end = std::max(cur.end, cur.start);
  }
  return out;
}

}  // namespace detail

/// Generator internals, exposed for oracles that need the planted signal.
struct SyntheticLatents {
  Matrix w_video;                          // video_dim x concept_dim
  Matrix w_query;                          // query_dim x concept_dim
  std::map<std::string, Matrix> concepts;  // sample id -> N x concept_dim, unit rows
};

/// Deterministic in cfg.seed: one RNG stream draws the projections, every
/// sample, and finally the labeled/unlabeled shuffle.
inline DatasetSplit generate_dataset(const SyntheticConfig& cfg, SyntheticLatents* latents = nullptr) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Matrix w_video = detail::gaussian_matrix(rng, cfg.video_dim, cfg.concept_dim, 1.0);
  const Matrix w_query = detail::gaussian_matrix(rng, cfg.query_dim, cfg.concept_dim, 1.0);
  if (latents != nullptr) {
    latents->w_video = w_video;
    latents->w_query = w_query;
    latents->concepts.clear();
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> count(cfg.min_sentences, cfg.max_sentences);

  auto make_sample = [&](const std::string& id) {
    Sample s;
    s.id = id;
    const int n = count(rng);
    IntervalSet events = detail::place_events(rng, n, cfg.T);
    Matrix concepts = detail::gaussian_matrix(rng, n, cfg.concept_dim, 1.0);
    for (int i = 0; i < n; ++i) {
      const double norm = concepts.row(i).norm();
      if (norm > 0.0) concepts.row(i) /= norm;
    }
    s.video_feats.resize(cfg.T, cfg.video_dim);
    for (int j = 0; j < cfg.T; ++j) {
      const double center = clip_center(j, cfg.T);
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(cfg.video_dim);
      for (int i = 0; i < n; ++i) {
        const Interval& ev = events[static_cast<std::size_t>(i)];
        if (ev.start <= center && center <= ev.end) {
          row = (w_video * concepts.row(i).transpose()).transpose();
          break;
        }
      }
      for (int d = 0; d < cfg.video_dim; ++d) s.video_feats(j, d) = quantize9(row(d) + cfg.noise_std * noise(rng));
    }
    s.query_feats.resize(n, cfg.query_dim);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd q = w_query * concepts.row(i).transpose();
      for (int d = 0; d < cfg.query_dim; ++d) s.query_feats(i, d) = quantize9(q(d) + cfg.noise_std * noise(rng));
    }
    s.gt_intervals = std::move(events);
    if (latents != nullptr) latents->concepts.emplace(id, concepts);
    return s;
  };

  auto format_id = [](const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05d", prefix, i);
    return std::string(buf);
  };

  std::vector<Sample> train;
  train.reserve(static_cast<std::size_t>(cfg.num_samples));
  for (int i = 0; i < cfg.num_samples; ++i) train.push_back(make_sample(format_id("train", i)));
  DatasetSplit split;
  split.config = cfg;
  for (int i = 0; i < cfg.num_test; ++i) {
    Sample s = make_sample(format_id("test", i));
    s.labeled = true;
    split.test.push_back(std::move(s));
  }

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_labeled = static_cast<std::size_t>(std::llround(cfg.labeled_fraction * static_cast<double>(train.size())));
  std::vector<bool> is_labeled(train.size(), false);
  for (std::size_t k = 0; k < n_labeled && k < order.size(); ++k) is_labeled[order[k]] = true;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (is_labeled[i]) {
      train[i].labeled = true;
      split.train_labeled.push_back(std::move(train[i]));
    } else {
      // The planted intervals stay hidden from training code paths.
      train[i].labeled = false;
      train[i].gt_intervals.reset();
      split.train_unlabeled.push_back(std::move(train[i]));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// JSON Lines persistence

namespace detail {

inline nlohmann::json matrix_rows(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(quantize9(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix rows_matrix(const nlohmann::json& rows, const char* field) {
  if (!rows.is_array() || rows.empty()) throw ValidationError(std::string(field) + " must be a non-empty array");
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!rows[r].is_array() || rows[r].size() != cols) throw ValidationError(std::string(field) + " is ragged");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
  }
  return m;
}

inline nlohmann::json sample_to_json(const Sample& s, const char* split) {
  nlohmann::json j;
  j["id"] = s.id;
  j["split"] = split;
  j["labeled"] = s.labeled;
  j["T"] = s.T();
  j["N"] = s.num_sentences();
  j["video_feats"] = matrix_rows(s.video_feats);
  j["query_feats"] = matrix_rows(s.query_feats);
  if (s.gt_intervals) {
    nlohmann::json ivs = nlohmann::json::array();
    for (const Interval& iv : *s.gt_intervals) ivs.push_back({quantize9(iv.start), quantize9(iv.end)});
    j["gt_intervals"] = std::move(ivs);
  } else {
    j["gt_intervals"] = nullptr;
  }
  return j;
}

}  // namespace detail

inline std::filesystem::path meta_path_for(const std::filesystem::path& path) {
  std::filesystem::path meta = path;
  meta.replace_extension(".meta.json");
  return meta;
}

inline void save_dataset(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  for (const Sample& s : split.train_labeled) out << detail::sample_to_json(s, "train").dump() << '\n';
  for (const Sample& s : split.train_unlabeled) out << detail::sample_to_json(s, "train").dump() << '\n';
  for (const Sample& s : split.test) out << detail::sample_to_json(s, "test").dump() << '\n';
  if (!out) throw ValidationError("write failed: " + path.string());

  nlohmann::json meta;
  meta["config"] = split.config;
  meta["train_labeled"] = split.train_labeled.size();
  meta["train_unlabeled"] = split.train_unlabeled.size();
  meta["test"] = split.test.size();
  std::ofstream mout(meta_path_for(path), std::ios::binary | std::ios::trunc);
  mout << meta.dump(2) << '\n';
}

inline DatasetSplit load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  DatasetSplit split;
  std::string line;
  std::size_t lineno = 0;
  std::size_t loaded = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Sample s;
      s.id = j.at("id").get<std::string>();
      s.labeled = j.at("labeled").get<bool>();
      s.video_feats = detail::rows_matrix(j.at("video_feats"), "video_feats");
      s.query_feats = detail::rows_matrix(j.at("query_feats"), "query_feats");
      if (j.at("T").get<int>() != s.T()) throw ValidationError("T disagrees with video_feats rows");
      if (j.at("N").get<int>() != s.num_sentences()) throw ValidationError("N disagrees with query_feats rows");
      const auto& gt = j.at("gt_intervals");
      if (!gt.is_null()) {
        IntervalSet set;
        for (const auto& pair : gt) {
          if (!pair.is_array() || pair.size() != 2) throw ValidationError("interval must be [start, end]");
          set.push_back({pair[0].get<double>(), pair[1].get<double>()});
        }
        s.gt_intervals = std::move(set);
      }
      const std::string which = j.value("split", std::string("train"));
      const bool is_test = which == "test";
      if (!is_test && which != "train") throw ValidationError("unknown split '" + which + "'");
      validate_sample(s, is_test);
      if (is_test) {
        split.test.push_back(std::move(s));
      } else if (s.labeled) {
        split.train_labeled.push_back(std::move(s));
      } else {
        split.train_unlabeled.push_back(std::move(s));
      }
      ++loaded;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  if (loaded == 0) throw ParseError(path.string(), lineno == 0 ? 1 : lineno, "dataset file contains no samples");

  const auto meta = meta_path_for(path);
  if (std::filesystem::exists(meta)) {
    std::ifstream min(meta);
    try {
      split.config = nlohmann::json::parse(min).at("config").get<SyntheticConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(meta.string(), 1, e.what());
    }
  }
  return split;
}

}  // namespace ccl
