#pragma once

// Sentence-removal perturbation. A RemovalPlan keeps an increasing subset of
// the paragraph's sentences; kept_indices[j] is the original index of the
// j-th sentence of the shortened paragraph.

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/rng.hpp"
#include "ccl/temporal_math.hpp"

namespace ccl {

struct RemovalPlan {
  std::vector<int> kept_indices;
  int removed = 0;  // M
  int total = 0;    // N

  static RemovalPlan identity(int n) {
    RemovalPlan p;
    p.total = n;
    p.kept_indices.resize(static_cast<std::size_t>(n));
    std::iota(p.kept_indices.begin(), p.kept_indices.end(), 0);
    return p;
  }

  /// Plan keeping exactly `kept` (must be strictly increasing).
  static RemovalPlan keeping(std::vector<int> kept, int n) {
    RemovalPlan p;
    p.total = n;
    p.removed = n - static_cast<int>(kept.size());
    p.kept_indices = std::move(kept);
    p.validate();
    return p;
  }

  void validate() const {
    if (total < 1) throw ValidationError("removal plan: N must be >= 1");
    if (kept_indices.empty()) throw ValidationError("removal plan: at least one sentence must be kept");
    if (static_cast<int>(kept_indices.size()) != total - removed) {
      throw ValidationError("removal plan: kept count disagrees with N - M");
    }
    for (std::size_t j = 0; j < kept_indices.size(); ++j) {
      const int k = kept_indices[j];
      if (k < 0 || k >= total) {
        throw ValidationError("removal plan: index " + std::to_string(k) + " out of range for N=" + std::to_string(total));
      }
      if (j > 0 && k <= kept_indices[j - 1]) throw ValidationError("removal plan: kept indices must be strictly increasing");
    }
  }

  friend bool operator==(const RemovalPlan&, const RemovalPlan&) = default;
};

/// How many sentences to remove per draw.
struct RemovalPolicy {
  /// M ~ Uniform{1, ..., ceil(max_fraction · N)}, clamped to N - 1.
  double max_fraction = 0.5;
};

/// Uniform random subset of `k` out of `n` indices, sorted.
inline std::vector<int> random_subset(int n, int k, Rng& rng) {
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  // Partial Fisher-Yates.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> out(all.begin(), all.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

/// Plan that removes exactly `m` uniformly chosen sentences.
inline RemovalPlan sample_removal_of(int n, int m, Rng& rng) {
  if (n < 1) throw ValidationError("sample_removal: N must be >= 1");
  if (m < 0 || m >= n) throw ValidationError("sample_removal: cannot remove " + std::to_string(m) + " of " + std::to_string(n));
  return RemovalPlan::keeping(random_subset(n, n - m, rng), n);
}

inline RemovalPlan sample_removal(int n, const RemovalPolicy& policy, Rng& rng) {
  if (n < 1) throw ValidationError("sample_removal: N must be >= 1");
  if (n == 1) return RemovalPlan::identity(1);
  const int cap = std::clamp(static_cast<int>(std::ceil(policy.max_fraction * n)), 1, n - 1);
  std::uniform_int_distribution<int> count(1, cap);
  return sample_removal_of(n, count(rng), rng);
}

/// Rows of `query_feats` at the plan's kept indices.
inline Eigen::MatrixXd apply_removal(const Eigen::MatrixXd& query_feats, const RemovalPlan& plan) {
  if (query_feats.rows() != plan.total) {
    throw ValidationError("apply_removal: plan is for N=" + std::to_string(plan.total) + " but input has " +
                          std::to_string(query_feats.rows()) + " rows");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(plan.kept_indices.size()), query_feats.cols());
  for (std::size_t j = 0; j < plan.kept_indices.size(); ++j) {
    const int k = plan.kept_indices[j];
    if (k < 0 || k >= query_feats.rows()) throw ValidationError("apply_removal: index out of range");
    out.row(static_cast<Eigen::Index>(j)) = query_feats.row(k);
  }
  return out;
}

/// Entry j is full_set[kept_indices[j]].
template <class T>
std::vector<T> map_targets(const std::vector<T>& full_set, const RemovalPlan& plan) {
  if (static_cast<int>(full_set.size()) != plan.total) {
    throw ValidationError("map_targets: set has " + std::to_string(full_set.size()) + " entries, plan expects " +
                          std::to_string(plan.total));
  }
  std::vector<T> out;
  out.reserve(plan.kept_indices.size());
  for (int k : plan.kept_indices) out.push_back(full_set[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace ccl
