#pragma once

// Interval arithmetic, localization losses and grounding metrics.
//
// All functions here are pure and may be called concurrently.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ccl/errors.hpp"

namespace ccl {

/// A normalized temporal span, 0 <= start <= end <= 1.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const noexcept { return end - start; }
  double midpoint() const noexcept { return 0.5 * (start + end); }
  bool valid() const noexcept {
    return std::isfinite(start) && std::isfinite(end) && 0.0 <= start && start <= end && end <= 1.0;
  }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// One interval per query sentence, index-aligned with the paragraph.
using IntervalSet = std::vector<Interval>;

inline void require_valid(const Interval& iv, const std::string& what = "interval") {
  if (!iv.valid()) {
    throw ValidationError(what + " [" + std::to_string(iv.start) + ", " + std::to_string(iv.end) +
                          "] violates 0 <= start <= end <= 1");
  }
}

inline double intersection_length(const Interval& a, const Interval& b) noexcept {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

/// |a ∩ b| / |a ∪ b|; zero when the union has zero length.
inline double iou(const Interval& a, const Interval& b) noexcept {
  const double inter = intersection_length(a, b);
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

/// Generalized IoU: iou minus the fraction of the enclosing span covered by neither interval.
inline double giou(const Interval& a, const Interval& b) noexcept {
  const double inter = intersection_length(a, b);
  const double uni = a.length() + b.length() - inter;
  const double enclosing = std::max(a.end, b.end) - std::min(a.start, b.start);
  const double base = uni > 0.0 ? inter / uni : 0.0;
  if (enclosing <= 0.0) return base;
  return base - (enclosing - uni) / enclosing;
}

/// Mean over sentences of L1 boundary error plus (1 - giou).
inline double location_loss(std::span<const Interval> pred, std::span<const Interval> target) {
  if (pred.size() != target.size()) {
    throw ValidationError("location_loss: prediction has " + std::to_string(pred.size()) +
                          " intervals but target has " + std::to_string(target.size()));
  }
  if (pred.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total += std::abs(pred[i].start - target[i].start) + std::abs(pred[i].end - target[i].end);
    total += 1.0 - giou(pred[i], target[i]);
  }
  return total / static_cast<double>(pred.size());
}

/// Fraction of IoUs at or above the threshold m.
inline double recall_at(std::span<const double> ious, double m) {
  if (ious.empty()) throw ValidationError("recall_at: empty IoU list");
  const auto hits = std::count_if(ious.begin(), ious.end(), [m](double v) { return v >= m; });
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

inline double mean_iou(std::span<const double> ious) {
  if (ious.empty()) throw ValidationError("mean_iou: empty IoU list");
  double sum = 0.0;
  for (double v : ious) sum += v;
  return sum / static_cast<double>(ious.size());
}

/// Per-sentence IoUs of two index-aligned sets.
inline std::vector<double> pairwise_iou(std::span<const Interval> pred, std::span<const Interval> target) {
  if (pred.size() != target.size()) {
    throw ValidationError("pairwise_iou: length mismatch");
  }
  std::vector<double> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = iou(pred[i], target[i]);
  return out;
}

}  // namespace ccl
