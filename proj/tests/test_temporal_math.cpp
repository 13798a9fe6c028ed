#include "ccl/temporal_math.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using ccl::Interval;
using Catch::Matchers::WithinAbs;

namespace {

Interval random_interval(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double a = u(rng), b = u(rng);
  if (a > b) std::swap(a, b);
  return {a, b};
}

}  // namespace

TEST_CASE("iou examples") {
  CHECK(ccl::iou({0.2, 0.6}, {0.2, 0.6}) == 1.0);
  CHECK(ccl::iou({0.0, 0.2}, {0.8, 1.0}) == 0.0);
  CHECK_THAT(ccl::iou({0.2, 0.6}, {0.4, 0.8}), WithinAbs(1.0 / 3.0, 1e-12));
}

TEST_CASE("zero-length intervals follow the zero-union rule") {
  CHECK(ccl::iou({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(ccl::iou({0.5, 0.5}, {0.2, 0.8}) == 0.0);
  CHECK(ccl::giou({0.5, 0.5}, {0.5, 0.5}) == 0.0);
}

TEST_CASE("giou examples") {
  CHECK_THAT(ccl::giou({0.1, 0.4}, {0.3, 0.7}), WithinAbs(1.0 / 6.0, 1e-12));
  CHECK_THAT(ccl::giou({0.0, 0.2}, {0.8, 1.0}), WithinAbs(-0.6, 1e-12));
  CHECK(ccl::giou({0.3, 0.45}, {0.3, 0.45}) == 1.0);
}

TEST_CASE("location_loss examples") {
  const ccl::IntervalSet a{{0.1, 0.2}, {0.4, 0.9}};
  CHECK(ccl::location_loss(a, a) == 0.0);
  const ccl::IntervalSet p1{{0.0, 0.2}}, g1{{0.8, 1.0}};
  CHECK_THAT(ccl::location_loss(p1, g1), WithinAbs(3.2, 1e-12));
  const ccl::IntervalSet p2{{0.1, 0.4}}, g2{{0.3, 0.7}};
  CHECK_THAT(ccl::location_loss(p2, g2), WithinAbs(0.5 + 5.0 / 6.0, 1e-12));
  CHECK_THROWS_AS(ccl::location_loss(p1, a), ccl::ValidationError);
}

TEST_CASE("recall and mean iou") {
  const std::vector<double> ious{0.6, 0.4, 0.55};
  CHECK_THAT(ccl::recall_at(ious, 0.5), WithinAbs(2.0 / 3.0, 1e-12));
  CHECK(ccl::recall_at(std::vector<double>{1.0, 1.0}, 0.7) == 1.0);
  CHECK(ccl::recall_at(std::vector<double>{0.0, 0.0}, 0.3) == 0.0);
  CHECK_THROWS_AS(ccl::recall_at(std::vector<double>{}, 0.5), ccl::ValidationError);

  CHECK(ccl::mean_iou(std::vector<double>{1.0}) == 1.0);
  CHECK(ccl::mean_iou(std::vector<double>{0.0, 1.0}) == 0.5);
  CHECK_THAT(ccl::mean_iou(std::vector<double>{1.0 / 3.0, 1.0 / 6.0}), WithinAbs(0.25, 1e-12));
  CHECK_THROWS_AS(ccl::mean_iou(std::vector<double>{}), ccl::ValidationError);
}

TEST_CASE("interval metric properties over random pairs") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 2000; ++trial) {
    const Interval a = random_interval(rng);
    const Interval b = random_interval(rng);
    CHECK(ccl::iou(a, b) == ccl::iou(b, a));
    CHECK(ccl::giou(a, b) == ccl::giou(b, a));
    const double io = ccl::iou(a, b);
    const double gi = ccl::giou(a, b);
    CHECK(gi <= io + 1e-15);
    CHECK(io >= 0.0);
    CHECK(io <= 1.0);
    CHECK(gi >= -1.0);
    // Equality exactly when the enclosing span is the union (the intervals touch or overlap).
    const bool touching = ccl::intersection_length(a, b) > 0.0;
    if (touching) CHECK_THAT(gi, WithinAbs(io, 1e-12));
    if (!touching && std::max(a.start, b.start) - std::min(a.end, b.end) > 1e-9) CHECK(gi < io);

    const ccl::IntervalSet x{a, b};
    const ccl::IntervalSet y{b, a};
    CHECK(ccl::location_loss(x, x) == 0.0);
    CHECK(ccl::location_loss(x, y) >= 0.0);
  }
}

TEST_CASE("recall_at is non-increasing in the threshold") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> ious(17);
    for (double& v : ious) v = u(rng);
    double prev = 1.0;
    for (double m = 0.05; m < 1.0; m += 0.05) {
      const double r = ccl::recall_at(ious, m);
      CHECK(r <= prev);
      prev = r;
    }
  }
}
