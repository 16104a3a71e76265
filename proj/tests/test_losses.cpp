#include <cmath>
#include <random>

#include "doctest.h"
#include "instdet/errors.hpp"
#include "instdet/losses.hpp"
#include "oracles.hpp"

using namespace instdet;

TEST_CASE("anchor assignment matches a threshold oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<BBox> anchors;
    const int n = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) anchors.push_back(oracle::random_box(rng, 60.0));
    const BBox gt = oracle::random_box(rng, 60.0);
    const auto t = assign_anchors(anchors, gt);
    REQUIRE(t.labels.size() == anchors.size());
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      const double o = oracle::iou_by_area(anchors[i], gt);
      const AnchorLabel want = o >= 0.5 ? AnchorLabel::positive : (o < 0.4 ? AnchorLabel::negative : AnchorLabel::ignore);
      CHECK(t.labels[i] == want);
      if (want == AnchorLabel::positive) {
        ++pos;
        const BBox back = decode_box(anchors[i], t.deltas[i]);
        CHECK(std::abs(back.x_min - gt.x_min) < 1e-9);
        CHECK(std::abs(back.y_max - gt.y_max) < 1e-9);
      } else {
        CHECK(t.deltas[i] == BoxDelta{0, 0, 0, 0});
      }
    }
    CHECK(t.num_positive == pos);
  }
}

TEST_CASE("anchor in the ignore band") {
  // IoU of [0,10]x[0,10] with [0,10]x[0,22.222] is 0.45.
  const auto t = assign_anchors({{0, 0, 10, 10}}, {0, 0, 10, 10 / 0.45});
  CHECK(t.labels[0] == AnchorLabel::ignore);
  CHECK(t.num_positive == 0);
  const auto neg = all_negative_targets(5);
  CHECK(neg.labels.size() == 5);
  CHECK(neg.num_positive == 0);
  for (auto l : neg.labels) CHECK(l == AnchorLabel::negative);
}

TEST_CASE("box codec values") {
  const BBox anchor = BBox::from_center(50, 50, 20, 20);
  const BBox gt = BBox::from_center(52, 50, 40, 20);
  const auto t = encode_box(anchor, gt);
  CHECK(t[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(t[1] == doctest::Approx(0.0));
  CHECK(t[2] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(t[3] == doctest::Approx(0.0));
  CHECK_THROWS(encode_box({0, 0, 0, 10}, gt));
}

TEST_CASE("codec round trip") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const BBox a = oracle::random_box(rng, 500.0), g = oracle::random_box(rng, 500.0);
    const BBox r = decode_box(a, encode_box(a, g));
    REQUIRE(std::abs(r.x_min - g.x_min) < 1e-9);
    REQUIRE(std::abs(r.y_min - g.y_min) < 1e-9);
    REQUIRE(std::abs(r.x_max - g.x_max) < 1e-9);
    REQUIRE(std::abs(r.y_max - g.y_max) < 1e-9);
  }
}

TEST_CASE("total loss arithmetic") {
  const LossWeights w;
  CHECK(w.valid());
  CHECK(std::abs(total_loss({0.1, 0.2, 0.3, 0.4}, w) - 6.7) < 1e-12);
  CHECK(total_loss({0, 0, 0, 0}, w) == 0.0);
  CHECK_THROWS_AS(total_loss({NAN, 0, 0, 0}, w), TrainingError);
  CHECK_THROWS_AS(total_loss({0, 0, INFINITY, 0}, w), TrainingError);
  CHECK_THROWS_AS(total_loss({0, -1, 0, 0}, w), TrainingError);
  try {
    total_loss({0, 0, 0, NAN}, w);
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("reg") != std::string::npos);
  }
  LossWeights bad;
  bad.focal_alpha = 1.5;
  CHECK(!bad.valid());
}
