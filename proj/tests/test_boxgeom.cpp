#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "instdet/boxgeom.hpp"
#include "instdet/errors.hpp"
#include "oracles.hpp"

using namespace instdet;

TEST_CASE("iou examples") {
  CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 10}) == 1.0);
  CHECK(iou({0, 0, 10, 10}, {20, 20, 30, 30}) == 0.0);
  CHECK(iou({0, 0, 10, 10}, {0, 0, 10, 20}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(iou({0, 0, 0, 10}, {0, 0, 10, 10}), std::domain_error);
  CHECK_THROWS_AS(iou({0, 0, 10, 10}, {0, 0, NAN, 10}), std::domain_error);
}

TEST_CASE("iou is symmetric, bounded and matches the oracle") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const BBox a = oracle::random_box(rng, 100.0), b = oracle::random_box(rng, 100.0);
    const double ab = iou(a, b);
    CHECK(ab == iou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(std::abs(ab - oracle::iou_by_area(a, b)) < 1e-9);
  }
}

TEST_CASE("anchors: count, centres and area-preserving shape") {
  AnchorSpec spec{29, 39, 16.0, default_anchor_scales(), default_anchor_ratios()};
  const auto grid = generate_anchors(spec);
  CHECK(spec.anchors_per_location() == 24);
  CHECK(grid.size() == 27144u);

  AnchorSpec one{1, 1, 16.0, {30.0}, {1.0}};
  const auto a = generate_anchors(one).anchors.at(0);
  CHECK(a.center_x() == doctest::Approx(8.0));
  CHECK(a.center_y() == doctest::Approx(8.0));
  CHECK(a.width() == doctest::Approx(30.0));
  CHECK(a.height() == doctest::Approx(30.0));

  AnchorSpec half{1, 1, 16.0, {30.0}, {0.5}};
  const auto h = generate_anchors(half).anchors.at(0);
  CHECK(h.width() == doctest::Approx(21.2132).epsilon(1e-4));
  CHECK(h.height() == doctest::Approx(42.4264).epsilon(1e-4));

  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = spec.scales[(i / 3) % 8];
    REQUIRE(std::abs(grid.anchors[i].area() - s * s) / (s * s) < 1e-6);
  }
  // Row-major cell ordering: anchor 24 belongs to cell (0, 1).
  CHECK(grid.anchors[24].center_x() == doctest::Approx(24.0));
  CHECK(grid.anchors[39 * 24].center_y() == doctest::Approx(24.0));

  CHECK_THROWS(generate_anchors({2, 2, 0.0, {30.0}, {1.0}}));
  CHECK_THROWS(generate_anchors({2, 2, 16.0, {}, {1.0}}));
}

TEST_CASE("nms examples") {
  CHECK(nms({}, 0.5).empty());
  Detection d{{0, 0, 10, 10}, 0.7, 0, "a", {}};
  CHECK(nms({d}, 0.5).size() == 1);
  Detection hi = d, lo = d;
  hi.score = 0.9;
  lo.score = 0.8;
  const auto kept = nms({lo, hi}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
  CHECK_THROWS(nms({d}, 0.0));
  CHECK_THROWS(nms({d}, 1.0));
}

TEST_CASE("nms ties keep input order") {
  Detection a{{0, 0, 10, 10}, 0.5, 3, "a", {}}, b{{1, 0, 11, 10}, 0.5, 7, "a", {}};
  auto kept = nms({a, b}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].template_index == 3);
  kept = nms({b, a}, 0.5);
  CHECK(kept[0].template_index == 7);
}

TEST_CASE("nms equals the brute-force greedy oracle") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 50);
    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
      Detection d;
      d.bbox = oracle::random_box(rng, 120.0);
      d.score = std::uniform_real_distribution<double>(0, 1)(rng);
      if (rng() % 5 == 0 && i > 0) d.score = dets[rng() % i].score;  // exercise ties
      d.template_index = i;
      dets.push_back(d);
    }
    const double thr = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    const auto kept = nms(dets, thr);
    const auto expected = oracle::greedy_nms_indices(dets, thr);
    REQUIRE(kept.size() == expected.size());
    for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].template_index == expected[i]);
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1].score >= kept[i].score);
  }
}

TEST_CASE("depth estimation") {
  CHECK(estimate_depth({0, 0, 124, 100}, 1.0) == doctest::Approx(1.0));
  CHECK(estimate_depth({0, 0, 248, 10}, 1.0) == doctest::Approx(0.5));
  CHECK(estimate_depth({0, 0, 30, 62}, 1.0) == doctest::Approx(2.0));
  CHECK(estimate_depth({0, 0, 62, 62}, 2.0) == doctest::Approx(2.0 * estimate_depth({0, 0, 62, 62}, 1.0)));
  CHECK_THROWS_AS(estimate_depth({0, 0, 0, 0}, 1.0), std::domain_error);
  CHECK_THROWS_AS(estimate_depth({0, 0, 10, 10}, 0.0), std::domain_error);
}

TEST_CASE("filter by depth keeps the closed range") {
  auto mk = [](double depth) {
    Detection d{{0, 0, 1, 1}, 0.5, 0, "a", depth};
    return d;
  };
  const auto out = filter_by_depth({mk(1.0), mk(0.39), mk(2.01), mk(0.4), mk(2.0)}, 0.4, 2.0);
  REQUIRE(out.size() == 3);
  CHECK(*out[0].est_depth == 1.0);
  CHECK(*out[1].est_depth == 0.4);
  CHECK(*out[2].est_depth == 2.0);
  Detection no_depth{{0, 0, 1, 1}, 0.5, 0, "a", {}};
  CHECK_THROWS_AS(filter_by_depth({no_depth}, 0.4, 2.0), ContractError);
}

TEST_CASE("detection records are stable after one round trip") {
  std::mt19937_64 rng(3);
  std::vector<DetectionRecord> recs;
  for (int i = 0; i < 50; ++i) {
    DetectionRecord r{"img_" + std::to_string(i % 7), {oracle::random_box(rng, 640.0), 0.123456789 * (i % 8), -1,
                                                       "obj" + std::to_string(i % 3), {}}};
    if (i % 2) r.det.est_depth = 0.4 + 0.01 * i;
    recs.push_back(r);
  }
  std::stringstream first;
  first << "# config_hash=abc\n";
  write_detection_records(first, recs);
  const auto parsed = read_detection_records(first);
  REQUIRE(parsed.size() == recs.size());
  std::stringstream second;
  write_detection_records(second, parsed);
  std::stringstream third;
  write_detection_records(third, read_detection_records(second));
  CHECK(second.str() == third.str());
  CHECK(format_detection_record(parsed[1]) ==
        format_detection_record(recs[1]));
  CHECK(!parsed[0].det.est_depth.has_value());
}
