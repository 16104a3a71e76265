#include <random>

#include "nn_doctest.hpp"
#include "fixtures.hpp"
#include "instdet/errors.hpp"
#include "instdet/infer.hpp"

using namespace instdet;

namespace {

Detection det(double score, int tmpl, const std::string& id = "a") { return {{0, 0, 10, 10}, score, tmpl, id, {}}; }

cv::Mat noise_image(int w, int h, std::uint64_t seed) {
  cv::Mat m(h, w, CV_8UC3);
  cv::RNG rng(seed);
  rng.fill(m, cv::RNG::UNIFORM, 0, 256);
  return m;
}

struct Fixture {
  Fixture() : net(make()) {
    RasterRenderer r;
    bank = make_template_bank(r, fixture::primitives()[0], 5);
  }
  static InstanceNet make() {
    torch::manual_seed(9);
    return InstanceNet(NetworkConfig::tiny());
  }
  InstanceNet net;
  TemplateBank bank;
};

}  // namespace

TEST_CASE("select_top_per_object") {
  CHECK(!select_top_per_object({}).has_value());
  CHECK(select_top_per_object({det(0.3, 0), det(0.9, 1), det(0.5, 2)})->score == 0.9);
  CHECK(select_top_per_object({det(0.7, 5), det(0.7, 2), det(0.7, 9)})->template_index == 2);
  CHECK_THROWS_AS(select_top_per_object({det(0.3, 0), det(0.9, 1, "b")}), ContractError);
}

TEST_CASE("template bank construction") {
  Fixture f;
  CHECK(f.bank.size() == 80);
  CHECK(f.bank.object_id == "box");
  CHECK(f.bank.global_template.valid());
  TemplateBank empty;
  empty.object_id = "x";
  empty.global_template.object_id = "x";
  CHECK_THROWS_AS(detect(noise_image(320, 240, 1), empty, f.net), ContractError);
  auto mixed = f.bank;
  mixed.local_templates[3].object_id = "other";
  CHECK_THROWS_AS(mixed.validate(), ContractError);
}

TEST_CASE("detect on noise: bounds, scores, determinism and caching") {
  Fixture f;
  const cv::Mat img = noise_image(320, 240, 2);
  DetectConfig cfg;
  cfg.score_threshold = 0.0;
  cfg.depth_filter = false;
  const auto a = detect(img, f.bank, f.net, cfg);
  REQUIRE(!a.empty());
  for (const auto& d : a) {
    CHECK(d.bbox.x_min >= 0.0);
    CHECK(d.bbox.y_min >= 0.0);
    CHECK(d.bbox.x_max <= 320.0);
    CHECK(d.bbox.y_max <= 240.0);
    CHECK(d.score >= 0.0);
    CHECK(d.score <= 1.0);
    CHECK(d.object_id == "box");
    CHECK(d.template_index >= 0);
    CHECK(d.template_index < 80);
    CHECK(d.est_depth.has_value());
  }
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].score >= a[i].score);

  const auto b = detect(img, f.bank, f.net, cfg);
  REQUIRE(a.size() == b.size());
  auto pre = f.bank;
  precompute(pre, f.net, cfg.template_batch);
  REQUIRE(pre.precomputed.has_value());
  CHECK(pre.precomputed->chunks.size() == 3);
  const auto first_filters = pre.precomputed->filters;
  precompute(pre, f.net, cfg.template_batch);
  CHECK(pre.precomputed->filters.is_same(first_filters));
  const auto c = detect(img, pre, f.net, cfg);
  REQUIRE(a.size() == c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(format_detection_record({"i", a[i]}) == format_detection_record({"i", b[i]}));
    CHECK(a[i].bbox == c[i].bbox);
    CHECK(a[i].score == c[i].score);
    CHECK(a[i].template_index == c[i].template_index);
  }

  DetectConfig filtered = cfg;
  filtered.depth_filter = true;
  for (const auto& d : detect(img, pre, f.net, filtered)) {
    CHECK(*d.est_depth >= 0.4);
    CHECK(*d.est_depth <= 2.0);
  }
  CHECK_THROWS_AS(detect(noise_image(64, 64, 3), f.bank, f.net, cfg), ShapeError);
}

TEST_CASE("adding templates never lowers the best score") {
  Fixture f;
  const cv::Mat img = noise_image(320, 240, 4);
  DetectConfig cfg;
  cfg.score_threshold = 0.0;
  cfg.depth_filter = false;
  cfg.template_batch = 1;
  auto small = f.bank;
  small.local_templates.resize(8);
  auto large = f.bank;
  large.local_templates.resize(16);
  const auto s = select_top_per_object(detect(img, small, f.net, cfg));
  const auto l = select_top_per_object(detect(img, large, f.net, cfg));
  REQUIRE(s.has_value());
  REQUIRE(l.has_value());
  CHECK(l->score >= s->score);
}
