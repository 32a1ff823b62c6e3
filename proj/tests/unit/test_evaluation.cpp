#include <doctest.h>

#include <algorithm>

#include "o2rnet/evaluation.hpp"
#include "oracles.hpp"

using namespace o2r;

namespace {

EvalImage image(const std::string& id, std::vector<Box> boxes) {
  EvalImage im{id, std::move(boxes), {}};
  im.labels.assign(im.boxes.size(), kAppleLabel);
  return im;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("matching") {
    const std::vector<Box> gts{{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 40, 50, 50}};
    auto m = match_detections(gts, gts, 0.5);
    auto c = m.counts();
    CHECK(c.tp == 3);
    CHECK(c.fn == 0);
    c = match_detections({}, gts, 0.5).counts();
    CHECK(c.fn == 3);
    const std::vector<Box> two{{0, 0, 10, 10}, {0, 0, 10, 11}};
    c = match_detections(two, std::span(gts.data(), 1), 0.5).counts();
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.tp == oracle::max_matching(two, {gts[0]}, 0.5));
  }

  TEST_CASE("prf") {
    auto p = precision_recall_f1({8, 2, 0, 2});
    CHECK(p.precision == doctest::Approx(0.8));
    CHECK(p.recall == doctest::Approx(0.8));
    CHECK(p.f1 == doctest::Approx(0.8));
    p = precision_recall_f1({0, 3, 0, 4});
    CHECK(p.f1 == 0.0);
    CHECK(f1_score(0.9, 0.8) == doctest::Approx(1.44 / 1.7));
  }

  TEST_CASE("ap: perfect, all false, undefined") {
    const std::vector<EvalImage> ims{image("a", {{0, 0, 10, 10}, {20, 20, 30, 30}})};
    std::vector<EvalDetection> perfect{{"a", {0, 0, 10, 10}, 0.9, 1}, {"a", {20, 20, 30, 30}, 0.8, 1}};
    CHECK(average_precision(perfect, ims, 0.5).ap == doctest::Approx(1.0));
    auto s = coco_summary(perfect, ims);
    CHECK(s.ap == doctest::Approx(1.0));
    CHECK(s.ar == doctest::Approx(1.0));
    CHECK(s.f1 == doctest::Approx(1.0));
    std::vector<EvalDetection> wrong{{"a", {60, 60, 70, 70}, 0.9, 1}};
    CHECK(average_precision(wrong, ims, 0.5).ap == 0.0);
    const std::vector<EvalImage> empty{image("b", {})};
    CHECK(average_precision({}, empty, 0.5).undefined);
    std::vector<EvalDetection> stray{{"zzz", {0, 0, 1, 1}, 0.5, 1}};
    CHECK_THROWS_WITH(coco_summary(stray, ims), doctest::Contains("zzz"));
  }

  TEST_CASE("three-image scenario against the exhaustive oracle") {
    const std::vector<EvalImage> ims{image("a", {{0, 0, 10, 10}, {20, 0, 30, 10}}), image("b", {{0, 0, 20, 20}}),
                                     image("c", {{5, 5, 15, 15}, {30, 30, 40, 40}})};
    const std::vector<EvalDetection> dets{
        {"a", {0, 0, 10, 10}, 0.95, 1},   {"a", {21, 0, 31, 10}, 0.6, 1},  {"a", {50, 50, 60, 60}, 0.7, 1},
        {"b", {0, 0, 19, 19}, 0.8, 1},    {"b", {1, 1, 20, 20}, 0.8, 1},   {"c", {5, 5, 15, 16}, 0.5, 1},
        {"c", {60, 60, 65, 65}, 0.85, 1}, {"c", {30, 31, 40, 40}, 0.3, 1}};
    for (double thr : kCocoIouThresholds) {
      const auto got = average_precision(dets, ims, thr);
      const auto want = oracle::exhaustive_ap(dets, ims, thr, 100, 1);
      CHECK(got.ap == want.ap);
      CHECK(got.recall == want.recall);
      REQUIRE(got.curve.size() == want.curve.size());
      for (std::size_t i = 0; i < got.curve.size(); ++i) {
        CHECK(got.curve[i].precision == want.curve[i].precision);
        CHECK(got.curve[i].recall == want.curve[i].recall);
      }
    }
  }

  TEST_CASE("tied scores: result independent of detection order") {
    const std::vector<EvalImage> ims{image("a", {{0, 0, 10, 10}}), image("b", {{0, 0, 10, 10}})};
    std::vector<EvalDetection> dets{{"a", {0, 0, 10, 10}, 0.5, 1}, {"a", {0, 0, 9, 10}, 0.5, 1},
                                    {"b", {40, 40, 50, 50}, 0.5, 1}, {"b", {0, 1, 10, 10}, 0.5, 1}};
    const auto base = coco_summary(dets, ims);
    std::sort(dets.begin(), dets.end(), [](const auto& x, const auto& y) { return x.box.x1 > y.box.x1; });
    const auto perm = coco_summary(dets, ims);
    CHECK(base.ap == perm.ap);
    CHECK(base.ar == perm.ar);
    CHECK(base.f1 == perm.f1);
  }

  TEST_CASE("max_dets truncates per image") {
    const std::vector<EvalImage> ims{image("a", {{0, 0, 10, 10}, {20, 20, 30, 30}})};
    std::vector<EvalDetection> dets{{"a", {0, 0, 10, 10}, 0.9, 1}, {"a", {20, 20, 30, 30}, 0.8, 1}};
    EvalSettings s;
    s.max_dets = 1;
    CHECK(coco_summary(dets, ims, s).ar == doctest::Approx(0.5));
  }

  TEST_CASE("f1 respects the score threshold") {
    const std::vector<EvalImage> ims{image("a", {{0, 0, 10, 10}, {20, 20, 30, 30}})};
    std::vector<EvalDetection> dets{{"a", {0, 0, 10, 10}, 0.9, 1}, {"a", {20, 20, 30, 30}, 0.4, 1}};
    const auto s = coco_summary(dets, ims);
    CHECK(s.counts.tp == 1);
    CHECK(s.counts.fn == 1);
    CHECK(s.counts.tn == 0);
  }
}
