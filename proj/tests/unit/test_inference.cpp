#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "o2rnet/inference.hpp"

using namespace o2r;

namespace {

BranchOutput constant_output(double score) {
  BranchOutput o;
  o.scores.resize(1, 2);
  o.scores << 1.0 - score, score;
  o.deltas = Matrix::Zero(1, 4);
  o.branch = Branch::occludee;
  return o;
}

Detection det(Box b, double s, Branch br) {
  Detection d;
  d.box = b;
  d.score = s;
  d.branch = br;
  return d;
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("select best") {
    std::vector<Box> exps;
    for (int i = 0; i < 9; ++i) exps.push_back({10.0 + i, 10, 40.0 + i, 40});
    std::vector<BranchOutput> equal(9, constant_output(0.5));
    auto d = select_best(equal, 0, exps, 1, {10, 10, 5, 5}, {100, 100});
    CHECK(d.expansion_index == 0);
    CHECK(d.box == exps[0]);
    std::vector<BranchOutput> ramp;
    for (int i = 0; i < 9; ++i) ramp.push_back(constant_output(i == 5 ? 0.9 : 0.1));
    d = select_best(ramp, 0, exps, 1, {10, 10, 5, 5}, {100, 100});
    CHECK(d.expansion_index == 5);
    CHECK(d.score == doctest::Approx(0.9));
    CHECK(d.branch == Branch::occludee);
  }

  TEST_CASE("merge branches") {
    const std::vector<Detection> occ{det({0, 0, 10, 10}, 0.9, Branch::occluder), det({50, 50, 60, 60}, 0.8, Branch::occluder)};
    CHECK(merge_branches(occ, {}, 0.5).size() == 2);
    const std::vector<Detection> dup{det({0, 0, 10, 10}, 0.7, Branch::occludee)};
    auto m = merge_branches(occ, dup, 0.5);
    REQUIRE(m.size() == 2);
    CHECK(m[0].branch == Branch::occluder);
    const std::vector<Detection> far{det({80, 80, 90, 90}, 0.95, Branch::occludee)};
    m = merge_branches(occ, far, 0.5);
    REQUIRE(m.size() == 3);
    CHECK(m[0].branch == Branch::occludee);
  }

  TEST_CASE("detect: blank image, determinism, modes") {
    O2RNet model(fixture::tiny_model());
    DetectParams p;
    for (const auto& d : detect(model, Image(32, 32, 0), p)) {
      CHECK(std::isfinite(d.score));
      CHECK(d.score >= p.score_threshold);
      CHECK(d.box.x1 >= 0.0);
      CHECK(d.box.x2 <= 32.0);
      CHECK(d.box.y2 <= 32.0);
    }

    const auto scene = fixture::tiny_scene();
    p.score_threshold = 0.0;
    const auto a = detect(model, scene.image, p);
    const auto b = detect(model, scene.image, p);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].box == b[i].box);
      CHECK(a[i].score == b[i].score);
    }
    for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].score >= a[i].score);

    p.mode = OutputMode::occluder_only;
    for (const auto& d : detect(model, scene.image, p)) CHECK(d.branch == Branch::occluder);
    p.mode = OutputMode::occludee_only;
    for (const auto& d : detect(model, scene.image, p)) {
      CHECK(d.branch == Branch::occludee);
      CHECK(d.expansion_index >= 0);
    }
    CHECK(parse_output_mode("union") == OutputMode::union_branches);
    CHECK_THROWS(parse_output_mode("both"));
  }

  TEST_CASE("dump round trip") {
    std::vector<Detection> dets{det({1.5, 2, 3, 4.25}, 0.75, Branch::occluder), det({5, 6, 7, 8}, 0.5, Branch::occludee)};
    dets[1].expansion_index = 3;
    std::stringstream ss;
    write_detections(ss, "img7", dets);
    const auto back = parse_detections(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].image_id == "img7");
    CHECK(back[0].detection.box == dets[0].box);
    CHECK(back[0].detection.score == 0.75);
    CHECK(back[0].detection.expansion_index == -1);
    CHECK(back[1].detection.branch == Branch::occludee);
    CHECK(back[1].detection.expansion_index == 3);
    CHECK(detection_to_json("a", dets[0])["expansion_index"].is_null());
  }
}
