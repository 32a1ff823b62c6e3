#include <doctest.h>

#include <cmath>

#include "o2rnet/geometry.hpp"
#include "o2rnet/rng.hpp"
#include "oracles.hpp"

using namespace o2r;

TEST_SUITE("geometry") {
  TEST_CASE("iou basics") {
    const Box a{0, 0, 10, 10};
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
    CHECK(iou(a, {5, 5, 15, 15}) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
    CHECK(std::abs(oracle::raster_iou(a, {5, 5, 15, 15}, 0.01) - 25.0 / 175.0) < 1e-6);
    CHECK(iou({1, 1, 1, 1}, {2, 2, 2, 2}) == 0.0);
    CHECK(iou({1, 1, 1, 1}, {0, 0, 5, 5}) == 0.0);
  }

  TEST_CASE("iou symmetric, bounded, matches raster oracle") {
    Rng rng(7);
    for (int n = 0; n < 200; ++n) {
      auto q = [&] { return std::round(rng.uniform(0.0, 30.0) * 4.0) / 4.0; };
      double x1 = q(), x2 = q(), y1 = q(), y2 = q();
      double u1 = q(), u2 = q(), v1 = q(), v2 = q();
      Box a{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
      Box b{std::min(u1, u2), std::min(v1, v2), std::max(u1, u2), std::max(v1, v2)};
      const double v = iou(a, b);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(v == iou(b, a));
      CHECK(std::abs(v - oracle::raster_iou(a, b, 0.25)) < 1e-6);
    }
  }

  TEST_CASE("nms examples") {
    std::vector<ScoredBox> c{{{0, 0, 10, 10}, 0.9}, {{1, 1, 11, 11}, 0.8}, {{20, 20, 30, 30}, 0.7}};
    auto out = nms(c, 0.5);
    REQUIRE(out.size() == 2);
    CHECK(out[0].box == c[0].box);
    CHECK(out[1].box == c[2].box);
    CHECK(nms(std::span<const ScoredBox>(c.data(), 1), 0.5).size() == 1);
    CHECK(nms(c, 1.0).size() == 3);
    CHECK(nms(std::vector<ScoredBox>{}, 0.5).empty());
  }

  TEST_CASE("nms matches brute force, idempotent, no surviving overlap") {
    Rng rng(11);
    for (int n = 0; n < 100; ++n) {
      const int count = rng.uniform_int(0, 20);
      std::vector<Box> boxes;
      std::vector<double> scores;
      for (int i = 0; i < count; ++i) {
        const double x = rng.uniform(0, 50), y = rng.uniform(0, 50);
        boxes.push_back({x, y, x + rng.uniform(1, 20), y + rng.uniform(1, 20)});
        scores.push_back(std::round(rng.uniform() * 5.0) / 5.0);  // plenty of ties
      }
      const double thr = rng.uniform(0.1, 0.9);
      const auto keep = nms_indices(boxes, scores, thr);
      CHECK(keep == oracle::brute_force_nms(boxes, scores, thr));
      for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t j = i + 1; j < keep.size(); ++j) CHECK(iou(boxes[keep[i]], boxes[keep[j]]) <= thr);
      std::vector<Box> kb;
      std::vector<double> ks;
      for (auto k : keep) {
        kb.push_back(boxes[k]);
        ks.push_back(scores[k]);
      }
      CHECK(nms_indices(kb, ks, thr).size() == keep.size());
    }
  }

  TEST_CASE("anchors") {
    const std::vector<double> s16{16.0}, r1{1.0}, r4{4.0};
    auto one = generate_anchors(1, 1, s16, r1, 16);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == Box{0, 0, 16, 16});
    CHECK(generate_anchors(2, 2, s16, r1, 16).size() == 4);
    auto wide = generate_anchors(1, 1, s16, r4, 16);
    CHECK(wide[0].width() == doctest::Approx(32.0));
    CHECK(wide[0].height() == doctest::Approx(8.0));
    CHECK(wide[0].center_x() == doctest::Approx(8.0));
    CHECK(wide[0].center_y() == doctest::Approx(8.0));

    const std::vector<double> scales{16, 32}, ratios{0.5, 1, 2};
    auto grid = generate_anchors(3, 5, scales, ratios, 8);
    REQUIRE(grid.size() == 3u * 5 * 2 * 3);
    // (row, col, scale, ratio) order
    const Box& b = grid[((1 * 5 + 2) * 2 + 1) * 3 + 2];
    CHECK(b.center_x() == doctest::Approx(2.5 * 8));
    CHECK(b.center_y() == doctest::Approx(1.5 * 8));
    CHECK(b.width() * b.height() == doctest::Approx(32.0 * 32.0));
    CHECK(b.width() / b.height() == doctest::Approx(2.0));
    CHECK_THROWS(generate_anchors(0, 1, s16, r1, 8));
  }

  TEST_CASE("fes examples") {
    const ImageSize img{1280, 720};
    FesConfig cfg;
    auto e = fes_expand({100, 100, 200, 200}, cfg, img);
    REQUIRE(e.size() == 9);
    CHECK(e[0] == Box{100, 100, 200, 200});
    CHECK(e[1] == Box{100, 100, 210, 200});  // E
    CHECK(e[2] == Box{100, 90, 210, 200});   // NE
    CHECK(e[3] == Box{100, 90, 200, 200});   // N
    CHECK(e[5] == Box{90, 100, 200, 200});   // W
    CHECK(e[7] == Box{100, 100, 200, 210});  // S
    auto w = fes_expand({0, 0, 100, 100}, cfg, img);
    CHECK(w[5] == Box{0, 0, 100, 100});
    cfg.steps = 0;
    for (const Box& b : fes_expand({3, 4, 50, 60}, cfg, img)) CHECK(b == Box{3, 4, 50, 60});
    cfg.steps = 2;
    CHECK(fes_expand({100, 100, 200, 200}, cfg, img)[1] == Box{100, 100, 220, 200});
    cfg.steps = -1;
    CHECK_THROWS(fes_expand({100, 100, 200, 200}, cfg, img));
  }

  TEST_CASE("fes directions are compass unit offsets") {
    const int want[8][2] = {{1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}};
    for (int i = 0; i < 8; ++i) {
      auto [dx, dy] = expansion_direction(i, 8);
      CHECK(dx == want[i][0]);
      CHECK(dy == want[i][1]);
    }
  }

  TEST_CASE("fes translate mode keeps size") {
    FesConfig cfg;
    cfg.mode = ExpansionMode::translate;
    auto e = fes_expand({100, 100, 200, 200}, cfg, {1280, 720});
    CHECK(e[1] == Box{110, 100, 210, 200});
  }

  TEST_CASE("deltas") {
    const Box a{0, 0, 10, 10};
    auto z = encode_deltas(a, a);
    CHECK(z.dx == 0.0);
    CHECK(z.dy == 0.0);
    CHECK(z.dw == 0.0);
    CHECK(z.dh == 0.0);
    auto d = encode_deltas(a, {5, 0, 15, 10});
    CHECK(d.dx == doctest::Approx(0.5));
    CHECK(d.dy == 0.0);
    CHECK(d.dw == doctest::Approx(0.0));
    CHECK_THROWS(encode_deltas(a, {5, 5, 5, 9}));
    Rng rng(3);
    for (int n = 0; n < 100; ++n) {
      const Box p{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(60, 120), rng.uniform(60, 120)};
      const Box q{rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(60, 120), rng.uniform(60, 120)};
      const Box r = apply_deltas(p, encode_deltas(p, q));
      CHECK(std::abs(r.x1 - q.x1) < 1e-9);
      CHECK(std::abs(r.y1 - q.y1) < 1e-9);
      CHECK(std::abs(r.x2 - q.x2) < 1e-9);
      CHECK(std::abs(r.y2 - q.y2) < 1e-9);
    }
  }

  TEST_CASE("clip") {
    CHECK(clip_box({-5, -5, 300, 20}, {100, 50}) == Box{0, 0, 100, 20});
  }
}
