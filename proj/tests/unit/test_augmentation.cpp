#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "o2rnet/augmentation.hpp"
#include "oracles.hpp"

using namespace o2r;

namespace {

ImageRecord flat_record(int w, int h, std::uint8_t v, std::vector<Box> boxes) {
  ImageRecord r;
  r.image_id = "flat";
  r.image = Image(w, h, v);
  r.annotation.image_id = "flat";
  r.annotation.boxes = std::move(boxes);
  r.annotation.labels.assign(r.annotation.boxes.size(), kAppleLabel);
  r.annotation.occluded = label_occlusion_cases(r.annotation.boxes);
  return r;
}

bool near_box(const Box& a, const Box& b, double tol) {
  return std::abs(a.x1 - b.x1) < tol && std::abs(a.y1 - b.y1) < tol && std::abs(a.x2 - b.x2) < tol &&
         std::abs(a.y2 - b.y2) < tol;
}

}  // namespace

TEST_SUITE("augmentation") {
  TEST_CASE("geometric identity and reflection") {
    const auto rec = generate_synthetic_scene(SynthConfig{}, 1);
    const auto same = apply_geometric(rec, GeometricParams{});
    CHECK(same.image == rec.image);
    CHECK(same.annotation.boxes == rec.annotation.boxes);

    GeometricParams flip;
    flip.hflip = true;
    const auto f = apply_geometric(flat_record(100, 100, 50, {{10, 20, 30, 40}}), flip);
    REQUIRE(f.annotation.boxes.size() == 1);
    CHECK(near_box(f.annotation.boxes[0], {70, 20, 90, 40}, 1e-9));
  }

  TEST_CASE("rotation boxes follow the corner oracle") {
    Rng rng(5);
    for (int n = 0; n < 50; ++n) {
      const double x = rng.uniform(20, 60), y = rng.uniform(20, 60);
      const Box b{x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)};
      GeometricParams p;
      p.rotation_deg = rng.uniform(-90, 90);
      const auto out = apply_geometric(flat_record(100, 100, 10, {b}), p);
      const Box want = clip_box(oracle::rotate_corners(b, p.rotation_deg, 50, 50), {100, 100});
      REQUIRE(out.annotation.boxes.size() == 1);
      CHECK(near_box(out.annotation.boxes[0], want, 1e-9));
    }
    GeometricParams quarter;
    quarter.rotation_deg = 90;
    const auto q = apply_geometric(flat_record(100, 100, 10, {{0, 0, 10, 20}}), quarter);
    REQUIRE(q.annotation.boxes.size() == 1);
    CHECK(near_box(q.annotation.boxes[0], clip_box(oracle::rotate_corners({0, 0, 10, 20}, 90, 50, 50), {100, 100}),
                   1e-9));
  }

  TEST_CASE("boxes pushed outside are dropped") {
    GeometricParams p;
    p.translate_x = 200;
    const auto out = apply_geometric(flat_record(100, 100, 10, {{10, 10, 20, 20}}), p);
    CHECK(out.annotation.boxes.empty());
    CHECK(out.annotation.labels.empty());
  }

  TEST_CASE("color") {
    const auto rec = flat_record(4, 4, 100, {});
    CHECK(apply_color(rec, {1.0, 0.0}).image == rec.image);
    for (auto p : apply_color(rec, {1.0, 255.0}).image.pixels) CHECK(p == 255);
    for (auto p : apply_color(rec, {2.0, 0.0}).image.pixels) CHECK(p == 72);
  }

  TEST_CASE("filters") {
    const auto rec = generate_synthetic_scene(SynthConfig{}, 2);
    CHECK(apply_pixel_filters(rec, {}).image == rec.image);
    FilterParams noise{10.0, 0.0, 99};
    CHECK(apply_pixel_filters(rec, noise).image == apply_pixel_filters(rec, noise).image);
    CHECK(apply_pixel_filters(rec, noise).image != rec.image);
    const auto flat = flat_record(16, 16, 77, {});
    CHECK(apply_pixel_filters(flat, {0.0, 0.5, 0}).image == flat.image);
    CHECK_THROWS(apply_pixel_filters(rec, {-1.0, 0.0, 0}));
  }

  TEST_CASE("mixup") {
    const auto a = flat_record(8, 8, 100, {{0, 0, 2, 2}, {3, 3, 5, 5}, {5, 0, 7, 2}});
    const auto b = flat_record(8, 8, 200, {{1, 1, 4, 4}, {0, 5, 2, 7}});
    const auto one = mixup(a, b, 1.0);
    CHECK(one.image == a.image);
    CHECK(one.annotation.size() == 5);
    for (auto p : mixup(a, b, 0.5).image.pixels) CHECK(p == 150);
    CHECK(mixup(a, b, 0.3).image == mixup(b, a, 0.7).image);

    const auto big = flat_record(16, 16, 200, {{2, 2, 8, 8}});
    const auto r = mixup(a, big, 0.5);
    REQUIRE(r.annotation.size() == 4);
    CHECK(near_box(r.annotation.boxes[3], {1, 1, 4, 4}, 1e-9));
  }

  TEST_CASE("pipeline") {
    const auto pool = generate_synthetic_dataset(SynthConfig{}, 4);
    const auto& rec = pool[0];
    const auto id = augment_pipeline(rec, AugmentSpec::none(), 3, pool);
    CHECK(id.image == rec.image);
    CHECK(id.annotation.boxes == rec.annotation.boxes);

    AugmentSpec spec = AugmentSpec::all_families();
    spec.seed = 17;
    const auto x = augment_pipeline(rec, spec, 5, pool);
    const auto y = augment_pipeline(rec, spec, 5, pool);
    CHECK(x.image == y.image);
    CHECK(x.annotation.boxes == y.annotation.boxes);
    CHECK(augment_pipeline(rec, spec, 6, pool).image != x.image);
    for (const Box& b : x.annotation.boxes) {
      CHECK(b.valid());
      CHECK(b.x2 <= x.image.width);
      CHECK(b.y2 <= x.image.height);
    }
    CHECK(x.annotation.occluded == label_occlusion_cases(x.annotation.boxes, spec.tau_occ));

    AugmentSpec best = AugmentSpec::best_combination();
    CHECK(best.geometric);
    CHECK(best.color);
    CHECK(best.mixup);
    CHECK_FALSE(best.gaussian_noise);
    CHECK_FALSE(best.sharpen);

    AugmentSpec bad;
    bad.color_ranges.min_contrast = 2.0;
    bad.color_ranges.max_contrast = 1.0;
    CHECK_THROWS(bad.validate());
  }
}
