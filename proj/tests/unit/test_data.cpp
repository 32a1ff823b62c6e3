#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "o2rnet/data.hpp"

using namespace o2r;
namespace fs = std::filesystem;

namespace {

std::string vgg_one(const std::string& regions) {
  return R"({"a.png123": {"filename": "a.png", "size": 123, "regions": [)" + regions + "]}}";
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("vgg parsing") {
    auto r = parse_vgg_annotations(
        vgg_one(R"({"shape_attributes": {"name": "rect", "x": 10, "y": 20, "width": 30, "height": 40}})"));
    REQUIRE(r.records.size() == 1);
    REQUIRE(r.records[0].annotation.boxes.size() == 1);
    CHECK(r.records[0].annotation.boxes[0] == Box{10, 20, 40, 60});
    CHECK(r.warnings == 0);

    auto empty = parse_vgg_annotations(vgg_one(""));
    REQUIRE(empty.records.size() == 1);
    CHECK(empty.records[0].annotation.boxes.empty());

    auto degenerate = parse_vgg_annotations(
        vgg_one(R"({"shape_attributes": {"name": "rect", "x": 10, "y": 20, "width": 0, "height": 40}})"));
    CHECK(degenerate.records[0].annotation.boxes.empty());
    CHECK(degenerate.warnings == 1);

    auto poly = parse_vgg_annotations(
        vgg_one(R"({"shape_attributes": {"name": "polygon", "all_points_x": [1, 2], "all_points_y": [1, 2]}})"));
    CHECK(poly.records[0].annotation.boxes.empty());
    CHECK(poly.warnings == 1);

    CHECK_THROWS(parse_vgg_annotations("{not json"));
    CHECK_THROWS(parse_vgg_annotations(vgg_one(R"({"shape_attributes": {"name": "rect", "x": 1}})")));
  }

  TEST_CASE("vgg round trip") {
    SynthConfig cfg;
    auto records = generate_synthetic_dataset(cfg, 5);
    auto back = parse_vgg_annotations(to_vgg_json(records));
    REQUIRE(back.records.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(back.records[i].annotation.boxes == records[i].annotation.boxes);
      CHECK(back.records[i].annotation.occluded == records[i].annotation.occluded);
    }
  }

  TEST_CASE("occlusion labels") {
    CHECK(label_occlusion_cases(std::vector<Box>{{0, 0, 10, 10}, {20, 20, 30, 30}}) == std::vector<bool>{false, false});
    CHECK(label_occlusion_cases(std::vector<Box>{{0, 0, 10, 10}, {0, 0, 10, 10}}) == std::vector<bool>{true, true});
    CHECK(label_occlusion_cases(std::vector<Box>{{0, 0, 10, 10}, {8, 0, 18, 10}}, 0.05) ==
          std::vector<bool>{true, true});
    CHECK(label_occlusion_cases(std::vector<Box>{{0, 0, 10, 10}, {8, 0, 18, 10}}, 0.25) ==
          std::vector<bool>{false, false});
  }

  TEST_CASE("occlusion labels are permutation equivariant") {
    SynthConfig cfg;
    cfg.cluster_fraction = 0.8;
    cfg.max_objects = 8;
    for (std::uint64_t i = 0; i < 30; ++i) {
      const auto rec = generate_synthetic_scene(cfg, i);
      std::vector<Box> boxes = rec.annotation.boxes;
      const auto base = label_occlusion_cases(boxes);
      std::vector<std::size_t> perm(boxes.size());
      for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = perm.size() - 1 - k;
      std::vector<Box> shuffled;
      for (auto p : perm) shuffled.push_back(boxes[p]);
      const auto flags = label_occlusion_cases(shuffled);
      for (std::size_t k = 0; k < perm.size(); ++k) CHECK(flags[k] == base[perm[k]]);
    }
  }

  TEST_CASE("synthetic scenes") {
    SynthConfig one;
    one.min_objects = one.max_objects = 1;
    one.cluster_fraction = 0.0;
    auto r = generate_synthetic_scene(one, 0);
    REQUIRE(r.annotation.size() == 1);
    CHECK_FALSE(r.annotation.occluded[0]);

    SynthConfig cfg;
    cfg.seed = 42;
    auto a = generate_synthetic_scene(cfg, 3);
    auto b = generate_synthetic_scene(cfg, 3);
    CHECK(a.image == b.image);
    CHECK(a.annotation.boxes == b.annotation.boxes);
    CHECK(generate_synthetic_scene(cfg, 4).image != a.image);

    SynthConfig pair;
    pair.min_objects = pair.max_objects = 2;
    pair.cluster_fraction = 1.0;
    pair.overlap_target = 0.3;
    for (std::uint64_t i = 0; i < 20; ++i) {
      auto rec = generate_synthetic_scene(pair, i);
      REQUIRE(rec.annotation.size() == 2);
      CHECK(rec.annotation.occluded == label_occlusion_cases(rec.annotation.boxes, 0.05));
      CHECK(rec.annotation.occluded[0]);
      CHECK(rec.annotation.occluded[1]);
    }
  }

  TEST_CASE("synthetic cluster overlap tracks the target") {
    SynthConfig cfg;
    cfg.cluster_fraction = 0.7;
    cfg.overlap_target = 0.3;
    double sum = 0.0;
    int n = 0;
    for (std::uint64_t i = 0; i < 200; ++i) {
      const auto scene = generate_synthetic_scene_detailed(cfg, i);
      const auto& boxes = scene.record.annotation.boxes;
      for (auto [p, q] : scene.cluster_pairs) {
        sum += intersection_over_smaller(boxes[static_cast<std::size_t>(p)], boxes[static_cast<std::size_t>(q)]);
        ++n;
      }
    }
    REQUIRE(n > 50);
    CHECK(std::abs(sum / n - 0.3) <= 0.05);
  }

  TEST_CASE("boxes stay inside the image and pixels render") {
    SynthConfig cfg;
    for (std::uint64_t i = 0; i < 20; ++i) {
      auto rec = generate_synthetic_scene(cfg, i);
      CHECK(rec.image.width == 256);
      for (const Box& b : rec.annotation.boxes) {
        CHECK(b.x1 >= 0.0);
        CHECK(b.y1 >= 0.0);
        CHECK(b.x2 <= 256.0);
        CHECK(b.y2 <= 256.0);
      }
    }
    SynthConfig bad;
    bad.min_objects = 5;
    bad.max_objects = 2;
    CHECK_THROWS(generate_synthetic_scene(bad, 0));
  }

  TEST_CASE("splits") {
    auto s = split_indices(10, {0.8, 0.1, 0.1}, 1);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 1);
    auto s2 = split_indices(10, {0.8, 0.1, 0.1}, 1);
    CHECK(s.train == s2.train);
    CHECK(s.test == s2.test);
    CHECK_THROWS(split_indices(2, {0.4, 0.3, 0.3}, 0));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto p = split_indices(37, {0.6, 0.2, 0.2}, seed);
      std::multiset<std::size_t> all(p.train.begin(), p.train.end());
      all.insert(p.val.begin(), p.val.end());
      all.insert(p.test.begin(), p.test.end());
      CHECK(all.size() == 37);
      CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 37);
    }
  }

  TEST_CASE("manifest round trip") {
    const fs::path dir = fs::temp_directory_path() / "o2rnet_test_manifest";
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    SynthConfig cfg;
    auto records = generate_synthetic_dataset(cfg, 3);
    for (auto& r : records) {
      r.image_path = dir / "images" / (r.image_id + ".png");
      write_image(r.image_path, r.image);
    }
    write_manifest(dir / "m.jsonl", records);
    auto back = read_manifest(dir / "m.jsonl");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].image_id == records[i].image_id);
      CHECK(back[i].image == records[i].image);
      CHECK(back[i].annotation.boxes == records[i].annotation.boxes);
    }
    fs::remove_all(dir);
  }
}
