#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "o2rnet/commands.hpp"
#include "o2rnet/report.hpp"

using namespace o2r;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

// Small, fast variant of the desk preset.
RunConfig small_config() {
  RunConfig c = make_preset("desk");
  c.synth.count = 6;
  c.synth.split = {0.5, 0.0, 0.5};
  c.synth.scene.image_size = {64, 64};
  c.synth.scene.min_radius = 6;
  c.synth.scene.max_radius = 10;
  c.train.model.anchors.scales = {12.0, 24.0};
  c.train.model.head_hidden = 16;
  c.train.sampler.batch_rois = 16;
  c.train.schedule.total_iters = 4;
  c.train.schedule.warmup_iters = 1;
  c.train.schedule.milestones = {};
  c.log_every = 1;
  return c;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("presets") {
    for (const auto& n : preset_names()) CHECK_NOTHROW(make_preset(n).validate());
    CHECK_THROWS_WITH(make_preset("nope"), doctest::Contains("nope"));
    const auto exp = make_preset("exp-paper-4.1");
    CHECK(exp.train.schedule.momentum == 0.9);
    CHECK(exp.train.schedule.base_lr == 0.001);
    CHECK(exp.train.schedule.l2() == doctest::Approx(0.0005));
    const auto arch = make_preset("arch-paper-3.5");
    CHECK(arch.train.schedule.warmup_iters == 1000);
    CHECK(arch.train.schedule.batch_size == 2);
    CHECK(arch.train.sampler.batch_rois == 512);
    CHECK(make_preset("desk-baseline").train.weights.lambda1 == 1.0);
  }

  TEST_CASE("config json round trip, strict keys, env overrides") {
    const RunConfig c = make_preset("desk");
    const RunConfig back = run_config_from_json(to_json(c), make_preset("desk-baseline"));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));

    json bad = {{"model", {{"pool_sise", 5}}}};
    CHECK_THROWS_WITH(run_config_from_json(bad, c), doctest::Contains("model.pool_sise"));
    json wrong_type = {{"seed", "abc"}};
    CHECK_THROWS(run_config_from_json(wrong_type, c));

    json j = to_json(c);
    apply_env_overrides(j, {{"O2RNET_SCHEDULE__BASE_LR", "0.5"}, {"O2RNET_NAME", "envrun"}});
    const RunConfig e = run_config_from_json(j, c);
    CHECK(e.train.schedule.base_lr == 0.5);
    CHECK(e.name == "envrun");
    CHECK(config_hash(e) != config_hash(c));

    RunConfig s = c;
    s.apply_seed(99);
    CHECK(s.synth.scene.seed == 99);
    CHECK(s.train.seed == 99);
  }

  TEST_CASE("synth is deterministic and counts match") {
    RunConfig c = small_config();
    c.synth.count = 10;
    const fs::path a = fresh_dir("o2rnet_synth_a"), b = fresh_dir("o2rnet_synth_b");
    std::ostringstream log;
    CHECK(cmd_synth(c, a, log) == 10);
    cmd_synth(c, b, log);
    CHECK(slurp(a / "manifest.jsonl") == slurp(b / "manifest.jsonl"));
    CHECK(slurp(a / "images" / "synth_0_3.png") == slurp(b / "images" / "synth_0_3.png"));
    CHECK(read_manifest(a / "manifest.jsonl", false).size() == 10);
    std::size_t pngs = 0;
    for (const auto& e : fs::directory_iterator(a / "images")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 10);
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("train, infer, eval, report") {
    const RunConfig c = small_config();
    const fs::path root = fresh_dir("o2rnet_pipeline");
    std::ostringstream log;
    cmd_synth(c, root / "data", log);

    RunConfig t = c;
    t.paths.train_manifest = (root / "data" / "train.jsonl").string();
    const auto out = cmd_train(t, root / "run", false, log);
    CHECK(out.iterations == 4);
    CHECK(fs::exists(root / "run" / "loss.csv"));
    const json meta = json::parse(slurp(root / "run" / "metadata.json"));
    CHECK(meta["config_hash"] == config_hash(t));
    CHECK_THROWS(cmd_train(t, root / "run", false, log));  // refuses to overwrite

    RunConfig missing = t;
    missing.paths.train_manifest = (root / "nothing.jsonl").string();
    CHECK_THROWS(cmd_train(missing, root / "run2", false, log));

    const auto dump = root / "run" / "eval" / "detections.jsonl";
    cmd_infer(t, out.final_checkpoint, root / "data" / "test.jsonl", dump, log);
    const auto summary = cmd_eval(t, dump, root / "data" / "test.jsonl", root / "run" / "eval", log);
    CHECK(fs::exists(root / "run" / "eval" / "summary.json"));
    CHECK(summary.f1 >= 0.0);
    {
      std::ofstream os(dump, std::ios::app);
      const std::vector<Detection> stray{{{0, 0, 4, 4}, 0.9, 1, Branch::occluder, -1, -1}};
      write_detections(os, "not_in_manifest", stray);
    }
    CHECK_THROWS_WITH(cmd_eval(t, dump, root / "data" / "test.jsonl", root / "bad_eval", log),
                      doctest::Contains("not_in_manifest"));

    cmd_report({root / "run"}, root / "report", log);
    const std::string table = slurp(root / "report" / "report.csv");
    CHECK(table.rfind("Model,Step,AP,AP50,AP75,AR,AR50,AR75,F1-Score", 0) == 0);
    CHECK(fs::exists(root / "report" / "pr_curves.svg"));
    fs::remove_all(root);
  }

  TEST_CASE("perfect dump evaluates to all ones") {
    const RunConfig c = small_config();
    const fs::path root = fresh_dir("o2rnet_perfect");
    std::ostringstream log;
    cmd_synth(c, root / "data", log);
    const auto records = read_manifest(root / "data" / "manifest.jsonl", false);
    fs::create_directories(root / "eval");
    {
      std::ofstream os(root / "eval" / "dump.jsonl");
      for (const auto& r : records) {
        std::vector<Detection> dets;
        for (const Box& b : r.annotation.boxes) dets.push_back({b, 0.99, 1, Branch::occluder, -1, -1});
        write_detections(os, r.image_id, dets);
      }
    }
    const auto s = cmd_eval(c, root / "eval" / "dump.jsonl", root / "data" / "manifest.jsonl", root / "eval", log);
    CHECK(s.ap == doctest::Approx(1.0));
    CHECK(s.ar == doctest::Approx(1.0));
    CHECK(s.f1 == doctest::Approx(1.0));
    fs::remove_all(root);
  }

  TEST_CASE("report table layout") {
    EvalSummary s;
    s.ap = 0.5;
    s.f1 = 0.75;
    const std::vector<ReportRow> rows{{"O2RNet", "1", s}, {"O2RNet", "2", s}, {"O2RNet", "3", s}};
    const std::string csv = report_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(report_text(rows, 100).find("maxDets=100") != std::string::npos);
    CHECK(smooth({1.0, 1.0, 1.0}).back() == doctest::Approx(1.0));
  }
}
