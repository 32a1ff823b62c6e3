#include "o2rnet/commands.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "o2rnet/checkpoint.hpp"
#include "o2rnet/report.hpp"

namespace o2r {

using nlohmann::json;

namespace {

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw std::invalid_argument(what + " path is not set");
  if (!fs::is_regular_file(p)) throw std::invalid_argument(what + " not found: " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << s;
}

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec || !fs::is_directory(d)) throw std::runtime_error("cannot create directory " + d.string());
  const fs::path probe = d / ".write_probe";
  {
    std::ofstream os(probe);
    if (!os) throw std::runtime_error("directory is not writable: " + d.string());
  }
  fs::remove(probe, ec);
}

std::string loss_header(std::size_t terms) {
  std::string h = "iteration,lr,objective,total,occluder_cls,occluder_bbox,occludee,rpn_cls,rpn_bbox,skipped";
  for (std::size_t i = 0; i < terms; ++i)
    h += ",occludee_cls_" + std::to_string(i) + ",occludee_bbox_" + std::to_string(i);
  return h;
}

std::string loss_line(const IterationLog& l) {
  std::ostringstream os;
  os << std::setprecision(10) << l.iteration << ',' << l.lr << ',' << l.loss.objective() << ',' << l.loss.total << ','
     << l.loss.occluder_cls << ',' << l.loss.occluder_bbox << ',' << l.loss.occludee() << ',' << l.loss.rpn_cls << ','
     << l.loss.rpn_bbox << ',' << (l.skipped ? 1 : 0);
  for (const auto& t : l.loss.occludee_terms) os << ',' << t.cls << ',' << t.bbox;
  return os.str();
}

Checkpoint make_checkpoint(const Trainer& trainer, const RunConfig& config) {
  Checkpoint c = trainer.checkpoint();
  c.metadata = {{"config", to_json(config)}, {"version", kVersion}, {"config_hash", config_hash(config)}};
  return c;
}

}  // namespace

// --- synth / augment ------------------------------------------------------------------------------

std::size_t cmd_synth(const RunConfig& config, const fs::path& out_dir, std::ostream& log) {
  config.validate();
  if (out_dir.empty()) throw std::invalid_argument("synth: --out is required");
  ensure_dir(out_dir / "images");
  std::vector<ImageRecord> records;
  int warnings = 0;
  for (int i = 0; i < config.synth.count; ++i) {
    SynthScene scene = generate_synthetic_scene_detailed(config.synth.scene, static_cast<std::uint64_t>(i));
    warnings += scene.warnings;
    ImageRecord rec = std::move(scene.record);
    rec.image_path = out_dir / "images" / (rec.image_id + ".png");
    write_image(rec.image_path, rec.image);
    rec.image = Image{};
    records.push_back(std::move(rec));
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  save_vgg_annotations(out_dir / "annotations_vgg.json", records);
  if (!records.empty()) {
    const auto split = split_dataset(records, config.synth.split, config.seed);
    write_manifest(out_dir / "train.jsonl", split.train);
    write_manifest(out_dir / "val.jsonl", split.val);
    write_manifest(out_dir / "test.jsonl", split.test);
    log << "synth: " << records.size() << " scenes (" << split.train.size() << " train, " << split.val.size()
        << " val, " << split.test.size() << " test)";
  } else {
    log << "synth: 0 scenes";
  }
  if (warnings) log << ", " << warnings << " placement warnings";
  log << " -> " << out_dir.string() << '\n';
  return records.size();
}

std::size_t cmd_augment(const RunConfig& config, const fs::path& manifest, const fs::path& out_dir, int copies,
                        std::ostream& log) {
  config.validate();
  require_file(manifest, "manifest");
  if (copies < 1) throw std::invalid_argument("augment: --copies must be positive");
  if (out_dir.empty()) throw std::invalid_argument("augment: --out is required");
  const auto records = read_manifest(manifest, true);
  ensure_dir(out_dir / "images");
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    for (int c = 0; c < copies; ++c) {
      ImageRecord rec =
          augment_pipeline(records[i], config.train.augment, i * static_cast<std::uint64_t>(copies) + c, records);
      rec.image_id = records[i].image_id + "_aug" + std::to_string(c);
      rec.annotation.image_id = rec.image_id;
      rec.image_path = out_dir / "images" / (rec.image_id + ".png");
      write_image(rec.image_path, rec.image);
      rec.image = Image{};
      out.push_back(std::move(rec));
    }
  write_manifest(out_dir / "manifest.jsonl", out);
  log << "augment: wrote " << out.size() << " records -> " << out_dir.string() << '\n';
  return out.size();
}

// --- train ----------------------------------------------------------------------------------------

TrainOutcome train_in_memory(O2RNet& model, const RunConfig& config, const std::vector<ImageRecord>& train,
                             std::ostream* log) {
  Trainer trainer(model, config.train, train);
  TrainOutcome out;
  trainer.run(config.train.schedule.total_iters, [&](const IterationLog& l) {
    out.history.push_back(l);
    if (log && (l.iteration % config.log_every == 0 || l.iteration + 1 == config.train.schedule.total_iters))
      *log << "iter " << l.iteration << " lr " << l.lr << " loss " << l.loss.objective() << '\n';
  });
  out.iterations = trainer.iteration();
  out.skipped_steps = trainer.skipped_steps();
  return out;
}

TrainOutcome cmd_train(const RunConfig& config, const fs::path& run_dir, bool resume, std::ostream& log) {
  config.validate();
  if (run_dir.empty()) throw std::invalid_argument("train: --out run directory is required");
  require_file(config.paths.train_manifest, "train manifest");
  if (!config.paths.init_checkpoint.empty()) require_file(config.paths.init_checkpoint, "init checkpoint");
  const fs::path last = run_dir / "checkpoints" / "last.bin";
  if (!resume && fs::exists(run_dir / "loss.csv"))
    throw std::invalid_argument("train: " + run_dir.string() + " already holds a run (use --resume)");

  const auto records = read_manifest(config.paths.train_manifest, true);
  if (records.empty()) throw std::invalid_argument("train: training manifest is empty");

  ensure_dir(run_dir / "checkpoints");
  write_text(run_dir / "config.json", to_json(config).dump(2) + "\n");
  const json meta = {{"config_hash", config_hash(config)}, {"seed", config.seed}, {"version", kVersion},
                     {"preset", config.preset}, {"momentum", config.train.schedule.momentum},
                     {"base_lr", config.train.schedule.base_lr}, {"l2", config.train.schedule.l2()}};
  write_text(run_dir / "metadata.json", meta.dump(2) + "\n");

  O2RNet model(config.train.model);
  if (!config.paths.init_checkpoint.empty()) {
    const auto report = load_pretrained(load_checkpoint(config.paths.init_checkpoint), model, config.paths.replace_heads,
                                        derive_seed(config.seed, 0, 0x7E4));
    log << "pretrained: " << report.loaded.size() << " loaded, " << report.replaced.size() << " replaced, "
        << report.missing.size() << " missing, " << report.unexpected.size() << " unexpected\n";
  }
  Trainer trainer(model, config.train, records);
  const bool resuming = resume && fs::exists(last);
  if (resuming) {
    trainer.resume(load_checkpoint(last));
    log << "resuming at iteration " << trainer.iteration() << '\n';
  }

  std::ofstream csv(run_dir / "loss.csv", resuming ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write loss.csv");
  const std::size_t terms = static_cast<std::size_t>(config.train.model.fes.directions) + 1;
  if (!resuming) csv << loss_header(terms) << '\n';

  TrainOutcome out;
  while (!trainer.finished()) {
    const IterationLog l = trainer.step();
    csv << loss_line(l) << '\n';
    out.history.push_back(l);
    if (l.iteration % config.log_every == 0 || trainer.finished())
      log << "iter " << l.iteration << " lr " << l.lr << " loss " << l.loss.objective() << " (occluder "
          << l.loss.occluder() << ", occludee " << l.loss.occludee() << ", rpn " << l.loss.rpn_cls + l.loss.rpn_bbox
          << ")\n";
    if (config.checkpoint_every > 0 && trainer.iteration() % config.checkpoint_every == 0 && !trainer.finished()) {
      const Checkpoint c = make_checkpoint(trainer, config);
      save_checkpoint(run_dir / "checkpoints" / ("ckpt_" + std::to_string(trainer.iteration()) + ".bin"), c);
      save_checkpoint(last, c);
      csv.flush();
    }
  }
  const Checkpoint c = make_checkpoint(trainer, config);
  save_checkpoint(last, c);
  save_checkpoint(run_dir / "model.bin", c);
  out.iterations = trainer.iteration();
  out.skipped_steps = trainer.skipped_steps();
  out.final_checkpoint = run_dir / "model.bin";
  if (out.skipped_steps) log << "warning: " << out.skipped_steps << " steps skipped on non-finite gradients\n";
  return out;
}

// --- infer / eval ------------------------------------------------------------------------------------

O2RNet model_from_checkpoint(const fs::path& path, RunConfig* config_out) {
  const Checkpoint c = load_checkpoint(path);
  if (!c.metadata.contains("config")) throw std::invalid_argument("checkpoint has no embedded config: " + path.string());
  const json& j = c.metadata["config"];
  const RunConfig cfg = run_config_from_json(j, make_preset(j.value("preset", std::string("desk"))));
  O2RNet model(cfg.train.model);
  restore_model(c, model);
  if (config_out) *config_out = cfg;
  return model;
}

std::vector<DumpEntry> infer_records(const O2RNet& model, const std::vector<ImageRecord>& records,
                                     const DetectParams& params) {
  std::vector<DumpEntry> out;
  for (const auto& r : records)
    for (const auto& d : detect(model, r.image, params)) out.push_back({r.image_id, d});
  return out;
}

std::size_t cmd_infer(const RunConfig& config, const fs::path& checkpoint, const fs::path& manifest,
                      const fs::path& dump, std::ostream& log) {
  config.validate();
  require_file(checkpoint, "checkpoint");
  require_file(manifest, "manifest");
  if (dump.empty()) throw std::invalid_argument("infer: --out dump path is required");
  const O2RNet model = model_from_checkpoint(checkpoint);
  const auto records = read_manifest(manifest, true);
  if (dump.has_parent_path()) ensure_dir(dump.parent_path());
  std::ofstream os(dump, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + dump.string());
  std::size_t n = 0;
  for (const auto& r : records) {
    const auto dets = detect(model, r.image, config.detect);
    write_detections(os, r.image_id, dets);
    n += dets.size();
  }
  log << "infer: " << n << " detections over " << records.size() << " images -> " << dump.string() << '\n';
  return n;
}

std::vector<EvalDetection> to_eval_detections(const std::vector<DumpEntry>& dump) {
  std::vector<EvalDetection> out;
  for (const auto& e : dump) out.push_back({e.image_id, e.detection.box, e.detection.score, e.detection.label});
  return out;
}

json summary_to_json(const EvalSummary& s) {
  json curve = json::array();
  for (const auto& p : s.pr_curve50) curve.push_back({p.score, p.precision, p.recall});
  return {{"AP", s.ap},        {"AP50", s.ap50},   {"AP75", s.ap75},     {"AR", s.ar},         {"AR50", s.ar50},
          {"AR75", s.ar75},    {"P", s.precision}, {"R", s.recall},      {"F1", s.f1},         {"AP_at", s.ap_at},
          {"AR_at", s.ar_at},  {"TP", s.counts.tp}, {"FP", s.counts.fp}, {"FN", s.counts.fn}, {"max_dets", s.max_dets},
          {"undefined", s.undefined}, {"pr_curve50", curve}};
}

EvalSummary summary_from_json(const json& j) {
  EvalSummary s;
  s.ap = j.at("AP");
  s.ap50 = j.at("AP50");
  s.ap75 = j.at("AP75");
  s.ar = j.at("AR");
  s.ar50 = j.at("AR50");
  s.ar75 = j.at("AR75");
  s.precision = j.at("P");
  s.recall = j.at("R");
  s.f1 = j.at("F1");
  s.ap_at = j.at("AP_at").get<std::array<double, 10>>();
  s.ar_at = j.at("AR_at").get<std::array<double, 10>>();
  s.counts.tp = j.at("TP");
  s.counts.fp = j.at("FP");
  s.counts.fn = j.at("FN");
  s.max_dets = j.at("max_dets");
  s.undefined = j.at("undefined");
  for (const auto& p : j.at("pr_curve50")) s.pr_curve50.push_back({p[0], p[1], p[2]});
  return s;
}

EvalSummary cmd_eval(const RunConfig& config, const fs::path& dump, const fs::path& manifest, const fs::path& out_dir,
                     std::ostream& log) {
  config.validate();
  require_file(dump, "detection dump");
  require_file(manifest, "manifest");
  if (out_dir.empty()) throw std::invalid_argument("eval: --out directory is required");
  const auto dets = to_eval_detections(read_detections(dump));
  const auto images = eval_images(read_manifest(manifest, false));
  const EvalSummary s = coco_summary(dets, images, config.eval);

  ensure_dir(out_dir);
  write_text(out_dir / "summary.json", summary_to_json(s).dump(2) + "\n");
  const std::vector<ReportRow> rows{{config.name, std::to_string(config.train.model.fes.steps), s}};
  write_text(out_dir / "summary.csv", report_csv(rows));
  write_text(out_dir / "summary.txt", report_text(rows, s.max_dets));
  std::ostringstream pr;
  pr << "score,precision,recall\n" << std::setprecision(10);
  Series series{config.name, {}, {}};
  for (const auto& p : s.pr_curve50) {
    pr << p.score << ',' << p.precision << ',' << p.recall << '\n';
    series.x.push_back(p.recall);
    series.y.push_back(p.precision);
  }
  write_text(out_dir / "pr_curve.csv", pr.str());
  write_text(out_dir / "pr_curve.svg", svg_line_plot({series}, "Precision-recall (IoU 0.5)", "recall", "precision"));
  log << report_text(rows, s.max_dets);
  return s;
}

// --- report -------------------------------------------------------------------------------------------

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, std::ostream& log) {
  if (run_dirs.empty()) throw std::invalid_argument("report: no run directories given");
  if (out_dir.empty()) throw std::invalid_argument("report: --out directory is required");
  struct Run {
    RunConfig config;
    EvalSummary summary;
    Series loss;
  };
  std::vector<Run> runs;
  for (const auto& d : run_dirs) {
    require_file(d / "config.json", "run config");
    require_file(d / "eval" / "summary.json", "evaluation summary (run `o2rnet eval --out " + (d / "eval").string() + "`)");
    std::ifstream cj(d / "config.json"), sj(d / "eval" / "summary.json");
    const json cfg = json::parse(cj);
    Run r{run_config_from_json(cfg, make_preset(cfg.value("preset", std::string("desk")))),
          summary_from_json(json::parse(sj)), {}};
    r.loss.name = r.config.name + " (" + d.filename().string() + ")";
    std::ifstream lc(d / "loss.csv");
    std::string line;
    std::getline(lc, line);
    std::vector<double> ys;
    while (std::getline(lc, line)) {
      std::istringstream ls(line);
      std::string it, lr, obj;
      std::getline(ls, it, ',');
      std::getline(ls, lr, ',');
      std::getline(ls, obj, ',');
      if (obj.empty()) continue;
      r.loss.x.push_back(std::stod(it));
      ys.push_back(std::stod(obj));
    }
    r.loss.y = smooth(ys);
    runs.push_back(std::move(r));
  }
  ensure_dir(out_dir);
  std::vector<ReportRow> rows;
  std::vector<Series> losses, prs;
  for (const auto& r : runs) {
    const bool baseline = r.config.train.weights.lambda2 == 0.0;
    rows.push_back({r.config.name, baseline ? "-" : std::to_string(r.config.train.model.fes.steps), r.summary});
    losses.push_back(r.loss);
    Series pr{r.loss.name, {}, {}};
    for (const auto& p : r.summary.pr_curve50) {
      pr.x.push_back(p.recall);
      pr.y.push_back(p.precision);
    }
    prs.push_back(std::move(pr));
  }
  const int max_dets = runs.front().summary.max_dets;
  write_text(out_dir / "report.csv", report_csv(rows));
  write_text(out_dir / "report.txt", report_text(rows, max_dets));
  write_text(out_dir / "loss_curves.svg", svg_line_plot(losses, "Training loss", "iteration", "loss (smoothed)"));
  write_text(out_dir / "pr_curves.svg", svg_line_plot(prs, "Precision-recall (IoU 0.5)", "recall", "precision"));
  log << report_text(rows, max_dets);
}

}  // namespace o2r
