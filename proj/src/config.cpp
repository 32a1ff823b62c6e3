#include "o2rnet/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

extern char** environ;

namespace o2r {

using nlohmann::json;

void RunConfig::validate() const {
  synth.scene.validate();
  if (synth.count < 0) throw std::invalid_argument("config: synth.count must be >= 0");
  double total = 0.0;
  for (double f : synth.split) {
    if (f < 0.0) throw std::invalid_argument("config: synth.split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("config: synth.split must sum to 1");
  train.validate();
  detect.validate();
  eval.validate();
  if (log_every < 1) throw std::invalid_argument("config: log_every must be positive");
  if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be >= 0");
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.scene.seed = s;
  train.seed = s;
  train.augment.seed = s;
  train.model.init_seed = s;
}

// --- Presets ---------------------------------------------------------------------------------

namespace {

RunConfig desk() {
  RunConfig c;
  c.name = "O2RNet";
  c.preset = "desk";
  auto& s = c.synth.scene;
  s.image_size = {256, 256};
  s.min_objects = 2;
  s.max_objects = 6;
  s.min_radius = 12.0;
  s.max_radius = 24.0;
  s.overlap_target = 0.3;
  s.cluster_fraction = 0.7;
  c.synth.count = 600;
  c.synth.split = {500.0 / 600.0, 0.0, 100.0 / 600.0};

  auto& m = c.train.model;
  m.backbone.variant = BackboneVariant::tiny;
  m.backbone.stage_channels = {16, 32, 32};
  m.backbone.extra_convs = 1;
  m.anchors.strides = {8};
  m.anchors.scales = {24.0, 36.0, 54.0};
  m.anchors.aspect_ratios = {1.0};
  m.pool_size = 7;
  m.head_hidden = 128;
  m.fes = {1, 8, 0.1, ExpansionMode::extend_faces};

  c.train.weights = {0.5, 0.5};
  auto& sch = c.train.schedule;
  sch.base_lr = 0.01;
  sch.warmup_iters = 50;
  sch.warmup_factor = 0.1;
  sch.total_iters = 1500;
  sch.momentum = 0.9;
  sch.decay = 0.1;
  sch.decay_kind = DecayKind::lr_factor;
  sch.milestones = {1000, 1300};
  sch.weight_decay = 1e-4;
  sch.batch_size = 1;
  sch.grad_clip = 10.0;
  c.train.proposals = {0.0, 600, 0.7, 128, 2.0};
  c.detect.proposals = {0.0, 600, 0.7, 300, 2.0};
  c.log_every = 50;
  return c;
}

RunConfig full_scale(const std::string& name) {
  RunConfig c = desk();
  c.preset = name;
  c.synth.scene.image_size = {1280, 720};
  c.synth.scene.min_radius = 30.0;
  c.synth.scene.max_radius = 60.0;
  c.synth.scene.max_objects = 12;
  c.synth.count = 900;
  c.synth.split = {0.7, 0.1, 0.2};
  auto& m = c.train.model;
  m.backbone.variant = BackboneVariant::fpn_resnet;
  m.backbone.blocks = {3, 4, 23, 3};
  m.backbone.base_width = 64;
  m.backbone.fpn_channels = 256;
  m.anchors.strides = {4, 8, 16, 32};
  m.anchors.scales = {32.0, 64.0, 128.0, 256.0};
  m.anchors.aspect_ratios = {0.5, 1.0, 2.0};
  m.head_hidden = 1024;
  c.train.sampler.batch_rois = 512;
  c.train.proposals = {0.0, 2000, 0.7, 1000, 2.0};
  c.detect.proposals = {0.0, 1000, 0.7, 1000, 2.0};
  c.train.schedule.grad_clip = 0.0;
  c.train.schedule.weight_decay = 0.0;
  c.log_every = 20;
  c.checkpoint_every = 5000;
  return c;
}

}  // namespace

std::vector<std::string> preset_names() { return {"desk", "desk-baseline", "arch-paper-3.5", "exp-paper-4.1"}; }

RunConfig make_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "desk-baseline") {
    RunConfig c = desk();
    c.preset = name;
    c.name = "Baseline";
    c.train.weights = {1.0, 0.0};
    c.detect.mode = OutputMode::occluder_only;
    return c;
  }
  if (name == "arch-paper-3.5") {
    RunConfig c = full_scale(name);
    auto& s = c.train.schedule;
    s.base_lr = 0.01;
    s.batch_size = 2;
    s.total_iters = 60000;
    s.warmup_iters = 1000;
    s.decay = 0.95;
    s.decay_kind = DecayKind::lr_factor;
    s.milestones.clear();
    for (int m = 5000; m < 60000; m += 5000) s.milestones.push_back(m);
    return c;
  }
  if (name == "exp-paper-4.1") {
    RunConfig c = full_scale(name);
    auto& s = c.train.schedule;
    s.base_lr = 0.001;
    s.momentum = 0.9;
    s.decay = 0.0005;
    s.decay_kind = DecayKind::l2;
    s.milestones.clear();
    s.batch_size = 1;
    s.total_iters = 934 * 80;
    s.warmup_iters = 1000;
    return c;
  }
  std::string known;
  for (const auto& n : preset_names()) known += " " + n;
  throw std::invalid_argument("unknown preset '" + name + "' (known:" + known + ")");
}

// --- JSON ------------------------------------------------------------------------------------------

namespace {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<BackboneVariant> {
  static constexpr std::array<std::pair<BackboneVariant, const char*>, 2> v{
      {{BackboneVariant::tiny, "tiny"}, {BackboneVariant::fpn_resnet, "fpn_resnet"}}};
};
template <>
struct EnumNames<Palette> {
  static constexpr std::array<std::pair<Palette, const char*>, 2> v{{{Palette::red, "red"}, {Palette::yellow, "yellow"}}};
};
template <>
struct EnumNames<ExpansionMode> {
  static constexpr std::array<std::pair<ExpansionMode, const char*>, 2> v{
      {{ExpansionMode::extend_faces, "extend_faces"}, {ExpansionMode::translate, "translate"}}};
};
template <>
struct EnumNames<ContextBottleneck> {
  static constexpr std::array<std::pair<ContextBottleneck, const char*>, 2> v{
      {{ContextBottleneck::dense, "dense"}, {ContextBottleneck::convolutional, "convolutional"}}};
};
template <>
struct EnumNames<DecayKind> {
  static constexpr std::array<std::pair<DecayKind, const char*>, 2> v{
      {{DecayKind::lr_factor, "lr_factor"}, {DecayKind::l2, "l2"}}};
};
template <>
struct EnumNames<OutputMode> {
  static constexpr std::array<std::pair<OutputMode, const char*>, 3> v{{{OutputMode::union_branches, "union"},
                                                                        {OutputMode::occluder_only, "occluder_only"},
                                                                        {OutputMode::occludee_only, "occludee_only"}}};
};

template <typename E>
std::string enum_name(E e) {
  for (const auto& [k, n] : EnumNames<E>::v)
    if (k == e) return n;
  return "?";
}

// Strict reader over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + label() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: wrong type for '" + dotted(key) + "'");
    }
  }

  template <typename E>
  void get_enum(const char* key, E& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if (v.is_string())
      for (const auto& [k, n] : EnumNames<E>::v)
        if (v.get<std::string>() == n) {
          out = k;
          return;
        }
    std::string allowed;
    for (const auto& [k, n] : EnumNames<E>::v) allowed += std::string(allowed.empty() ? "" : ", ") + n;
    throw std::invalid_argument("config: '" + dotted(key) + "' must be one of: " + allowed);
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), dotted(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw std::invalid_argument("config: unknown key '" + dotted(it.key()) + "'");
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json proposals_json(const ProposalParams& p) {
  return {{"score_threshold", p.score_threshold},
          {"pre_nms_top_n", p.pre_nms_top_n},
          {"nms_threshold", p.nms_threshold},
          {"post_nms_top_n", p.post_nms_top_n},
          {"min_size", p.min_size}};
}

void read_proposals(Section s, ProposalParams& p) {
  s.get("score_threshold", p.score_threshold);
  s.get("pre_nms_top_n", p.pre_nms_top_n);
  s.get("nms_threshold", p.nms_threshold);
  s.get("post_nms_top_n", p.post_nms_top_n);
  s.get("min_size", p.min_size);
  s.finish();
}

json augment_json(const AugmentSpec& a) {
  const auto& g = a.geometric_ranges;
  const auto& c = a.color_ranges;
  const auto& f = a.filter_ranges;
  const auto& m = a.mixup_ranges;
  return {{"geometric", a.geometric},
          {"color", a.color},
          {"gaussian_noise", a.gaussian_noise},
          {"mixup", a.mixup},
          {"sharpen", a.sharpen},
          {"geometric_ranges",
           {{"probability", g.probability},
            {"max_rotation_deg", g.max_rotation_deg},
            {"min_scale", g.min_scale},
            {"max_scale", g.max_scale},
            {"max_translate_frac", g.max_translate_frac},
            {"max_shear_deg", g.max_shear_deg},
            {"hflip_prob", g.hflip_prob},
            {"vflip_prob", g.vflip_prob}}},
          {"color_ranges",
           {{"probability", c.probability},
            {"min_brightness", c.min_brightness},
            {"max_brightness", c.max_brightness},
            {"min_contrast", c.min_contrast},
            {"max_contrast", c.max_contrast}}},
          {"filter_ranges",
           {{"noise_probability", f.noise_probability},
            {"max_noise_sigma", f.max_noise_sigma},
            {"sharpen_probability", f.sharpen_probability},
            {"max_sharpen_strength", f.max_sharpen_strength}}},
          {"mixup_ranges", {{"probability", m.probability}, {"min_alpha", m.min_alpha}, {"max_alpha", m.max_alpha}}},
          {"tau_occ", a.tau_occ}};
}

void read_augment(Section s, AugmentSpec& a) {
  s.get("geometric", a.geometric);
  s.get("color", a.color);
  s.get("gaussian_noise", a.gaussian_noise);
  s.get("mixup", a.mixup);
  s.get("sharpen", a.sharpen);
  s.get("tau_occ", a.tau_occ);
  if (s.has("geometric_ranges")) {
    auto g = s.sub("geometric_ranges");
    auto& r = a.geometric_ranges;
    g.get("probability", r.probability);
    g.get("max_rotation_deg", r.max_rotation_deg);
    g.get("min_scale", r.min_scale);
    g.get("max_scale", r.max_scale);
    g.get("max_translate_frac", r.max_translate_frac);
    g.get("max_shear_deg", r.max_shear_deg);
    g.get("hflip_prob", r.hflip_prob);
    g.get("vflip_prob", r.vflip_prob);
    g.finish();
  }
  if (s.has("color_ranges")) {
    auto c = s.sub("color_ranges");
    auto& r = a.color_ranges;
    c.get("probability", r.probability);
    c.get("min_brightness", r.min_brightness);
    c.get("max_brightness", r.max_brightness);
    c.get("min_contrast", r.min_contrast);
    c.get("max_contrast", r.max_contrast);
    c.finish();
  }
  if (s.has("filter_ranges")) {
    auto f = s.sub("filter_ranges");
    auto& r = a.filter_ranges;
    f.get("noise_probability", r.noise_probability);
    f.get("max_noise_sigma", r.max_noise_sigma);
    f.get("sharpen_probability", r.sharpen_probability);
    f.get("max_sharpen_strength", r.max_sharpen_strength);
    f.finish();
  }
  if (s.has("mixup_ranges")) {
    auto m = s.sub("mixup_ranges");
    auto& r = a.mixup_ranges;
    m.get("probability", r.probability);
    m.get("min_alpha", r.min_alpha);
    m.get("max_alpha", r.max_alpha);
    m.finish();
  }
  s.finish();
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& sc = c.synth.scene;
  const auto& m = c.train.model;
  const auto& sch = c.train.schedule;
  json j;
  j["name"] = c.name;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["synth"] = {{"count", c.synth.count},
                {"split", c.synth.split},
                {"width", sc.image_size.width},
                {"height", sc.image_size.height},
                {"min_objects", sc.min_objects},
                {"max_objects", sc.max_objects},
                {"min_radius", sc.min_radius},
                {"max_radius", sc.max_radius},
                {"overlap_target", sc.overlap_target},
                {"cluster_fraction", sc.cluster_fraction},
                {"palette", enum_name(sc.palette)},
                {"max_retries", sc.max_retries}};
  j["augment"] = augment_json(c.train.augment);
  j["model"] = {{"backbone",
                 {{"variant", enum_name(m.backbone.variant)},
                  {"stage_channels", m.backbone.stage_channels},
                  {"extra_convs", m.backbone.extra_convs},
                  {"blocks", m.backbone.blocks},
                  {"base_width", m.backbone.base_width},
                  {"fpn_channels", m.backbone.fpn_channels}}},
                {"anchors",
                 {{"strides", m.anchors.strides},
                  {"scales", m.anchors.scales},
                  {"aspect_ratios", m.anchors.aspect_ratios}}},
                {"pool_size", m.pool_size},
                {"sampling_ratio", m.sampling_ratio},
                {"head_hidden", m.head_hidden},
                {"num_classes", m.num_classes},
                {"fes",
                 {{"t", m.fes.steps}, {"k", m.fes.directions}, {"step_frac", m.fes.step_frac},
                  {"mode", enum_name(m.fes.mode)}}},
                {"context_mode", enum_name(m.context_mode)},
                {"context_grid", m.context_grid},
                {"roi_box_weights", m.roi_box_weights},
                {"rpn_box_weights", m.rpn_box_weights}};
  j["loss"] = {{"lambda1", c.train.weights.lambda1}, {"lambda2", c.train.weights.lambda2}};
  j["assign"] = {{"fg_iou", c.train.assign.fg_iou}, {"bg_iou", c.train.assign.bg_iou}};
  j["sampler"] = {{"batch_rois", c.train.sampler.batch_rois},
                  {"fg_fraction", c.train.sampler.fg_fraction},
                  {"occlusion_ratio", c.train.sampler.occlusion_ratio}};
  j["rpn"] = {{"fg_iou", c.train.rpn.fg_iou},
              {"bg_iou", c.train.rpn.bg_iou},
              {"batch_anchors", c.train.rpn.batch_anchors},
              {"fg_fraction", c.train.rpn.fg_fraction},
              {"beta", c.train.rpn.beta},
              {"loss_weight", c.train.rpn_loss_weight}};
  j["schedule"] = {{"base_lr", sch.base_lr},
                   {"warmup_iters", sch.warmup_iters},
                   {"warmup_factor", sch.warmup_factor},
                   {"total_iters", sch.total_iters},
                   {"momentum", sch.momentum},
                   {"decay", sch.decay},
                   {"decay_kind", enum_name(sch.decay_kind)},
                   {"milestones", sch.milestones},
                   {"weight_decay", sch.weight_decay},
                   {"batch_size", sch.batch_size},
                   {"grad_clip", sch.grad_clip}};
  j["train_proposals"] = proposals_json(c.train.proposals);
  j["add_gt_proposals"] = c.train.add_gt_proposals;
  j["detect"] = {{"proposals", proposals_json(c.detect.proposals)},
                 {"score_threshold", c.detect.score_threshold},
                 {"nms_threshold", c.detect.nms_threshold},
                 {"merge_nms_threshold", c.detect.merge_nms_threshold},
                 {"mode", enum_name(c.detect.mode)}};
  j["eval"] = {{"max_dets", c.eval.max_dets}, {"f1_iou", c.eval.f1_iou}, {"f1_score", c.eval.f1_score}};
  j["paths"] = {{"train_manifest", c.paths.train_manifest},
                {"val_manifest", c.paths.val_manifest},
                {"test_manifest", c.paths.test_manifest},
                {"init_checkpoint", c.paths.init_checkpoint},
                {"replace_heads", c.paths.replace_heads}};
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  RunConfig c = base;
  Section root(j, "");
  root.get("name", c.name);
  root.get("preset", c.preset);
  root.get("log_every", c.log_every);
  root.get("checkpoint_every", c.checkpoint_every);
  root.get("add_gt_proposals", c.train.add_gt_proposals);

  if (root.has("synth")) {
    auto s = root.sub("synth");
    auto& sc = c.synth.scene;
    s.get("count", c.synth.count);
    s.get("split", c.synth.split);
    s.get("width", sc.image_size.width);
    s.get("height", sc.image_size.height);
    s.get("min_objects", sc.min_objects);
    s.get("max_objects", sc.max_objects);
    s.get("min_radius", sc.min_radius);
    s.get("max_radius", sc.max_radius);
    s.get("overlap_target", sc.overlap_target);
    s.get("cluster_fraction", sc.cluster_fraction);
    s.get_enum("palette", sc.palette);
    s.get("max_retries", sc.max_retries);
    s.finish();
  }
  if (root.has("augment")) read_augment(root.sub("augment"), c.train.augment);
  if (root.has("model")) {
    auto s = root.sub("model");
    auto& m = c.train.model;
    if (s.has("backbone")) {
      auto b = s.sub("backbone");
      b.get_enum("variant", m.backbone.variant);
      b.get("stage_channels", m.backbone.stage_channels);
      b.get("extra_convs", m.backbone.extra_convs);
      b.get("blocks", m.backbone.blocks);
      b.get("base_width", m.backbone.base_width);
      b.get("fpn_channels", m.backbone.fpn_channels);
      b.finish();
    }
    if (s.has("anchors")) {
      auto a = s.sub("anchors");
      a.get("strides", m.anchors.strides);
      a.get("scales", m.anchors.scales);
      a.get("aspect_ratios", m.anchors.aspect_ratios);
      a.finish();
    }
    s.get("pool_size", m.pool_size);
    s.get("sampling_ratio", m.sampling_ratio);
    s.get("head_hidden", m.head_hidden);
    s.get("num_classes", m.num_classes);
    if (s.has("fes")) {
      auto f = s.sub("fes");
      f.get("t", m.fes.steps);
      f.get("k", m.fes.directions);
      f.get("step_frac", m.fes.step_frac);
      f.get_enum("mode", m.fes.mode);
      f.finish();
    }
    s.get_enum("context_mode", m.context_mode);
    s.get("context_grid", m.context_grid);
    s.get("roi_box_weights", m.roi_box_weights);
    s.get("rpn_box_weights", m.rpn_box_weights);
    s.finish();
  }
  if (root.has("loss")) {
    auto s = root.sub("loss");
    s.get("lambda1", c.train.weights.lambda1);
    s.get("lambda2", c.train.weights.lambda2);
    s.finish();
  }
  if (root.has("assign")) {
    auto s = root.sub("assign");
    s.get("fg_iou", c.train.assign.fg_iou);
    s.get("bg_iou", c.train.assign.bg_iou);
    s.finish();
  }
  if (root.has("sampler")) {
    auto s = root.sub("sampler");
    s.get("batch_rois", c.train.sampler.batch_rois);
    s.get("fg_fraction", c.train.sampler.fg_fraction);
    s.get("occlusion_ratio", c.train.sampler.occlusion_ratio);
    s.finish();
  }
  if (root.has("rpn")) {
    auto s = root.sub("rpn");
    s.get("fg_iou", c.train.rpn.fg_iou);
    s.get("bg_iou", c.train.rpn.bg_iou);
    s.get("batch_anchors", c.train.rpn.batch_anchors);
    s.get("fg_fraction", c.train.rpn.fg_fraction);
    s.get("beta", c.train.rpn.beta);
    s.get("loss_weight", c.train.rpn_loss_weight);
    s.finish();
  }
  if (root.has("schedule")) {
    auto s = root.sub("schedule");
    auto& sch = c.train.schedule;
    s.get("base_lr", sch.base_lr);
    s.get("warmup_iters", sch.warmup_iters);
    s.get("warmup_factor", sch.warmup_factor);
    s.get("total_iters", sch.total_iters);
    s.get("momentum", sch.momentum);
    s.get("decay", sch.decay);
    s.get_enum("decay_kind", sch.decay_kind);
    s.get("milestones", sch.milestones);
    s.get("weight_decay", sch.weight_decay);
    s.get("batch_size", sch.batch_size);
    s.get("grad_clip", sch.grad_clip);
    s.finish();
  }
  if (root.has("train_proposals")) read_proposals(root.sub("train_proposals"), c.train.proposals);
  if (root.has("detect")) {
    auto s = root.sub("detect");
    if (s.has("proposals")) read_proposals(s.sub("proposals"), c.detect.proposals);
    s.get("score_threshold", c.detect.score_threshold);
    s.get("nms_threshold", c.detect.nms_threshold);
    s.get("merge_nms_threshold", c.detect.merge_nms_threshold);
    s.get_enum("mode", c.detect.mode);
    s.finish();
  }
  if (root.has("eval")) {
    auto s = root.sub("eval");
    s.get("max_dets", c.eval.max_dets);
    s.get("f1_iou", c.eval.f1_iou);
    s.get("f1_score", c.eval.f1_score);
    s.finish();
  }
  if (root.has("paths")) {
    auto s = root.sub("paths");
    s.get("train_manifest", c.paths.train_manifest);
    s.get("val_manifest", c.paths.val_manifest);
    s.get("test_manifest", c.paths.test_manifest);
    s.get("init_checkpoint", c.paths.init_checkpoint);
    s.get("replace_heads", c.paths.replace_heads);
    s.finish();
  }
  if (root.has("seed")) {
    std::uint64_t seed = 0;
    root.get("seed", seed);
    c.apply_seed(seed);
  }
  root.finish();
  c.validate();
  return c;
}

void apply_env_overrides(json& j, const std::map<std::string, std::string>& env) {
  const std::string prefix = "O2RNET_";
  for (const auto& [key, value] : env) {
    if (!key.starts_with(prefix)) continue;
    std::string rest = key.substr(prefix.size());
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
      const auto next = rest.find("__", pos);
      parts.push_back(rest.substr(pos, next - pos));
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;
    }
    json* node = &j;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
      node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = parsed;
  }
}

std::map<std::string, std::string> current_environment(const std::string& prefix) {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    std::string kv(*e);
    if (!kv.starts_with(prefix)) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    out[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

RunConfig load_run_config(const std::string& path, const std::string& preset_override,
                          const std::map<std::string, std::string>& env) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
  }
  apply_env_overrides(j, env);
  std::string preset = "desk";
  if (!preset_override.empty()) preset = preset_override;
  else if (j.contains("preset") && j["preset"].is_string()) preset = j["preset"].get<std::string>();
  j["preset"] = preset;
  return run_config_from_json(j, make_preset(preset));
}

std::string config_hash(const RunConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace o2r
