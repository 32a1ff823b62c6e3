#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "o2rnet/checkpoint.hpp"
#include "o2rnet/learning.hpp"
#include "oracles.hpp"

using namespace o2r;

namespace {

Annotation one_gt(const Box& b, bool occluded = false) {
  Annotation a;
  a.image_id = "x";
  a.boxes = {b};
  a.labels = {kAppleLabel};
  a.occluded = {occluded};
  return a;
}

}  // namespace

TEST_SUITE("learning") {
  TEST_CASE("total loss") {
    std::vector<BranchLoss> terms(9);
    auto l = total_loss({1.0, 1.0}, terms, LossWeights::from_lambda1(1.0));
    CHECK(l.total == 2.0);
    terms[0] = {3.0, 1.0};
    l = total_loss({1.5, 0.5}, terms, {0.5, 0.5});
    CHECK(l.total == doctest::Approx(3.0));
    CHECK(total_loss({}, std::vector<BranchLoss>(9), {0.5, 0.5}).total == 0.0);
    CHECK_THROWS(total_loss({}, terms, {0.6, 0.6}));
    CHECK_THROWS(total_loss({}, terms, {1.2, -0.2}));
  }

  TEST_CASE("branch loss") {
    Matrix scores(1, 2);
    scores << 0.0, 1.0;
    Matrix deltas(1, 4);
    deltas << 0.1, 0.2, 0.3, 0.4;
    std::vector<int> labels{1};
    std::vector<BoxDeltas> targets{{0.1, 0.2, 0.3, 0.4}};
    auto l = branch_loss(scores, deltas, labels, targets);
    CHECK(l.cls == doctest::Approx(0.0));
    CHECK(l.bbox == doctest::Approx(0.0));

    scores << 0.5, 0.5;
    CHECK(branch_loss(scores, deltas, labels, targets).cls == doctest::Approx(std::log(2.0)));
    targets[0].dx = 0.6;
    CHECK(branch_loss(scores, deltas, labels, targets).bbox == doctest::Approx(0.125));
    CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
    CHECK(smooth_l1(2.0) == doctest::Approx(1.5));
  }

  TEST_CASE("branch loss gradient") {
    Rng rng(8);
    Matrix logits(4, 2), deltas(4, 4);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < deltas.size(); ++i) deltas.data()[i] = rng.normal();
    std::vector<int> labels{1, 0, -1, 1};
    std::vector<BoxDeltas> t{{0.3, -0.2, 2.0, 0.1}, {}, {}, {-1.5, 0.4, 0.05, -0.3}};
    const auto g = branch_loss_with_grad(logits, deltas, labels, t);
    auto f = [&] {
      const auto r = branch_loss_with_grad(logits, deltas, labels, t);
      return r.loss.sum();
    };
    CHECK(oracle::relative_error(g.d_logits, oracle::central_differences(logits, f, 1e-6)) < 1e-6);
    CHECK(oracle::relative_error(g.d_deltas, oracle::central_differences(deltas, f, 1e-6)) < 1e-6);
    const auto p = branch_loss(softmax_rows(logits), deltas, labels, t);
    CHECK(p.cls == doctest::Approx(g.loss.cls));
    CHECK(p.bbox == doctest::Approx(g.loss.bbox));
  }

  TEST_CASE("assign targets") {
    const Box gt{10, 10, 50, 50};
    const Annotation ann = one_gt(gt, true);
    const std::vector<Box> props{gt, {100, 100, 140, 140}, {10, 10, 50, 26}};
    CHECK(iou(props[2], gt) == doctest::Approx(0.4));
    auto t = assign_targets(props, ann);
    CHECK(t[0].label == 1);
    CHECK(t[0].occluded);
    CHECK(t[0].deltas.dx == 0.0);
    CHECK(t[0].deltas.dw == 0.0);
    CHECK(t[1].label == 0);
    CHECK(t[2].label == kIgnoreLabel);
    auto none = assign_targets(props, Annotation{});
    for (const auto& x : none) CHECK(x.label == 0);

    // Ties across equal boxes: independent of annotation order
    Annotation two;
    two.boxes = {{0, 0, 10, 10}, {20, 0, 30, 10}};
    two.labels = {1, 1};
    two.occluded = {false, true};
    Annotation rev = two;
    std::swap(rev.boxes[0], rev.boxes[1]);
    std::swap(rev.occluded[0], rev.occluded[1]);
    const std::vector<Box> between{{5, 0, 25, 10}};
    CHECK(assign_targets(between, two)[0].occluded == assign_targets(between, rev)[0].occluded);
  }

  TEST_CASE("sampler examples") {
    std::vector<std::size_t> occ10, clear10, occ1{0};
    for (std::size_t i = 0; i < 10; ++i) {
      occ10.push_back(i);
      clear10.push_back(100 + i);
    }
    auto s = sample_foreground(occ10, clear10, 8, 0.5, 1);
    CHECK(s.occluded.size() == 4);
    CHECK(s.clear.size() == 4);
    s = sample_foreground(occ1, clear10, 8, 0.5, 1);
    CHECK(s.occluded.size() == 1);
    CHECK(s.clear.size() == 7);
    s = sample_foreground(occ10, {}, 8, 0.5, 1);
    CHECK(s.occluded.size() == 8);

    std::vector<RoiTarget> bg(30);
    auto only_bg = sample_balanced(bg, SamplerConfig{}, 0);
    CHECK(only_bg.foreground() == 0);
    CHECK(only_bg.background.size() == 30);
  }

  TEST_CASE("sampler: permutation of input preserves the sampled multiset size and ratio") {
    std::vector<RoiTarget> t;
    for (int i = 0; i < 200; ++i) {
      RoiTarget r;
      r.label = i % 3 == 0 ? 0 : 1;
      r.occluded = i % 2 == 0;
      t.push_back(r);
    }
    auto a = sample_balanced(t, {64, 0.25, 0.5}, 5);
    CHECK(a.foreground() == 16);
    CHECK(a.occluded.size() == 8);
    CHECK(a.background.size() == 48);
    std::reverse(t.begin(), t.end());
    auto b = sample_balanced(t, {64, 0.25, 0.5}, 5);
    CHECK(b.occluded.size() == a.occluded.size());
    CHECK(b.clear.size() == a.clear.size());
  }

  TEST_CASE("rpn targets and loss gradient") {
    const auto anchors = generate_anchors(4, 4, std::vector<double>{8.0, 16.0}, std::vector<double>{1.0}, 4);
    const std::vector<Box> gt{{2, 2, 12, 12}};
    RpnTrainConfig cfg;
    cfg.batch_anchors = 16;
    const auto t = assign_rpn_targets(anchors, gt, cfg, {1, 1, 1, 1}, 3);
    int pos = 0, sampled = 0;
    for (int l : t.labels) {
      pos += l == 1;
      sampled += l >= 0;
    }
    CHECK(pos >= 1);
    CHECK(sampled <= 16);

    Rng rng(2);
    FlatRpn flat;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      flat.logits.push_back(rng.normal());
      flat.deltas.push_back({rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3)});
    }
    const auto g = rpn_loss(flat, t, cfg.beta);
    for (std::size_t i = 0; i < 6; ++i) {
      FlatRpn up = flat, dn = flat;
      up.logits[i] += 1e-6;
      dn.logits[i] -= 1e-6;
      const double num = (rpn_loss(up, t, cfg.beta).cls - rpn_loss(dn, t, cfg.beta).cls) / 2e-6;
      CHECK(g.d_logits[i] == doctest::Approx(num).epsilon(1e-5));
    }
  }

  TEST_CASE("learning-rate schedule") {
    ScheduleSpec s;
    s.base_lr = 0.01;
    s.warmup_iters = 1000;
    s.total_iters = 5000;
    CHECK(lr_at(500, s) == doctest::Approx(0.001));
    CHECK(lr_at(0, s) == doctest::Approx(0.001));
    CHECK(lr_at(1500, s) == doctest::Approx(0.01));
    s.decay = 0.1;
    s.milestones = {2000, 3000};
    CHECK(lr_at(2500, s) == doctest::Approx(0.001));
    CHECK(lr_at(3500, s) == doctest::Approx(0.0001));
    CHECK_THROWS(lr_at(5000, s));
    s.warmup_iters = 5000;
    CHECK_THROWS(s.validate());
    ScheduleSpec l2;
    l2.decay_kind = DecayKind::l2;
    l2.decay = 0.0005;
    CHECK(l2.l2() == doctest::Approx(0.0005));
    CHECK(l2.gamma() == 1.0);
  }

  TEST_CASE("sgd momentum") {
    Param p("p", {2}, 1, 2);
    p.value << 1.0, 2.0;
    Matrix v = Matrix::Zero(1, 2);
    p.grad << 0.5, -1.0;
    sgd_momentum_update(p, v, 0.1, 0.0, 0.0);
    CHECK(p.value(0, 0) == doctest::Approx(0.95));
    CHECK(p.value(0, 1) == doctest::Approx(2.1));

    Param q("q", {1}, 1, 1);
    Matrix vq = Matrix::Zero(1, 1);
    sgd_momentum_update(q, vq, 0.1, 0.9, 0.0);
    CHECK(q.value(0, 0) == 0.0);
    q.grad(0, 0) = 2.0;
    sgd_momentum_update(q, vq, 0.1, 0.9, 0.0);
    sgd_momentum_update(q, vq, 0.1, 0.9, 0.0);
    CHECK(vq(0, 0) == doctest::Approx(2.0 * 1.9));

    SgdMomentum opt(0.9);
    Param r("r", {1}, 1, 1);
    r.grad(0, 0) = std::nan("");
    std::vector<Param*> ps{&r};
    CHECK_FALSE(opt.step(ps, 0.1));
    CHECK(opt.skipped_steps() == 1);
    CHECK(r.value(0, 0) == 0.0);
  }

  TEST_CASE("checkpoint and transfer surgery") {
    O2RNet src(fixture::tiny_model(1));
    O2RNet dst(fixture::tiny_model(2));
    Checkpoint ck = checkpoint_from_model(src);
    const auto path = std::filesystem::temp_directory_path() / "o2rnet_test.ckpt";
    save_checkpoint(path, ck);
    Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);

    auto rep = load_pretrained(back, dst, false);
    CHECK(rep.replaced.empty());
    auto ps = src.parameters();
    auto pd = dst.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value == pd[i]->value);

    O2RNet fresh(fixture::tiny_model(2));
    rep = load_pretrained(back, fresh, true, 77);
    CHECK_FALSE(rep.replaced.empty());
    auto pf = fresh.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      INFO(ps[i]->name);
      if (is_replaceable_head(ps[i]->name) && ps[i]->name.ends_with(".weight"))
        CHECK(ps[i]->value != pf[i]->value);
      else if (is_replaceable_head(ps[i]->name))
        CHECK(pf[i]->value.isZero());
      else
        CHECK(ps[i]->value == pf[i]->value);
    }
    CHECK(is_replaceable_head("occludee_head.bbox_pred.weight"));
    CHECK_FALSE(is_replaceable_head("occludee_head.fc1.weight"));
    CHECK_FALSE(is_replaceable_head("backbone.stage0.weight"));

    ModelConfig wider = fixture::tiny_model();
    wider.head_hidden = 32;
    O2RNet other(wider);
    CHECK_THROWS(load_pretrained(back, other, false));
  }

  TEST_CASE("trainer: occludee frozen at lambda1 = 1, deterministic first step") {
    auto tc = fixture::tiny_train();
    tc.weights = LossWeights::from_lambda1(1.0);
    std::vector<ImageRecord> data{fixture::tiny_scene(0), fixture::tiny_scene(1)};
    O2RNet model(tc.model);
    const O2RNet before = model;
    Trainer trainer(model, tc, data);
    trainer.step();
    trainer.step();
    auto now = model.parameters();
    auto was = before.parameters();
    bool moved = false;
    for (std::size_t i = 0; i < now.size(); ++i) {
      const std::string& n = now[i]->name;
      if (n.rfind("occludee_head.", 0) == 0 || n.rfind("context.", 0) == 0)
        CHECK(now[i]->value == was[i]->value);
      else if (now[i]->value != was[i]->value)
        moved = true;
    }
    CHECK(moved);

    auto tc2 = fixture::tiny_train();
    O2RNet m1(tc2.model), m2(tc2.model);
    Trainer t1(m1, tc2, data), t2(m2, tc2, data);
    const auto a = t1.step(), b = t2.step();
    CHECK(a.loss.total == b.loss.total);
    CHECK(a.loss.objective() == b.loss.objective());
    CHECK(a.loss.occludee_terms.size() == 9);
  }
}
