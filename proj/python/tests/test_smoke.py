import json

import numpy as np
import pytest

import o2rnet


def test_geometry():
    assert o2rnet.iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
    keep = o2rnet.nms([(0, 0, 10, 10), (1, 0, 11, 10), (50, 50, 60, 60)], [0.9, 0.8, 0.7], 0.5)
    assert keep == [0, 2]
    exp = o2rnet.fes_expand((20, 20, 40, 40), 1, 100, 100)
    assert len(exp) == 9
    assert tuple(exp[0]) == (20, 20, 40, 40)
    assert o2rnet.occlusion_labels([(0, 0, 10, 10), (5, 0, 15, 10)], 0.4) == [True, True]


def test_config_and_scene():
    assert "desk" in o2rnet.preset_names()
    cfg = json.loads(o2rnet.config_json("desk", '{"seed": 7}'))
    assert cfg["seed"] == 7
    with pytest.raises(Exception, match="unknown key"):
        o2rnet.config_json("desk", '{"nope": 1}')
    scene = o2rnet.synthetic_scene(3)
    assert scene["image"].dtype == np.uint8
    assert scene["image"].shape[2] == 3
    assert len(scene["boxes"]) == len(scene["occluded"]) > 0


def test_evaluate_perfect():
    gt = {"a": [(0, 0, 10, 10), (20, 20, 30, 30)]}
    dets = [("a", (0, 0, 10, 10), 0.9), ("a", (20, 20, 30, 30), 0.8)]
    s = o2rnet.evaluate(gt, dets)
    assert s["AP"] == pytest.approx(1.0)
    assert s["F1"] == pytest.approx(1.0)


def test_model_detect():
    model = o2rnet.Model("desk")
    assert model.num_parameters() > 0
    img = o2rnet.synthetic_scene(0)["image"]
    dets = model.detect(img, score_threshold=0.0, mode="occluder_only")
    assert all(d["branch"] == "occluder" for d in dets)
    with pytest.raises(ValueError):
        model.detect(np.zeros((8, 8), dtype=np.uint8))
