"""Occluder-occludee relational apple detector (C++ core)."""

from ._o2rnet import (
    Model,
    config_json,
    evaluate,
    fes_expand,
    iou,
    nms,
    occlusion_labels,
    preset_names,
    synth,
    synthetic_scene,
    train,
)

__all__ = [
    "Model",
    "config_json",
    "evaluate",
    "fes_expand",
    "iou",
    "nms",
    "occlusion_labels",
    "preset_names",
    "synth",
    "synthetic_scene",
    "train",
]
