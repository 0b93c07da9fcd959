"""Run configuration: one JSON document with a section per module.

Missing keys take the defaults below, which are the full-scale settings
(64^3 patches, 96 root features, 1000 epochs).  ``configs/desk.json`` in the
repository holds the small settings used for CPU experiments.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from seqdropnet import DEFAULT_CHANNELS
from seqdropnet.errors import ConfigError
from seqdropnet.net import UNetConfig
from seqdropnet.phantom import PhantomConfig
from seqdropnet.sampler import PatchSpec
from seqdropnet.seqdrop import DropoutPolicy
from seqdropnet.train import AdamHyper, LossConfig, TrainConfig

DEFAULTS = {
    "volume": {"channels": list(DEFAULT_CHANNELS)},
    "sampler": {"patch_size": [64, 64, 64], "lesion_center_prob": 0.99},
    "seqdrop": {"enabled": True, "policy": "uniform"},
    "net": UNetConfig().to_dict(),
    "train": {
        "epochs": 1000,
        "steps_per_epoch": 10,
        "batch_size": 1,
        "learning_rate": 0.0005,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "class_weights": [1.0, 3.0],
        "ignore_value": 0.5,
        "seed": 0,
    },
    "predict": {"window": None, "stride": None},
    "metrics": {"connectivity": 26, "min_overlap": 1, "min_lesion_size": 1},
    "phantom": {**PhantomConfig().to_dict(), "count": 1},
}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    """Defaults merged with the JSON file at ``path``.

    A run manifest is accepted too; its ``effective_config`` is used, which
    makes any run re-executable from its own manifest.
    """
    if path is None:
        return copy.deepcopy(DEFAULTS)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if "effective_config" in doc:
        doc = doc["effective_config"]
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    return merge(DEFAULTS, doc)


def channel_names(cfg: dict) -> list[str]:
    return list(cfg["volume"]["channels"])


def net_config(cfg: dict) -> UNetConfig:
    d = dict(cfg["net"])
    d["in_channels"] = len(channel_names(cfg))
    return UNetConfig.from_dict(d)


def patch_spec(cfg: dict) -> PatchSpec:
    s = cfg["sampler"]
    return PatchSpec(tuple(s["patch_size"]), float(s["lesion_center_prob"]))


def dropout_policy(cfg: dict) -> DropoutPolicy:
    n = len(channel_names(cfg))
    sd = cfg["seqdrop"]
    if not sd.get("enabled", True):
        return DropoutPolicy.keep_all(n)
    policy = sd.get("policy", "uniform")
    if isinstance(policy, str):
        return DropoutPolicy.from_name(policy, n)
    return DropoutPolicy(tuple(policy))


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=int(t["epochs"]),
        steps_per_epoch=int(t["steps_per_epoch"]),
        batch_size=int(t["batch_size"]),
        patch=patch_spec(cfg),
        dropout=dropout_policy(cfg),
        seed=int(t["seed"]),
    )


def loss_config(cfg: dict) -> LossConfig:
    t = cfg["train"]
    return LossConfig(tuple(t["class_weights"]), float(t["ignore_value"]))


def adam_hyper(cfg: dict) -> AdamHyper:
    t = cfg["train"]
    return AdamHyper(float(t["learning_rate"]), float(t["beta1"]), float(t["beta2"]), float(t["epsilon"]))


def phantom_config(cfg: dict, seed: int | None = None) -> tuple[PhantomConfig, int]:
    d = dict(cfg["phantom"])
    count = int(d.pop("count", 1))
    if seed is not None:
        d["seed"] = seed
    return PhantomConfig.from_dict(d), count


def window(cfg: dict, patch_size) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sliding-window size and stride; default is the training patch at half stride."""
    p = cfg.get("predict", {})
    size = tuple(p.get("window") or patch_size)
    stride = tuple(p.get("stride") or [max(1, s // 2) for s in size])
    return size, stride
