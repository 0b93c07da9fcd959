"""Case loading and the train / predict / evaluate / ablate compositions used
by the command line."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from seqdropnet import config as C
from seqdropnet import metrics, net
from seqdropnet.errors import ConfigError
from seqdropnet.labels import merge_masks
from seqdropnet.seqdrop import available_from_missing, mask_missing
from seqdropnet.train import Case, train
from seqdropnet.volume import MultiChannelVolume, normalize_stack, read_stack, read_volume

log = logging.getLogger(__name__)

# channel subsets evaluated with multiple sequences missing
PAIR_SUBSETS = (("T1", "PD"), ("T2", "FLAIR"), ("T1", "T2"), ("T1", "FLAIR"), ("FLAIR",))


@dataclass
class CaseData:
    name: str
    image: MultiChannelVolume  # normalized
    gt_a: np.ndarray | None
    gt_b: np.ndarray | None


def case_dirs(data_dir) -> list[Path]:
    """``data_dir`` itself if it holds a stack, else its stack-holding subdirectories by name."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    if (data_dir / "stack.json").exists():
        return [data_dir]
    dirs = sorted(p for p in data_dir.iterdir() if (p / "stack.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no case directories with stack.json under {data_dir}")
    return dirs


def load_case(directory, channels: Sequence[str], need_labels: bool = True) -> CaseData:
    directory = Path(directory)
    image = normalize_stack(read_stack(directory, channels))
    gts = []
    for rater in ("gt_a", "gt_b"):
        if (directory / f"{rater}.json").exists():
            gts.append(read_volume(directory / rater).data.astype(np.uint8))
        elif need_labels:
            raise FileNotFoundError(f"{directory}: missing {rater}.json")
        else:
            gts.append(None)
    return CaseData(directory.name, image, *gts)


def load_cases(data_dir, channels, need_labels=True) -> list[CaseData]:
    return [load_case(d, channels, need_labels) for d in case_dirs(data_dir)]


def train_cases(cases: Sequence[CaseData]) -> list[Case]:
    return [Case.from_volumes(c.image, merge_masks(c.gt_a, c.gt_b), c.name) for c in cases]


def run_training(cfg: dict, cases: Sequence[CaseData], progress=None):
    ncfg = C.net_config(cfg)
    tcfg = C.train_config(cfg)
    return train(
        train_cases(cases),
        ncfg,
        tcfg,
        C.loss_config(cfg),
        C.adam_hyper(cfg),
        channel_names=C.channel_names(cfg),
        progress=progress,
    ), ncfg, tcfg


def predict_case(params, ncfg, image: MultiChannelVolume, available, size, stride) -> np.ndarray:
    return net.predict_volume(params, ncfg, mask_missing(image, available), size, stride)


def parse_subsets(spec: str, names: Sequence[str]) -> list[tuple[str, ...]]:
    """Expand a subset spec into available-channel tuples (stack order, deduplicated).

    Items are comma separated: ``all`` (full stack, each single channel
    missing, then the standard multi-missing subsets), ``full``, ``-NAME``
    (everything except NAME), or ``A+B`` (exactly those channels available).
    """
    out: list[tuple[str, ...]] = []
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        if item == "all":
            cands = [tuple(names)] + [tuple(n for n in names if n != m) for m in names]
            cands += [p for p in PAIR_SUBSETS if all(n in names for n in p)]
        elif item == "full":
            cands = [tuple(names)]
        elif item.startswith("-"):
            cands = [tuple(available_from_missing(names, item[1:].split("+")))]
        else:
            chosen = item.split("+")
            unknown = [c for c in chosen if c not in names]
            if unknown:
                raise KeyError(f"unknown channel(s) {unknown} in subset {item!r}")
            cands = [tuple(n for n in names if n in chosen)]
        for c in cands:
            if not c:
                raise ConfigError(f"subset {item!r} leaves no channel available")
            if c in out:
                warnings.warn(f"duplicate subset {'+'.join(c)} ignored", stacklevel=2)
                continue
            out.append(c)
    if not out:
        raise ConfigError("empty subset specification")
    return out


def subset_label(available: Sequence[str], names: Sequence[str]) -> str:
    missing = [n for n in names if n not in available]
    if not missing:
        return "none missing"
    if len(missing) == 1:
        return f"missing {missing[0]}"
    return "+".join(available)


def ablate(params, ncfg, cases: Sequence[CaseData], subsets, size, stride, metric_opts=None):
    """One row per subset: two-rater metrics averaged over cases."""
    metric_opts = metric_opts or {}
    names = cases[0].image.names
    rows, per_case = [], []
    for avail in subsets:
        reports = []
        for case in cases:
            pred = predict_case(params, ncfg, case.image, avail, size, stride)
            rep = metrics.evaluate_two_raters(pred, case.gt_a, case.gt_b, **metric_opts)
            reports.append(rep.avg)
            per_case.append({"subset": "+".join(avail), "case": case.name, **rep.avg})
        missing = [n for n in names if n not in avail]
        rows.append(
            {
                "subset": subset_label(avail, names),
                "available": "+".join(avail),
                "missing": "+".join(missing) or "none",
                **metrics.average(reports),
            }
        )
        log.info("%s: DSC %s", rows[-1]["subset"], rows[-1]["dsc"])
    return rows, per_case
