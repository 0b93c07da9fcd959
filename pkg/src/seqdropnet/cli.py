"""Command line: phantom, train, predict, evaluate, ablate.

Every command writes ``manifest.json`` into its output directory with the
merged configuration, seed, paths and timestamps.  Passing a manifest back as
``--config`` re-runs with the same effective configuration.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from seqdropnet import __version__
from seqdropnet import config as C
from seqdropnet import metrics, net, pipeline
from seqdropnet.errors import SeqDropError
from seqdropnet.phantom import generate_phantom, write_phantom
from seqdropnet.seqdrop import available_from_missing
from seqdropnet.volume import Volume, read_volume, write_volume

log = logging.getLogger("seqdropnet")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, command: str, cfg: dict, argv, started: str, inputs: dict, outputs: list, extra=None):
    doc = {
        "command": command,
        "argv": list(argv),
        "software_version": __version__,
        "seed": cfg.get("train", {}).get("seed"),
        "started": started,
        "finished": _now(),
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": [str(o) for o in outputs],
        "effective_config": cfg,
    }
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
        cfg["phantom"]["seed"] = args.seed
    if getattr(args, "no_seqdrop", False):
        cfg["seqdrop"]["enabled"] = False
    if getattr(args, "connectivity", None) is not None:
        cfg["metrics"]["connectivity"] = args.connectivity
    return cfg


def _missing_list(text: str | None) -> list[str]:
    if text is None or text.strip().lower() in ("", "none"):
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _metric_opts(cfg: dict) -> dict:
    m = cfg["metrics"]
    return {
        "connectivity": int(m["connectivity"]),
        "min_overlap": int(m["min_overlap"]),
        "min_lesion_size": int(m["min_lesion_size"]),
    }


# ---------------------------------------------------------------------------
# commands


def cmd_phantom(args, argv) -> int:
    started = _now()
    cfg = _apply_overrides(C.load_config(args.config), args)
    pcfg, count = C.phantom_config(cfg)
    if args.count is not None:
        count = args.count
    out = Path(args.out)
    outputs = []
    for i in range(count):
        case_cfg = C.phantom_config(cfg, seed=pcfg.seed + i)[0]
        ph = generate_phantom(case_cfg)
        case_dir = out / f"case_{i:03d}"
        write_phantom(ph, case_cfg, case_dir)
        outputs.append(case_dir)
        log.info("wrote %s (%d lesions)", case_dir, len(ph.lesions))
    _write_manifest(out, "phantom", cfg, argv, started, {"config": args.config}, outputs)
    return 0


def cmd_train(args, argv) -> int:
    started = _now()
    cfg = _apply_overrides(C.load_config(args.config), args)
    channels = C.channel_names(cfg)
    # validate configs before touching data so bad settings fail fast
    ncfg = C.net_config(cfg)
    ncfg.check_spatial(C.patch_spec(cfg).size)
    C.train_config(cfg)
    cases = pipeline.load_cases(args.data, channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(epoch, loss):
        log.info("epoch %d loss %.6f", epoch, loss)

    result, ncfg, tcfg = pipeline.run_training(cfg, cases, progress=progress)
    ckpt = net.save_checkpoint(
        result.params,
        ncfg,
        out,
        seed=tcfg.seed,
        extra={"channels": channels, "effective_config": cfg},
    )
    history = {
        "epoch_losses": result.epoch_losses,
        "step_losses": result.step_losses,
        "preserved_channels": result.preserved,
        "patch_centers": [[list(c) for c in step] for step in result.centers],
    }
    hist_path = out / "history.json"
    hist_path.write_text(json.dumps(history, indent=1) + "\n")
    _write_manifest(
        out,
        "train",
        cfg,
        argv,
        started,
        {"config": args.config, "data": args.data},
        [ckpt, out / "weights.raw", hist_path],
        {"cases": [c.name for c in cases], "final_epoch_loss": result.epoch_losses[-1]},
    )
    return 0


def _load_for_inference(args):
    params, ncfg, manifest = net.load_checkpoint(args.checkpoint)
    cfg = manifest.get("effective_config") or C.load_config()
    if args.config is not None:
        cfg = C.merge(cfg, {k: v for k, v in C.load_config(args.config).items() if k in ("predict", "metrics")})
    cfg = _apply_overrides(cfg, args)
    channels = manifest.get("channels") or C.channel_names(cfg)
    size, stride = C.window(cfg, cfg["sampler"]["patch_size"])
    return params, ncfg, cfg, channels, size, stride


def cmd_predict(args, argv) -> int:
    started = _now()
    params, ncfg, cfg, channels, size, stride = _load_for_inference(args)
    available = available_from_missing(channels, _missing_list(args.missing))
    if not available:
        raise SeqDropError("every channel is marked missing; at least one must be available")
    cases = pipeline.load_cases(args.data, channels, need_labels=False)
    out = Path(args.out)
    outputs = []
    for case in cases:
        mask = pipeline.predict_case(params, ncfg, case.image, available, size, stride)
        outputs.append(write_volume(Volume(mask, "pred"), out / case.name / "pred"))
    _write_manifest(
        out,
        "predict",
        cfg,
        argv,
        started,
        {"checkpoint": args.checkpoint, "data": args.data},
        outputs,
        {"available": available, "window": list(size), "stride": list(stride)},
    )
    return 0


def cmd_evaluate(args, argv) -> int:
    started = _now()
    cfg = _apply_overrides(C.load_config(args.config), args)
    pred = read_volume(args.pred).data
    gt_a = read_volume(args.gt_a).data
    gt_b = read_volume(args.gt_b).data
    report = metrics.evaluate_two_raters(pred, gt_a, gt_b, **_metric_opts(cfg))
    out = Path(args.out)
    csv_path, json_path = metrics.write_report(
        report.rows(Path(args.pred).parent.name), out / "report", extra={"connectivity": report.connectivity}
    )
    _write_manifest(
        out, "evaluate", cfg, argv, started, {"pred": args.pred, "gt_a": args.gt_a, "gt_b": args.gt_b}, [csv_path, json_path]
    )
    print(metrics.rows_to_csv(report.rows(Path(args.pred).parent.name)), end="")
    return 0


def cmd_ablate(args, argv) -> int:
    started = _now()
    params, ncfg, cfg, channels, size, stride = _load_for_inference(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        subsets = pipeline.parse_subsets(args.subsets, channels)
    for w in caught:
        log.warning("%s", w.message)
    cases = pipeline.load_cases(args.data, channels)
    rows, per_case = pipeline.ablate(params, ncfg, cases, subsets, size, stride, _metric_opts(cfg))
    out = Path(args.out)
    csv_path, json_path = metrics.write_report(
        rows,
        out / "ablation",
        extra={"per_case": per_case, "cases": [c.name for c in cases]},
        key_columns=("subset", "available", "missing"),
    )
    _write_manifest(
        out,
        "ablate",
        cfg,
        argv,
        started,
        {"checkpoint": args.checkpoint, "data": args.data},
        [csv_path, json_path],
        {"subsets": ["+".join(s) for s in subsets], "warnings": [str(w.message) for w in caught]},
    )
    print(metrics.rows_to_csv(rows, ("subset", "available", "missing")), end="")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqdropnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON run configuration (or a previous manifest.json)")
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("phantom", help="generate synthetic multi-contrast phantoms")
    common(p)
    p.add_argument("--count", type=int, help="number of cases (overrides phantom.count)")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train a network")
    common(p)
    p.add_argument("--data", required=True, help="case directory or directory of cases")
    p.add_argument("--no-seqdrop", action="store_true", help="train without sequence dropout (baseline)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment cases with a trained checkpoint")
    common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--missing", help="comma list of unavailable channels, or 'none'")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction against two raters")
    common(p, seed=False)
    p.add_argument("pred")
    p.add_argument("gt_a")
    p.add_argument("gt_b")
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="score a checkpoint under channel subsets")
    common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subsets", default="all", help="comma list: all, full, -NAME, A+B")
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args, argv)
    except (SeqDropError, FileNotFoundError, KeyError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"seqdropnet {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
