"""Command-line entry point.

One command with subcommands (train, eval, bench, inspect, viz, synth), all
driven by a YAML config plus ``--override key=value`` flags.  Every run writes
an immutable snapshot of its resolved config next to its outputs under
``<out-dir>/<run-id>/``.

Exit codes: 0 success, 1 configuration or IO error, 2 assertion failure
(bench ordering violations, diverged ablation).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import stat
import sys
import time
from pathlib import Path

import yaml

from . import viz
from .ablation import ablation_table, block_swap_ablation
from .data import load_yolo_dataset, materialize_dataset, synth_dataset
from .detector import DetectorConfig, EPANet, MODEL_SCALES, load_checkpoint
from .errors import ConfigurationError
from .metrics import EvalReport
from .profiler import profile_model
from .pyramid import PRESET_NAMES, preset_topology, spec_to_yaml
from .train import TrainConfig, evaluate_model, seed_init, train_model
from .verify.report import topology_report

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "config_version": CONFIG_VERSION,
    "seed": 0,
    "model": {
        "num_classes": 3,
        "input_size": 64,
        "scale": "nano",            # nano | s, expands to the three knobs below
        "width_scale": None,
        "depth_scale": None,
        "neck_width": None,
        "topology": "epa",
        "backbone_block": "plain",
    },
    "data": {
        "root": None,               # YOLO layout root; null -> synthetic
        "split": "train",
        "synth": {"seed": 7, "n": 16, "size": 64, "classes": 3},
    },
    "train": {
        "steps": 300,
        "batch_size": 16,
        "lr": 0.02,
        "momentum": 0.9,
        "weight_decay": 0.0005,
        "lambda_box": 7.5,
        "augment": False,
        "log_every": 1,
        "warmup_steps": 20,
    },
    "eval": {
        "checkpoint": None,
        "conf_thresh": 0.25,
        "nms_iou": 0.5,
        "max_det": 300,
        "ap_mode": "101",
    },
    "bench": {
        "presets": ["fpn", "bifpn", "epa", "panet"],
        "width": 64,
        "input_size": 256,
        "latency_runs": 50,
        "profile_scale": "s",
        "ablation": False,
        "ablation_steps": 150,
    },
    "viz": {"checkpoint": None, "n_images": 2},
}


def _merge_strict(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_strict(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigurationError("config file must contain a mapping")
    if doc.get("config_version") != CONFIG_VERSION:
        raise ConfigurationError(
            f"config_version must be {CONFIG_VERSION} (got {doc.get('config_version')!r})"
        )
    return _merge_strict(DEFAULT_CONFIG, doc)


def apply_overrides(config: dict, overrides) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = config
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigurationError(f"override references unknown key {dotted!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigurationError(f"override references unknown key {dotted!r}")
        node[leaf] = yaml.safe_load(raw)
        print(f"override: {dotted} = {node[leaf]!r}")
    return config


def make_run_dir(args, command: str) -> Path:
    base = Path(args.out_dir or os.environ.get("EPANET_OUT_DIR", "runs"))
    run_id = args.run_id or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    run_dir = base / run_id
    suffix = 1
    while run_dir.exists():
        run_dir = base / f"{run_id}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    return run_dir


def snapshot_config(config: dict, run_dir: Path) -> None:
    path = run_dir / "config.snapshot.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    path.chmod(stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)


def detector_config(config: dict) -> DetectorConfig:
    m = config["model"]
    scale = MODEL_SCALES.get(m.get("scale") or "nano", MODEL_SCALES["nano"])
    return DetectorConfig(
        num_classes=m["num_classes"],
        input_size=m["input_size"],
        width_scale=m["width_scale"] if m["width_scale"] is not None else scale["width_scale"],
        depth_scale=m["depth_scale"] if m["depth_scale"] is not None else scale["depth_scale"],
        neck_width=m["neck_width"] if m["neck_width"] is not None else scale["neck_width"],
        topology=m["topology"],
        backbone_block=m["backbone_block"],
    )


def load_samples(config: dict):
    d = config["data"]
    if d["root"]:
        return list(load_yolo_dataset(d["root"], d["split"],
                                      num_classes=config["model"]["num_classes"]))
    s = d["synth"]
    return synth_dataset(seed=s["seed"], n=s["n"], size=s["size"], classes=s["classes"])


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_train(config: dict, run_dir: Path) -> int:
    samples = load_samples(config)
    seed_init(config["seed"])
    model = EPANet(detector_config(config))
    t = config["train"]
    result = train_model(
        model, samples,
        TrainConfig(steps=t["steps"], batch_size=t["batch_size"], lr=t["lr"],
                    momentum=t["momentum"], weight_decay=t["weight_decay"],
                    lambda_box=t["lambda_box"], augment=t["augment"],
                    log_every=t["log_every"], warmup_steps=t["warmup_steps"]),
        seed=config["seed"],
        out_dir=run_dir / "checkpoints",
    )
    print(f"trained {t['steps']} steps; final loss {result.final_loss:.4f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def _write_report(report: EvalReport, dets, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.txt").write_text(report.to_text() + "\n")
    (out_dir / "eval.json").write_text(report.to_json() + "\n")
    with open(out_dir / "detections.jsonl", "w") as fh:
        for d in dets:
            fh.write(json.dumps({
                "image_id": d.image_id, "class_id": d.class_id,
                "score": round(d.score, 6), "box": [round(v, 2) for v in d.box],
            }) + "\n")


def cmd_eval(config: dict, run_dir: Path) -> int:
    e = config["eval"]
    if not e["checkpoint"]:
        raise ConfigurationError("eval.checkpoint must point to a trained model")
    model, _, step = load_checkpoint(e["checkpoint"])
    samples = load_samples(config)
    report, dets = evaluate_model(model, samples, conf_thresh=e["conf_thresh"],
                                  nms_iou=e["nms_iou"], max_det=e["max_det"],
                                  ap_mode=e["ap_mode"])
    _write_report(report, dets, run_dir / "reports")
    print(report.to_text())
    return 0


def cmd_bench(config: dict, run_dir: Path) -> int:
    b = config["bench"]
    reports_dir = run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)

    report = topology_report(b["presets"], width=b["width"],
                             input_size=b["input_size"],
                             latency_runs=b["latency_runs"])
    text = report.to_text()
    print(text)
    (reports_dir / "topologies.txt").write_text(text + "\n")
    (reports_dir / "topologies.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")

    scale = MODEL_SCALES.get(b["profile_scale"], MODEL_SCALES["nano"])
    cfg = DetectorConfig(num_classes=config["model"]["num_classes"],
                         input_size=640, **scale)
    prof = profile_model(EPANet(cfg), 640)
    prof_text = (f"full model ({b['profile_scale']} scale, 640x640, batch 1):\n"
                 + prof.to_text())
    print(prof_text)
    (reports_dir / "model_profile.txt").write_text(prof_text + "\n")

    exit_code = 0 if report.ok else 2
    if b["ablation"]:
        rows = block_swap_ablation(steps=b["ablation_steps"], seed=config["seed"])
        table = ablation_table(rows)
        print(table)
        (reports_dir / "ablation.txt").write_text(table + "\n")
        if not all(r.converged for r in rows):
            exit_code = 2
    return exit_code


def cmd_inspect(config: dict, run_dir: Path) -> int:
    cfg = detector_config(config)
    model = EPANet(cfg)
    prof = profile_model(model, cfg.input_size)
    lines = [f"model: topology={cfg.topology} scale knobs "
             f"(width {cfg.width_scale}, depth {cfg.depth_scale}, neck {cfg.neck_width})"]
    for part in ("backbone", "neck", "head"):
        params = sum(p.numel() for p in getattr(model, part).parameters())
        lines.append(f"  {part:<9} {params:,} params")
    lines.append(prof.to_text())
    lines.append("fusion graph execution order: " + " -> ".join(model.neck.execution_order))
    for nid in model.neck.execution_order:
        node = model.neck.spec.node(nid)
        ins = [e.src for _, e in model.neck.spec.in_edges(nid)]
        extra = ""
        if nid in model.neck.node_blocks:
            blk = model.neck.node_blocks[nid]
            if hasattr(blk, "residual") and not blk.residual:
                extra = "  [outer residual dropped: width change]"
        lines.append(f"  {nid}: level {node.level}, merge {node.merge}, "
                     f"block {node.block}, inputs {ins}{extra}")
    text = "\n".join(lines)
    print(text)
    (run_dir / "inspect.txt").write_text(text + "\n")
    return 0


def cmd_viz(config: dict, run_dir: Path) -> int:
    v = config["viz"]
    if not v["checkpoint"]:
        raise ConfigurationError("viz.checkpoint must point to a trained model")
    model, _, _ = load_checkpoint(v["checkpoint"])
    samples = load_samples(config)[: v["n_images"]]
    out = run_dir / "viz"
    written = []
    for s in samples:
        written += viz.visualize_sample(model, s, out / s.image_id,
                                        conf_thresh=config["eval"]["conf_thresh"],
                                        nms_iou=config["eval"]["nms_iou"])
    print(f"wrote {len(written)} image(s) under {out}")
    return 0


def cmd_synth(config: dict, run_dir: Path) -> int:
    s = config["data"]["synth"]
    samples = synth_dataset(seed=s["seed"], n=s["n"], size=s["size"], classes=s["classes"])
    root = run_dir / "dataset"
    materialize_dataset(samples, root, config["data"]["split"])
    print(f"materialized {len(samples)} samples under {root}")
    return 0


def cmd_topology(config: dict, run_dir: Path) -> int:
    out = run_dir / "topologies"
    out.mkdir(parents=True, exist_ok=True)
    for name in PRESET_NAMES:
        (out / f"{name}.yaml").write_text(
            spec_to_yaml(preset_topology(name, width=config["bench"]["width"]))
        )
    print(f"wrote {len(PRESET_NAMES)} topology files under {out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
    "viz": cmd_viz,
    "synth": cmd_synth,
    "topology": cmd_topology,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epanet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--override", action="append", default=[],
                       help="key=value override, repeatable (dotted keys)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--device", default="cpu", choices=["cpu"])
        p.add_argument("--out-dir", default=None,
                       help="output base directory (or $EPANET_OUT_DIR)")
        p.add_argument("--run-id", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        config = apply_overrides(config, args.override)
        if args.seed is not None:
            config["seed"] = args.seed
        run_dir = make_run_dir(args, args.command)
        snapshot_config(config, run_dir)
        print(f"run dir: {run_dir}")
        return COMMANDS[args.command](config, run_dir)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
