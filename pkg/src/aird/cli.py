"""Command-line pipeline: data generation, mining, training, adaptation,
evaluation, and studies. Every stage reads and writes file artifacts so the
steps can run (and be checked) independently.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import train as TR
from .distill import load_pairs, mine_pairs, save_pairs
from .errors import AirdError, ConfigError
from .layers import load_checkpoint, save_checkpoint
from .train import EvalReport


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"missing {what}: {p}")
    return p


def _prepare_out(out, force: bool) -> Path:
    root = os.environ.get("AIRD_OUT_ROOT", ".")
    p = Path(out) if Path(out).is_absolute() else Path(root) / out
    if p.exists() and any(p.iterdir()):
        if not force:
            raise UsageError(f"output directory {p} already exists; rerun with --force to overwrite")
        shutil.rmtree(p)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _effective_config(args) -> dict:
    cfg = C.load_config(_require(args.config, "config file")) if args.config else C.default_config()
    cfg = C.apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _write_curve(curve, path: Path):
    if not curve:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0].keys()))
        writer.writeheader()
        writer.writerows(curve)


def _load_dataset(args) -> D.Dataset:
    return D.Dataset.load(_require(args.data, "dataset directory"))


def _progress(msg):
    print(msg, file=sys.stderr)


# --- verb handlers ----------------------------------------------------------------


def cmd_gen_data(args, cfg, out: Path):
    dataset = D.generate_dataset(
        num_ids=cfg["data.num_ids"],
        samples_per_id=cfg["data.samples_per_id"],
        seed=cfg["seed"],
        shift=C.shift_from_config(cfg),
        hr_size=cfg["data.hr_size"],
        lr_size=cfg["data.lr_size"],
        test_samples_per_id=cfg["data.test_samples_per_id"],
        kernel=cfg["data.kernel"],
    )
    dataset.save(out)
    return ["manifest.json", "hr.f64", "lr.f64"]


def cmd_train_teacher(args, cfg, out: Path):
    dataset = _load_dataset(args)
    net, curve = TR.train_teacher(cfg, dataset, cfg["seed"])
    save_checkpoint(net, out / "teacher.ckpt")
    _write_curve(curve, out / "curve.csv")
    return ["teacher.ckpt", "curve.csv"]


def cmd_mine_pairs(args, cfg, out: Path):
    dataset = _load_dataset(args)
    teacher = load_checkpoint(_require(args.teacher, "teacher checkpoint"))
    idx = dataset.train_indices
    embeds, _ = TR.embed_images(teacher, dataset.hr[idx])
    pairs = mine_pairs(embeds / np.linalg.norm(embeds, axis=1, keepdims=True), dataset.labels[idx], cfg["distill.n_neg"])
    save_pairs(pairs, out / "pairs.bin")
    return ["pairs.bin"]


def cmd_distill(args, cfg, out: Path):
    dataset = _load_dataset(args)
    teacher = None
    if args.mode != "scratch_lr":
        teacher = load_checkpoint(_require(args.teacher, "teacher checkpoint"))
    pairs = load_pairs(_require(args.pairs, "pair file")) if args.pairs else None
    net, curve, pairs = TR.distill_student(cfg, dataset, teacher, cfg["seed"], mode=args.mode, pairs=pairs)
    save_checkpoint(net, out / "student.ckpt")
    _write_curve(curve, out / "curve.csv")
    artifacts = ["student.ckpt", "curve.csv"]
    if pairs is not None and not args.pairs:
        save_pairs(pairs, out / "pairs.bin")
        artifacts.append("pairs.bin")
    return artifacts


def cmd_adapt(args, cfg, out: Path):
    dataset = _load_dataset(args)
    student = load_checkpoint(_require(args.student, "student checkpoint"))
    adapted, diagnostics = TR.adapt_student(cfg, student, dataset)
    save_checkpoint(adapted, out / "adapted.ckpt")
    (out / "adapt_diagnostics.json").write_text(json.dumps(diagnostics, indent=1, sort_keys=True))
    return ["adapted.ckpt", "adapt_diagnostics.json"]


def cmd_eval_verify(args, cfg, out: Path):
    dataset = _load_dataset(args)
    student = load_checkpoint(_require(args.student, "student checkpoint"))
    teacher = load_checkpoint(_require(args.teacher, "teacher checkpoint")) if args.teacher else None
    if args.protocol:
        protocol = D.load_protocol(_require(args.protocol, "protocol file"))
    else:
        protocol = D.build_protocol(dataset, "verify", cfg["eval.pair_count"], seed=cfg["seed"], split="test")
        D.save_protocol(protocol, out / "protocol.txt")
    report = TR.evaluate_verification(student, dataset, protocol, args.scenario, teacher=teacher, cfg=cfg)
    (out / "report.json").write_text(report.to_json())
    _write_scores_csv(report, out / "scores.csv")
    artifacts = ["report.json", "scores.csv"]
    if not args.protocol:
        artifacts.append("protocol.txt")
    return artifacts


def cmd_eval_identify(args, cfg, out: Path):
    dataset = _load_dataset(args)
    student = load_checkpoint(_require(args.student, "student checkpoint"))
    if args.protocol:
        protocol = D.load_protocol(_require(args.protocol, "protocol file"))
    else:
        protocol = D.build_protocol(dataset, "identify", seed=cfg["seed"], split="test")
        D.save_protocol(protocol, out / "protocol.txt")
    report = TR.evaluate_identification(student, dataset, protocol, cfg=cfg, seed=cfg["seed"])
    (out / "report.json").write_text(report.to_json())
    artifacts = ["report.json"]
    if not args.protocol:
        artifacts.append("protocol.txt")
    return artifacts


def cmd_ablate(args, cfg, out: Path):
    dataset = _load_dataset(args)
    rows = TR.run_ablation(cfg, dataset, cfg["benchmark.seeds"], progress=_progress)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["row", "use_ild", "use_rld", "use_facebn", "acc_mean", "accs"])
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "accs": " ".join(f"{a:.6f}" for a in r["accs"])})
    (out / "ablation.json").write_text(json.dumps(rows, indent=1))
    return ["ablation.csv", "ablation.json"]


def cmd_sweep_negatives(args, cfg, out: Path):
    dataset = _load_dataset(args)
    rows = TR.negative_count_sweep(cfg, dataset, progress=_progress)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["n_neg", "acc_mean", "seconds", "accs"])
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "accs": " ".join(f"{a:.6f}" for a in r["accs"])})
    (out / "sweep.json").write_text(json.dumps(rows, indent=1))
    return ["sweep.csv", "sweep.json"]


def _write_scores_csv(report: EvalReport, path: Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "positive", "negative"])
        edges = report.bin_edges
        for i in range(len(report.pos_hist)):
            writer.writerow([edges[i], edges[i + 1], report.pos_hist[i], report.neg_hist[i]])


def cmd_export_scores(args, cfg, out: Path):
    report = EvalReport.from_json(_require(args.report, "evaluation report").read_text())
    if report.pos_hist is None:
        raise UsageError(f"report {args.report} has no score histograms")
    _write_scores_csv(report, out / "scores.csv")
    return ["scores.csv"]


HANDLERS = {
    "gen-data": cmd_gen_data,
    "mine-pairs": cmd_mine_pairs,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "adapt": cmd_adapt,
    "eval-verify": cmd_eval_verify,
    "eval-identify": cmd_eval_identify,
    "ablate": cmd_ablate,
    "sweep-negatives": cmd_sweep_negatives,
    "export-scores": cmd_export_scores,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aird", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        p.add_argument("--out", required=True, help="output directory (under AIRD_OUT_ROOT if relative)")
        p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    common(sub.add_parser("gen-data", help="generate the synthetic dataset"))

    p = sub.add_parser("train-teacher", help="train the high-resolution model")
    common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("mine-pairs", help="pre-select positive/negative pairs offline")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)

    p = sub.add_parser("distill", help="train the low-resolution student")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher")
    p.add_argument("--pairs")
    p.add_argument("--mode", choices=["aird", "vanilla_kd", "scratch_lr"], default="aird")

    p = sub.add_parser("adapt", help="re-estimate batch-norm statistics on unlabeled data")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--student", required=True)

    p = sub.add_parser("eval-verify", help="1:1 verification with threshold sweep")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--teacher")
    p.add_argument("--protocol")
    p.add_argument("--scenario", choices=["lrlr", "lrhr"], default="lrlr")

    p = sub.add_parser("eval-identify", help="1:N identification (top-K)")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--protocol")

    p = sub.add_parser("ablate", help="component ablation grid")
    common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("sweep-negatives", help="negative-count sensitivity study")
    common(p)
    p.add_argument("--data", required=True)

    p = sub.add_parser("export-scores", help="export score histograms from a report")
    common(p)
    p.add_argument("--report", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    start = time.time()
    try:
        cfg = _effective_config(args)
        out = _prepare_out(args.out, args.force)
        artifacts = HANDLERS[args.command](args, cfg, out)
        manifest = {
            "command": args.command,
            "config": cfg,
            "seed": cfg["seed"],
            "artifacts": {name: _sha256(out / name) for name in artifacts},
            "wall_time_s": time.time() - start,
        }
        (out / "run.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        print(f"{args.command}: wrote {', '.join(artifacts)} to {out}")
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AirdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
