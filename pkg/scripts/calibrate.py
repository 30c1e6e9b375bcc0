"""Calibration harness: run the benchmark comparators at a chosen scale and
print the margins the acceptance suite will check. Not part of the package."""

import argparse
import time

import numpy as np

from aird.config import default_config
from aird.data import build_protocol, generate_dataset
from aird.config import shift_from_config
from aird.train import (
    adapt_student,
    distill_student,
    evaluate_verification,
    histogram_overlap,
    train_teacher,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()

    cfg = default_config()
    if args.epochs:
        cfg["train.epochs"] = args.epochs
        cfg["train.milestones"] = [int(args.epochs * f) for f in (0.55, 0.7, 0.8)]
    for item in args.set:
        k, v = item.split("=", 1)
        cur = cfg[k]
        cfg[k] = type(cur)(v) if not isinstance(cur, list) else [int(x) for x in v.split(",")]

    ds = generate_dataset(
        cfg["data.num_ids"], cfg["data.samples_per_id"], 0, shift=shift_from_config(cfg),
        test_samples_per_id=cfg["data.test_samples_per_id"], lr_size=cfg["data.lr_size"],
    )
    proto = build_protocol(ds, "verify", cfg["eval.pair_count"], seed=0, split="test")
    clean_cfg = dict(cfg)
    clean_cfg["data.shift.enabled"] = False
    ds_clean = generate_dataset(
        cfg["data.num_ids"], cfg["data.samples_per_id"], 0, shift=None,
        test_samples_per_id=cfg["data.test_samples_per_id"], lr_size=cfg["data.lr_size"],
    )
    proto_clean = build_protocol(ds_clean, "verify", cfg["eval.pair_count"], seed=0, split="test")

    results = {m: [] for m in ("scratch", "kd", "aird", "aird_fb")}
    overlaps = {m: [] for m in ("scratch", "aird")}
    clean_accs = []
    for seed in args.seeds:
        t0 = time.perf_counter()
        teacher, tc = train_teacher(cfg, ds, seed)
        print(f"seed {seed} teacher: {time.perf_counter()-t0:.0f}s train_acc={tc[-1]['acc']:.3f}")
        for mode, key in (("scratch_lr", "scratch"), ("vanilla_kd", "kd"), ("aird", "aird")):
            t0 = time.perf_counter()
            st, curve, _ = distill_student(cfg, ds, None if mode == "scratch_lr" else teacher, seed, mode=mode)
            rep = evaluate_verification(st, ds, proto, "lrlr", cfg=cfg)
            results[key].append(rep.accuracy)
            if key in overlaps:
                overlaps[key].append(histogram_overlap(rep))
            extra = ""
            if mode == "aird":
                ad, _ = adapt_student(cfg, st, ds)
                rep2 = evaluate_verification(ad, ds, proto, "lrlr", cfg=cfg)
                results["aird_fb"].append(rep2.accuracy)
                extra = f" facebn={rep2.accuracy:.4f}"
            if mode == "scratch_lr":
                repc = evaluate_verification(st, ds_clean, proto_clean, "lrlr", cfg=cfg)
                clean_accs.append(repc.accuracy)
                extra = f" clean={repc.accuracy:.4f}"
            print(f"  {mode}: {time.perf_counter()-t0:.0f}s acc={rep.accuracy:.4f}{extra}")
    print("\nmeans:")
    for k, v in results.items():
        if v:
            print(f"  {k}: {np.mean(v):.4f}  {['%.4f' % a for a in v]}")
    print(f"  scratch clean-test: {np.mean(clean_accs):.4f} (shift drop: {(np.mean(clean_accs)-np.mean(results['scratch']))*100:.1f} pts)")
    print(f"  aird-scratch: {(np.mean(results['aird'])-np.mean(results['scratch']))*100:.2f} pts")
    print(f"  kd-scratch: {(np.mean(results['kd'])-np.mean(results['scratch']))*100:.2f} pts")
    print(f"  facebn gain: {(np.mean(results['aird_fb'])-np.mean(results['aird']))*100:.2f} pts")
    print(f"  overlap scratch={np.mean(overlaps['scratch']):.4f} aird={np.mean(overlaps['aird']):.4f}")


if __name__ == "__main__":
    main()
