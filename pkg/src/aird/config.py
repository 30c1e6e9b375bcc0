"""Flat dotted-key configuration with file and command-line overrides.

Config files are versioned ``key = value`` text; precedence is
command-line override > config file > built-in default. Unknown keys are
rejected up front. Values are parsed to the type of the built-in default.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

CONFIG_FORMAT = 1

DEFAULTS = {
    "format": CONFIG_FORMAT,
    "seed": 0,
    # dataset
    "data.num_ids": 16,
    "data.samples_per_id": 20,
    "data.test_samples_per_id": 8,
    "data.hr_size": 32,
    "data.lr_size": 8,
    "data.kernel": "bicubic",
    "data.shift.brightness": 0.12,
    "data.shift.contrast": 0.85,
    "data.shift.blur_sigma": 0.5,
    "data.shift.noise": 0.02,
    "data.shift.enabled": True,
    # architectures
    "teacher.blocks": [8, 16, 32, 32],
    "teacher.embed_dim": 64,
    "student.blocks": [8, 16, 32],
    "student.embed_dim": 64,
    "model.kernel": 3,
    "model.pool": 2,
    "model.margin": 0.35,
    "model.scale": 16.0,
    # optimization
    "train.epochs": 40,
    "train.batch_size": 32,
    "train.lr": 0.05,
    "train.milestones": [21, 28, 32],
    "train.momentum": 0.9,
    "train.weight_decay": 5e-4,
    # distillation
    "distill.alpha": 1.0,
    "distill.beta": 2.0,
    "distill.n_neg": 8,
    "distill.tau": 0.1,
    "distill.rel_dim": 32,
    "distill.temperature": 1.0,
    "distill.rld_reduction": "mean",
    "distill.kd_temperature": 4.0,
    "distill.kd_weight": 1.0,
    # adaptation
    "adapt.gamma": 0.1,
    "adapt.batch_size": 32,
    "adapt.num_batches": 0,
    "adapt.unbiased": False,
    # evaluation
    "eval.pair_count": 400,
    "eval.histogram_bins": 100,
    "eval.topk": [1, 5],
    "eval.lrhr_student_only": False,
    "eval.finetune": False,
    "eval.finetune_epochs": 5,
    "eval.finetune_lr": 0.01,
    # studies
    "benchmark.seeds": [0, 1, 2],
    "sweep.n_values": [4, 8, 16, 32, 64],
    "sweep.seeds": [0, 1, 2],
}


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s for s in raw.replace(",", " ").split() if s]
            return [int(s) for s in items]
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}")


def default_config() -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, v in DEFAULTS.items()}


def load_config(path) -> dict:
    """Parse a key=value config file on top of the built-in defaults."""
    cfg = default_config()
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        cfg[key] = _parse_value(key, raw)
    if cfg["format"] != CONFIG_FORMAT:
        raise ConfigError(f"unsupported config format {cfg['format']}")
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply dotted-key=value strings (highest precedence)."""
    out = dict(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def save_config(cfg: dict, path):
    lines = [f"{k} = {_format_value(v)}" for k, v in sorted(cfg.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return str(v)


def shift_from_config(cfg: dict):
    from .data import ShiftConfig

    if not cfg["data.shift.enabled"]:
        return ShiftConfig()
    return ShiftConfig(
        brightness=cfg["data.shift.brightness"],
        contrast=cfg["data.shift.contrast"],
        blur_sigma=cfg["data.shift.blur_sigma"],
        noise=cfg["data.shift.noise"],
    )
