"""Test-time batch-norm adaptation.

Running statistics of every (selected) batch-norm layer are re-estimated
from unlabeled target-domain batches: each batch blends its mean/variance
into the stored statistics with momentum ``gamma`` (``gamma`` keeps the old
value), and the forward pass normalizes with the freshly updated statistics.
Learned weights are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchSizeError, ConfigError, DimensionError
from .layers import BatchNorm2d, Network
from .tensor import no_grad


@dataclass
class AdaptConfig:
    gamma: float = 0.1
    batch_size: int = 32
    num_batches: int = 0  # 0 = one pass over the stream
    layer_filter: list = field(default_factory=list)  # empty = all BN layers
    unbiased: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2, got {self.batch_size}")


def adapt_step(state: BatchNorm2d, batch_activations, gamma: float, unbiased: bool = False) -> BatchNorm2d:
    """One running-statistics update from a batch of activations.

    new_mean = gamma * old_mean + (1 - gamma) * batch_mean, and likewise for
    the variance (biased divisor by default). Learned scale/shift untouched.
    """
    x = np.asarray(batch_activations, dtype=np.float64)
    if x.ndim not in (2, 4):
        raise DimensionError(f"expected [M,C] or [M,C,H,W] activations, got shape {x.shape}")
    if x.shape[0] < 2:
        raise BatchSizeError(f"adaptation needs batches of at least 2, got {x.shape[0]}")
    if x.shape[1] != state.channels:
        raise DimensionError(f"channel mismatch: state has {state.channels}, batch has {x.shape[1]}")
    if gamma == 1.0:
        return state
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bm = np.mean(x, axis=axes)
    bv = np.var(x, axis=axes, ddof=1 if unbiased else 0)
    state.update_running(bm, bv, 1.0 - gamma)
    return state


def adapt_network(net: Network, unlabeled_stream, cfg: AdaptConfig):
    """Adapt a copy of ``net`` on an iterator of unlabeled input batches.

    Returns ``(adapted_network, diagnostics)`` where diagnostics records the
    per-layer shift of the running statistics.
    """
    bn_names = list(net.bn_layers().keys())
    if not bn_names:
        raise ConfigError("network has no batch-norm layers to adapt")
    for name in cfg.layer_filter:
        if name not in bn_names:
            raise ConfigError(f"unknown batch-norm layer {name!r} in layer_filter")
    bn_filter = set(cfg.layer_filter) if cfg.layer_filter else None

    adapted = net.clone()
    before = {name: (bn.running_mean.copy(), bn.running_var.copy()) for name, bn in adapted.bn_layers().items()}
    weights_before = adapted.weight_signature()

    n_batches = 0
    with no_grad():
        for batch in unlabeled_stream:
            if cfg.num_batches and n_batches >= cfg.num_batches:
                break
            adapted.forward_embed(
                batch,
                mode="adapt",
                adapt_blend=1.0 - cfg.gamma,
                bn_filter=bn_filter,
                adapt_unbiased=cfg.unbiased,
            )
            n_batches += 1
    if n_batches == 0:
        raise ConfigError("adaptation stream yielded no batches")
    assert adapted.weight_signature() == weights_before, "adaptation must not touch learned weights"

    diagnostics = {"gamma": cfg.gamma, "num_batches": n_batches, "layers": {}}
    for name, bn in adapted.bn_layers().items():
        bm, bv = before[name]
        diagnostics["layers"][name] = {
            "channels": int(bn.channels),
            "mean_shift_l2": float(np.linalg.norm(bn.running_mean - bm)),
            "var_shift_l2": float(np.linalg.norm(bn.running_var - bv)),
        }
    return adapted, diagnostics
