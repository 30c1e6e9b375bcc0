"""Pair mining, relation networks, and the two distillation losses.

Pair conventions
----------------
A pair entry is ``(hr_index, lr_index, similarity)``: when a pair enters the
relation losses, the first index selects a teacher (high-resolution)
embedding and the second the sample whose low-resolution view goes through
the student. Positives are the unordered same-identity pairs stored once in
canonical ``i < j`` order, grouped by anchor ``i`` and sorted by teacher
similarity (descending) within each anchor. Negatives are mined per anchor:
``lr_index`` is the anchor and ``hr_index`` one of its ``n_neg``
most-similar different-identity samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, NormalizationError
from .layers import Linear
from .tensor import Tensor

H_CLAMP = 1e-7

PAIRS_MAGIC = b"ARPS"
PAIRS_FORMAT = 1


@dataclass
class PairSet:
    pos_pairs: np.ndarray  # [P, 2] int64, canonical i < j
    pos_sims: np.ndarray  # [P] float64
    neg_pairs: np.ndarray  # [Q, 2] int64, (partner, anchor)
    neg_sims: np.ndarray  # [Q] float64
    n_neg: int

    def partner_lists(self, num_samples):
        """Per-sample partner indices for batch training.

        Positive lists contain every same-identity partner (both orientations
        of each stored pair); negative lists are each anchor's mined hard
        negatives. Order within a list follows the stored (similarity-sorted)
        pair order.
        """
        pos = [[] for _ in range(num_samples)]
        neg = [[] for _ in range(num_samples)]
        for (i, j), s in zip(self.pos_pairs, self.pos_sims):
            pos[j].append((i, s))
            pos[i].append((j, s))
        for (k, a), s in zip(self.neg_pairs, self.neg_sims):
            neg[a].append((k, s))
        to_arr = lambda lst: np.array([p for p, _ in sorted(lst, key=lambda e: (-e[1],))], dtype=np.int64)
        return [to_arr(l) for l in pos], [np.array([p for p, _ in l], dtype=np.int64) for l in neg]


def _normalize_rows(embeds):
    norms = np.linalg.norm(embeds, axis=1)
    if np.any(norms < 1e-12):
        raise NormalizationError("zero-norm embedding in mining input")
    return embeds / norms[:, None]


def mine_pairs(teacher_embeds, labels, n_neg: int) -> PairSet:
    """Offline pair pre-selection on teacher embeddings (hard negatives).

    Deterministic: similarity ties break toward the lower sample index.
    """
    embeds = teacher_embeds.data if isinstance(teacher_embeds, Tensor) else np.asarray(teacher_embeds)
    labels = np.asarray(labels, dtype=np.int64)
    if embeds.ndim != 2 or embeds.shape[0] != labels.shape[0]:
        raise DimensionError(f"embeddings {embeds.shape} do not match {labels.shape[0]} labels")
    if n_neg < 1:
        raise ConfigError("n_neg must be at least 1")
    embeds = _normalize_rows(embeds)
    n = embeds.shape[0]
    count_of = {lab: cnt for lab, cnt in zip(*np.unique(labels, return_counts=True))}
    anchors = [i for i in range(n) if count_of[labels[i]] >= 2]
    if not anchors:
        raise ConfigError("no identity with at least 2 samples; cannot form positive pairs")
    min_diff = min(n - count_of[labels[a]] for a in anchors)
    if n_neg >= min_diff:
        raise ConfigError(f"n_neg={n_neg} must be below the smallest different-identity count {min_diff}")
    sims = embeds @ embeds.T

    pos_pairs, pos_sims = [], []
    neg_pairs, neg_sims = [], []
    for a in anchors:
        js = np.nonzero((labels == labels[a]) & (np.arange(n) > a))[0]
        if js.size:
            order = np.lexsort((js, -sims[a, js]))
            for j in js[order]:
                pos_pairs.append((a, j))
                pos_sims.append(sims[a, j])
        ks = np.nonzero(labels != labels[a])[0]
        order = np.lexsort((ks, -sims[a, ks]))[:n_neg]
        for k in ks[order]:
            neg_pairs.append((k, a))
            neg_sims.append(sims[a, k])
    return PairSet(
        pos_pairs=np.array(pos_pairs, dtype=np.int64).reshape(-1, 2),
        pos_sims=np.array(pos_sims),
        neg_pairs=np.array(neg_pairs, dtype=np.int64).reshape(-1, 2),
        neg_sims=np.array(neg_sims),
        n_neg=n_neg,
    )


def save_pairs(pairs: PairSet, path):
    with open(path, "wb") as fh:
        fh.write(PAIRS_MAGIC)
        fh.write(struct.pack("<IIQQ", PAIRS_FORMAT, pairs.n_neg, len(pairs.pos_sims), len(pairs.neg_sims)))
        fh.write(np.ascontiguousarray(pairs.pos_pairs, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(pairs.pos_sims, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(pairs.neg_pairs, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(pairs.neg_sims, dtype="<f8").tobytes())


def load_pairs(path) -> PairSet:
    with open(path, "rb") as fh:
        if fh.read(4) != PAIRS_MAGIC:
            raise ValueError("not a pair file")
        fmt, n_neg, p, q = struct.unpack("<IIQQ", fh.read(24))
        if fmt != PAIRS_FORMAT:
            raise ValueError(f"unsupported pair file format {fmt}")
        pos_pairs = np.frombuffer(fh.read(8 * p), dtype="<u4").astype(np.int64).reshape(-1, 2)
        pos_sims = np.frombuffer(fh.read(8 * p), dtype="<f8").astype(np.float64)
        neg_pairs = np.frombuffer(fh.read(8 * q), dtype="<u4").astype(np.int64).reshape(-1, 2)
        neg_sims = np.frombuffer(fh.read(8 * q), dtype="<f8").astype(np.float64)
    return PairSet(pos_pairs, pos_sims, neg_pairs, neg_sims, n_neg)


class RelationNet:
    """Linear map + ReLU from a concatenated embedding pair to a relation vector.

    The bias starts positive so units begin alive; a dead (all-negative)
    unit contributes nothing to the relation and cannot recover.
    """

    def __init__(self, embed_dim: int, rel_dim: int = 32, rng=None, bias_init: float = 0.1):
        self.embed_dim = embed_dim
        self.rel_dim = rel_dim
        self.linear = Linear(2 * embed_dim, rel_dim, rng=rng)
        self.linear.bias.data = np.full(rel_dim, bias_init)

    def parameters(self):
        return {"weight": self.linear.weight, "bias": self.linear.bias}

    def forward(self, f_a, f_b) -> Tensor:
        a = f_a if isinstance(f_a, Tensor) else Tensor(f_a)
        b = f_b if isinstance(f_b, Tensor) else Tensor(f_b)
        single = a.data.ndim == 1
        if single:
            a, b = T.reshape(a, (1, -1)), T.reshape(b, (1, -1))
        if a.data.shape[1] + b.data.shape[1] != 2 * self.embed_dim:
            raise DimensionError(
                f"relation input dims {a.data.shape[1]}+{b.data.shape[1]} != {2 * self.embed_dim}"
            )
        r = T.relu(self.linear.forward(T.concat([a, b], axis=1)))
        return T.reshape(r, (-1,)) if single else r


def critic_score(r_t, r_ts, tau: float) -> Tensor:
    """sigmoid(cosine / tau): scores a relation pair in (0, 1)."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    a = r_t if isinstance(r_t, Tensor) else Tensor(r_t)
    b = r_ts if isinstance(r_ts, Tensor) else Tensor(r_ts)
    single = a.data.ndim == 1
    if single:
        a, b = T.reshape(a, (1, -1)), T.reshape(b, (1, -1))
    for v, name in ((a, "r_t"), (b, "r_ts")):
        if np.any(np.linalg.norm(v.data, axis=1) < 1e-12):
            raise NormalizationError(f"zero-norm relation vector in {name}")
    num = T.tsum(T.mul(a, b), axis=1)
    den = T.mul(T.sqrt(T.tsum(T.mul(a, a), axis=1)), T.sqrt(T.tsum(T.mul(b, b), axis=1)))
    h = T.sigmoid(T.mul(T.div(num, den), Tensor(1.0 / tau)))
    return T.reshape(h, ()) if single else h


def _pair_scores(pairs_2d, teacher_embeds, student_embeds, rnet_t, rnet_ts, tau):
    t_first = Tensor(teacher_embeds[pairs_2d[:, 0]])
    t_second = Tensor(teacher_embeds[pairs_2d[:, 1]])
    s_second = T.gather_rows(student_embeds, pairs_2d[:, 1])
    r_t = rnet_t.forward(t_first, t_second)
    r_ts = rnet_ts.forward(t_first, s_second)
    return critic_score(r_t, r_ts, tau)


def rld_loss(pairs, teacher_embeds, student_embeds, rnet_t, rnet_ts, tau, n_weight=None, reduction="mean") -> Tensor:
    """Contrastive relation loss over mined positive and negative pairs.

    Teacher embeddings are constants; gradients reach the student embeddings
    and both relation networks. ``reduction="mean"`` averages within each
    pair class before weighting the negative side by ``n_weight``;
    ``reduction="sum"`` keeps plain sums.
    """
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    teacher_embeds = teacher_embeds.data if isinstance(teacher_embeds, Tensor) else np.asarray(teacher_embeds)
    student_embeds = student_embeds if isinstance(student_embeds, Tensor) else Tensor(student_embeds)
    if n_weight is None:
        n_weight = pairs.n_neg
    if len(pairs.pos_sims) == 0 and len(pairs.neg_sims) == 0:
        raise ConfigError("empty pair set")
    red = T.tmean if reduction == "mean" else T.tsum
    total = Tensor(0.0)
    if len(pairs.pos_sims):
        h_pos = T.clamp(_pair_scores(pairs.pos_pairs, teacher_embeds, student_embeds, rnet_t, rnet_ts, tau), H_CLAMP, 1.0 - H_CLAMP)
        total = T.add(total, T.neg(red(T.log(h_pos))))
    if len(pairs.neg_sims):
        h_neg = T.clamp(_pair_scores(pairs.neg_pairs, teacher_embeds, student_embeds, rnet_t, rnet_ts, tau), H_CLAMP, 1.0 - H_CLAMP)
        total = T.add(total, T.mul(Tensor(float(n_weight)), T.neg(red(T.log(T.sub(Tensor(1.0), h_neg))))))
    return total


@dataclass
class DecoupledProbs:
    p_tar: float
    p_ntar: float
    p_hat: np.ndarray  # [c-1], renormalized over non-target classes


def decouple(logits, target: int) -> DecoupledProbs:
    """Split a softmax distribution into target / non-target components."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"decouple expects a single logit row, got shape {z.shape}")
    if not 0 <= target < z.size:
        raise ConfigError(f"target {target} out of range for {z.size} classes")
    e = np.exp(z - np.max(z))
    p = e / e.sum()
    p_tar = float(p[target])
    p_ntar = float(p.sum() - p[target])
    rest = np.delete(z, target)
    er = np.exp(rest - np.max(rest))
    return DecoupledProbs(p_tar=p_tar, p_ntar=p_ntar, p_hat=er / er.sum())


def _stable_softmax(z):
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def ild_loss(teacher_logits, student_logits, targets, temperature: float = 1.0) -> Tensor:
    """Decoupled per-sample distribution matching loss (batch mean).

    The target term matches the (target, non-target) split; the non-target
    term matches the renormalized non-target distribution, weighted by the
    teacher's non-target mass. Teacher logits are constants.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    s = student_logits if isinstance(student_logits, Tensor) else Tensor(student_logits)
    targets = np.asarray(targets, dtype=np.int64)
    bsz, c = t.shape
    if s.data.shape != t.shape:
        raise DimensionError(f"logit shapes differ: {t.shape} vs {s.data.shape}")
    if np.any(targets < 0) or np.any(targets >= c):
        raise ConfigError("target index out of range")
    onehot = np.zeros((bsz, c))
    onehot[np.arange(bsz), targets] = 1.0

    p_t = _stable_softmax(t / temperature)
    pt_tar = p_t[np.arange(bsz), targets]
    pt_ntar = 1.0 - pt_tar
    phat_t = p_t * (1.0 - onehot) / np.maximum(pt_ntar[:, None], T.EPS_FLOOR)

    p_s = T.softmax(T.mul(s, Tensor(1.0 / temperature)))
    ps_tar = T.tsum(T.mul(p_s, Tensor(onehot)), axis=1)
    ps_ntar = T.sub(Tensor(1.0), ps_tar)
    phat_s = T.div(p_s, T.reshape(ps_ntar, (bsz, 1)))

    log_or_floor = lambda v: np.log(np.maximum(v, T.EPS_FLOOR))
    t1 = T.mul(Tensor(pt_tar), T.sub(Tensor(log_or_floor(pt_tar)), T.log(ps_tar)))
    t2 = T.mul(Tensor(pt_ntar), T.sub(Tensor(log_or_floor(pt_ntar)), T.log(ps_ntar)))
    inner = T.tsum(T.mul(Tensor(phat_t), T.sub(Tensor(log_or_floor(phat_t)), T.log(phat_s))), axis=1)
    t3 = T.mul(Tensor(pt_ntar), inner)
    per_sample = T.add(T.add(t1, t2), t3)
    return T.mul(Tensor(temperature * temperature), T.tmean(per_sample))


def total_loss(cls, ild, rld, alpha: float, beta: float) -> Tensor:
    """Weighted training objective: alpha * ild + beta * rld + cls."""
    parts = {"cls": cls, "ild": ild, "rld": rld}
    for name, v in parts.items():
        T.assert_finite(v if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64), f"{name} loss")
    cls, ild, rld = (v if isinstance(v, Tensor) else Tensor(v) for v in (cls, ild, rld))
    return T.add(T.add(T.mul(Tensor(float(alpha)), ild), T.mul(Tensor(float(beta)), rld)), cls)
