"""Training loops, the evaluation harness, and the study runners.

All randomness flows through named substreams of one root seed (weight
init, batch order, protocol sampling are independent), so a fixed config
and seed reproduce checkpoints and reports bitwise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import default_config
from .data import Dataset, VerifyProtocol, build_protocol
from .distill import RelationNet, ild_loss, mine_pairs, rld_loss, total_loss
from .errors import ConfigError, DimensionError, NumericError, ProtocolError
from .facebn import AdaptConfig, adapt_network
from .layers import Network, cross_entropy
from .seeding import substream
from .tensor import Tensor, no_grad

MODES = ("teacher", "aird", "vanilla_kd", "scratch_lr")


def validate_run_config(cfg: dict):
    ms = cfg["train.milestones"]
    if any(ms[i] >= ms[i + 1] for i in range(len(ms) - 1)):
        raise ConfigError(f"milestones must be strictly increasing, got {ms}")
    if ms and cfg["train.epochs"] > 0 and ms[-1] >= cfg["train.epochs"]:
        raise ConfigError(f"milestones {ms} must lie below epochs={cfg['train.epochs']}")
    if cfg["train.lr"] <= 0:
        raise ConfigError("learning rate must be positive")
    if not 0.0 <= cfg["train.momentum"] < 1.0:
        raise ConfigError("momentum must be in [0, 1)")
    if cfg["train.weight_decay"] < 0:
        raise ConfigError("weight decay must be nonnegative")
    if cfg["train.batch_size"] < 2:
        raise ConfigError("batch size must be at least 2")


def lr_at(cfg: dict, epoch: int) -> float:
    lr = cfg["train.lr"]
    for m in cfg["train.milestones"]:
        if epoch >= m:
            lr *= 0.1
    return lr


class SGD:
    """Momentum SGD with weight decay folded into the gradient.

    ``no_decay`` names parameters exempt from weight decay (small auxiliary
    heads whose scale should not be pulled toward zero).
    """

    def __init__(self, params: dict, momentum: float = 0.9, weight_decay: float = 5e-4, no_decay=()):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.buffers = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad if name in self.no_decay else p.grad + self.weight_decay * p.data
            buf = self.buffers[name]
            buf *= self.momentum
            buf += g
            p.data = p.data - lr * buf


def teacher_arch(cfg: dict, num_classes: int) -> dict:
    return {
        "input_hw": cfg["data.hr_size"],
        "in_channels": 1,
        "blocks": list(cfg["teacher.blocks"]),
        "kernel": cfg["model.kernel"],
        "pool": cfg["model.pool"],
        "embed_dim": cfg["teacher.embed_dim"],
        "num_classes": num_classes,
        "margin": cfg["model.margin"],
        "scale": cfg["model.scale"],
    }


def student_arch(cfg: dict, num_classes: int) -> dict:
    return {
        "input_hw": cfg["data.lr_size"],
        "in_channels": 1,
        "blocks": list(cfg["student.blocks"]),
        "kernel": cfg["model.kernel"],
        "pool": cfg["model.pool"],
        "embed_dim": cfg["student.embed_dim"],
        "num_classes": num_classes,
        "margin": cfg["model.margin"],
        "scale": cfg["model.scale"],
    }


def _batches(order_rng, n, batch_size):
    perm = order_rng.permutation(n)
    for lo in range(0, n, batch_size):
        chunk = perm[lo : lo + batch_size]
        if chunk.size >= 2:
            yield chunk


def _loss_barrier(loss, epoch, batch, lr):
    if not np.isfinite(loss.data):
        raise NumericError(f"training diverged at epoch {epoch}, batch {batch} (lr={lr}): loss={loss.data}")


def train_teacher(cfg: dict, dataset: Dataset, seed: int):
    """Margin-softmax training of the high-resolution model on the train split."""
    validate_run_config(cfg)
    if dataset.train_indices.size == 0:
        raise ConfigError("empty training split")
    arch = teacher_arch(cfg, dataset.num_ids)
    if dataset.hr.shape[-1] != arch["input_hw"]:
        raise DimensionError(f"dataset HR size {dataset.hr.shape[-1]} != teacher input {arch['input_hw']}")
    net = Network(arch, rng=substream(seed, "teacher-init"))
    order = substream(seed, "teacher-batch-order")
    opt = SGD(net.parameters(), cfg["train.momentum"], cfg["train.weight_decay"])
    idx = dataset.train_indices
    labels = dataset.labels
    curve = []
    for epoch in range(1, cfg["train.epochs"] + 1):
        lr = lr_at(cfg, epoch)
        losses, correct, seen = [], 0, 0
        for bno, chunk in enumerate(_batches(order, idx.size, cfg["train.batch_size"])):
            bidx = idx[chunk]
            xb = Tensor(dataset.hr[bidx])
            yb = labels[bidx]
            f, _ = net.forward_embed(xb, mode="train")
            logits = net.margin_logits(f, yb)
            loss = cross_entropy(logits, yb)
            _loss_barrier(loss, epoch, bno, lr)
            opt.zero_grad()
            T.backward(loss)
            opt.step(lr)
            losses.append(float(loss.data))
            correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
            seen += yb.size
        curve.append({"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)), "acc": correct / seen})
    return net, curve


def embed_images(net: Network, images, batch: int = 128):
    """Eval-mode embeddings and plain logits for an image array (no side effects)."""
    embeds, logits = [], []
    with no_grad():
        for lo in range(0, len(images), batch):
            f, lg = net.forward_embed(Tensor(images[lo : lo + batch]), mode="eval")
            embeds.append(f.data)
            logits.append(lg.data)
    return np.vstack(embeds), np.vstack(logits)


def _normalize(embeds):
    return embeds / np.linalg.norm(embeds, axis=1, keepdims=True)


def distill_student(
    cfg: dict,
    dataset: Dataset,
    teacher: Network | None,
    seed: int,
    mode: str = "aird",
    pairs=None,
    use_ild: bool = True,
    use_rld: bool = True,
):
    """Train the low-resolution student; returns (net, curve, pairs).

    Modes: ``aird`` (weighted instance + relation losses on top of the
    classification loss), ``vanilla_kd`` (temperature-scaled distribution
    matching), ``scratch_lr`` (classification loss only).
    """
    validate_run_config(cfg)
    if mode not in ("aird", "vanilla_kd", "scratch_lr"):
        raise ConfigError(f"unknown training mode {mode!r}")
    arch = student_arch(cfg, dataset.num_ids)
    if dataset.lr.shape[-1] != arch["input_hw"]:
        raise DimensionError(f"dataset LR size {dataset.lr.shape[-1]} != student input {arch['input_hw']}")
    alpha = cfg["distill.alpha"] if (mode == "aird" and use_ild) else 0.0
    beta = cfg["distill.beta"] if (mode == "aird" and use_rld) else 0.0
    need_teacher = mode == "vanilla_kd" or alpha > 0 or beta > 0
    if need_teacher and teacher is None:
        raise ConfigError(f"mode {mode!r} needs a teacher network")

    net = Network(arch, rng=substream(seed, "student-init"))
    rnet_t = rnet_ts = None
    if beta > 0:
        rnet_t = RelationNet(cfg["teacher.embed_dim"] , cfg["distill.rel_dim"], rng=substream(seed, "relation-t-init"))
        rnet_ts = RelationNet(cfg["teacher.embed_dim"], cfg["distill.rel_dim"], rng=substream(seed, "relation-ts-init"))
        if cfg["teacher.embed_dim"] != cfg["student.embed_dim"]:
            raise ConfigError("relation losses need equal teacher/student embedding dims")

    idx = dataset.train_indices
    labels_tr = dataset.labels[idx]
    t_embeds_n = t_logits = None
    if need_teacher:
        if dataset.hr.shape[-1] != teacher.arch["input_hw"]:
            raise DimensionError("teacher input resolution does not match the dataset")
        teacher.set_requires_grad(False)
        t_embeds, t_logits = embed_images(teacher, dataset.hr[idx])
        t_embeds_n = _normalize(t_embeds)
    if beta > 0:
        if pairs is None:
            pairs = mine_pairs(t_embeds_n, labels_tr, cfg["distill.n_neg"])
        pos_partners, neg_partners = pairs.partner_lists(idx.size)

    params = dict(net.parameters())
    relation_names = []
    if beta > 0:
        params.update({f"relation_t.{k}": v for k, v in rnet_t.parameters().items()})
        params.update({f"relation_ts.{k}": v for k, v in rnet_ts.parameters().items()})
        relation_names = [n for n in params if n.startswith("relation_")]
    opt = SGD(params, cfg["train.momentum"], cfg["train.weight_decay"], no_decay=relation_names)
    order = substream(seed, "student-batch-order")

    curve = []
    for epoch in range(1, cfg["train.epochs"] + 1):
        lr = lr_at(cfg, epoch)
        sums = {"loss": [], "cls": [], "ild": [], "rld": []}
        correct, seen = 0, 0
        for bno, chunk in enumerate(_batches(order, idx.size, cfg["train.batch_size"])):
            bidx = idx[chunk]
            xb = Tensor(dataset.lr[bidx])
            yb = dataset.labels[bidx]
            f_s, logits_s = net.forward_embed(xb, mode="train")
            cls = cross_entropy(net.margin_logits(f_s, yb), yb)
            ild = Tensor(0.0)
            rld = Tensor(0.0)
            if mode == "vanilla_kd":
                kd = vanilla_kd_loss(t_logits[chunk], logits_s, cfg["distill.kd_temperature"])
                loss = T.add(cls, T.mul(Tensor(cfg["distill.kd_weight"]), kd))
                ild = kd
            elif alpha > 0 or beta > 0:
                if alpha > 0:
                    ild = ild_loss(t_logits[chunk], logits_s, yb, cfg["distill.temperature"])
                if beta > 0:
                    t_side, s_side = [], []
                    for local, p in enumerate(chunk):
                        for partner in pos_partners[p]:
                            t_side.append(partner)
                            s_side.append(local)
                    n_pos = len(t_side)
                    for local, p in enumerate(chunk):
                        for partner in neg_partners[p]:
                            t_side.append(partner)
                            s_side.append(local)
                    if t_side:
                        batch_pairs = _BatchPairs(
                            np.column_stack([t_side[:n_pos], s_side[:n_pos]]).astype(np.int64).reshape(-1, 2),
                            np.column_stack([t_side[n_pos:], s_side[n_pos:]]).astype(np.int64).reshape(-1, 2),
                            pairs.n_neg,
                        )
                        f_s_n = _l2_rows(f_s)
                        rld = rld_loss(
                            batch_pairs,
                            t_embeds_n,
                            f_s_n,
                            rnet_t,
                            rnet_ts,
                            cfg["distill.tau"],
                            n_weight=pairs.n_neg,
                            reduction=cfg["distill.rld_reduction"],
                        )
                loss = total_loss(cls, ild, rld, alpha, beta)
            else:
                loss = cls
            _loss_barrier(loss, epoch, bno, lr)
            opt.zero_grad()
            T.backward(loss)
            opt.step(lr)
            sums["loss"].append(float(loss.data))
            sums["cls"].append(float(cls.data))
            sums["ild"].append(float(ild.data))
            sums["rld"].append(float(rld.data))
            correct += int(np.sum(np.argmax(logits_s.data, axis=1) == yb))
            seen += yb.size
        curve.append(
            {
                "epoch": epoch,
                "lr": lr,
                "loss": float(np.mean(sums["loss"])),
                "cls": float(np.mean(sums["cls"])),
                "ild": float(np.mean(sums["ild"])),
                "rld": float(np.mean(sums["rld"])),
                "acc": correct / seen,
            }
        )
    return net, curve, pairs


@dataclass
class _BatchPairs:
    pos_pairs: np.ndarray
    neg_pairs: np.ndarray
    n_neg: int

    @property
    def pos_sims(self):
        return np.zeros(len(self.pos_pairs))

    @property
    def neg_sims(self):
        return np.zeros(len(self.neg_pairs))


def _l2_rows(f: Tensor) -> Tensor:
    sq = T.tsum(T.mul(f, f), axis=1, keepdims=True)
    return T.div(f, T.sqrt(sq))


def vanilla_kd_loss(teacher_logits, student_logits, temperature: float) -> Tensor:
    """Temperature-scaled distribution matching, scaled by T^2 (batch mean)."""
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    s = student_logits if isinstance(student_logits, Tensor) else Tensor(student_logits)
    if t.shape != s.data.shape:
        raise DimensionError(f"logit shapes differ: {t.shape} vs {s.data.shape}")
    zt = t / temperature
    zt = zt - zt.max(axis=1, keepdims=True)
    p_t = np.exp(zt) / np.exp(zt).sum(axis=1, keepdims=True)
    log_p_t = zt - np.log(np.exp(zt).sum(axis=1, keepdims=True))

    zs = T.mul(s, Tensor(1.0 / temperature))
    m = Tensor(np.max(zs.data, axis=1, keepdims=True))
    z = T.sub(zs, m)
    lse = T.add(T.log(T.tsum(T.exp(z), axis=1, keepdims=True)), m)
    log_p_s = T.sub(zs, lse)
    per_row = T.tsum(T.mul(Tensor(p_t), T.sub(Tensor(log_p_t), log_p_s)), axis=1)
    return T.mul(Tensor(temperature * temperature), T.tmean(per_row))


# --- evaluation -------------------------------------------------------------------


@dataclass
class EvalReport:
    mode: str
    accuracy: float
    best_threshold: float | None = None
    topk: dict | None = None
    pos_hist: list | None = None
    neg_hist: list | None = None
    bin_edges: list | None = None
    pair_count: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "best_threshold": self.best_threshold,
            "topk": self.topk,
            "pos_hist": self.pos_hist,
            "neg_hist": self.neg_hist,
            "bin_edges": self.bin_edges,
            "pair_count": self.pair_count,
            "extra": self.extra,
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(**d)


def threshold_sweep(scores, same):
    """Best accuracy over all candidate thresholds (predict same if score > t).

    Candidates are the midpoints between consecutive distinct scores plus a
    below-all and an above-all sentinel; accuracy ties resolve to the largest
    threshold, so an all-equal score list predicts all-negative.
    """
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if scores.size == 0:
        raise ProtocolError("empty verification protocol")
    uniq = np.unique(scores)
    cands = np.concatenate([[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0]])
    preds = scores[None, :] > cands[:, None]
    accs = np.mean(preds == same[None, :], axis=1)
    best = len(accs) - 1 - int(np.argmax(accs[::-1]))
    return float(accs[best]), float(cands[best])


def score_histograms(scores, same, bins: int):
    scores = np.clip(scores, -1.0, 1.0)  # cosines can exceed 1 by an ulp
    pos, edges = np.histogram(scores[same], bins=bins, range=(-1.0, 1.0))
    neg, _ = np.histogram(scores[~same], bins=bins, range=(-1.0, 1.0))
    return pos.tolist(), neg.tolist(), edges.tolist()


def histogram_overlap(report: EvalReport) -> float:
    """Overlap area of the normalized positive/negative score histograms."""
    pos = np.asarray(report.pos_hist, dtype=np.float64)
    neg = np.asarray(report.neg_hist, dtype=np.float64)
    return float(np.minimum(pos / pos.sum(), neg / neg.sum()).sum())


def evaluate_verification(
    student: Network,
    dataset: Dataset,
    protocol: VerifyProtocol,
    scenario: str = "lrlr",
    teacher: Network | None = None,
    cfg: dict | None = None,
) -> EvalReport:
    """Cosine verification with an exhaustive threshold sweep."""
    cfg = cfg or default_config()
    if scenario not in ("lrlr", "lrhr"):
        raise ConfigError(f"unknown scenario {scenario!r}")
    if protocol.pairs.size == 0:
        raise ProtocolError("empty verification protocol")
    a_idx = protocol.pairs[:, 0]
    b_idx = protocol.pairs[:, 1]
    emb_a, _ = embed_images(student, dataset.lr[a_idx])
    if scenario == "lrlr" or cfg["eval.lrhr_student_only"]:
        emb_b, _ = embed_images(student, dataset.lr[b_idx])
    else:
        if teacher is None:
            raise ConfigError("lrhr scenario needs the teacher network for the gallery side")
        if teacher.arch["embed_dim"] != student.arch["embed_dim"]:
            raise DimensionError("teacher and student embedding dims differ")
        emb_b, _ = embed_images(teacher, dataset.hr[b_idx])
    scores = np.sum(_normalize(emb_a) * _normalize(emb_b), axis=1)
    acc, thr = threshold_sweep(scores, protocol.same)
    pos_h, neg_h, edges = score_histograms(scores, protocol.same, cfg["eval.histogram_bins"])
    return EvalReport(
        mode=f"verify_{scenario}",
        accuracy=acc,
        best_threshold=thr,
        pos_hist=pos_h,
        neg_hist=neg_h,
        bin_edges=edges,
        pair_count=int(len(scores)),
    )


def _finetune_final_layer(student: Network, dataset: Dataset, gallery, cfg: dict, seed: int) -> Network:
    """Fine-tune the embedding head and classifier on the gallery; backbone and
    batch-norm statistics stay frozen (eval-mode forward)."""
    net = student.clone()
    head = {"embed.weight", "embed.bias", "classifier.weight"}
    for name, p in net.parameters().items():
        p.requires_grad = name in head
    opt = SGD({n: p for n, p in net.parameters().items() if n in head}, cfg["train.momentum"], cfg["train.weight_decay"])
    order = substream(seed, "finetune-batch-order")
    for _ in range(cfg["eval.finetune_epochs"]):
        for chunk in _batches(order, len(gallery), cfg["train.batch_size"]):
            bidx = gallery[chunk]
            f, _ = net.forward_embed(Tensor(dataset.lr[bidx]), mode="eval")
            loss = cross_entropy(net.margin_logits(f, dataset.labels[bidx]), dataset.labels[bidx])
            opt.zero_grad()
            T.backward(loss)
            opt.step(cfg["eval.finetune_lr"])
    return net


def evaluate_identification(
    student: Network,
    dataset: Dataset,
    protocol,
    cfg: dict | None = None,
    seed: int = 0,
) -> EvalReport:
    """Nearest-gallery ranking by cosine; top-K accuracy."""
    cfg = cfg or default_config()
    gallery, probes = protocol.gallery, protocol.probes
    if gallery.size == 0:
        raise ProtocolError("empty gallery")
    missing = set(dataset.labels[probes]) - set(dataset.labels[gallery])
    if missing:
        raise ProtocolError(f"probe labels missing from gallery: {sorted(missing)}")
    net = student
    if cfg["eval.finetune"]:
        net = _finetune_final_layer(student, dataset, gallery, cfg, seed)
    emb_g, _ = embed_images(net, dataset.lr[gallery])
    emb_p, _ = embed_images(net, dataset.lr[probes])
    sims = _normalize(emb_p) @ _normalize(emb_g).T
    ranking = np.argsort(-sims, axis=1, kind="stable")
    g_labels = dataset.labels[gallery]
    p_labels = dataset.labels[probes]
    topk = {}
    for k in cfg["eval.topk"]:
        kk = min(k, gallery.size)
        hits = [p_labels[i] in g_labels[ranking[i, :kk]] for i in range(probes.size)]
        topk[str(k)] = float(np.mean(hits))
    return EvalReport(mode="identify", accuracy=topk[str(cfg["eval.topk"][0])], topk=topk, pair_count=int(probes.size))


# --- studies ----------------------------------------------------------------------


def adapt_student(cfg: dict, student: Network, dataset: Dataset):
    """Adapt batch-norm statistics on the unlabeled test-split stream."""
    acfg = AdaptConfig(
        gamma=cfg["adapt.gamma"],
        batch_size=cfg["adapt.batch_size"],
        num_batches=cfg["adapt.num_batches"],
        unbiased=cfg["adapt.unbiased"],
    )
    images = dataset.lr[dataset.test_indices]

    def stream():
        for lo in range(0, len(images), acfg.batch_size):
            chunk = images[lo : lo + acfg.batch_size]
            if len(chunk) >= 2:
                yield chunk

    return adapt_network(student, stream(), acfg)


def benchmark_run(cfg: dict, dataset: Dataset, seeds, progress=None):
    """Train and evaluate every comparator over the given seeds.

    Returns a summary dict with per-seed LR-LR verification accuracy and
    score-histogram overlap for scratch_lr, vanilla_kd, aird, and
    aird+adaptation, plus the per-seed reports.
    """
    protocol = build_protocol(dataset, "verify", cfg["eval.pair_count"], seed=cfg["seed"], split="test")
    summary = {m: {"accs": [], "overlaps": []} for m in ("scratch", "kd", "aird", "aird_facebn")}
    reports = {}
    for seed in seeds:
        if progress:
            progress(f"seed {seed}: teacher")
        teacher, _ = train_teacher(cfg, dataset, seed)
        students = {}
        if progress:
            progress(f"seed {seed}: scratch student")
        students["scratch"], _, _ = distill_student(cfg, dataset, None, seed, mode="scratch_lr")
        if progress:
            progress(f"seed {seed}: vanilla kd student")
        students["kd"], _, _ = distill_student(cfg, dataset, teacher, seed, mode="vanilla_kd")
        if progress:
            progress(f"seed {seed}: aird student")
        students["aird"], _, _ = distill_student(cfg, dataset, teacher, seed, mode="aird")
        adapted, _ = adapt_student(cfg, students["aird"], dataset)
        students["aird_facebn"] = adapted
        for name, net in students.items():
            rep = evaluate_verification(net, dataset, protocol, "lrlr", cfg=cfg)
            summary[name]["accs"].append(rep.accuracy)
            summary[name]["overlaps"].append(histogram_overlap(rep))
            reports[f"{name}-seed{seed}"] = rep
    for name in summary:
        summary[name]["mean"] = float(np.mean(summary[name]["accs"]))
    return summary, reports


ABLATION_ROWS = (
    ("cls", False, False, False),
    ("cls+ild", True, False, False),
    ("cls+rld", False, True, False),
    ("cls+ild+rld", True, True, False),
    ("cls+ild+rld+facebn", True, True, True),
)


def run_ablation(cfg: dict, dataset: Dataset, seeds, progress=None):
    """One row per component combination, averaged over seeds."""
    protocol = build_protocol(dataset, "verify", cfg["eval.pair_count"], seed=cfg["seed"], split="test")
    teachers = {}
    students = {}
    rows = []
    for row_name, use_ild, use_rld, use_facebn in ABLATION_ROWS:
        accs = []
        for seed in seeds:
            if seed not in teachers:
                if progress:
                    progress(f"seed {seed}: teacher")
                teachers[seed], _ = train_teacher(cfg, dataset, seed)
            key = (seed, use_ild, use_rld)
            if key not in students:
                if progress:
                    progress(f"seed {seed}: student ild={use_ild} rld={use_rld}")
                teacher = teachers[seed] if (use_ild or use_rld) else None
                students[key], _, _ = distill_student(
                    cfg, dataset, teacher, seed, mode="aird", use_ild=use_ild, use_rld=use_rld
                )
            net = students[key]
            if use_facebn:
                net, _ = adapt_student(cfg, net, dataset)
            rep = evaluate_verification(net, dataset, protocol, "lrlr", cfg=cfg)
            accs.append(rep.accuracy)
        rows.append(
            {
                "row": row_name,
                "use_ild": use_ild,
                "use_rld": use_rld,
                "use_facebn": use_facebn,
                "accs": accs,
                "acc_mean": float(np.mean(accs)),
            }
        )
    return rows


def negative_count_sweep(cfg: dict, dataset: Dataset, n_values=None, seeds=None, progress=None):
    """Accuracy and wall time of the full training as the negative count grows."""
    n_values = list(n_values if n_values is not None else cfg["sweep.n_values"])
    seeds = list(seeds if seeds is not None else cfg["sweep.seeds"])
    protocol = build_protocol(dataset, "verify", cfg["eval.pair_count"], seed=cfg["seed"], split="test")
    teachers = {}
    for seed in seeds:  # teachers are shared; keep them out of the timed section
        if progress:
            progress(f"seed {seed}: teacher")
        teachers[seed], _ = train_teacher(cfg, dataset, seed)
    rows = []
    for n in n_values:
        run_cfg = dict(cfg)
        run_cfg["distill.n_neg"] = int(n)
        accs = []
        start = time.perf_counter()
        for seed in seeds:
            if progress:
                progress(f"n_neg={n} seed={seed}")
            student, _, _ = distill_student(run_cfg, dataset, teachers[seed], seed, mode="aird")
            rep = evaluate_verification(student, dataset, protocol, "lrlr", cfg=cfg)
            accs.append(rep.accuracy)
        rows.append(
            {
                "n_neg": int(n),
                "accs": accs,
                "acc_mean": float(np.mean(accs)),
                "seconds": time.perf_counter() - start,
            }
        )
    return rows
