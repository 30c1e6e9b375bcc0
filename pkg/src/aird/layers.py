"""Network layers, the margin-softmax head, and the checkpoint format.

A ``Network`` is a stack of conv blocks (conv -> batchnorm -> relu -> pool)
followed by a linear embedding head and a cosine classifier. Batch norm
supports three statistic modes:

* ``train``: normalize with batch statistics and blend them into the running
  statistics with the training momentum;
* ``eval``: normalize with the stored running statistics, mutating nothing;
* ``adapt``: blend batch statistics into the running statistics with the
  adaptation momentum, then normalize with the updated running statistics.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct

import numpy as np

from . import _kernels as K
from . import tensor as T
from .errors import BatchSizeError, DimensionError, NormalizationError
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

MODES = ("train", "eval", "adapt")


def kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _im2col_op(x: Tensor, kh, kw, stride, pad) -> Tensor:
    b, c, h, w = x.data.shape
    cols = K.im2col(np.ascontiguousarray(x.data), kh, kw, stride, pad)

    def bw(g):
        T.accumulate_grad(x, K.col2im(np.ascontiguousarray(g), b, c, h, w, kh, kw, stride, pad))

    return T.make_op(cols, (x,), bw)


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    b, c, h, w = x.data.shape
    if h < k or w < k:
        raise DimensionError(f"pool window {k} larger than input {h}x{w}")
    out, arg = K.maxpool2d(np.ascontiguousarray(x.data), k, stride)

    def bw(g):
        T.accumulate_grad(x, K.maxpool2d_backward(np.ascontiguousarray(g), arg, k, stride, h, w))

    return T.make_op(out, (x,), bw)


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel, stride=1, pad=0, rng=None):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = in_ch * kernel * kernel
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in), requires_grad=True)
        bound = 1.0 / math.sqrt(fan_in)
        self.bias = Tensor(rng.uniform(-bound, bound, size=out_ch), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.data.shape
        if c != self.in_ch:
            raise DimensionError(f"conv expects {self.in_ch} channels, got {c}")
        k = self.kernel
        if h + 2 * self.pad < k or w + 2 * self.pad < k:
            raise DimensionError(f"conv kernel {k} larger than padded input {h}x{w}")
        oh, ow = K.conv_out_size(h, w, k, k, self.stride, self.pad)
        cols = _im2col_op(x, k, k, self.stride, self.pad)
        wmat = T.reshape(self.weight, (self.out_ch, c * k * k))
        out = T.matmul(cols, T.transpose(wmat))
        out = T.add(out, self.bias)
        out = T.reshape(out, (b, oh, ow, self.out_ch))
        return T.transpose(out, (0, 3, 1, 2))


class BatchNorm2d:
    """Per-channel normalization over [B, C, H, W] (or [B, C]) activations."""

    def __init__(self, channels, eps=BN_EPS, momentum=BN_MOMENTUM):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def _axes_and_shape(self, x):
        if x.ndim == 2:
            return (0,), (1, self.channels)
        if x.ndim == 4:
            return (0, 2, 3), (1, self.channels, 1, 1)
        raise DimensionError(f"batchnorm expects 2-D or 4-D input, got {x.ndim}-D")

    def update_running(self, batch_mean, batch_var, blend):
        """running <- (1 - blend) * running + blend * batch."""
        if blend == 0.0:
            return
        self.running_mean = (1.0 - blend) * self.running_mean + blend * batch_mean
        self.running_var = (1.0 - blend) * self.running_var + blend * batch_var

    def forward(self, x: Tensor, mode="eval", adapt_blend=None, adapt_unbiased=False) -> Tensor:
        if mode not in MODES:
            raise ValueError(f"unknown batchnorm mode {mode!r}")
        axes, bshape = self._axes_and_shape(x.data)
        if x.data.shape[1] != self.channels:
            raise DimensionError(f"batchnorm expects {self.channels} channels, got {x.data.shape[1]}")
        scale = T.reshape(self.scale, bshape)
        shift = T.reshape(self.shift, bshape)
        if mode == "train":
            if x.data.shape[0] < 2:
                raise BatchSizeError("batchnorm train mode needs a batch of at least 2")
            mu = T.tmean(x, axis=axes, keepdims=True)
            var = T.tmean(T.mul(T.sub(x, mu), T.sub(x, mu)), axis=axes, keepdims=True)
            xhat = T.div(T.sub(x, mu), T.sqrt(T.add(var, Tensor(self.eps))))
            self.update_running(mu.data.reshape(-1), var.data.reshape(-1), self.momentum)
            return T.add(T.mul(scale, xhat), shift)
        if mode == "adapt":
            if x.data.shape[0] < 2:
                raise BatchSizeError("batchnorm adapt mode needs a batch of at least 2")
            if adapt_blend is None:
                raise ValueError("adapt mode needs an adapt_blend value")
            bm = np.mean(x.data, axis=axes)
            bv = np.var(x.data, axis=axes, ddof=1 if adapt_unbiased else 0)
            self.update_running(bm, bv, adapt_blend)
        rm = Tensor(self.running_mean.reshape(bshape))
        rv = Tensor(self.running_var.reshape(bshape))
        xhat = T.div(T.sub(x, rm), T.sqrt(T.add(rv, Tensor(self.eps))))
        return T.add(T.mul(scale, xhat), shift)


class Linear:
    def __init__(self, in_dim, out_dim, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(kaiming_uniform(rng, (out_dim, in_dim), in_dim), requires_grad=True)
        bound = 1.0 / math.sqrt(in_dim)
        self.bias = Tensor(rng.uniform(-bound, bound, size=out_dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, T.transpose(self.weight)), self.bias)


def l2_normalize_rows(x: Tensor, what="embedding") -> Tensor:
    norms = np.sqrt(np.sum(x.data * x.data, axis=-1))
    if np.any(norms < 1e-12):
        raise NormalizationError(f"zero-norm {what} cannot be normalized")
    sq = T.tsum(T.mul(x, x), axis=-1, keepdims=True)
    return T.div(x, T.sqrt(sq))


def margin_softmax_logits(f: Tensor, class_weights: Tensor, labels, margin: float, scale: float) -> Tensor:
    """Cosine logits with an additive angular margin on the label class.

    With margin 0 (or no labels) this is exactly scale * cosine.
    """
    fn = l2_normalize_rows(f, "embedding")
    wn = l2_normalize_rows(class_weights, "class weight")
    cos = T.clamp(T.matmul(fn, T.transpose(wn)), -1.0, 1.0)
    if labels is None or margin == 0.0:
        return T.mul(Tensor(scale), cos)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(cos.data.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    cos_m, sin_m = math.cos(margin), math.sin(margin)
    sin = T.sqrt(T.clamp(T.sub(Tensor(1.0), T.mul(cos, cos)), 0.0, 1.0))
    phi = T.sub(T.mul(cos, Tensor(cos_m)), T.mul(sin, Tensor(sin_m)))
    # where theta + margin would pass pi, fall back to a linear penalty
    usable = (cos.data > math.cos(math.pi - margin)).astype(np.float64)
    fallback = T.sub(cos, Tensor(margin * math.sin(margin)))
    adjusted = T.add(T.mul(Tensor(usable), phi), T.mul(Tensor(1.0 - usable), fallback))
    mixed = T.add(T.mul(Tensor(onehot), adjusted), T.mul(Tensor(1.0 - onehot), cos))
    return T.mul(Tensor(scale), mixed)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood via a numerically stable log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    m = Tensor(np.max(logits.data, axis=-1, keepdims=True))  # constant shift
    z = T.sub(logits, m)
    lse = T.add(T.log(T.tsum(T.exp(z), axis=-1, keepdims=True)), m)
    logp = T.sub(logits, lse)
    onehot = np.zeros(logits.data.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    picked = T.tsum(T.mul(logp, Tensor(onehot)), axis=-1)
    return T.neg(T.tmean(picked))


class Network:
    """Conv backbone + embedding head + cosine classifier.

    The architecture dict is the canonical descriptor stored in checkpoints:
    input_hw, in_channels, blocks (conv channels per block), kernel, pool,
    embed_dim, num_classes, margin, scale.
    """

    def __init__(self, arch: dict, rng=None):
        self.arch = dict(arch)
        rng = rng or np.random.default_rng(0)
        hw = arch["input_hw"]
        in_ch = arch.get("in_channels", 1)
        kernel = arch.get("kernel", 3)
        pool = arch.get("pool", 2)
        self.blocks = []
        ch = in_ch
        for out_ch in arch["blocks"]:
            conv = Conv2d(ch, out_ch, kernel, stride=1, pad=kernel // 2, rng=rng)
            bn = BatchNorm2d(out_ch)
            self.blocks.append((conv, bn))
            ch = out_ch
            hw //= pool
        if hw < 1:
            raise DimensionError("too many pooling stages for the input resolution")
        self.pool = pool
        self.flat_dim = ch * hw * hw
        self.embed = Linear(self.flat_dim, arch["embed_dim"], rng=rng)
        self.classifier = Tensor(
            kaiming_uniform(rng, (arch["num_classes"], arch["embed_dim"]), arch["embed_dim"]),
            requires_grad=True,
        )

    # --- parameter bookkeeping -------------------------------------------------
    def parameters(self):
        """Stable name -> Tensor mapping; names are the checkpoint manifest."""
        out = {}
        for i, (conv, bn) in enumerate(self.blocks):
            out[f"block{i}.conv.weight"] = conv.weight
            out[f"block{i}.conv.bias"] = conv.bias
            out[f"block{i}.bn.scale"] = bn.scale
            out[f"block{i}.bn.shift"] = bn.shift
        out["embed.weight"] = self.embed.weight
        out["embed.bias"] = self.embed.bias
        out["classifier.weight"] = self.classifier
        return out

    def bn_layers(self):
        return {f"block{i}.bn": bn for i, (_, bn) in enumerate(self.blocks)}

    def set_requires_grad(self, flag: bool):
        for p in self.parameters().values():
            p.requires_grad = flag

    def forward_embed(self, x, mode="eval", adapt_blend=None, bn_filter=None, adapt_unbiased=False):
        """Returns (embedding [B, d], plain cosine logits [B, c])."""
        if mode not in MODES:
            raise ValueError(f"unknown forward mode {mode!r}")
        t = x if isinstance(x, Tensor) else Tensor(x)
        if t.data.ndim != 4:
            raise DimensionError(f"expected [B,C,H,W] input, got shape {t.data.shape}")
        hw = self.arch["input_hw"]
        if t.data.shape[2] != hw or t.data.shape[3] != hw:
            raise DimensionError(
                f"input resolution mismatch: expected {hw}x{hw}, got {t.data.shape[2]}x{t.data.shape[3]}"
            )
        for i, (conv, bn) in enumerate(self.blocks):
            t = conv.forward(t)
            bn_mode = mode
            if mode == "adapt" and bn_filter is not None and f"block{i}.bn" not in bn_filter:
                bn_mode = "eval"
            t = bn.forward(t, mode=bn_mode, adapt_blend=adapt_blend, adapt_unbiased=adapt_unbiased)
            t = T.relu(t)
            t = maxpool2d(t, self.pool, self.pool)
        b = t.data.shape[0]
        t = T.reshape(t, (b, self.flat_dim))
        f = self.embed.forward(t)
        logits = margin_softmax_logits(f, self.classifier, None, 0.0, self.arch["scale"])
        return f, logits

    def margin_logits(self, f: Tensor, labels) -> Tensor:
        return margin_softmax_logits(f, self.classifier, labels, self.arch["margin"], self.arch["scale"])

    def state_signature(self) -> str:
        """Hash of all parameters and running statistics."""
        h = hashlib.sha256()
        for name, p in sorted(self.parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        for name, bn in sorted(self.bn_layers().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(bn.running_mean).tobytes())
            h.update(np.ascontiguousarray(bn.running_var).tobytes())
        return h.hexdigest()

    def weight_signature(self) -> str:
        """Hash of learned parameters only (running statistics excluded)."""
        h = hashlib.sha256()
        for name, p in sorted(self.parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def clone(self) -> "Network":
        dup = Network(self.arch)
        src, dst = self.parameters(), dup.parameters()
        for name in src:
            dst[name].data = src[name].data.copy()
        for name, bn in self.bn_layers().items():
            dbn = dup.bn_layers()[name]
            dbn.running_mean = bn.running_mean.copy()
            dbn.running_var = bn.running_var.copy()
        return dup


# --- checkpoint format ----------------------------------------------------------
# magic "AIRD" | u32 format | u32 len + architecture JSON | u32 len + manifest
# text ("name shape,shape,..." per line) | f64 LE parameter blocks in manifest
# order | f64 LE running mean/var blocks per batchnorm layer in layer order.

CHECKPOINT_MAGIC = b"AIRD"
CHECKPOINT_FORMAT = 1


def save_checkpoint(net: Network, path):
    params = net.parameters()
    manifest_lines = [f"{name} {','.join(map(str, p.data.shape))}" for name, p in params.items()]
    manifest = "\n".join(manifest_lines).encode()
    arch = json.dumps(net.arch, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_FORMAT))
        fh.write(struct.pack("<I", len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for p in params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        for bn in net.bn_layers().values():
            fh.write(np.ascontiguousarray(bn.running_mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(bn.running_var, dtype="<f8").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (fmt,) = struct.unpack("<I", fh.read(4))
        if fmt != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {fmt}")
        (alen,) = struct.unpack("<I", fh.read(4))
        arch = json.loads(fh.read(alen).decode())
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = fh.read(mlen).decode().splitlines()
        net = Network(arch)
        params = net.parameters()
        if [line.split(" ")[0] for line in manifest] != list(params.keys()):
            raise ValueError("checkpoint manifest does not match the architecture")
        for line in manifest:
            name, shape_s = line.split(" ")
            shape = tuple(int(s) for s in shape_s.split(","))
            n = int(np.prod(shape))
            buf = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            params[name].data = buf.astype(np.float64)
        for bn in net.bn_layers().values():
            bn.running_mean = np.frombuffer(fh.read(8 * bn.channels), dtype="<f8").astype(np.float64)
            bn.running_var = np.frombuffer(fh.read(8 * bn.channels), dtype="<f8").astype(np.float64)
    return net
