"""Procedural cross-resolution identity dataset and evaluation protocols.

Each identity is a low-dimensional latent (Gaussian blobs, oriented stripes,
a base intensity) rendered analytically onto a pixel grid, so geometric
jitter is exact rather than resampled. Samples are high-resolution images
paired with their downsampled low-resolution views; the test split can pass
through a configurable appearance shift (brightness/contrast/blur/noise) to
model a capture-domain gap.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ProtocolError
from .seeding import substream

DATASET_FORMAT = 1
PROTOCOL_FORMAT = 1

N_BLOBS = 3
N_STROKES = 2


@dataclass
class ShiftConfig:
    brightness: float = 0.0
    contrast: float = 1.0
    blur_sigma: float = 0.0
    noise: float = 0.0

    @property
    def enabled(self) -> bool:
        return self.brightness != 0.0 or self.contrast != 1.0 or self.blur_sigma > 0.0 or self.noise > 0.0


@dataclass
class IdentitySpec:
    id: int
    seed: int
    blobs: np.ndarray  # [N_BLOBS, 4]: cx, cy, sigma, amplitude
    strokes: np.ndarray  # [N_STROKES, 4]: angle, offset, width, amplitude
    base: float

    def feature_vector(self):
        parts = [self.blobs[:, :2].ravel()]
        parts.append(np.cos(self.strokes[:, 0]))
        parts.append(np.sin(self.strokes[:, 0]))
        parts.append([2.0 * self.base])
        return np.concatenate([np.atleast_1d(p) for p in parts])


def _sample_identity(ident: int, seed: int) -> IdentitySpec:
    rng = substream(seed, f"identity-{ident}")
    blobs = np.column_stack(
        [
            rng.uniform(0.2, 0.8, N_BLOBS),
            rng.uniform(0.2, 0.8, N_BLOBS),
            rng.uniform(0.03, 0.09, N_BLOBS),
            rng.uniform(0.15, 0.35, N_BLOBS),
        ]
    )
    strokes = np.column_stack(
        [
            rng.uniform(0.0, math.pi, N_STROKES),
            rng.uniform(-0.25, 0.25, N_STROKES),
            rng.uniform(0.015, 0.04, N_STROKES),
            rng.uniform(0.1, 0.22, N_STROKES),
        ]
    )
    base = rng.uniform(0.1, 0.25)
    return IdentitySpec(id=ident, seed=seed, blobs=blobs, strokes=strokes, base=base)


def sample_identities(num_ids: int, seed: int, min_distance: float = 0.45, twin_distance: float = 0.18):
    """Identity latents in confusable twin pairs.

    Family latents are rejection-sampled to a minimum pairwise distance;
    each family spawns two identities separated by exactly
    ``twin_distance`` in latent space (a blob-geometry offset), so every
    identity has one hard sibling plus well-separated strangers.
    """
    families = []
    attempt = 0
    while len(families) < (num_ids + 1) // 2:
        cand = _sample_identity(attempt, seed)
        attempt += 1
        if attempt > 200 * num_ids:
            raise ConfigError("could not place identities at the requested minimum distance")
        if all(np.linalg.norm(cand.feature_vector() - s.feature_vector()) >= min_distance for s in families):
            families.append(cand)
    specs = []
    for fam in families:
        for twin in (0, 1):
            ident = len(specs)
            if ident >= num_ids:
                break
            blobs = fam.blobs.copy()
            if twin == 1:
                rng = substream(seed, f"twin-{ident}")
                delta = rng.normal(size=(N_BLOBS, 2))
                delta *= twin_distance / np.linalg.norm(delta)
                blobs[:, :2] = blobs[:, :2] + delta
            specs.append(
                IdentitySpec(id=ident, seed=seed, blobs=blobs, strokes=fam.strokes.copy(), base=fam.base)
            )
    return specs


def render(spec: IdentitySpec, size: int, rotation=0.0, shift_xy=(0.0, 0.0), blob_jitter=None, amp_scale=1.0):
    """Evaluate the identity's analytic image on a (rotated, shifted) grid."""
    coords = (np.arange(size) + 0.5) / size
    gx, gy = np.meshgrid(coords, coords, indexing="xy")
    c, s = math.cos(rotation), math.sin(rotation)
    x = c * (gx - 0.5) - s * (gy - 0.5) + 0.5 - shift_xy[0]
    y = s * (gx - 0.5) + c * (gy - 0.5) + 0.5 - shift_xy[1]
    img = np.full((size, size), spec.base)
    blobs = spec.blobs if blob_jitter is None else spec.blobs + blob_jitter
    for cx, cy, sigma, amp in blobs:
        img += amp_scale * amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
    for angle, offset, width, amp in spec.strokes:
        d = math.cos(angle) * (x - 0.5) + math.sin(angle) * (y - 0.5) - offset
        img += amp_scale * amp * np.exp(-(d**2) / (2 * width**2))
    return img


def _gaussian_blur(img, sigma):
    if sigma <= 0:
        return img
    radius = max(1, int(math.ceil(3 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t**2) / (2 * sigma**2))
    k /= k.sum()
    padded = np.pad(img, radius, mode="edge")
    tmp = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, padded)
    out = np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, tmp)
    return out


def apply_shift(img, shift: ShiftConfig, rng):
    out = (img - 0.5) * shift.contrast + 0.5
    out = out + shift.brightness
    out = _gaussian_blur(out, shift.blur_sigma)
    if shift.noise > 0.0:
        out = out + rng.normal(0.0, shift.noise, size=out.shape)
    return out


# --- downsampling -----------------------------------------------------------------


def _catmull_rom(d):
    ad = abs(d)
    if ad <= 1.0:
        return 1.5 * ad**3 - 2.5 * ad**2 + 1.0
    if ad < 2.0:
        return -0.5 * (ad**3 - 5.0 * ad**2 + 8.0 * ad - 4.0)
    return 0.0


_WEIGHT_CACHE: dict = {}


def _resample_matrix(src: int, factor: int, kernel: str):
    key = (src, factor, kernel)
    if key in _WEIGHT_CACHE:
        return _WEIGHT_CACHE[key]
    dst = src // factor
    w = np.zeros((dst, src))
    if kernel == "area":
        for o in range(dst):
            w[o, o * factor : (o + 1) * factor] = 1.0 / factor
    elif kernel == "bicubic":
        for o in range(dst):
            p = (o + 0.5) * factor - 0.5
            i0 = math.floor(p)
            for tap in range(i0 - 1, i0 + 3):
                idx = min(max(tap, 0), src - 1)
                w[o, idx] += _catmull_rom(p - tap)
    else:
        raise ConfigError(f"unknown resampling kernel {kernel!r}")
    _WEIGHT_CACHE[key] = w
    return w


def downsample(hr, factor: int, kernel: str = "bicubic"):
    """Deterministic separable resampling by an integer factor; clamped to [0, 1]."""
    hr = np.asarray(hr, dtype=np.float64)
    h, w = hr.shape[-2], hr.shape[-1]
    if factor < 1 or h % factor or w % factor:
        raise DimensionError(f"factor {factor} does not divide image extents {h}x{w}")
    if factor == 1:
        return hr.copy()
    wm_h = _resample_matrix(h, factor, kernel)
    wm_w = _resample_matrix(w, factor, kernel)
    out = np.einsum("ij,...jk,lk->...il", wm_h, hr, wm_w)
    return np.clip(out, 0.0, 1.0)


# --- dataset ----------------------------------------------------------------------


@dataclass
class Dataset:
    hr: np.ndarray  # [N, 1, H, H]
    lr: np.ndarray  # [N, 1, h, h]
    labels: np.ndarray  # [N] int64
    is_test: np.ndarray  # [N] bool
    shift_applied: np.ndarray  # [N] bool
    meta: dict = field(default_factory=dict)

    @property
    def train_indices(self):
        return np.nonzero(~self.is_test)[0]

    @property
    def test_indices(self):
        return np.nonzero(self.is_test)[0]

    @property
    def num_ids(self):
        return int(np.unique(self.labels).size)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.hr, self.lr, self.labels.astype("<i8"), self.is_test, self.shift_applied):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        hr_bytes = np.ascontiguousarray(self.hr, dtype="<f8").tobytes()
        lr_bytes = np.ascontiguousarray(self.lr, dtype="<f8").tobytes()
        (out / "hr.f64").write_bytes(hr_bytes)
        (out / "lr.f64").write_bytes(lr_bytes)
        manifest = {
            "format": DATASET_FORMAT,
            "meta": self.meta,
            "num_samples": int(self.labels.size),
            "hr_shape": list(self.hr.shape),
            "lr_shape": list(self.lr.shape),
            "labels": self.labels.tolist(),
            "is_test": self.is_test.astype(int).tolist(),
            "shift_applied": self.shift_applied.astype(int).tolist(),
            "checksums": {
                "hr.f64": hashlib.sha256(hr_bytes).hexdigest(),
                "lr.f64": hashlib.sha256(lr_bytes).hexdigest(),
                "dataset": self.checksum(),
            },
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, in_dir) -> "Dataset":
        src = Path(in_dir)
        manifest = json.loads((src / "manifest.json").read_text())
        if manifest["format"] != DATASET_FORMAT:
            raise ConfigError(f"unsupported dataset format {manifest['format']}")
        hr_bytes = (src / "hr.f64").read_bytes()
        lr_bytes = (src / "lr.f64").read_bytes()
        for name, blob in (("hr.f64", hr_bytes), ("lr.f64", lr_bytes)):
            if hashlib.sha256(blob).hexdigest() != manifest["checksums"][name]:
                raise ConfigError(f"checksum mismatch for {name}")
        hr = np.frombuffer(hr_bytes, dtype="<f8").reshape(manifest["hr_shape"]).astype(np.float64)
        lr = np.frombuffer(lr_bytes, dtype="<f8").reshape(manifest["lr_shape"]).astype(np.float64)
        return cls(
            hr=hr,
            lr=lr,
            labels=np.asarray(manifest["labels"], dtype=np.int64),
            is_test=np.asarray(manifest["is_test"], dtype=bool),
            shift_applied=np.asarray(manifest["shift_applied"], dtype=bool),
            meta=manifest["meta"],
        )


# intra-class variation constants, calibrated once against the acceptance
# margins (teacher still separates the train split; the low-resolution task
# stays hard enough that transfer from the teacher has headroom)
JITTER = {
    "rotation": 0.25,
    "translation": 0.08,
    "blob_sigma": 0.025,
    "amp_lo": 0.85,
    "amp_hi": 1.15,
    "illum_lo": 0.85,
    "illum_hi": 1.15,
    "noise": 0.035,
}


def _render_sample(spec: IdentitySpec, hr_size: int, rng):
    rotation = rng.uniform(-JITTER["rotation"], JITTER["rotation"])
    shift_xy = rng.uniform(-JITTER["translation"], JITTER["translation"], size=2)
    blob_jitter = np.zeros((N_BLOBS, 4))
    blob_jitter[:, :2] = rng.normal(0.0, JITTER["blob_sigma"], size=(N_BLOBS, 2))
    amp_scale = rng.uniform(JITTER["amp_lo"], JITTER["amp_hi"])
    illum = rng.uniform(JITTER["illum_lo"], JITTER["illum_hi"])
    img = render(spec, hr_size, rotation, shift_xy, blob_jitter, amp_scale)
    img = illum * img + rng.normal(0.0, JITTER["noise"], size=img.shape)
    return img


def generate_dataset(
    num_ids: int,
    samples_per_id: int,
    seed: int,
    shift: ShiftConfig | None = None,
    hr_size: int = 32,
    lr_size: int = 8,
    test_samples_per_id: int = 8,
    kernel: str = "bicubic",
) -> Dataset:
    """Deterministic dataset: train samples clean, test samples optionally shifted.

    ``samples_per_id`` counts training samples; the test split holds
    ``test_samples_per_id`` additional samples per identity.
    """
    if num_ids < 2:
        raise ConfigError(f"need at least 2 identities, got {num_ids}")
    if samples_per_id < 2:
        raise ConfigError(f"need at least 2 samples per identity, got {samples_per_id}")
    if test_samples_per_id < 1:
        raise ConfigError("need at least 1 test sample per identity")
    if hr_size % lr_size:
        raise DimensionError(f"lr size {lr_size} must divide hr size {hr_size}")
    shift = shift or ShiftConfig()
    factor = hr_size // lr_size
    specs = sample_identities(num_ids, seed)

    hr_list, labels, is_test, shifted = [], [], [], []
    for spec in specs:
        for split, count in (("train", samples_per_id), ("test", test_samples_per_id)):
            for k in range(count):
                rng = substream(seed, f"sample-{spec.id}-{split}-{k}")
                img = _render_sample(spec, hr_size, rng)
                apply = split == "test" and shift.enabled
                if apply:
                    img = apply_shift(img, shift, rng)
                hr_list.append(np.clip(img, 0.0, 1.0))
                labels.append(spec.id)
                is_test.append(split == "test")
                shifted.append(apply)
    hr = np.stack(hr_list)[:, None, :, :]
    lr = downsample(hr, factor, kernel)
    meta = {
        "num_ids": num_ids,
        "samples_per_id": samples_per_id,
        "test_samples_per_id": test_samples_per_id,
        "seed": seed,
        "hr_size": hr_size,
        "lr_size": lr_size,
        "kernel": kernel,
        "shift": asdict(shift),
    }
    return Dataset(
        hr=hr,
        lr=lr,
        labels=np.asarray(labels, dtype=np.int64),
        is_test=np.asarray(is_test, dtype=bool),
        shift_applied=np.asarray(shifted, dtype=bool),
        meta=meta,
    )


# --- protocols --------------------------------------------------------------------


@dataclass
class VerifyProtocol:
    pairs: np.ndarray  # [P, 2] int64 sample indices
    same: np.ndarray  # [P] bool


@dataclass
class IdentifyProtocol:
    gallery: np.ndarray  # int64 sample indices
    probes: np.ndarray  # int64 sample indices


def build_protocol(dataset: Dataset, mode: str, pair_count: int = 0, seed: int = 0, split: str = "test"):
    """Balanced verification pairs or a gallery/probe identification split."""
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    idx = dataset.train_indices if split == "train" else dataset.test_indices
    labels = dataset.labels
    if mode == "verify":
        if pair_count < 2 or pair_count % 2:
            raise ConfigError(f"pair_count must be a positive even number, got {pair_count}")
        half = pair_count // 2
        pos = [(a, b) for ii, a in enumerate(idx) for b in idx[ii + 1 :] if labels[a] == labels[b]]
        neg = [(a, b) for ii, a in enumerate(idx) for b in idx[ii + 1 :] if labels[a] != labels[b]]
        if len(pos) < half:
            raise ConfigError(f"requested {half} positive pairs but only {len(pos)} exist in the {split} split")
        if len(neg) < half:
            raise ConfigError(f"requested {half} negative pairs but only {len(neg)} exist in the {split} split")
        rng = substream(seed, "protocol-verify")
        pos_pick = rng.choice(len(pos), size=half, replace=False)
        neg_pick = rng.choice(len(neg), size=half, replace=False)
        pairs = np.array([pos[i] for i in sorted(pos_pick)] + [neg[i] for i in sorted(neg_pick)], dtype=np.int64)
        same = np.array([True] * half + [False] * half)
        return VerifyProtocol(pairs=pairs, same=same)
    if mode == "identify":
        rng = substream(seed, "protocol-identify")
        gallery, probes = [], []
        for lab in np.unique(labels[idx]):
            members = idx[labels[idx] == lab]
            order = rng.permutation(members.size)
            members = members[order]
            n_gal = max(1, int(math.ceil(members.size / 2)))
            gallery.extend(members[:n_gal])
            probes.extend(members[n_gal:])
        return IdentifyProtocol(gallery=np.asarray(sorted(gallery), dtype=np.int64), probes=np.asarray(sorted(probes), dtype=np.int64))
    raise ConfigError(f"unknown protocol mode {mode!r}")


def save_protocol(protocol, path):
    lines = []
    if isinstance(protocol, VerifyProtocol):
        lines.append(f"# aird-protocol {PROTOCOL_FORMAT} mode=verify")
        for (a, b), s in zip(protocol.pairs, protocol.same):
            lines.append(f"{a} {b} {int(s)}")
    elif isinstance(protocol, IdentifyProtocol):
        lines.append(f"# aird-protocol {PROTOCOL_FORMAT} mode=identify")
        lines.extend(f"g {i}" for i in protocol.gallery)
        lines.extend(f"p {i}" for i in protocol.probes)
    else:
        raise ProtocolError(f"unknown protocol type {type(protocol).__name__}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_protocol(path):
    lines = Path(path).read_text().strip().splitlines()
    if not lines or not lines[0].startswith("# aird-protocol"):
        raise ProtocolError(f"{path} is not a protocol file")
    header = lines[0].split()
    mode = dict(kv.split("=") for kv in header[3:])["mode"] if len(header) > 3 else header[-1].split("=")[-1]
    body = [ln for ln in lines[1:] if ln and not ln.startswith("#")]
    if mode == "verify":
        rows = [ln.split() for ln in body]
        pairs = np.array([(int(a), int(b)) for a, b, _ in rows], dtype=np.int64)
        same = np.array([bool(int(s)) for _, _, s in rows])
        return VerifyProtocol(pairs=pairs, same=same)
    if mode == "identify":
        gallery = [int(ln.split()[1]) for ln in body if ln.startswith("g ")]
        probes = [int(ln.split()[1]) for ln in body if ln.startswith("p ")]
        return IdentifyProtocol(gallery=np.asarray(gallery, dtype=np.int64), probes=np.asarray(probes, dtype=np.int64))
    raise ProtocolError(f"unknown protocol mode {mode!r} in {path}")


def load_image_directory(root, hr_size: int = 32, lr_size: int = 8, kernel: str = "bicubic") -> Dataset:
    """Import a directory of 8-bit grayscale images (one subdirectory per identity)."""
    try:
        from PIL import Image
    except ImportError as exc:
        raise ConfigError("image import needs Pillow (pip install aird[images])") from exc
    root = Path(root)
    ident_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if len(ident_dirs) < 2:
        raise ConfigError("need at least 2 identity subdirectories")
    hr_list, labels = [], []
    for lab, d in enumerate(ident_dirs):
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".pgm"))
        for f in files:
            img = np.asarray(Image.open(f).convert("L"), dtype=np.float64) / 255.0
            if img.shape != (hr_size, hr_size):
                raise DimensionError(f"{f} has shape {img.shape}, expected {(hr_size, hr_size)}")
            hr_list.append(img)
            labels.append(lab)
    if not hr_list:
        raise ConfigError(f"no PNG/PGM images found under {root}")
    hr = np.stack(hr_list)[:, None, :, :]
    lr = downsample(hr, hr_size // lr_size, kernel)
    n = len(labels)
    return Dataset(
        hr=hr,
        lr=lr,
        labels=np.asarray(labels, dtype=np.int64),
        is_test=np.zeros(n, dtype=bool),
        shift_applied=np.zeros(n, dtype=bool),
        meta={"source": str(root), "hr_size": hr_size, "lr_size": lr_size, "kernel": kernel},
    )
