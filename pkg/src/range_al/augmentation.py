"""Seeded augmentations applied directly on range images and their targets.

Every transform is pure: output is a function of (input, parameters, stream).
Transforms that remove pixels mark them invalid in the channels AND the label
plane, so losses and metrics skip them instead of reading fill values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import BadParam, MissingInstances
from .projection import CH_I, CH_R, IGNORE, RangeImage
from .rng import RngStream


class AugKind(enum.Enum):
    RANDOM_DROPOUT_MASK = "random_dropout_mask"
    COARSE_DROPOUT = "coarse_dropout"
    GAUSSIAN_DEPTH_NOISE = "gaussian_depth_noise"
    GAUSSIAN_REMISSION_NOISE = "gaussian_remission_noise"
    CYCLIC_SHIFT = "cyclic_shift"
    INSTANCE_CUT_PASTE = "instance_cut_paste"


# Published parameter bounds; specs may override explicitly.
DEFAULT_PARAMS = {
    AugKind.RANDOM_DROPOUT_MASK: {"p_min": 0.1, "p_max": 0.5},
    AugKind.COARSE_DROPOUT: {
        "min_holes": 2,
        "max_holes": 5,
        "min_height": 1,
        "max_height": 16,
        "min_width": 1,
        "max_width": 64,
    },
    AugKind.GAUSSIAN_DEPTH_NOISE: {"sigma2_min": 0.05, "sigma2_max": 0.1, "sigma_is_std": False},
    AugKind.GAUSSIAN_REMISSION_NOISE: {"sigma2_min": 0.5, "sigma2_max": 1.0, "sigma_is_std": False},
    AugKind.CYCLIC_SHIFT: {"max_angle_deg": 22.5},
    AugKind.INSTANCE_CUT_PASTE: {"classes": (), "keep_prob": 0.5},
}


@dataclass(frozen=True)
class AugmentationSpec:
    """One transform slot in a pipeline: kind, parameter overrides, gate probability."""

    kind: AugKind
    params: dict = field(default_factory=dict)
    probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise BadParam("probability must lie in [0, 1]")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        # canonical form: sequences are tuples, so specs hash/compare stably
        merged = {k: tuple(v) if isinstance(v, list) else v for k, v in merged.items()}
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind.value, "params": params, "probability": self.probability}

    @staticmethod
    def from_dict(d: dict) -> "AugmentationSpec":
        return AugmentationSpec(kind=AugKind(d["kind"]), params=dict(d["params"]), probability=d["probability"])


def _invalidate(img: RangeImage, mask: np.ndarray) -> None:
    img.channels[mask] = 0.0
    img.labels[mask] = IGNORE
    img.point_index[mask] = -1
    img.instance[mask] = 0
    img.valid[mask] = False


def random_dropout_mask(img: RangeImage, p: float, rng: RngStream) -> RangeImage:
    """Drop each pixel independently with probability p, image and target alike."""
    if not 0.0 <= p <= 1.0:
        raise BadParam(f"dropout probability {p} outside [0, 1]")
    out = img.copy()
    if p == 0.0:
        return out
    drop = rng.generator().random((img.height, img.width)) < p
    _invalidate(out, drop)
    return out


def coarse_dropout_holes(rng: RngStream, height: int, width: int, params: dict):
    """Rectangles (v0, u0, h, w) a coarse-dropout application would mask."""
    gen = rng.generator()
    if params["max_holes"] < 1:
        return []
    n = int(gen.integers(params["min_holes"], params["max_holes"] + 1))
    holes = []
    for _ in range(n):
        h = int(gen.integers(params["min_height"], params["max_height"] + 1))
        w = int(gen.integers(params["min_width"], params["max_width"] + 1))
        h, w = min(h, height), min(w, width)
        v0 = int(gen.integers(0, height - h + 1))
        u0 = int(gen.integers(0, width - w + 1))
        holes.append((v0, u0, h, w))
    return holes


def coarse_dropout(img: RangeImage, rng: RngStream, **overrides) -> RangeImage:
    """Mask out random rectangles in image and target."""
    params = dict(DEFAULT_PARAMS[AugKind.COARSE_DROPOUT])
    params.update(overrides)
    out = img.copy()
    mask = np.zeros((img.height, img.width), dtype=bool)
    for v0, u0, h, w in coarse_dropout_holes(rng, img.height, img.width, params):
        mask[v0 : v0 + h, u0 : u0 + w] = True
    _invalidate(out, mask)
    return out


def _sigma(sigma2: float, sigma_is_std: bool) -> float:
    return float(sigma2) if sigma_is_std else float(np.sqrt(sigma2))


def gaussian_depth_noise(img: RangeImage, sigma2: float, rng: RngStream, sigma_is_std: bool = False) -> RangeImage:
    """Additive zero-mean Gaussian noise on the depth channel of valid pixels."""
    out = img.copy()
    if sigma2 == 0.0:
        return out
    noise = rng.generator().normal(0.0, _sigma(sigma2, sigma_is_std), (img.height, img.width)).astype(np.float32)
    r = out.channels[..., CH_R]
    r[out.valid] = np.maximum(r[out.valid] + noise[out.valid], np.float32(1e-6))
    return out


def gaussian_remission_noise(img: RangeImage, sigma2: float, rng: RngStream, sigma_is_std: bool = False) -> RangeImage:
    """Additive zero-mean Gaussian noise on remission, clamped to [0, 1]."""
    out = img.copy()
    if sigma2 == 0.0:
        return out
    noise = rng.generator().normal(0.0, _sigma(sigma2, sigma_is_std), (img.height, img.width)).astype(np.float32)
    i = out.channels[..., CH_I]
    i[out.valid] = np.clip(i[out.valid] + noise[out.valid], 0.0, 1.0)
    return out


def shift_columns(angle_deg: float, width: int) -> int:
    return int(round(angle_deg / 360.0 * width))


def cyclic_shift(img: RangeImage, angle_deg: float, rng: RngStream | None = None) -> RangeImage:
    """Rotate the scan about the vertical axis: circular column shift of every plane."""
    if abs(angle_deg) > 22.5 + 1e-9:
        raise BadParam(f"shift angle {angle_deg} exceeds 22.5 degrees")
    k = shift_columns(angle_deg, img.width)
    out = img.copy()
    if k == 0:
        return out
    out.channels = np.roll(out.channels, k, axis=1)
    out.labels = np.roll(out.labels, k, axis=1)
    out.valid = np.roll(out.valid, k, axis=1)
    out.point_index = np.roll(out.point_index, k, axis=1)
    out.instance = np.roll(out.instance, k, axis=1)
    return out


def instance_cut_paste(dst: RangeImage, src: RangeImage, classes, rng: RngStream, keep_prob: float = 0.5) -> RangeImage:
    """Copy a random subset of src instances of the given classes into dst.

    A pasted pixel lands only where dst is invalid or strictly behind the
    source point (dst.r > src.r); occluded pixels keep the dst content.
    """
    if not np.any(src.instance > 0):
        raise MissingInstances("source image carries no instance ids")
    out = dst.copy()
    classes = set(int(c) for c in classes)
    if not classes:
        return out

    candidate = src.valid & (src.instance > 0) & np.isin(src.labels, list(classes))
    keys = sorted({(int(c), int(i)) for c, i in zip(src.labels[candidate], src.instance[candidate])})
    if not keys:
        return out
    gen = rng.generator()
    chosen = [key for key in keys if gen.random() < keep_prob]
    if not chosen:
        return out

    paste = np.zeros_like(src.valid)
    for c, i in chosen:
        paste |= candidate & (src.labels == c) & (src.instance == i)
    src_r = src.channels[..., CH_R]
    dst_r = out.channels[..., CH_R]
    paste &= (~out.valid) | (dst_r > src_r)

    out.channels[paste] = src.channels[paste]
    out.labels[paste] = src.labels[paste]
    out.instance[paste] = src.instance[paste]
    out.point_index[paste] = -1  # no corresponding point in dst's cloud
    out.valid[paste] = True
    return out


def apply_spec(spec: AugmentationSpec, img: RangeImage, rng: RngStream, paste_source: RangeImage | None = None) -> RangeImage:
    """Apply one transform with parameters drawn from the spec's ranges."""
    p = spec.params
    gen = rng.generator()
    if spec.kind is AugKind.RANDOM_DROPOUT_MASK:
        prob = float(gen.uniform(p["p_min"], p["p_max"]))
        return random_dropout_mask(img, prob, rng.at_step(rng.step + 1))
    if spec.kind is AugKind.COARSE_DROPOUT:
        return coarse_dropout(img, rng, **{k: p[k] for k in DEFAULT_PARAMS[AugKind.COARSE_DROPOUT]})
    if spec.kind is AugKind.GAUSSIAN_DEPTH_NOISE:
        s2 = float(gen.uniform(p["sigma2_min"], p["sigma2_max"]))
        return gaussian_depth_noise(img, s2, rng.at_step(rng.step + 1), sigma_is_std=p["sigma_is_std"])
    if spec.kind is AugKind.GAUSSIAN_REMISSION_NOISE:
        s2 = float(gen.uniform(p["sigma2_min"], p["sigma2_max"]))
        return gaussian_remission_noise(img, s2, rng.at_step(rng.step + 1), sigma_is_std=p["sigma_is_std"])
    if spec.kind is AugKind.CYCLIC_SHIFT:
        angle = float(gen.uniform(-p["max_angle_deg"], p["max_angle_deg"]))
        return cyclic_shift(img, angle)
    if spec.kind is AugKind.INSTANCE_CUT_PASTE:
        if paste_source is None:
            return img.copy()
        return instance_cut_paste(img, paste_source, p["classes"], rng.at_step(rng.step + 1), keep_prob=p["keep_prob"])
    raise BadParam(f"unknown transform {spec.kind}")


PIPELINE_STRIDE = 16  # stream steps reserved per pipeline slot


def compose(specs, img: RangeImage, rng: RngStream, paste_source: RangeImage | None = None) -> RangeImage:
    """Run a transform pipeline in order, each slot gated by its probability.

    Slot i owns a disjoint block of stream steps (gate first, transform draws
    after), so adding or removing slots never shifts the randomness of
    unrelated ones.
    """
    out = img
    base = rng.step
    for i, spec in enumerate(specs):
        slot = base + PIPELINE_STRIDE * i
        gate = rng.at_step(slot).generator().random()
        if gate < spec.probability:
            out = apply_spec(spec, out, rng.at_step(slot + 1), paste_source=paste_source)
    return out.copy() if out is img else out
