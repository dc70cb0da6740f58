"""Prediction backends producing MC probability tensors for range images.

The built-in backend is a per-pixel multinomial logistic model over a small
handcrafted feature vector (the four channels plus a 3x3 window mean/variance
of depth), trained with SGD and early stopping, with channel dropout standing
in for the usual pre-logits 2D dropout so MC sampling works the same way. A
real segmentation network plugs in through the external backend, which reads
stored MCPT tensor files instead.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .augmentation import compose
from .errors import BadParam, MalformedTensor, MissingPredictions, NoSupervision
from .metrics import confusion, mean_iou
from .projection import CH_R, IGNORE, RangeImage
from .rng import RngStream
from .uncertainty import McProbTensor

NUM_FEATURES = 6
_SCALE = 25.0  # meters; keeps raw coordinates O(1) for SGD

MCPT_MAGIC = b"MCPT"
MCPT_VERSION = 1


@dataclass(frozen=True)
class ScorerConfig:
    """Backend choice, MC sampling, and the training schedule.

    Full-scale defaults follow the published experiment settings; desk-scale
    presets shrink the budget (see presets module).
    """

    kind: str = "builtin"  # builtin | external
    mc_iterations: int = 8
    dropout_rate: float = 0.2
    learning_rate: float = 0.01
    lr_decay: float = 0.99
    weight_decay: float = 0.0001
    batch_size: int = 16
    max_iterations: int = 100000
    eval_period: int = 500
    patience: int = 15
    early_stop_metric: str = "train_miou"
    pixels_per_image: int | None = None  # None = every valid pixel per SGD step
    eval_max_images: int | None = None   # None = evaluate train mIoU on all images
    external_dir: str | None = None

    def __post_init__(self):
        if not 0.0 < self.dropout_rate < 1.0:
            raise BadParam("dropout_rate must lie in (0, 1)")
        if self.mc_iterations < 1:
            raise BadParam("mc_iterations must be >= 1")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return d

    @staticmethod
    def from_dict(d: dict) -> "ScorerConfig":
        return ScorerConfig(**d)


@dataclass
class BuiltinModelState:
    """Linear per-pixel classifier: weights (F, C), bias (C,)."""

    weights: np.ndarray
    bias: np.ndarray
    config: ScorerConfig
    seed: int

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


def create_model(num_classes: int, config: ScorerConfig, seed: int = 0) -> BuiltinModelState:
    gen = rng_mod.derive(seed, rng_mod.DOMAIN_MODEL)
    weights = gen.normal(0.0, 0.01, (NUM_FEATURES, num_classes))
    return BuiltinModelState(weights=weights, bias=np.zeros(num_classes), config=config, seed=seed)


def reset(model):
    """Fresh weights from the seeded initializer; no memory of prior steps."""
    if isinstance(model, BuiltinModelState):
        return create_model(model.num_classes, model.config, model.seed)
    return model


def _box_sums(stack: np.ndarray) -> np.ndarray:
    """3x3 sums with zero padding via integral images, batched over axis 0."""
    n, h, w = stack.shape
    ii = np.zeros((n, h + 2, w + 2), dtype=np.float64)
    ii[:, 1:-1, 1:-1] = stack
    ii = ii.cumsum(axis=1).cumsum(axis=2)
    return ii[:, 2:, 2:] - ii[:, :-2, 2:] - ii[:, 2:, :-2] + ii[:, :-2, :-2]


def features(img: RangeImage) -> np.ndarray:
    """(H*W, F) float32 feature matrix; invalid pixels are all-zero rows."""
    ch = img.channels.astype(np.float64)
    v = img.valid.astype(np.float64)
    r = ch[..., CH_R] * v

    cnt, sum_r, sum_r2 = _box_sums(np.stack([v, r, r * r]))
    safe = np.maximum(cnt, 1.0)
    mean_r = sum_r / safe
    var_r = np.clip(sum_r2 / safe - mean_r * mean_r, 0.0, 50.0)

    # Window stats enter centered/rescaled: the mean as an offset against the
    # pixel's own depth (an edge indicator), the variance as a texture cue.
    f = np.stack(
        [
            ch[..., 0] / _SCALE,
            ch[..., 1] / _SCALE,
            ch[..., 2] / _SCALE,
            (ch[..., 3] - 0.5) * 4.0,
            (mean_r - ch[..., 2] * v) / 5.0,
            var_r / 10.0,
        ],
        axis=-1,
    )
    f *= img.valid[..., None]
    return f.reshape(-1, NUM_FEATURES).astype(np.float32)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward32(model: BuiltinModelState, x32: np.ndarray) -> np.ndarray:
    """float32 softmax forward pass; plenty for prediction and MC sampling."""
    logits = x32 @ model.weights.astype(np.float32) + model.bias.astype(np.float32)
    return _softmax(logits)


def loss_and_grad(weights, bias, x, y, weight_decay: float):
    """Mean cross-entropy over rows plus L2 on weights; analytic gradients.

    x: (N, F), y: (N,) class ids. Returns (loss, grad_w, grad_b).
    """
    n = x.shape[0]
    probs = _softmax(x @ weights + bias)
    eps = 1e-12
    loss = -np.log(probs[np.arange(n), y] + eps).mean() + 0.5 * weight_decay * float((weights**2).sum())
    dz = probs
    dz[np.arange(n), y] -= 1.0
    dz /= n
    grad_w = x.T @ dz + weight_decay * weights
    grad_b = dz.sum(axis=0)
    return float(loss), grad_w, grad_b


def predict_proba(model: BuiltinModelState, feats: np.ndarray, drop_mask: np.ndarray | None = None) -> np.ndarray:
    """(N, C) class probabilities; drop_mask scales kept feature channels."""
    x = feats.astype(np.float64)
    if drop_mask is not None:
        x = x * drop_mask
    return _softmax(x @ model.weights + model.bias)


def predict_classes(model: BuiltinModelState, feats: np.ndarray) -> np.ndarray:
    """(N,) argmax class ids from a clean (dropout-free) forward pass."""
    return _forward32(model, feats.astype(np.float32)).argmax(axis=1)


def _dropout_mask(gen: np.random.Generator, rate: float) -> np.ndarray:
    keep = gen.random(NUM_FEATURES) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def mc_dropout_masks(model: BuiltinModelState, t_iters: int, rng: RngStream, dropout: bool = True) -> np.ndarray:
    """(T, F) float32 scaled keep masks, one per MC pass."""
    if not dropout:
        return np.ones((t_iters, NUM_FEATURES), dtype=np.float32)
    return np.stack(
        [_dropout_mask(rng.at_step(rng.step + t).generator(), model.config.dropout_rate) for t in range(t_iters)]
    ).astype(np.float32)


def predict_mc(model, img: RangeImage, mc_iterations: int | None = None, *, rng: RngStream | None = None,
               dropout: bool = True, feats: np.ndarray | None = None) -> McProbTensor:
    """T stochastic forward passes, one fresh channel-dropout mask each."""
    if not isinstance(model, BuiltinModelState):
        return model.predict_mc(img, mc_iterations)
    t_iters = model.config.mc_iterations if mc_iterations is None else mc_iterations
    if feats is None:
        feats = features(img)
    if rng is None:
        rng = RngStream(model.seed)
    h, w = img.height, img.width
    probs = predict_mc_rows(model, feats, t_iters, rng=rng, dropout=dropout)
    return McProbTensor(probs=probs.reshape(h, w, model.num_classes, t_iters), valid=img.valid.copy())


def predict_mc_rows(model: BuiltinModelState, rows: np.ndarray, t_iters: int, *, rng: RngStream | None = None,
                    dropout: bool = True, masks: np.ndarray | None = None) -> np.ndarray:
    """(N, C, T) float32 probabilities for stacked feature rows.

    All rows share the same T dropout masks (one sampled model per pass);
    pass explicit masks to control them.
    """
    if masks is None:
        if rng is None:
            rng = RngStream(model.seed)
        masks = mc_dropout_masks(model, t_iters, rng, dropout)
    x = rows.astype(np.float32)
    # One matmul for all passes: (T*N, F) @ (F, C).
    xm = (x[None, :, :] * masks[:, None, :]).reshape(t_iters * x.shape[0], NUM_FEATURES)
    probs = _forward32(model, xm).reshape(t_iters, x.shape[0], model.num_classes)
    return np.ascontiguousarray(np.moveaxis(probs, 0, -1))


class EarlyStopper:
    """Stop when the metric has not improved for `patience` evaluations."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_iteration = -1
        self.evals_since_best = 0

    def update(self, iteration: int, metric: float) -> bool:
        """Record one evaluation; returns True when training should stop."""
        if metric > self.best:
            self.best = metric
            self.best_iteration = iteration
            self.evals_since_best = 0
        else:
            self.evals_since_best += 1
        return self.evals_since_best >= self.patience


def _train_miou(model: BuiltinModelState, feats_list, labels_list) -> float:
    cm = None
    for feats, labels in zip(feats_list, labels_list):
        pred = predict_classes(model, feats)
        c = confusion(pred, labels, np.ones_like(labels, dtype=bool), model.num_classes)
        cm = c if cm is None else cm.add(c)
    return mean_iou(cm)


def train(model, labeled, da, config: ScorerConfig | None = None, *, rng: RngStream | None = None):
    """SGD on per-pixel cross-entropy over the labeled images.

    Augmentations (if any) are applied per batch through compose; training
    mIoU is evaluated on clean images every eval_period iterations and drives
    early stopping. Returns (trained model, [(iteration, train_miou), ...]).
    """
    if not isinstance(model, BuiltinModelState):
        return model.train(labeled, da), []
    cfg = model.config if config is None else config
    if not labeled:
        raise NoSupervision("no labeled images")
    if rng is None:
        rng = RngStream(model.seed, step=1)

    # Supervised pixels of each clean image, computed lazily and reused across
    # iterations (augmented images still go through the full feature path).
    clean = [None] * len(labeled)

    def clean_pixels(i: int):
        if clean[i] is None:
            img = labeled[i]
            keep = img.valid.reshape(-1) & (img.labels.reshape(-1) != IGNORE)
            clean[i] = (features(img)[keep], img.labels.reshape(-1)[keep])
        return clean[i]

    n_eval = len(labeled) if cfg.eval_max_images is None else min(cfg.eval_max_images, len(labeled))
    # Spread the evaluation subset across the whole labeled list; a prefix
    # would bias the early-stopping checkpoint toward one corner of the pool.
    candidates = np.unique(np.linspace(0, len(labeled) - 1, n_eval).astype(int))
    eval_ids = [int(i) for i in candidates if clean_pixels(int(i))[1].size]
    if not eval_ids:
        eval_ids = [i for i in range(len(labeled)) if clean_pixels(i)[1].size]
    if not eval_ids:
        raise NoSupervision("labeled images contain no supervised pixel")

    weights = model.weights.copy()
    bias = model.bias.copy()
    stopper = EarlyStopper(cfg.patience)
    lr = cfg.learning_rate
    trace = []
    # Polyak tail averaging: the evaluated (and returned) model is the running
    # mean of the SGD iterates past a short warmup, which strips most of the
    # stochastic-gradient noise from a convex objective.
    warmup = min(100, cfg.max_iterations // 4)
    avg_w, avg_b, n_avg = weights.copy(), bias.copy(), 1
    best = (avg_w.copy(), avg_b.copy())

    for it in range(1, cfg.max_iterations + 1):
        # Wide stride: compose() consumes a block of sub-steps per image.
        stream = rng.at_step(rng.step + it * 1024)
        gen = stream.generator()
        idx = gen.integers(0, len(labeled), size=min(cfg.batch_size, len(labeled)))

        xs, ys = [], []
        for bi in idx:
            if da:
                others = [labeled[int(k)] for k in idx if int(k) != int(bi)]
                src = others[int(gen.integers(0, len(others)))] if others else None
                img = compose(da, labeled[int(bi)], stream.for_sample(int(bi)), paste_source=src)
                keep = img.valid.reshape(-1) & (img.labels.reshape(-1) != IGNORE)
                if not np.any(keep):
                    continue
                f = features(img)[keep]
                y = img.labels.reshape(-1)[keep]
            else:
                f, y = clean_pixels(int(bi))
                if y.size == 0:
                    continue
            if cfg.pixels_per_image is not None and f.shape[0] > cfg.pixels_per_image:
                rows = gen.integers(0, f.shape[0], size=cfg.pixels_per_image)
                f, y = f[rows], y[rows]
            xs.append(f)
            ys.append(y)
        if not xs:
            continue
        x = np.concatenate(xs).astype(np.float64)
        y = np.concatenate(ys)
        x = x * _dropout_mask(gen, cfg.dropout_rate)

        _, gw, gb = loss_and_grad(weights, bias, x, y, cfg.weight_decay)
        weights -= lr * gw
        bias -= lr * gb

        if it == warmup:
            avg_w, avg_b, n_avg = weights.copy(), bias.copy(), 1
        elif it > warmup:
            n_avg += 1
            avg_w += (weights - avg_w) / n_avg
            avg_b += (bias - avg_b) / n_avg

        if it % cfg.eval_period == 0:
            averaged = BuiltinModelState(avg_w, avg_b, cfg, model.seed)
            miou = _train_miou(averaged, [clean_pixels(i)[0] for i in eval_ids], [clean_pixels(i)[1] for i in eval_ids])
            trace.append((it, miou))
            lr *= cfg.lr_decay
            if miou > stopper.best:
                best = (avg_w.copy(), avg_b.copy())
            if stopper.update(it, miou):
                break

    if not trace:
        state = BuiltinModelState(avg_w, avg_b, cfg, model.seed)
        trace.append((0, _train_miou(state, [clean_pixels(i)[0] for i in eval_ids], [clean_pixels(i)[1] for i in eval_ids])))
        best = (avg_w.copy(), avg_b.copy())
    # Early stopping keeps the best evaluated averaged checkpoint.
    return BuiltinModelState(best[0], best[1], cfg, model.seed), trace


# --- external backend --------------------------------------------------------


class ExternalScorer:
    """Serves tensors produced outside the engine, keyed by range-image name."""

    def __init__(self, directory, config: ScorerConfig):
        self.directory = Path(directory)
        self.config = config

    def predict_mc(self, img: RangeImage, mc_iterations: int | None = None) -> McProbTensor:
        t_iters = self.config.mc_iterations if mc_iterations is None else mc_iterations
        if img.name is None:
            raise MissingPredictions("range image has no name to key predictions by")
        path = self.directory / f"{img.name}.mcpt"
        if not path.exists():
            raise MissingPredictions(f"no tensor file {path}")
        tensor = load_external_tensor(path)
        if tensor.mc_iterations < t_iters:
            raise MissingPredictions(f"{path} holds {tensor.mc_iterations} < {t_iters} MC passes")
        return McProbTensor(probs=tensor.probs[..., :t_iters], valid=tensor.valid)

    def train(self, labeled, da):
        return self

    @property
    def num_classes(self) -> int:
        raise BadParam("external scorer has no fixed class count")


def make_scorer(num_classes: int, config: ScorerConfig, seed: int = 0):
    if config.kind == "builtin":
        return create_model(num_classes, config, seed)
    if config.kind == "external":
        if config.external_dir is None:
            raise BadParam("external scorer needs external_dir")
        return ExternalScorer(config.external_dir, config)
    raise BadParam(f"unknown scorer kind {config.kind!r}")


# --- MCPT tensor container ----------------------------------------------------


def store_tensor(t: McProbTensor, path) -> None:
    """Write the binary tensor container (bit-exact round trip)."""
    h, w = t.probs.shape[0], t.probs.shape[1]
    payload = np.ascontiguousarray(t.probs, dtype="<f4").tobytes()
    mask = np.ascontiguousarray(t.valid, dtype=np.uint8).tobytes()
    header = MCPT_MAGIC + struct.pack("<5I", MCPT_VERSION, w, h, t.num_classes, t.mc_iterations)
    Path(path).write_bytes(header + payload + mask)


def load_external_tensor(path) -> McProbTensor:
    """Read a tensor container, validating magic, version, dims and length."""
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != MCPT_MAGIC:
        raise MalformedTensor(f"{path}: bad magic")
    version, w, h, c, t = struct.unpack("<5I", data[4:24])
    if version != MCPT_VERSION:
        raise MalformedTensor(f"{path}: unsupported version {version}")
    if min(w, h, c, t) == 0:
        raise MalformedTensor(f"{path}: zero dimension")
    expect = 24 + w * h * c * t * 4 + w * h
    if len(data) != expect:
        raise MalformedTensor(f"{path}: length {len(data)} != {expect} for dims {(w, h, c, t)}")
    probs = np.frombuffer(data, dtype="<f4", count=w * h * c * t, offset=24).reshape(h, w, c, t)
    valid = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=24 + w * h * c * t * 4)
    return McProbTensor(probs=probs.copy(), valid=valid.reshape(h, w).astype(bool))


# --- range-image container (same binary layout, 7 planes, T=1) ----------------

_RI_PLANES = 7  # x, y, r, i, label, point_index, instance


def write_range_image(img: RangeImage, path) -> None:
    planes = np.empty((img.height, img.width, _RI_PLANES, 1), dtype=np.float32)
    planes[..., 0:4, 0] = img.channels
    planes[..., 4, 0] = img.labels
    planes[..., 5, 0] = img.point_index
    planes[..., 6, 0] = img.instance
    store_tensor(McProbTensor(probs=planes, valid=img.valid), path)


def read_range_image(path) -> RangeImage:
    t = load_external_tensor(path)
    if t.num_classes != _RI_PLANES or t.mc_iterations != 1:
        raise MalformedTensor(f"{path}: not a range-image container")
    planes = t.probs[..., 0]
    return RangeImage(
        channels=planes[..., 0:4].copy(),
        labels=np.rint(planes[..., 4]).astype(np.int32),
        valid=t.valid.copy(),
        point_index=np.rint(planes[..., 5]).astype(np.int32),
        instance=np.rint(planes[..., 6]).astype(np.int32),
        name=Path(path).stem,
    )


# --- model checkpoints ---------------------------------------------------------


def save_model(model: BuiltinModelState, path) -> None:
    """Versioned checkpoint blob for the built-in model."""
    np.savez(
        path,
        version=np.int64(1),
        weights=model.weights,
        bias=model.bias,
        seed=np.int64(model.seed),
        config=np.frombuffer(json.dumps(model.config.to_dict()).encode(), dtype=np.uint8),
    )


def load_model(path) -> BuiltinModelState:
    with np.load(path) as z:
        if int(z["version"]) != 1:
            raise MalformedTensor(f"{path}: unsupported checkpoint version")
        cfg = ScorerConfig.from_dict(json.loads(bytes(z["config"].tobytes()).decode()))
        return BuiltinModelState(weights=z["weights"].copy(), bias=z["bias"].copy(), config=cfg, seed=int(z["seed"]))
