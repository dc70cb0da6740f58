"""The active-learning orchestrator: pools, acquisition steps, and TT-DA analysis.

A run is a sequential state machine: at each step the model is reset and
retrained on the labeled pool, the unlabeled pool is scored and ranked, the
top-budget samples move into the labeled pool, and test metrics are logged.
The "oracle" is the stored ground truth: acquiring a sample simply unlocks
its labels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from . import scorer as scorer_mod
from .augmentation import AugmentationSpec
from .dataset_io import AlRunRecord, StepRecord
from .errors import BadParam, EmptyPool, PoolTooLarge
from .metrics import confusion, mean_iou
from .projection import RangeImage
from .rng import RngStream
from .uncertainty import (
    HeuristicKind,
    McProbTensor,
    SampleScore,
    aggregate,
    bald_map,
    heuristic_map,
    rank_and_select,
    variance_map,
)

DOMAIN_TRAIN = 0x7A311
DOMAIN_SCORE = 0x5C0FE
DOMAIN_SELECT = 0x5E1EC7
DOMAIN_TEST = 0x7E57
DOMAIN_TTDA = 0x77DA
DOMAIN_MODEL_SEED = 0xF00D


@dataclass
class PoolState:
    """Disjoint labeled/unlabeled index sets over the sample universe."""

    labeled: set
    unlabeled: set
    universe: frozenset

    def check(self) -> None:
        assert not (self.labeled & self.unlabeled)
        assert self.labeled | self.unlabeled == set(self.universe)


@dataclass
class AlData:
    """In-memory dataset a run operates on."""

    pool_images: list
    test_images: list
    num_classes: int
    pool_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)

    def __post_init__(self):
        if not self.pool_ids:
            self.pool_ids = list(range(len(self.pool_images)))
        if not self.test_ids:
            self.test_ids = list(range(len(self.test_images)))


@dataclass(frozen=True)
class AlConfig:
    init_size: int
    budget: int
    steps: int
    heuristic: HeuristicKind = HeuristicKind.RANDOM
    da: tuple = ()
    scorer: scorer_mod.ScorerConfig = field(default_factory=scorer_mod.ScorerConfig)
    seed: int = 0
    aggregation: str = "sum"

    def to_dict(self) -> dict:
        return {
            "init_size": self.init_size,
            "budget": self.budget,
            "steps": self.steps,
            "heuristic": self.heuristic.value,
            "da": [s.to_dict() for s in self.da],
            "scorer": self.scorer.to_dict(),
            "seed": self.seed,
            "aggregation": self.aggregation,
        }

    @staticmethod
    def from_dict(d: dict) -> "AlConfig":
        return AlConfig(
            init_size=d["init_size"],
            budget=d["budget"],
            steps=d["steps"],
            heuristic=HeuristicKind(d["heuristic"]),
            da=tuple(AugmentationSpec.from_dict(s) for s in d["da"]),
            scorer=scorer_mod.ScorerConfig.from_dict(d["scorer"]),
            seed=d["seed"],
            aggregation=d["aggregation"],
        )


def init_pools(universe, init_size: int, seed: int) -> PoolState:
    """Uniform random initial labeled set; the rest stays unlabeled."""
    ids = sorted(int(i) for i in universe)
    if init_size > len(ids):
        raise PoolTooLarge(f"init {init_size} > universe {len(ids)}")
    gen = rng_mod.derive(seed, rng_mod.DOMAIN_INIT_POOL)
    labeled = set(int(i) for i in gen.choice(ids, size=init_size, replace=False))
    return PoolState(labeled=labeled, unlabeled=set(ids) - labeled, universe=frozenset(ids))


class _FeatureCache:
    """Per-sample feature matrices; static across steps for clean images."""

    def __init__(self, images):
        self.images = images
        self._cache = {}

    def get(self, idx: int):
        if idx not in self._cache:
            self._cache[idx] = scorer_mod.features(self.images[idx])
        return self._cache[idx]


def _subseed(seed: int, domain: int, step: int) -> int:
    return int(rng_mod.derive(seed, domain, step).integers(0, 2**63 - 1))


def _score_unlabeled(model, data, state, cfg, step, cache, chunk: int = 128):
    """Aggregated heuristic score for every unlabeled sample.

    Dropout masks are keyed per (seed, step, sample_id), so results do not
    depend on chunking or evaluation order. Built-in models score a chunk of
    samples with one stacked forward pass and one stacked map evaluation.
    """
    t_iters = cfg.scorer.mc_iterations
    base = _subseed(cfg.seed, DOMAIN_SCORE, step)
    ids = sorted(state.unlabeled)

    if not isinstance(model, scorer_mod.BuiltinModelState):
        scores = []
        for sid in ids:
            tensor = scorer_mod.predict_mc(model, data.pool_images[sid], t_iters)
            m = heuristic_map(cfg.heuristic, tensor)
            scores.append(SampleScore(sample_id=sid, score=aggregate(m, cfg.aggregation)))
        return scores

    scores = []
    for start in range(0, len(ids), chunk):
        batch = ids[start : start + chunk]
        rows = np.stack([cache.get(sid) for sid in batch])           # (S, N, F)
        valid = np.stack([data.pool_images[sid].valid.reshape(-1) for sid in batch])
        masks = np.stack(
            [scorer_mod.mc_dropout_masks(model, t_iters, RngStream(base, sample_id=sid)) for sid in batch]
        )                                                            # (S, T, F)
        s, n, _ = rows.shape
        xm = (rows[:, None, :, :] * masks[:, :, None, :]).reshape(s * t_iters * n, -1)
        probs = scorer_mod._forward32(model, xm).reshape(s, t_iters, n, model.num_classes)
        probs = np.ascontiguousarray(np.moveaxis(probs, 1, -1))      # (S, N, C, T)

        tensor = McProbTensor(probs=probs.reshape(1, s * n, model.num_classes, t_iters).astype(np.float64),
                              valid=valid.reshape(1, s * n))
        m = heuristic_map(cfg.heuristic, tensor)
        per_px = np.where(valid, m.scores.reshape(s, n), 0.0)
        if cfg.aggregation == "sum":
            agg = per_px.sum(axis=1)
        else:
            counts = np.maximum(valid.sum(axis=1), 1)
            agg = per_px.sum(axis=1) / counts
        scores.extend(SampleScore(sample_id=sid, score=float(a)) for sid, a in zip(batch, agg))
    return scores


def _test_metrics(model, data, cfg, step, cache, chunk: int = 48):
    """(test mIoU, mean variance, mean BALD) over the test set.

    Built-in models are evaluated in stacked chunks; each step uses one set of
    T dropout masks shared across the whole split, keyed by (seed, step).
    """
    t_iters = cfg.scorer.mc_iterations
    base = _subseed(cfg.seed, DOMAIN_TEST, step)
    cm = None
    var_sum = bald_sum = 0.0
    n_valid = 0

    if not isinstance(model, scorer_mod.BuiltinModelState):
        for img in data.test_images:
            tensor = scorer_mod.predict_mc(model, img, t_iters)
            pred = tensor.probs.mean(axis=3).argmax(axis=2)
            c = confusion(pred, img.labels, img.valid, data.num_classes)
            cm = c if cm is None else cm.add(c)
            vm, bm = variance_map(tensor), bald_map(tensor)
            var_sum += float(vm.scores[vm.valid].sum())
            bald_sum += float(bm.scores[bm.valid].sum())
            n_valid += int(vm.valid.sum())
        miou = mean_iou(cm)
        return miou, (var_sum / n_valid if n_valid else 0.0), (bald_sum / n_valid if n_valid else 0.0)

    for start in range(0, len(data.test_images), chunk):
        imgs = data.test_images[start : start + chunk]
        rows = np.concatenate([cache.get(start + j) for j in range(len(imgs))])
        labels = np.concatenate([im.labels.reshape(-1) for im in imgs])
        valid = np.concatenate([im.valid.reshape(-1) for im in imgs])

        pred = scorer_mod.predict_classes(model, rows)
        c = confusion(pred, labels, valid, data.num_classes)
        cm = c if cm is None else cm.add(c)

        probs = scorer_mod.predict_mc_rows(model, rows, t_iters, rng=RngStream(base))
        tensor = McProbTensor(probs=probs[None].astype(np.float64), valid=valid[None])
        vm, bm = variance_map(tensor), bald_map(tensor)
        var_sum += float(vm.scores[vm.valid].sum())
        bald_sum += float(bm.scores[bm.valid].sum())
        n_valid += int(valid.sum())

    miou = mean_iou(cm)
    if n_valid == 0:
        return miou, 0.0, 0.0
    return miou, var_sum / n_valid, bald_sum / n_valid


def run_step(state: PoolState, cfg: AlConfig, model, data: AlData, step: int = 0,
             _caches=None, _acquire: bool = True):
    """One train -> evaluate -> score -> select -> annotate cycle."""
    if _acquire and not state.unlabeled:
        raise EmptyPool("no unlabeled samples left")
    pool_cache, test_cache = _caches if _caches else (_FeatureCache(data.pool_images), _FeatureCache(data.test_images))

    t0 = time.perf_counter()
    model = scorer_mod.reset(model)
    labeled_imgs = [data.pool_images[i] for i in sorted(state.labeled)]
    model, _ = scorer_mod.train(model, labeled_imgs, list(cfg.da), rng=RngStream(_subseed(cfg.seed, DOMAIN_TRAIN, step)))

    miou, mean_var, mean_bald = _test_metrics(model, data, cfg, step, test_cache)

    selected = []
    scores = []
    if _acquire and state.unlabeled:
        if cfg.heuristic is HeuristicKind.RANDOM:
            candidates = [SampleScore(sid, 0.0) for sid in sorted(state.unlabeled)]
        else:
            candidates = _score_unlabeled(model, data, state, cfg, step, pool_cache)
            scores = candidates
        selected = rank_and_select(
            candidates, cfg.budget, cfg.heuristic, RngStream(_subseed(cfg.seed, DOMAIN_SELECT, step))
        )

    new_state = PoolState(
        labeled=state.labeled | set(selected),
        unlabeled=state.unlabeled - set(selected),
        universe=state.universe,
    )
    new_state.check()
    record = StepRecord(
        step=step,
        n_labeled=len(state.labeled),
        selected_ids=selected,
        test_miou=miou,
        mean_variance=mean_var,
        mean_bald=mean_bald,
        wall_time=time.perf_counter() - t0,
    )
    return new_state, record, model, scores


def run(cfg: AlConfig, data: AlData, progress: bool = False, checkpoint_dir=None) -> AlRunRecord:
    """Full budgeted acquisition loop; returns the per-step log.

    With checkpoint_dir set, the model trained at each step is saved as
    model_step_NNN.npz so analyses can revisit any step.
    """
    from pathlib import Path

    n_pool = len(data.pool_images)
    if cfg.init_size > n_pool:
        raise PoolTooLarge(f"init {cfg.init_size} > pool {n_pool}")
    state = init_pools(range(n_pool), cfg.init_size, cfg.seed)
    model = scorer_mod.make_scorer(data.num_classes, cfg.scorer, seed=_subseed(cfg.seed, DOMAIN_MODEL_SEED, 0))
    caches = (_FeatureCache(data.pool_images), _FeatureCache(data.test_images))

    record = AlRunRecord(
        config=cfg.to_dict(),
        pool_indices=list(data.pool_ids),
        test_indices=list(data.test_ids),
        init_labeled=sorted(state.labeled),
    )
    all_scores = []
    for step in range(max(cfg.steps, 1)):
        # Once the pool is exhausted the run ends with a plain evaluation row:
        # everything is labeled, nothing left to acquire.
        exhausted = not state.unlabeled
        state, step_rec, model, scores = run_step(
            state, cfg, model, data, step=step, _caches=caches, _acquire=cfg.steps > 0 and not exhausted
        )
        record.steps.append(step_rec)
        all_scores.extend((step, s.sample_id, cfg.heuristic.value, s.score) for s in scores)
        if checkpoint_dir is not None and isinstance(model, scorer_mod.BuiltinModelState):
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            scorer_mod.save_model(model, Path(checkpoint_dir) / f"model_step_{step:03d}.npz")
        if progress:
            print(
                f"step {step_rec.step}  labeled {step_rec.n_labeled}  "
                f"test_miou {step_rec.test_miou:.4f}  wall {step_rec.wall_time:.2f}s",
                flush=True,
            )
        if exhausted:
            break
    record.score_rows = all_scores
    return record


def run_and_write(cfg: AlConfig, data: AlData, out_dir, progress: bool = False, checkpoints: bool = False) -> AlRunRecord:
    """Run, then persist record CSV + sidecar and the score dump."""
    from pathlib import Path

    from . import dataset_io

    out = Path(out_dir)
    record = run(cfg, data, progress=progress, checkpoint_dir=out if checkpoints else None)
    dataset_io.write_run_record(record, out / "record.csv")
    dataset_io.write_scores_csv(record.score_rows, out / "scores.csv")
    return record


def evaluate_full_pool(cfg: AlConfig, data: AlData) -> float:
    """Test mIoU of a model trained on the whole pool (no DA); the reference ceiling."""
    model = scorer_mod.make_scorer(data.num_classes, cfg.scorer, seed=_subseed(cfg.seed, DOMAIN_MODEL_SEED, 0))
    model, _ = scorer_mod.train(model, list(data.pool_images), [], rng=RngStream(_subseed(cfg.seed, DOMAIN_TRAIN, 10**6)))
    cache = _FeatureCache(data.test_images)
    miou, _, _ = _test_metrics(model, data, cfg, 10**6, cache)
    return miou


@dataclass
class TtDaCurves:
    """Sorted aggregated-score curves of Experiment C's four pools."""

    curves: dict
    budget_cutoff: int

    def mean(self, name: str) -> float:
        return float(self.curves[name].mean())


def analyze_tt_da(model, data: AlData, state: PoolState, da, cfg: AlConfig, step: int = 0) -> TtDaCurves:
    """Aggregated BALD scores over L, U and their test-time-augmented copies.

    The model must have been trained on L without DA. TT-DA(U) augments a
    seeded uniform subset of U sized so |TT-DA(U)| + |U| equals the pool size.
    """
    from .augmentation import compose  # local import avoids a cycle at module load

    if not da:
        raise BadParam("TT-DA analysis needs a non-empty DA pipeline")
    t_iters = cfg.scorer.mc_iterations
    base = _subseed(cfg.seed, DOMAIN_SCORE, step)
    aug_base = _subseed(cfg.seed, DOMAIN_TTDA, step)
    cache = _FeatureCache(data.pool_images)

    def score_one(sid: int, img: RangeImage, augmented: bool) -> float:
        feats = cache.get(sid) if not augmented else None
        tensor = scorer_mod.predict_mc(model, img, t_iters, rng=RngStream(base, sample_id=sid), feats=feats)
        return aggregate(heuristic_map(HeuristicKind.BALD, tensor), cfg.aggregation)

    labeled = sorted(state.labeled)
    unlabeled = sorted(state.unlabeled)
    gen = rng_mod.derive(cfg.seed, DOMAIN_TTDA, step, 1)
    n_aug_u = min(len(labeled), len(unlabeled))
    aug_u_ids = sorted(int(i) for i in gen.choice(unlabeled, size=n_aug_u, replace=False)) if n_aug_u else []

    curves = {}
    curves["L"] = np.array([score_one(sid, data.pool_images[sid], False) for sid in labeled])
    curves["U"] = np.array([score_one(sid, data.pool_images[sid], False) for sid in unlabeled])
    curves["TTDA_L"] = np.array(
        [score_one(sid, compose(da, data.pool_images[sid], RngStream(aug_base, sample_id=sid)), True) for sid in labeled]
    )
    curves["TTDA_U"] = np.array(
        [score_one(sid, compose(da, data.pool_images[sid], RngStream(aug_base, sample_id=sid)), True) for sid in aug_u_ids]
    )
    curves = {k: np.sort(v)[::-1] for k, v in curves.items()}
    return TtDaCurves(curves=curves, budget_cutoff=cfg.budget)
