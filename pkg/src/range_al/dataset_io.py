"""KITTI-style binary parsing, dataset manifests, and run-artifact persistence.

Scan files are headerless little-endian float32 quadruples (x, y, z, remission).
Label files hold one little-endian uint32 per point: low 16 bits semantic id,
high 16 bits instance id. Run records are written as a CSV of per-step curve
fields plus a JSON sidecar carrying the resolved configuration, pool indices
and wall times.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import (
    MalformedLabels,
    MalformedScan,
    PoolTooLarge,
    StorageError,
    UnknownLabel,
)
from .projection import IGNORE

log = logging.getLogger(__name__)

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")


@dataclass
class PointCloud:
    """One scan: (N, 4) float32 points and optional per-point annotation."""

    points: np.ndarray
    labels: np.ndarray | None = None
    instances: np.ndarray | None = None
    name: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 4)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("labels must have one entry per point")
        if self.instances is not None:
            self.instances = np.asarray(self.instances, dtype=np.int32)
            if self.instances.shape[0] != self.points.shape[0]:
                raise ValueError("instances must have one entry per point")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class LabelMap:
    """Flat remap from raw semantic ids to contiguous train ids in [0, C)."""

    raw_to_train: dict
    ignore_ids: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "raw_to_train", dict(self.raw_to_train))
        object.__setattr__(self, "ignore_ids", frozenset(self.ignore_ids))
        train = sorted(self.raw_to_train.values())
        if len(set(train)) != len(train):
            raise ValueError("train ids collide")
        if train and train != list(range(len(train))):
            raise ValueError("train ids must be contiguous from 0")
        if self.ignore_ids & set(self.raw_to_train):
            raise ValueError("ignore_ids overlap mapped raw ids")

    @property
    def num_classes(self) -> int:
        return len(self.raw_to_train)

    def train_to_raw(self) -> dict:
        return {t: r for r, t in self.raw_to_train.items()}


def parse_point_cloud(data: bytes, name: str | None = None) -> PointCloud:
    """Decode a scan file; raises MalformedScan on bad length or non-finite floats."""
    if len(data) % 16 != 0:
        raise MalformedScan(f"scan length {len(data)} is not a multiple of 16")
    pts = np.frombuffer(data, dtype=SCAN_DTYPE).reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise MalformedScan("scan contains non-finite values")
    return PointCloud(points=pts.copy(), name=name)


def serialize_point_cloud(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype=SCAN_DTYPE).tobytes()


def split_label_words(words: np.ndarray):
    """Split raw uint32 label words into (semantic, instance) halves."""
    words = words.astype(np.uint32)
    return (words & np.uint32(0xFFFF)).astype(np.int64), (words >> np.uint32(16)).astype(np.int32)


def pack_label_words(semantic: np.ndarray, instance: np.ndarray) -> np.ndarray:
    return (np.asarray(instance, dtype=np.uint32) << np.uint32(16)) | (
        np.asarray(semantic, dtype=np.uint32) & np.uint32(0xFFFF)
    )


def parse_labels(data: bytes, label_map: LabelMap, strict: bool = False):
    """Decode a label file into (train_ids, instance_ids).

    Raw ids in ignore_ids map to the IGNORE sentinel. Unmapped ids raise
    UnknownLabel in strict mode and map to IGNORE (with a warning) otherwise.
    """
    if len(data) % 4 != 0:
        raise MalformedLabels(f"label length {len(data)} is not a multiple of 4")
    words = np.frombuffer(data, dtype=LABEL_DTYPE)
    semantic, instance = split_label_words(words)

    max_raw = max([*label_map.raw_to_train, *label_map.ignore_ids], default=0)
    lut = np.full(max(int(max_raw), int(semantic.max(initial=0))) + 1, IGNORE - 1, dtype=np.int32)
    for raw in label_map.ignore_ids:
        lut[raw] = IGNORE
    for raw, train in label_map.raw_to_train.items():
        lut[raw] = train

    mapped = lut[semantic]
    unknown = mapped == IGNORE - 1
    if np.any(unknown):
        bad = np.unique(semantic[unknown])
        if strict:
            raise UnknownLabel(f"raw ids without mapping: {bad.tolist()}")
        log.warning("mapping %d unknown raw label ids %s to ignore", unknown.sum(), bad.tolist())
        mapped[unknown] = IGNORE
    return mapped.astype(np.int32), instance


def serialize_labels(labels: np.ndarray, instances: np.ndarray, label_map: LabelMap, ignore_raw: int = 0) -> bytes:
    """Encode train ids back into raw label words (inverse of parse_labels)."""
    inv = label_map.train_to_raw()
    raw = np.full(labels.shape, ignore_raw, dtype=np.uint32)
    for train, raw_id in inv.items():
        raw[labels == train] = raw_id
    return pack_label_words(raw, instances).astype(LABEL_DTYPE).tobytes()


@dataclass
class ManifestEntry:
    scan_path: str
    label_path: str


@dataclass
class DatasetManifest:
    """Ordered scan/label pairs plus the pool/test assignment of a split."""

    entries: list
    seed: int = 0
    split: dict | None = None  # index -> "pool" | "test"

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path, seed: int = 0) -> DatasetManifest:
    path = Path(path)
    entries = []
    try:
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            scan, label = line.split("\t")
            entries.append(ManifestEntry(scan, label))
    except OSError as exc:
        raise StorageError(str(exc)) from exc
    return DatasetManifest(entries=entries, seed=seed)


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [f"{e.scan_path}\t{e.label_path}" for e in manifest.entries]
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise StorageError(str(exc)) from exc


def split_pool(manifest: DatasetManifest, pool_size: int, test_size: int, seed: int | None = None):
    """Disjoint uniform pool/test index sets; pure in (manifest, sizes, seed)."""
    n = len(manifest.entries)
    if pool_size + test_size > n:
        raise PoolTooLarge(f"pool {pool_size} + test {test_size} exceeds {n} entries")
    if seed is None:
        seed = manifest.seed
    perm = rng.derive(seed, rng.DOMAIN_SPLIT).permutation(n)
    pool = np.sort(perm[:pool_size])
    test = np.sort(perm[pool_size : pool_size + test_size])
    manifest.split = {int(i): "pool" for i in pool}
    manifest.split.update({int(i): "test" for i in test})
    return pool, test


def load_label_map(path) -> LabelMap:
    """Read a label map file: lines of "raw train", or "ignore raw"."""
    raw_to_train = {}
    ignore = set()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StorageError(str(exc)) from exc
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a, b = line.split()
        if a == "ignore":
            ignore.add(int(b))
        else:
            raw_to_train[int(a)] = int(b)
    return LabelMap(raw_to_train=raw_to_train, ignore_ids=frozenset(ignore))


def save_label_map(label_map: LabelMap, path) -> None:
    lines = [f"{raw} {train}" for raw, train in sorted(label_map.raw_to_train.items())]
    lines += [f"ignore {raw}" for raw in sorted(label_map.ignore_ids)]
    Path(path).write_text("\n".join(lines) + "\n")


# --- run records -----------------------------------------------------------

RECORD_COLUMNS = ["step", "n_labeled", "selected_ids", "test_miou", "mean_variance", "mean_bald"]


def fmt_float(x: float) -> str:
    """17 significant digits: exact float64 round trip through decimal text."""
    return format(float(x), ".17g")


@dataclass
class StepRecord:
    step: int
    n_labeled: int
    selected_ids: list
    test_miou: float
    mean_variance: float
    mean_bald: float
    wall_time: float = 0.0


@dataclass
class AlRunRecord:
    """Full log of one active-learning run."""

    config: dict
    steps: list = field(default_factory=list)
    pool_indices: list = field(default_factory=list)
    test_indices: list = field(default_factory=list)
    init_labeled: list = field(default_factory=list)
    # Per-sample score dump rows (step, sample_id, heuristic, score); persisted
    # through write_scores_csv, not the record CSV.
    score_rows: list = field(default_factory=list, compare=False)

    def curve(self):
        """(n_labeled, test_miou) pairs in step order."""
        return [(s.n_labeled, s.test_miou) for s in self.steps]


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def write_run_record(record: AlRunRecord, path) -> None:
    """CSV of deterministic per-step fields + JSON sidecar for the rest."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for s in record.steps:
        writer.writerow(
            [
                s.step,
                s.n_labeled,
                ";".join(str(i) for i in s.selected_ids),
                fmt_float(s.test_miou),
                fmt_float(s.mean_variance),
                fmt_float(s.mean_bald),
            ]
        )
    sidecar = {
        "config": record.config,
        "pool_indices": [int(i) for i in record.pool_indices],
        "test_indices": [int(i) for i in record.test_indices],
        "init_labeled": [int(i) for i in record.init_labeled],
        "wall_times": [s.wall_time for s in record.steps],
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
        _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    except OSError as exc:
        raise StorageError(str(exc)) from exc


def read_run_record(path) -> AlRunRecord:
    path = Path(path)
    try:
        text = path.read_text()
        sidecar = json.loads(_sidecar_path(path).read_text())
    except OSError as exc:
        raise StorageError(str(exc)) from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != RECORD_COLUMNS:
        raise StorageError(f"unexpected record header in {path}")
    steps = []
    for k, row in enumerate(rows[1:]):
        ids = [int(i) for i in row[2].split(";") if i != ""]
        steps.append(
            StepRecord(
                step=int(row[0]),
                n_labeled=int(row[1]),
                selected_ids=ids,
                test_miou=float(row[3]),
                mean_variance=float(row[4]),
                mean_bald=float(row[5]),
                wall_time=float(sidecar["wall_times"][k]),
            )
        )
    return AlRunRecord(
        config=sidecar["config"],
        steps=steps,
        pool_indices=sidecar["pool_indices"],
        test_indices=sidecar["test_indices"],
        init_labeled=sidecar["init_labeled"],
    )


def write_scores_csv(rows, path) -> None:
    """Score dump: one row per (step, sample), columns fixed by the interface."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "sample_id", "heuristic", "aggregated_score"])
    for step, sample_id, heuristic, score in rows:
        writer.writerow([step, sample_id, heuristic, fmt_float(score)])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise StorageError(str(exc)) from exc
