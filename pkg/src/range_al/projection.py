"""Spherical projection of point clouds onto range images.

A range image stores, per pixel, the x/y coordinates, range r and remission i
of the nearest point falling on that pixel, together with its semantic label,
instance id and the index of the source point. Pixels no point maps to are
invalid and hold fill values that consumers must never interpret.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoint

# Label value for pixels without supervision.
IGNORE = -1

# Channel plane order.
CH_X, CH_Y, CH_R, CH_I = 0, 1, 2, 3


@dataclass(frozen=True)
class SensorConfig:
    """Vertical field of view and target resolution of the projection.

    fov_up/fov_down are radians, both positive, measured from the horizon.
    """

    fov_up: float = math.radians(3.0)
    fov_down: float = math.radians(25.0)
    width: int = 1024
    height: int = 64

    def __post_init__(self):
        if self.fov_up + self.fov_down <= 0:
            raise ValueError("vertical fov must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def fov(self) -> float:
        return self.fov_up + self.fov_down


@dataclass
class RangeImage:
    """Multi-plane projection of one scan.

    channels: (H, W, 4) float32 planes x, y, r, i
    labels:   (H, W) int32 class ids, IGNORE where unsupervised
    valid:    (H, W) bool
    point_index: (H, W) int32 index into the source cloud, -1 where invalid
    instance: (H, W) int32 instance ids, 0 where none
    """

    channels: np.ndarray
    labels: np.ndarray
    valid: np.ndarray
    point_index: np.ndarray
    instance: np.ndarray
    name: str | None = None

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]

    def copy(self) -> "RangeImage":
        return RangeImage(
            channels=self.channels.copy(),
            labels=self.labels.copy(),
            valid=self.valid.copy(),
            point_index=self.point_index.copy(),
            instance=self.instance.copy(),
            name=self.name,
        )

    def check(self) -> None:
        """Assert the fill-value invariants; used by tests and the orchestrator."""
        inv = ~self.valid
        assert np.all(self.channels[inv] == 0.0)
        assert np.all(self.labels[inv] == IGNORE)
        assert np.all(self.point_index[inv] == -1)
        assert np.all(self.instance[inv] == 0)
        r = self.channels[..., CH_R][self.valid]
        assert np.all(np.isfinite(self.channels[self.valid]))
        assert np.all(r > 0)


def empty_range_image(cfg: SensorConfig, name: str | None = None) -> RangeImage:
    h, w = cfg.height, cfg.width
    return RangeImage(
        channels=np.zeros((h, w, 4), dtype=np.float32),
        labels=np.full((h, w), IGNORE, dtype=np.int32),
        valid=np.zeros((h, w), dtype=bool),
        point_index=np.full((h, w), -1, dtype=np.int32),
        instance=np.zeros((h, w), dtype=np.int32),
        name=name,
    )


@dataclass
class PixelScoreMap:
    """Per-pixel informativeness scores with the validity mask they apply to."""

    scores: np.ndarray  # (H, W) float64
    valid: np.ndarray   # (H, W) bool


def project_uv(points: np.ndarray, cfg: SensorConfig):
    """Pixel coordinates of each point under the spherical projection.

    u = floor(1/2 (1 - atan2(y, x)/pi) W), v = floor((1 - (asin(z/r) + f_up)/f) H),
    both clamped into the image. Returns (u, v, r) as int64/int64/float64 arrays.
    """
    x = points[:, 0].astype(np.float64)
    y = points[:, 1].astype(np.float64)
    z = points[:, 2].astype(np.float64)
    r = np.sqrt(x * x + y * y + z * z)
    if np.any(r == 0.0):
        raise DegeneratePoint("point at sensor origin has undefined direction")

    u = np.floor(0.5 * (1.0 - np.arctan2(y, x) / math.pi) * cfg.width).astype(np.int64)
    v = np.floor((1.0 - (np.arcsin(z / r) + cfg.fov_up) / cfg.fov) * cfg.height).astype(np.int64)
    np.clip(u, 0, cfg.width - 1, out=u)
    np.clip(v, 0, cfg.height - 1, out=v)
    return u, v, r


def project(cloud, cfg: SensorConfig) -> RangeImage:
    """Project a point cloud; on pixel collisions the nearest point wins."""
    img = empty_range_image(cfg, name=getattr(cloud, "name", None))
    pts = np.asarray(cloud.points, dtype=np.float32).reshape(-1, 4)
    if pts.shape[0] == 0:
        return img

    u, v, r = project_uv(pts, cfg)

    # Write farthest first so the nearest point lands last and wins.
    order = np.argsort(-r, kind="stable")
    uo, vo = u[order], v[order]

    img.channels[vo, uo, CH_X] = pts[order, 0]
    img.channels[vo, uo, CH_Y] = pts[order, 1]
    img.channels[vo, uo, CH_R] = r[order].astype(np.float32)
    img.channels[vo, uo, CH_I] = pts[order, 3]
    img.point_index[vo, uo] = order.astype(np.int32)
    img.valid[vo, uo] = True
    if cloud.labels is not None:
        img.labels[vo, uo] = np.asarray(cloud.labels, dtype=np.int32)[order]
    if getattr(cloud, "instances", None) is not None:
        img.instance[vo, uo] = np.asarray(cloud.instances, dtype=np.int32)[order]
    return img


def valid_fraction(img: RangeImage) -> float:
    """Share of pixels holding a point."""
    return float(img.valid.sum()) / float(img.valid.size)
