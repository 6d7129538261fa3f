"""Ground-truth heatmap rendering and the raw heatmap file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class LandmarkSet:
    """L points in heatmap pixel coordinates plus a normalization distance."""

    points: np.ndarray  # (L, 2) as (x, y)
    norm_distance: float | None = None
    norm_kind: str | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ContractError(f"landmark points must be (L, 2), got {self.points.shape}")

    def __len__(self) -> int:
        return self.points.shape[0]


class _WarningCounter:
    """Counts landmark points that had to be clamped into the map."""

    def __init__(self):
        self.count = 0

    def reset(self) -> None:
        self.count = 0


out_of_map_points = _WarningCounter()


def render_landmark_heatmaps(gt: LandmarkSet, sigma: float, h: int,
                             w: int | None = None) -> np.ndarray:
    """One Gaussian bump per landmark, peak-normalized to exactly 1.

    Points falling outside the map are clamped onto it and counted in
    ``out_of_map_points``.
    """
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    w = h if w is None else w
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    maps = np.empty((len(gt), h, w))
    for i, (px, py) in enumerate(gt.points):
        if not (0.0 <= px <= w - 1 and 0.0 <= py <= h - 1):
            out_of_map_points.count += 1
            px = min(max(px, 0.0), w - 1.0)
            py = min(max(py, 0.0), h - 1.0)
        bump = np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * sigma ** 2))
        maps[i] = bump / bump.max()
    return maps


def _segment_distance_sq(xs: np.ndarray, ys: np.ndarray,
                         p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared distance from every pixel to the segment p-q."""
    v = q - p
    vv = float(v @ v)
    if vv < 1e-24:
        return (xs - p[0]) ** 2 + (ys - p[1]) ** 2
    t = ((xs - p[0]) * v[0] + (ys - p[1]) * v[1]) / vv
    t = np.clip(t, 0.0, 1.0)
    cx = p[0] + t * v[0]
    cy = p[1] + t * v[1]
    return (xs - cx) ** 2 + (ys - cy) ** 2


def render_boundary_heatmaps(gt: LandmarkSet, chains: list[list[int]] | tuple,
                             sigma: float, h: int, w: int | None = None) -> np.ndarray:
    """Gaussian ridges along the polylines through each landmark chain."""
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    w = h if w is None else w
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    maps = np.empty((len(chains), h, w))
    for b, chain in enumerate(chains):
        if len(chain) < 2:
            raise ConfigError(f"boundary chain {b} has {len(chain)} point(s); need at least 2")
        pts = gt.points[list(chain)]
        dist_sq = None
        for p, q in zip(pts[:-1], pts[1:]):
            d = _segment_distance_sq(xs, ys, p, q)
            dist_sq = d if dist_sq is None else np.minimum(dist_sq, d)
        maps[b] = np.exp(-dist_sq / (2.0 * sigma ** 2))
    return maps


_HEADER = struct.Struct("<4i")


def save_heatmap_bundle(path, maps: np.ndarray) -> None:
    """Raw export: 4 little-endian int32 (N, channels, h, w=h), then float32."""
    maps = np.asarray(maps)
    if maps.ndim != 4:
        raise ContractError(f"heatmap bundle must be rank 4, got shape {maps.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*maps.shape))
        fh.write(maps.astype("<f4").tobytes())


def load_heatmap_bundle(path) -> np.ndarray:
    with open(path, "rb") as fh:
        n, c, h, w = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * c * h * w:
        raise ContractError(f"heatmap bundle payload has {data.size} values, "
                            f"header says {n * c * h * w}")
    return data.reshape(n, c, h, w).astype(np.float64)
