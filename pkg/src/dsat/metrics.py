"""Heatmap decoding, normalized mean error, failure rate, gate reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .heatmaps import LandmarkSet

NORM_INTER_OCULAR = "inter-ocular"
NORM_INTER_PUPIL = "inter-pupil"
NORM_DIAGONAL = "diagonal"
NORM_KINDS = (NORM_INTER_OCULAR, NORM_INTER_PUPIL, NORM_DIAGONAL)


@dataclass
class NormalizationLayout:
    """Landmark index pairs used by the pairwise normalizations."""

    inter_ocular: tuple[int, int] = (0, 3)
    inter_pupil: tuple[int, int] = (4, 5)


@dataclass
class EvalRecord:
    sample_id: str
    nme_percent: float
    per_landmark_errors: list[float]
    norm_distance: float
    activation_ratios: list[tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "nme_percent": self.nme_percent,
            "per_landmark_errors": self.per_landmark_errors,
            "norm_distance": self.norm_distance,
            "activation_ratios": [[int(i), float(r)] for i, r in self.activation_ratios],
        }


def decode(heatmaps: np.ndarray, refine: bool = False
           ) -> tuple[np.ndarray, np.ndarray]:
    """Argmax decode of (L, h, w) maps to (x, y) pixel coordinates.

    Ties resolve to the lowest row-major index; an all-equal map decodes
    to (0, 0) and is flagged degenerate. ``refine`` shifts a quarter pixel
    toward the larger axis neighbor (off by default so the decode matches
    the exhaustive-scan oracle exactly).
    """
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    if heatmaps.ndim != 3:
        raise ShapeError(f"decode expects (L, h, w) maps, got shape {heatmaps.shape}")
    if not np.isfinite(heatmaps).all():
        raise ContractError("decode requires finite heatmaps")
    n_landmarks, h, w = heatmaps.shape
    points = np.zeros((n_landmarks, 2))
    degenerate = np.zeros(n_landmarks, dtype=bool)
    for i, hm in enumerate(heatmaps):
        idx = int(hm.argmax())
        y, x = divmod(idx, w)
        if hm.max() == hm.min():
            degenerate[i] = True
            points[i] = (0.0, 0.0)
            continue
        fx, fy = float(x), float(y)
        if refine:
            if 0 < x < w - 1:
                fx += 0.25 * np.sign(hm[y, x + 1] - hm[y, x - 1])
            if 0 < y < h - 1:
                fy += 0.25 * np.sign(hm[y + 1, x] - hm[y - 1, x])
        points[i] = (fx, fy)
    return points, degenerate


def nme(pred: LandmarkSet, gt: LandmarkSet) -> float:
    """Mean landmark distance over the normalization length, in percent."""
    if len(pred) != len(gt):
        raise ShapeError(f"landmark counts differ: {len(pred)} vs {len(gt)}")
    d = gt.norm_distance
    if d is None or d <= 0:
        raise ContractError(f"normalization distance must be positive, got {d}")
    dists = np.sqrt(((pred.points - gt.points) ** 2).sum(axis=1))
    return float(dists.mean() / d * 100.0)


def per_landmark_errors(pred: LandmarkSet, gt: LandmarkSet) -> np.ndarray:
    if len(pred) != len(gt):
        raise ShapeError(f"landmark counts differ: {len(pred)} vs {len(gt)}")
    return np.sqrt(((pred.points - gt.points) ** 2).sum(axis=1))


def failure_rate(nmes: Sequence[float], threshold: float) -> float:
    """Percentage of samples whose NME strictly exceeds the threshold."""
    if threshold <= 0:
        raise ContractError(f"threshold must be positive, got {threshold}")
    values = list(nmes)
    if not values:
        raise ContractError("failure rate of an empty sample list is undefined")
    return 100.0 * sum(1 for v in values if v > threshold) / len(values)


def norm_distance(gt: LandmarkSet, kind: str,
                  layout: NormalizationLayout | None = None) -> float:
    """Normalization length: a configured landmark pair or the box diagonal."""
    layout = layout or NormalizationLayout()
    if kind == NORM_INTER_OCULAR:
        i, j = layout.inter_ocular
        d = float(np.linalg.norm(gt.points[i] - gt.points[j]))
    elif kind == NORM_INTER_PUPIL:
        i, j = layout.inter_pupil
        d = float(np.linalg.norm(gt.points[i] - gt.points[j]))
    elif kind == NORM_DIAGONAL:
        span = gt.points.max(axis=0) - gt.points.min(axis=0)
        d = float(np.hypot(span[0], span[1]))
    else:
        raise ContractError(f"unknown normalization kind {kind!r}; choose from {NORM_KINDS}")
    if d <= 0:
        raise ContractError(f"degenerate normalization distance ({kind}): {d}")
    return d


def gate_report(records: Sequence[EvalRecord],
                cluster_labels: Mapping[str, str]) -> list[dict]:
    """Mean/std activation ratio per (cluster, gate index)."""
    grouped: dict[tuple[str, int], list[float]] = {}
    for rec in records:
        if rec.sample_id not in cluster_labels:
            raise ContractError(f"sample {rec.sample_id!r} has no cluster label")
        label = cluster_labels[rec.sample_id]
        for idx, ratio in rec.activation_ratios:
            grouped.setdefault((label, int(idx)), []).append(float(ratio))
    rows = []
    for (label, idx) in sorted(grouped):
        vals = np.asarray(grouped[(label, idx)])
        rows.append({
            "cluster": label,
            "dsa_index": idx,
            "mean_ratio": float(vals.mean()),
            "std_ratio": float(vals.std()),
            "count": int(vals.size),
        })
    return rows


def write_gate_report_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["cluster", "dsa_index", "mean_ratio", "std_ratio", "count"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def aggregate_metrics(records: Sequence[EvalRecord],
                      labels: Mapping[str, str],
                      fr_threshold: float = 10.0) -> dict:
    """Overall and per-cluster mean NME and failure rate."""
    def _bucket(recs: Sequence[EvalRecord]) -> dict:
        nmes = [r.nme_percent for r in recs]
        return {
            "count": len(recs),
            "nme_mean": float(np.mean(nmes)),
            "fr_percent": failure_rate(nmes, fr_threshold),
        }

    out = {"overall": _bucket(records), "per_cluster": {}}
    by_label: dict[str, list[EvalRecord]] = {}
    for rec in records:
        by_label.setdefault(labels[rec.sample_id], []).append(rec)
    for label in sorted(by_label):
        out["per_cluster"][label] = _bucket(by_label[label])
    out["fr_threshold"] = fr_threshold
    return out
