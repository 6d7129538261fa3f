"""Parametric synthetic faces with exactly known landmarks.

Each sample is a grayscale image of an ellipse "head" with eye strokes and
pupils, a nose blob and a mouth arc. Twelve landmarks are placed
analytically from the same parameters that drive the rendering, so the
generator doubles as its own ground-truth oracle. Difficulty branches add
occluding rectangles, a Gaussian-distributed rotation, or blur, standing
in for the hard subsets of real landmark benchmarks.

Landmark layout (x grows right, y grows down):
  0/1  left eye outer/inner corner      2/3  right eye inner/outer corner
  4/5  left/right pupil center          6    nose tip
  7/8/9 mouth left/center/right         10   chin        11  forehead
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ContractError

LANDMARK_COUNT = 12
BOUNDARY_CHAINS = ((11, 0, 10), (11, 3, 10), (7, 8, 9))
FLIP_INDEX_MAP = (3, 2, 1, 0, 5, 4, 6, 9, 8, 7, 10, 11)
DIFFICULTIES = ("neutral", "occluded", "rotated", "blurred")
ROTATION_SIGMA_DEG = 20.0


@dataclass
class SyntheticSample:
    image: np.ndarray          # (S, S) float in [0, 1]
    landmarks: np.ndarray      # (12, 2) image-pixel (x, y)
    label: str
    seed: int
    sample_id: str


def _face_params(rng: np.random.Generator, size: int) -> dict:
    s = float(size)
    return {
        "cx": s * (0.50 + rng.uniform(-0.03, 0.03)),
        "cy": s * (0.52 + rng.uniform(-0.03, 0.03)),
        "ax": s * 0.32 * (1.0 + rng.uniform(-0.08, 0.08)),
        "ay": s * 0.40 * (1.0 + rng.uniform(-0.08, 0.08)),
    }


def _landmarks_from_params(p: dict) -> np.ndarray:
    cx, cy, ax, ay = p["cx"], p["cy"], p["ax"], p["ay"]
    eye_dx = 0.45 * ax
    eye_half = 0.28 * ax
    ey = cy - 0.25 * ay
    mouth_y = cy + 0.45 * ay
    mouth_half = 0.35 * ax
    pts = np.array([
        (cx - eye_dx - eye_half, ey),   # 0 left outer corner
        (cx - eye_dx + eye_half, ey),   # 1 left inner corner
        (cx + eye_dx - eye_half, ey),   # 2 right inner corner
        (cx + eye_dx + eye_half, ey),   # 3 right outer corner
        (cx - eye_dx, ey),              # 4 left pupil
        (cx + eye_dx, ey),              # 5 right pupil
        (cx, cy + 0.08 * ay),           # 6 nose tip
        (cx - mouth_half, mouth_y),     # 7 mouth left
        (cx, mouth_y + 0.10 * ay),      # 8 mouth center (arc bottom)
        (cx + mouth_half, mouth_y),     # 9 mouth right
        (cx, cy + ay),                  # 10 chin
        (cx, cy - ay),                  # 11 forehead
    ])
    return pts


def _ridge(xs, ys, points: np.ndarray, sigma_px: float) -> np.ndarray:
    """Gaussian ridge along the polyline through ``points``."""
    dist_sq = None
    for p, q in zip(points[:-1], points[1:]):
        v = q - p
        vv = float(v @ v)
        if vv < 1e-24:
            d = (xs - p[0]) ** 2 + (ys - p[1]) ** 2
        else:
            t = np.clip(((xs - p[0]) * v[0] + (ys - p[1]) * v[1]) / vv, 0.0, 1.0)
            d = (xs - (p[0] + t * v[0])) ** 2 + (ys - (p[1] + t * v[1])) ** 2
        dist_sq = d if dist_sq is None else np.minimum(dist_sq, d)
    return np.exp(-dist_sq / (2.0 * sigma_px ** 2))


def _render_face(p: dict, landmarks: np.ndarray, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), 0.05)

    # head outline: soft ring at unit normalized radius
    r = np.sqrt(((xs - p["cx"]) / p["ax"]) ** 2 + ((ys - p["cy"]) / p["ay"]) ** 2)
    img += 0.55 * np.exp(-((r - 1.0) ** 2) / (2.0 * 0.05 ** 2))

    stroke = max(1.0, 0.018 * size)
    for outer, inner in ((0, 1), (3, 2)):
        img += 0.45 * _ridge(xs, ys, landmarks[[outer, inner]], stroke)
    eye_sigma = max(1.0, 0.4 * 0.28 * p["ax"])
    for pupil in (4, 5):
        px, py = landmarks[pupil]
        img += 0.85 * np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2.0 * eye_sigma ** 2))

    nx, ny = landmarks[6]
    nose_sigma = max(1.0, 0.05 * size)
    img += 0.5 * np.exp(-((xs - nx) ** 2 + (ys - ny) ** 2) / (2.0 * nose_sigma ** 2))

    # mouth: quadratic Bezier through landmarks 7, 8, 9
    p0, mid, p2 = landmarks[7], landmarks[8], landmarks[9]
    control = 2.0 * mid - 0.5 * (p0 + p2)
    t = np.linspace(0.0, 1.0, 33)[:, None]
    arc = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * control + t ** 2 * p2
    img += 0.6 * _ridge(xs, ys, arc, stroke)

    return np.clip(img, 0.0, 1.0)


def _paint_occluders(img: np.ndarray, rng: np.random.Generator,
                     count: int | None = None) -> np.ndarray:
    size = img.shape[0]
    out = img.copy()
    n = count if count is not None else int(rng.integers(1, 3))
    for _ in range(n):
        cx = rng.uniform(0.25, 0.75) * size
        cy = rng.uniform(0.25, 0.75) * size
        hw = rng.uniform(0.08, 0.18) * size
        hh = rng.uniform(0.08, 0.18) * size
        value = rng.uniform(0.0, 1.0)
        x0, x1 = int(max(0, cx - hw)), int(min(size, cx + hw))
        y0, y1 = int(max(0, cy - hh)), int(min(size, cy + hh))
        out[y0:y1, x0:x1] = value
    return out


def rotate_points(points: np.ndarray, angle_deg: float, center: tuple[float, float]
                  ) -> np.ndarray:
    """Rotate (x, y) points about ``center`` in screen coordinates."""
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    dx = points[:, 0] - center[0]
    dy = points[:, 1] - center[1]
    return np.stack([c * dx - s * dy + center[0],
                     s * dx + c * dy + center[1]], axis=1)


def rotate_image(img: np.ndarray, angle_deg: float,
                 center: tuple[float, float]) -> np.ndarray:
    """Bilinear rotation matching :func:`rotate_points` (content moves with points)."""
    h, w = img.shape
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xs - center[0]
    dy = ys - center[1]
    sx = c * dx + s * dy + center[0]
    sy = -s * dx + c * dy + center[1]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros_like(img)
    for oy, ox, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        xi = x0 + ox
        yi = y0 + oy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out[valid] += wgt[valid] * img[yi[valid], xi[valid]]
    return out


def generate_sample(seed: int, difficulty: str, image_size: int = 64) -> SyntheticSample:
    """Deterministic sample for (seed, difficulty, image_size).

    The neutral face depends only on the seed, so the occluded/rotated/
    blurred branches are exact transforms of the matching neutral sample.
    """
    if difficulty not in DIFFICULTIES:
        raise ContractError(f"unknown difficulty {difficulty!r}; choose from {DIFFICULTIES}")
    face_rng = np.random.default_rng([seed, 0])
    params = _face_params(face_rng, image_size)
    landmarks = _landmarks_from_params(params)
    img = _render_face(params, landmarks, image_size)

    branch_rng = np.random.default_rng([seed, 1, DIFFICULTIES.index(difficulty)])
    if difficulty == "occluded":
        img = _paint_occluders(img, branch_rng)
    elif difficulty == "rotated":
        angle = branch_rng.normal(0.0, ROTATION_SIGMA_DEG)
        center = ((image_size - 1) / 2.0, (image_size - 1) / 2.0)
        img = rotate_image(img, angle, center)
        landmarks = rotate_points(landmarks, angle, center)
    elif difficulty == "blurred":
        img = gaussian_filter(img, sigma=branch_rng.uniform(1.0, 2.0))

    return SyntheticSample(image=img, landmarks=landmarks, label=difficulty,
                           seed=seed, sample_id=f"s{seed}")


def augment(sample: SyntheticSample, rng: np.random.Generator,
            max_retries: int = 10) -> SyntheticSample:
    """Random flip / grayscale / occlusion / rotation, each with p=1/2.

    Landmarks are transformed consistently; a rotation that would push
    more than a quarter of the landmarks off the frame is resampled.
    """
    img = sample.image
    pts = sample.landmarks.copy()
    size = img.shape[0]

    if rng.random() < 0.5:
        img = img[:, ::-1].copy()
        pts[:, 0] = (size - 1) - pts[:, 0]
        pts = pts[list(FLIP_INDEX_MAP)]
    if rng.random() < 0.5:
        gain = rng.uniform(0.6, 1.3)
        bias = rng.uniform(-0.15, 0.15)
        img = np.clip(img * gain + bias, 0.0, 1.0)
    if rng.random() < 0.5:
        img = _paint_occluders(img, rng, count=1)
    if rng.random() < 0.5:
        center = ((size - 1) / 2.0, (size - 1) / 2.0)
        for _ in range(max_retries):
            angle = rng.normal(0.0, ROTATION_SIGMA_DEG)
            moved = rotate_points(pts, angle, center)
            inside = ((moved[:, 0] >= 0) & (moved[:, 0] <= size - 1)
                      & (moved[:, 1] >= 0) & (moved[:, 1] <= size - 1))
            if (~inside).mean() <= 0.25:
                img = rotate_image(img, angle, center)
                pts = moved
                break

    return replace(sample, image=img, landmarks=pts)


def parse_mix(text: str) -> dict[str, float]:
    """Parse "neutral:0.4,occluded:0.2,..." into normalized proportions."""
    mix: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            label, weight = part.split(":")
            mix[label.strip()] = float(weight)
        except ValueError as exc:
            raise ConfigError(f"bad mix entry {part!r}") from exc
    for label in mix:
        if label not in DIFFICULTIES:
            raise ConfigError(f"unknown difficulty {label!r} in mix")
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError("difficulty mix has no positive weight")
    return {k: v / total for k, v in mix.items()}


def generate_dataset(count: int, mix: dict[str, float], seed: int,
                     image_size: int = 64) -> list[SyntheticSample]:
    """Deterministic mixed dataset; per-sample seeds derive from ``seed``."""
    labels: list[str] = []
    for label in DIFFICULTIES:
        labels.extend([label] * int(round(count * mix.get(label, 0.0))))
    while len(labels) < count:
        labels.append(max(mix, key=mix.get))
    labels = labels[:count]
    order = np.random.default_rng([seed, 7]).permutation(count)
    samples = []
    for i, pos in enumerate(order):
        sample_seed = (seed * 1_000_003 + i) % (2 ** 62)
        s = generate_sample(sample_seed, labels[pos], image_size)
        samples.append(replace(s, sample_id=f"s{i:05d}"))
    return samples


_IMG_HEADER = struct.Struct("<2i")


def write_dataset(directory, samples: list[SyntheticSample]) -> None:
    """One raw image file per sample plus a JSON index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"landmark_count": LANDMARK_COUNT, "samples": []}
    for s in samples:
        fname = f"{s.sample_id}.bin"
        h, w = s.image.shape
        with open(directory / fname, "wb") as fh:
            fh.write(_IMG_HEADER.pack(h, w))
            fh.write(s.image.astype("<f4").tobytes())
        index["samples"].append({
            "id": s.sample_id,
            "file": fname,
            "label": s.label,
            "seed": s.seed,
            "landmarks": [[float(x), float(y)] for x, y in s.landmarks],
        })
    with open(directory / "index.json", "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_dataset(directory) -> list[SyntheticSample]:
    directory = Path(directory)
    with open(directory / "index.json") as fh:
        index = json.load(fh)
    samples = []
    for entry in index["samples"]:
        with open(directory / entry["file"], "rb") as fh:
            h, w = _IMG_HEADER.unpack(fh.read(_IMG_HEADER.size))
            img = np.frombuffer(fh.read(), dtype="<f4").reshape(h, w).astype(np.float64)
        samples.append(SyntheticSample(
            image=img,
            landmarks=np.asarray(entry["landmarks"], dtype=np.float64),
            label=entry["label"],
            seed=int(entry["seed"]),
            sample_id=entry["id"],
        ))
    return samples
