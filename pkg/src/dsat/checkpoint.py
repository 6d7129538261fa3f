"""Checkpoint format: JSON manifest plus flat little-endian float32 data.

The manifest lists every parameter and normalization buffer with its
shape in model-walk order, embeds the full config (so evaluation can
rebuild the exact architecture) and its hash. The binary file is the
concatenation of all entries as float32 in manifest order, which makes
save -> load -> save byte-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .errors import ManifestError
from .model import DsatModel, build_model

FORMAT_NAME = "dsat-checkpoint-v1"


def _entries(model: DsatModel) -> list[tuple[str, np.ndarray, str]]:
    out = [(name, p.data, "param") for name, p in model.named_parameters()]
    out.extend((name, b, "buffer") for name, b in model.named_buffers())
    return out


def save_checkpoint(model: DsatModel, cfg: TrainConfig, json_path) -> Path:
    json_path = Path(json_path)
    bin_path = json_path.with_suffix(".bin")
    entries = _entries(model)
    manifest = {
        "format": FORMAT_NAME,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "data_file": bin_path.name,
        "entries": [{"name": n, "shape": list(a.shape), "kind": k}
                    for n, a, k in entries],
    }
    json_path.parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        for _, arr, _ in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return json_path


def load_checkpoint(json_path) -> tuple[TrainConfig, DsatModel]:
    json_path = Path(json_path)
    with open(json_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT_NAME:
        raise ManifestError(f"unknown checkpoint format {manifest.get('format')!r}")
    cfg = TrainConfig.from_dict(manifest["config"])
    model = build_model(cfg)
    expected = _entries(model)
    stored = manifest["entries"]
    if len(stored) != len(expected):
        raise ManifestError(f"manifest has {len(stored)} entries, "
                            f"model layout has {len(expected)}")
    for (name, arr, kind), entry in zip(expected, stored):
        if entry["name"] != name or tuple(entry["shape"]) != arr.shape or entry["kind"] != kind:
            raise ManifestError(
                f"manifest mismatch at parameter {name!r}: manifest says "
                f"{entry['name']!r} shape {entry['shape']} ({entry['kind']}), "
                f"model expects shape {list(arr.shape)} ({kind})"
            )
    data = np.fromfile(json_path.parent / manifest["data_file"], dtype="<f4")
    total = sum(arr.size for _, arr, _ in expected)
    if data.size != total:
        raise ManifestError(f"checkpoint data has {data.size} values, "
                            f"manifest implies {total}")
    offset = 0
    for name, arr, _ in expected:
        chunk = data[offset:offset + arr.size]
        arr[...] = chunk.reshape(arr.shape).astype(np.float64)
        offset += arr.size
    return cfg, model
