"""Training configuration: dataclass, flat-file parsing, hashing."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .metrics import NORM_KINDS
from .synthetic import parse_mix


@dataclass
class TrainConfig:
    # geometry
    image_size: int = 64
    heatmap_size: int = 32
    channels: int = 16
    stacks: int = 2
    dsa_placement: tuple[int, ...] = (0, 1)
    cca_depth: int = 2
    cca_heads: int = 4
    head_dim: int = 0            # 0 -> channels // cca_heads
    sigma_gt: float = 1.5
    landmarks: int = 12
    boundaries: int = 3
    # optimizer / schedule
    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halve_every: int = 200
    iterations: int = 1000
    batch_size: int = 4
    seed: int = 0
    # ablation switches
    enable_dsa: bool = True
    enable_cca: bool = True
    # architecture knobs (defaults match the desk-scale design)
    preprocess_stride: int = 4
    block_convs: int = 2
    stem_kernel: int = 7
    tokenizer_kernel: int = 0    # 0 -> kernel equals the per-scale stride
    recon_kernel: int = 3
    deconv_kernel: int = 4
    dropout: float = 0.1
    # data
    train_samples: int = 64
    difficulty_mix: str = "neutral:0.4,occluded:0.2,rotated:0.2,blurred:0.2"
    augment: bool = False
    data_dir: str = ""
    norm_kind: str = "inter-ocular"

    @property
    def feature_grid(self) -> int:
        return self.image_size // self.preprocess_stride

    def validate(self) -> "TrainConfig":
        if self.preprocess_stride not in (1, 2, 4):
            raise ConfigError(f"preprocess_stride must be 1, 2 or 4, got {self.preprocess_stride}")
        if self.image_size % self.preprocess_stride:
            raise ConfigError(f"image_size {self.image_size} not divisible by "
                              f"preprocess_stride {self.preprocess_stride}")
        if self.feature_grid % 8:
            raise ConfigError(f"feature grid {self.feature_grid} must be divisible by 8; "
                              f"adjust image_size or preprocess_stride")
        if self.heatmap_size != 2 * self.feature_grid:
            raise ConfigError(f"heatmap_size must be 2x the feature grid "
                              f"({2 * self.feature_grid}), got {self.heatmap_size}")
        if self.stacks < 1:
            raise ConfigError("stacks must be >= 1")
        bad = [i for i in self.dsa_placement if not 0 <= i < self.stacks]
        if bad:
            raise ConfigError(f"dsa_placement indices {bad} outside 0..{self.stacks - 1}")
        if len(set(self.dsa_placement)) != len(self.dsa_placement):
            raise ConfigError(f"dsa_placement has duplicates: {self.dsa_placement}")
        if self.landmarks != 12 or self.boundaries != 3:
            raise ConfigError("the synthetic face layout is fixed at 12 landmarks "
                              "and 3 boundary chains")
        if self.cca_depth < 1 or self.cca_heads < 1:
            raise ConfigError("cca_depth and cca_heads must be >= 1")
        if self.head_dim < 0:
            raise ConfigError("head_dim must be >= 0 (0 = channels // heads)")
        if self.stem_kernel % 2 == 0 or self.stem_kernel < 1:
            raise ConfigError("stem_kernel must be odd and positive")
        if self.tokenizer_kernel not in (0, 1, 3, 5):
            raise ConfigError("tokenizer_kernel must be 0 (patch), 1, 3 or 5")
        if self.recon_kernel % 2 == 0 or self.recon_kernel < 1:
            raise ConfigError("recon_kernel must be odd and positive")
        if self.deconv_kernel not in (2, 4):
            raise ConfigError("deconv_kernel must be 2 or 4")
        if self.block_convs < 1:
            raise ConfigError("block_convs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.sigma_gt <= 0:
            raise ConfigError("sigma_gt must be positive")
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("lr must be positive, batch_size >= 1, iterations >= 0")
        if self.halve_every < 0:
            raise ConfigError("halve_every must be >= 0 (0 disables decay)")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"norm_kind must be one of {NORM_KINDS}")
        if self.train_samples < 1:
            raise ConfigError("train_samples must be >= 1")
        parse_mix(self.difficulty_mix)
        return self

    def canonical_items(self) -> list[tuple[str, str]]:
        items = []
        for f in sorted(fields(self), key=lambda f: f.name):
            items.append((f.name, _format_value(getattr(self, f.name))))
        return items

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.canonical_items())
        return hashlib.sha256(text.encode()).hexdigest()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "dsa_placement" in d:
            d["dsa_placement"] = tuple(int(i) for i in d["dsa_placement"])
        return TrainConfig(**d).validate()


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(field_type: type, raw: str, key: str):
    raw = raw.strip()
    if field_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is str:
        return raw
    # the only structured field is the placement tuple
    if raw == "":
        return ()
    return tuple(int(part) for part in raw.split(","))


def load_config(path) -> TrainConfig:
    """Read a flat ``key = value`` file; unknown keys are errors."""
    field_map = {f.name: f for f in fields(TrainConfig)}
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in field_map:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        ftype = _FIELD_TYPES[key]
        values[key] = _parse_value(ftype, raw, key)
    return TrainConfig(**values).validate()


def save_config(cfg: TrainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in cfg.canonical_items()]
    Path(path).write_text("\n".join(lines) + "\n")


_FIELD_TYPES: dict[str, type] = {}
for _f in fields(TrainConfig):
    if _f.type in ("int", int):
        _FIELD_TYPES[_f.name] = int
    elif _f.type in ("float", float):
        _FIELD_TYPES[_f.name] = float
    elif _f.type in ("bool", bool):
        _FIELD_TYPES[_f.name] = bool
    elif _f.type in ("str", str):
        _FIELD_TYPES[_f.name] = str
    else:
        _FIELD_TYPES[_f.name] = tuple
