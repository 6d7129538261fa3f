"""Full model assembly: preprocess -> [gate?] -> hourglass stacks -> heads.

The ablation switches map onto the four studied variants: both gates and
attention off gives the plain stacked hourglass baseline; enabling the
channel gates, the cross-scale attention, or both gives the three richer
variants. Parameter values are a pure function of (seed, parameter name),
so variants sharing a submodule layout share its exact initial values.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .attention import CcaConfig
from .config import TrainConfig
from .errors import ConfigError
from .gate import ChannelGate, GateDecision
from .heads import HeatmapHeads
from .hourglass import Dss
from .nn import (BatchNorm2d, Conv2d, Module, ModuleList, ResidualBlock,
                 RunContext, initialize)
from .tensor import Tensor


@dataclass
class ModelOutput:
    heatmaps: list[tuple[Tensor, Tensor]]          # per stack (landmark, boundary)
    gates: list[tuple[int, list[GateDecision]]]    # (stack index, per-sample decisions)


class Preprocess(Module):
    """Stem conv + norm + optional pool + one residual block."""

    def __init__(self, channels: int, stride: int, stem_kernel: int, block_convs: int):
        super().__init__()
        self.stem = Conv2d(1, channels, stem_kernel,
                           stride=2 if stride >= 2 else 1,
                           padding=stem_kernel // 2)
        self.bn = BatchNorm2d(channels)
        self.pool = stride == 4
        self.block = ResidualBlock(channels, block_convs)

    def forward(self, x: Tensor, ctx: RunContext) -> Tensor:
        h = T.relu(self.bn(self.stem(x), ctx))
        if self.pool:
            h = T.maxpool2d(h, 2)
        return self.block(h, ctx)


class StackUnit(Module):
    def __init__(self, gate: ChannelGate | None, dss: Dss, heads: HeatmapHeads):
        super().__init__()
        if gate is not None:
            self.gate = gate
        else:
            self.gate = None
        self.dss = dss
        self.heads = heads


class DsatModel(Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        grid = cfg.feature_grid
        self.preprocess = Preprocess(cfg.channels, cfg.preprocess_stride,
                                     cfg.stem_kernel, cfg.block_convs)
        cca_cfg = None
        if cfg.enable_cca:
            cca_cfg = CcaConfig(heads=cfg.cca_heads, depth=cfg.cca_depth,
                                head_dim=cfg.head_dim, dropout=cfg.dropout,
                                tokenizer_kernel=cfg.tokenizer_kernel,
                                recon_kernel=cfg.recon_kernel)
        units = []
        for i in range(cfg.stacks):
            gate = ChannelGate() if (cfg.enable_dsa and i in cfg.dsa_placement) else None
            dss = Dss(cfg.channels, (grid, grid), cca_cfg, block_convs=cfg.block_convs)
            heads = HeatmapHeads(cfg.channels, cfg.landmarks, cfg.boundaries,
                                 deconv_kernel=cfg.deconv_kernel)
            units.append(StackUnit(gate, dss, heads))
        self.stacks = ModuleList(units)

    def forward(self, images: Tensor, ctx: RunContext) -> ModelOutput:
        if images.ndim != 4 or images.shape[1] != 1:
            raise ConfigError(f"model expects (N, 1, S, S) images, got {images.shape}")
        x = self.preprocess(images, ctx)
        heatmaps = []
        gates = []
        for i, unit in enumerate(self.stacks):
            if unit.gate is not None:
                x, decisions = unit.gate(x, ctx)
                gates.append((i, decisions))
            x = unit.dss(x, ctx)
            heatmaps.append(unit.heads(x, ctx))
        return ModelOutput(heatmaps=heatmaps, gates=gates)


def build_model(cfg: TrainConfig, randomize_zero_init: bool = False) -> DsatModel:
    model = DsatModel(cfg)
    initialize(model, cfg.seed, randomize_zero_init=randomize_zero_init)
    return model


def parameter_names(cfg: TrainConfig) -> list[str]:
    """Parameter layout implied by a config (no initialization needed)."""
    return [name for name, _ in DsatModel(cfg).named_parameters()]
