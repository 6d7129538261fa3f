"""Hourglass encoder/decoder with attention-refined skip pathways.

The encoder keeps the input as the finest scale and halves the grid three
times through residual blocks, giving four scales at a constant channel
count. Instead of plain skip connections, the cross-scale attention block
rewrites each scale into a refined residual map; the decoder consumes
those maps bottom-up, upsampling and adding one scale at a time. With the
attention disabled (or zero-initialized) the refined maps equal the raw
encoder features and the network reduces to a standard hourglass.
"""
from __future__ import annotations

from . import tensor as T
from .attention import NUM_SCALES, CcaConfig, CrossScaleAttention
from .errors import ConfigError
from .nn import Module, ModuleList, ResidualBlock, RunContext
from .tensor import Tensor


class Dss(Module):
    def __init__(self, channels: int, grid_hw: tuple[int, int],
                 cca: CcaConfig | None, block_convs: int = 2):
        super().__init__()
        gh, gw = grid_hw
        if gh % 8 or gw % 8:
            raise ConfigError(f"hourglass grid {grid_hw} must be divisible by 8")
        self.channels = channels
        self.grid_hw = grid_hw
        self.encoder = ModuleList([ResidualBlock(channels, block_convs)
                                   for _ in range(NUM_SCALES - 1)])
        self.cca = CrossScaleAttention(channels, grid_hw, cca) if cca is not None else None
        self.decoder = ModuleList([ResidualBlock(channels, block_convs)
                                   for _ in range(NUM_SCALES - 1)])

    def encode(self, x: Tensor, ctx: RunContext) -> list[Tensor]:
        """Four-scale pyramid; scale t has the grid halved t times."""
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ConfigError(f"input grid {x.shape[2:]} must be divisible by 8")
        pyramid = [x]
        current = x
        for block in self.encoder:
            current = block(T.maxpool2d(current, 2), ctx)
            pyramid.append(current)
        return pyramid

    def inject(self, pyramid: list[Tensor], ctx: RunContext) -> list[Tensor]:
        if self.cca is None:
            return pyramid
        return self.cca(pyramid, ctx)

    def decode(self, injected: list[Tensor], ctx: RunContext) -> Tensor:
        """Bottom-up accumulation: block, upsample x2, add the next scale."""
        if len(injected) != NUM_SCALES:
            raise ConfigError(f"decoder needs {NUM_SCALES} maps, got {len(injected)}")
        out = injected[-1]
        for t, block in zip(range(NUM_SCALES - 2, -1, -1), self.decoder):
            out = T.upsample_nearest(block(out, ctx), 2)
            if out.shape != injected[t].shape:
                raise ConfigError(
                    f"decoder scale {t}: got {out.shape}, expected {injected[t].shape}"
                )
            out = T.add(out, injected[t])
        return out

    def forward(self, x: Tensor, ctx: RunContext) -> Tensor:
        return self.decode(self.inject(self.encode(x, ctx), ctx), ctx)
