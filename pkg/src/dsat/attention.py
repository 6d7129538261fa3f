"""Cross-channel attention over the four-scale feature pyramid.

All four scales are tokenized down to the coarsest grid, concatenated
along channels, and attended from the channel side: per head the logits
are ``q^T k / (2*sqrt(C))`` (a head_dim x head_dim matrix), squashed with
an elementwise sigmoid rather than softmax, applied to ``v^T``, and the
head average is projected back to token space. A two-layer MLP with a
residual follows; after the last block each scale is reshaped to its map,
upsampled, convolved, normalized and added to the original feature map.

Zeroing the output projection, the MLP's second layer and the
reconstruction convolutions (``reset_to_identity``) makes the whole block
an exact identity on the pyramid; that configuration is the module's
primary regression anchor. Default initialization is random: a branch
that is exactly zero in front of a ReLU would never receive gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import (BatchNorm2d, Conv2d, Dropout, LayerNorm, Linear, Module,
                 ModuleList, RunContext)
from .tensor import Parameter, Tensor

NUM_SCALES = 4
TOKEN_STRIDE = 8  # tokens live on the grid of the coarsest (t=3) scale


@dataclass
class CcaConfig:
    heads: int = 4
    depth: int = 3
    head_dim: int = 0  # 0 -> channels // heads
    dropout: float = 0.1
    tokenizer_kernel: int = 0  # 0 -> kernel equals the per-scale stride
    recon_kernel: int = 3

    def resolved_head_dim(self, channels: int) -> int:
        if self.head_dim > 0:
            return self.head_dim
        return max(1, channels // self.heads)


def concat_scales(tokens: list[Tensor]) -> Tensor:
    """Concatenate the four token sequences along the channel axis."""
    if len(tokens) != NUM_SCALES:
        raise ShapeError(f"expected {NUM_SCALES} token sequences, got {len(tokens)}")
    s = tokens[0].shape[-2]
    for z in tokens[1:]:
        if z.shape[-2] != s:
            raise ShapeError(
                f"token counts differ across scales: {[z.shape for z in tokens]}"
            )
    return T.concat(tokens, axis=-1)


class CcaBlock(Module):
    """One attention + MLP round over the four token sequences.

    Query projections and their layer norms are per scale; the key/value
    projections, output projection and MLP are shared across scales.
    """

    def __init__(self, channels: int, heads: int, head_dim: int):
        super().__init__()
        proj = heads * head_dim
        self.channels = channels
        self.heads = heads
        self.head_dim = head_dim
        self.ln_q = ModuleList([LayerNorm(channels) for _ in range(NUM_SCALES)])
        self.wq = ModuleList([_MatrixParam(channels, proj) for _ in range(NUM_SCALES)])
        self.ln_kv = LayerNorm(NUM_SCALES * channels)
        self.wk = _MatrixParam(NUM_SCALES * channels, proj)
        self.wv = _MatrixParam(NUM_SCALES * channels, proj)
        self.w_out = _MatrixParam(head_dim, channels)
        self.ln_mlp = LayerNorm(channels)
        self.fc1 = Linear(channels, 2 * channels, init="he")
        self.fc2 = Linear(2 * channels, channels)

    def project_qkv(self, z_t: Tensor, scale: int, z_all: Tensor
                    ) -> tuple[Tensor, Tensor, Tensor]:
        """Per-scale query and shared key/value projections (pre head split)."""
        q = self.wq[scale](self.ln_q[scale](z_t))
        k = self.wk(self.ln_kv(z_all))
        v = self.wv(self.ln_kv(z_all))
        return q, k, v

    def attention(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        """Sigmoid channel attention, averaged over heads -> (N, head_dim, s)."""
        temperature = 2.0 * math.sqrt(self.channels)
        total = None
        for h in range(self.heads):
            lo = h * self.head_dim
            qh = T.narrow(q, 2, lo, self.head_dim)
            kh = T.narrow(k, 2, lo, self.head_dim)
            vh = T.narrow(v, 2, lo, self.head_dim)
            logits = T.mul(T.bmm(T.transpose(qh, (0, 2, 1)), kh), 1.0 / temperature)
            T.assert_finite(logits, "attention logits")
            weights = T.sigmoid(logits)
            contrib = T.bmm(weights, T.transpose(vh, (0, 2, 1)))
            total = contrib if total is None else T.add(total, contrib)
        return T.mul(total, 1.0 / self.heads)

    def mlp_residual(self, z_t: Tensor, attended: Tensor) -> Tensor:
        h = self.ln_mlp(T.add(z_t, attended))
        h = self.fc2(T.relu(self.fc1(h)))
        return T.add(z_t, h)

    def forward(self, tokens: list[Tensor]) -> list[Tensor]:
        z_all = concat_scales(tokens)
        out = []
        for t, z_t in enumerate(tokens):
            q, k, v = self.project_qkv(z_t, t, z_all)
            head_mean = self.attention(q, k, v)
            attended = self.w_out(T.transpose(head_mean, (0, 2, 1)))
            out.append(self.mlp_residual(z_t, attended))
        return out


class _MatrixParam(Module):
    """Bias-free projection matrix applied to (..., in) tensors."""

    def __init__(self, cin: int, cout: int, init: str = "xavier"):
        super().__init__()
        self.weight = Parameter((cin, cout), init=init, fan_in=cin, fan_out=cout)
        self.cin = cin
        self.cout = cout

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        out = T.matmul(T.reshape(x, (-1, self.cin)), self.weight)
        return T.reshape(out, lead + (self.cout,))


class CrossScaleAttention(Module):
    """Tokenize the pyramid, run attention blocks, reconstruct residuals."""

    def __init__(self, channels: int, grid_hw: tuple[int, int], cfg: CcaConfig):
        super().__init__()
        gh, gw = grid_hw
        if gh % TOKEN_STRIDE or gw % TOKEN_STRIDE:
            raise ConfigError(f"pyramid grid {grid_hw} must be divisible by {TOKEN_STRIDE}")
        self.channels = channels
        self.grid_hw = grid_hw
        self.token_hw = (gh // TOKEN_STRIDE, gw // TOKEN_STRIDE)
        self.tokens = self.token_hw[0] * self.token_hw[1]
        self.cfg = cfg

        tokenizers = []
        for t in range(NUM_SCALES):
            stride = 2 ** (NUM_SCALES - 1 - t)
            if cfg.tokenizer_kernel == 0:
                kernel, pad = stride, 0
            else:
                kernel, pad = cfg.tokenizer_kernel, cfg.tokenizer_kernel // 2
            tokenizers.append(Conv2d(channels, channels, kernel, stride=stride, padding=pad))
        self.tokenizers = ModuleList(tokenizers)
        self.pos = ModuleList([_PosEmbedding(self.tokens, channels) for _ in range(NUM_SCALES)])
        self.drop = Dropout(cfg.dropout)
        head_dim = cfg.resolved_head_dim(channels)
        self.blocks = ModuleList([CcaBlock(channels, cfg.heads, head_dim)
                                  for _ in range(cfg.depth)])
        rk = cfg.recon_kernel
        self.recon_conv = ModuleList([Conv2d(channels, channels, rk, padding=rk // 2)
                                      for _ in range(NUM_SCALES)])
        self.recon_bn = ModuleList([BatchNorm2d(channels) for _ in range(NUM_SCALES)])

    def reset_to_identity(self) -> None:
        """Zero the output projections, MLP final layers and recon convs.

        In this configuration the whole module maps the pyramid to itself
        exactly (the injected residual is identically zero).
        """
        for block in self.blocks:
            block.w_out.weight.data[...] = 0.0
            block.fc2.weight.data[...] = 0.0
            block.fc2.bias.data[...] = 0.0
        for conv in self.recon_conv:
            conv.weight.data[...] = 0.0

    def tokenize(self, pyramid: list[Tensor], ctx: RunContext) -> list[Tensor]:
        """Map every scale onto the coarsest grid and flatten to tokens."""
        out = []
        th, tw = self.token_hw
        for t, y in enumerate(pyramid):
            z = self.tokenizers[t](y)
            if z.shape[2:] != (th, tw):
                raise ConfigError(
                    f"scale {t} tokenized to grid {z.shape[2:]}, expected {(th, tw)}"
                )
            n, c = z.shape[0], z.shape[1]
            z = T.reshape(T.transpose(z, (0, 2, 3, 1)), (n, self.tokens, c))
            z = T.add(z, self.pos[t].embedding)
            out.append(self.drop(z, ctx))
        return out

    def reconstruct(self, tokens: list[Tensor], pyramid: list[Tensor],
                    ctx: RunContext) -> list[Tensor]:
        """Unflatten each sequence, upsample to its scale, refine, add back."""
        out = []
        th, tw = self.token_hw
        for t, (z, y) in enumerate(zip(tokens, pyramid)):
            n = z.shape[0]
            maps = T.transpose(T.reshape(z, (n, th, tw, self.channels)), (0, 3, 1, 2))
            up = T.upsample_nearest(maps, 2 ** (NUM_SCALES - 1 - t))
            if up.shape != y.shape:
                raise ShapeError(
                    f"reconstructed scale {t} has shape {up.shape}, feature map {y.shape}"
                )
            r = T.relu(self.recon_bn[t](self.recon_conv[t](up), ctx))
            out.append(T.add(y, r))
        return out

    def forward(self, pyramid: list[Tensor], ctx: RunContext) -> list[Tensor]:
        tokens = self.tokenize(pyramid, ctx)
        for block in self.blocks:
            tokens = block(tokens)
        return self.reconstruct(tokens, pyramid, ctx)


class _PosEmbedding(Module):
    def __init__(self, tokens: int, channels: int):
        super().__init__()
        self.embedding = Parameter((tokens, channels), init="zeros")
