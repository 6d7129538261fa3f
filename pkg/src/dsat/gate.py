"""Per-sample dynamic channel gating.

A gate pools each sample's feature map into a channel descriptor, adds
unit Gaussian noise while training, and binarizes the noisy descriptor.
Training randomly routes each sample through either the saturating-sigmoid
soft gate (path "alpha") or the hard 0/1 gate (path "beta"); evaluation
always uses the hard gate without noise. Gradients for the hard gate are
rerouted through the soft gate's Jacobian (straight-through), so a zeroed
channel still updates the layers that feed its descriptor.

The gate has no learned parameters: the pooled descriptor feeds the
binarization directly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .nn import Module, RunContext
from .tensor import Tensor

PATH_ALPHA = "alpha"
PATH_BETA = "beta"
PATH_EVAL = "eval"


@dataclass
class GateMode:
    """Gate switches for one forward pass.

    The generator is owned by the caller; evaluation passes need none and
    are fully deterministic.
    """

    training: bool
    rng: np.random.Generator | None = None
    noise: bool = True
    force_path: str | None = None


@dataclass
class GateDecision:
    """One sample's resolved gate: C values plus path provenance."""

    gate: np.ndarray
    path: str
    noise_used: bool


def pool_descriptor(x: Tensor) -> Tensor:
    """Channel descriptor d: the mean over each channel plane, (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"pool_descriptor expects NCHW, got shape {x.shape}")
    return T.adaptive_avg_pool(x)


def add_noise(d: Tensor, mode: GateMode) -> Tensor:
    """Perturb the descriptor with fresh unit Gaussian noise while training."""
    if not (mode.training and mode.noise):
        return d
    if mode.rng is None:
        raise ContractError("gate noise requires a seeded generator")
    return T.add(d, Tensor(mode.rng.standard_normal(d.shape)))


def saturating_sigmoid(v: Tensor) -> Tensor:
    """max(0, min(1, 1.2*sigmoid(v) - 0.1)), the soft gate."""
    return T.clamp01(T.sub(T.mul(T.sigmoid(v), 1.2), 0.1))


def binary_activation(v: np.ndarray) -> np.ndarray:
    """Hard gate: 1 where v > 0, else 0 (0 itself maps to 0)."""
    return (np.asarray(v) > 0.0).astype(np.float64)


def select_gate(soft: Tensor, hard: np.ndarray, mode: GateMode
                ) -> tuple[Tensor, list[GateDecision]]:
    """Route each sample through the soft or hard gate.

    Training assigns paths independently per sample with probability 1/2
    each (optionally pinned via ``mode.force_path``); evaluation always
    takes the hard gate. The returned tensor equals the hard values on
    hard-gated samples but backpropagates through the soft gate for every
    sample, which is exactly the straight-through definition.
    """
    if soft.shape != hard.shape:
        raise ShapeError(f"gate shapes differ: {soft.shape} vs {hard.shape}")
    n = soft.shape[0]
    if not mode.training:
        hard_rows = np.ones(n, dtype=bool)
        paths = [PATH_EVAL] * n
    elif mode.force_path == PATH_ALPHA:
        hard_rows = np.zeros(n, dtype=bool)
        paths = [PATH_ALPHA] * n
    elif mode.force_path == PATH_BETA:
        hard_rows = np.ones(n, dtype=bool)
        paths = [PATH_BETA] * n
    else:
        if mode.rng is None:
            raise ContractError("gate path selection requires a seeded generator")
        hard_rows = mode.rng.random(n) < 0.5
        paths = [PATH_BETA if h else PATH_ALPHA for h in hard_rows]

    # value = soft + stop_grad(hard - soft) on hard rows
    correction = (hard - soft.data) * hard_rows[:, None]
    gate = T.add(soft, Tensor(correction))
    noise_used = bool(mode.training and mode.noise)
    decisions = [GateDecision(gate.data[i].copy(), paths[i], noise_used) for i in range(n)]
    return gate, decisions


def apply_gate(x: Tensor, gate: Tensor | GateDecision) -> Tensor:
    """Scale each channel plane by its gate entry.

    Accepts the batched (N, C) gate tensor or a single GateDecision, which
    is broadcast over the batch.
    """
    if isinstance(gate, GateDecision):
        gate = Tensor(gate.gate)
    c = x.shape[1]
    if gate.shape[-1] != c:
        raise ShapeError(f"gate length {gate.shape[-1]} != channel count {c}")
    if gate.ndim == 1:
        mask = T.reshape(gate, (1, c, 1, 1))
    elif gate.ndim == 2:
        mask = T.reshape(gate, (gate.shape[0], c, 1, 1))
    else:
        raise ShapeError(f"gate must be (C,) or (N, C), got shape {gate.shape}")
    return T.mul(x, mask)


def activation_ratio(decision: GateDecision) -> float:
    """Fraction of channels switched on; defined only for binary gates."""
    if decision.path == PATH_ALPHA:
        raise ContractError("activation ratio is undefined for soft (alpha-path) gates")
    return float(np.count_nonzero(decision.gate == 1.0)) / decision.gate.size


def write_gate_csv(path, rows: Sequence[tuple]) -> None:
    """Per-sample gate export: sample_id, dsa_index, ratio, C."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "dsa_index", "ratio", "C"])
        for row in rows:
            writer.writerow(list(row))


class ChannelGate(Module):
    """Parameter-free gating block: descriptor -> noise -> binarize -> mask."""

    def __init__(self):
        super().__init__()

    def forward(self, x: Tensor, ctx: RunContext) -> tuple[Tensor, list[GateDecision]]:
        mode = GateMode(training=ctx.training, rng=ctx.rng,
                        noise=ctx.gate_noise, force_path=ctx.force_path)
        d = pool_descriptor(x)
        noisy = add_noise(d, mode)
        soft = saturating_sigmoid(noisy)
        hard = binary_activation(noisy.data)
        gate, decisions = select_gate(soft, hard, mode)
        return apply_gate(x, gate), decisions
