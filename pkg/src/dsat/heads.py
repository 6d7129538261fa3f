"""Prediction heads and the training loss.

A shared trunk (conv + norm + transposed conv doubling the grid) feeds
two sibling 1x1 convolutions, one for landmark heatmaps and one for
boundary heatmaps. The loss is the mean squared error of each heatmap
family against its rendered target, summed; with several stacks the
per-stack losses are summed (intermediate supervision).
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module, RunContext
from .tensor import Tensor


class HeatmapHeads(Module):
    def __init__(self, channels: int, landmarks: int, boundaries: int,
                 deconv_kernel: int = 4):
        super().__init__()
        if deconv_kernel not in (2, 4):
            raise ShapeError(f"deconv kernel must be 2 or 4 for an exact x2, got {deconv_kernel}")
        self.trunk_conv = Conv2d(channels, channels, 3, padding=1)
        self.trunk_bn = BatchNorm2d(channels)
        self.deconv = ConvTranspose2d(channels, channels, deconv_kernel, stride=2,
                                      padding=(deconv_kernel - 2) // 2)
        self.deconv_bn = BatchNorm2d(channels)
        self.landmark_conv = Conv2d(channels, landmarks, 1)
        self.boundary_conv = Conv2d(channels, boundaries, 1)

    def forward(self, x: Tensor, ctx: RunContext) -> tuple[Tensor, Tensor]:
        h = T.relu(self.trunk_bn(self.trunk_conv(x), ctx))
        h = T.relu(self.deconv_bn(self.deconv(h), ctx))
        return self.landmark_conv(h), self.boundary_conv(h)


def heatmap_mse(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    """Mean squared error over all heatmap elements."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target_data.shape:
        raise ShapeError(f"heatmap shapes differ: {pred.shape} vs {target_data.shape}")
    diff = T.sub(pred, Tensor(target_data) if not isinstance(target, Tensor) else target)
    return T.mean(T.mul(diff, diff))


def heatmap_loss(pred_landmark: Tensor, pred_boundary: Tensor,
                 gt_landmark, gt_boundary) -> Tensor:
    """Landmark MSE plus boundary MSE, unweighted."""
    return T.add(heatmap_mse(pred_landmark, gt_landmark),
                 heatmap_mse(pred_boundary, gt_boundary))


def stacked_loss(stack_outputs: list[tuple[Tensor, Tensor]],
                 gt_landmark, gt_boundary) -> Tensor:
    """Sum of per-stack losses against the shared targets."""
    total = None
    for lm, bd in stack_outputs:
        term = heatmap_loss(lm, bd, gt_landmark, gt_boundary)
        total = term if total is None else T.add(total, term)
    return total
