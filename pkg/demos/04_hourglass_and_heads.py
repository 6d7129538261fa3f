"""Hourglass pyramid, decoder injection, and heatmap heads.

Run:  python demos/04_hourglass_and_heads.py
"""
import numpy as np

from dsat.attention import CcaConfig
from dsat.heads import HeatmapHeads, heatmap_loss
from dsat.heatmaps import LandmarkSet, render_boundary_heatmaps, render_landmark_heatmaps
from dsat.hourglass import Dss
from dsat.nn import RunContext, initialize
from dsat.synthetic import BOUNDARY_CHAINS, generate_sample
from dsat.tensor import Tensor

ctx = RunContext.eval()
rng = np.random.default_rng(0)

# --- encoder halves the grid three times at constant channels --------------
dss = Dss(16, (32, 32), CcaConfig(heads=4, depth=2, dropout=0.0))
initialize(dss, seed=0)
x = Tensor(rng.normal(size=(1, 16, 32, 32)))
pyramid = dss.encode(x, ctx)
print("pyramid:", [tuple(y.shape) for y in pyramid])

refined = dss.inject(pyramid, ctx)
out = dss.decode(refined, ctx)
print("decoded:", tuple(out.shape), "(same grid as the input)")

# --- stacking: the output of one hourglass feeds the next ------------------
dss2 = Dss(16, (32, 32), CcaConfig(heads=4, depth=2, dropout=0.0))
initialize(dss2, seed=1)
print("stacked:", tuple(dss2(dss(x, ctx), ctx).shape))

# --- heads double the grid and split into landmark/boundary maps -----------
heads = HeatmapHeads(16, landmarks=12, boundaries=3)
initialize(heads, seed=2)
lm, bd = heads(out, ctx)
print("landmark heatmaps:", tuple(lm.shape), " boundary heatmaps:", tuple(bd.shape))

# --- rendered targets and the L2 objective ----------------------------------
sample = generate_sample(7, "neutral", image_size=64)
pts = LandmarkSet(sample.landmarks * (64 / 64) * (lm.shape[-1] / 64))
gt_lm = render_landmark_heatmaps(pts, sigma=1.5, h=lm.shape[-1])
gt_bd = render_boundary_heatmaps(pts, BOUNDARY_CHAINS, sigma=1.5, h=bd.shape[-1])
loss = heatmap_loss(lm, bd, gt_lm[None], gt_bd[None])
print("loss against rendered targets:", float(loss.data))
