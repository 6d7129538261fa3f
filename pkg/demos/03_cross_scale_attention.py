"""Cross-channel attention over a feature pyramid, and its identity start.

Run:  python demos/03_cross_scale_attention.py
"""
import numpy as np

from dsat.attention import CcaConfig, CrossScaleAttention, concat_scales
from dsat.nn import RunContext, initialize
from dsat.tensor import Tensor

rng = np.random.default_rng(0)
channels, grid = 16, 32
pyramid = [Tensor(rng.normal(size=(1, channels, grid // 2 ** t, grid // 2 ** t)))
           for t in range(4)]
print("pyramid:", [tuple(y.shape) for y in pyramid])

cca = CrossScaleAttention(channels, (grid, grid), CcaConfig(heads=4, depth=2,
                                                            dropout=0.0))
initialize(cca, seed=0)
ctx = RunContext.eval()

tokens = cca.tokenize(pyramid, ctx)
print("tokens per scale:", [tuple(z.shape) for z in tokens])
print("channel concat:", tuple(concat_scales(tokens).shape))

# freshly built, the module is an exact identity: the output projection,
# the MLP's final layer and the reconstruction convs all start at zero
refined = cca(pyramid, ctx)
identical = all((r.data == y.data).all() for r, y in zip(refined, pyramid))
print("zero-initialized module is an exact identity:", identical)

# randomize those adapters and the refinement becomes active
initialize(cca, seed=1, randomize_zero_init=True)
refined = cca(pyramid, ctx)
deltas = [float(np.abs(r.data - y.data).mean()) for r, y in zip(refined, pyramid)]
print("mean |refinement| per scale after randomizing:", np.round(deltas, 4))

# attention weights are sigmoid scores, bounded but not normalized
block = cca.blocks[0]
z_all = concat_scales(cca.tokenize(pyramid, ctx))
q, k, v = block.project_qkv(cca.tokenize(pyramid, ctx)[0], 0, z_all)
head = block.attention(q, k, v)
print("head-mean attention output:", tuple(head.shape))
