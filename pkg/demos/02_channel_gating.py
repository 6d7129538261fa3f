"""The per-sample channel gate: soft/hard paths, noise, straight-through.

Run:  python demos/02_channel_gating.py
"""
import numpy as np

import dsat.tensor as T
from dsat.gate import (ChannelGate, GateMode, activation_ratio, add_noise,
                       binary_activation, pool_descriptor, saturating_sigmoid,
                       select_gate)
from dsat.nn import RunContext
from dsat.tensor import Tensor

rng = np.random.default_rng(1)
features = Tensor(rng.normal(0.0, 1.0, size=(4, 8, 6, 6)), requires_grad=True)

# --- the pieces -------------------------------------------------------------
descriptor = pool_descriptor(features)
print("channel descriptors (one row per sample):")
print(np.round(descriptor.data, 2))

train = GateMode(training=True, rng=np.random.default_rng(2))
noisy = add_noise(descriptor, train)
soft = saturating_sigmoid(noisy)
hard = binary_activation(noisy.data)
gate, decisions = select_gate(soft, hard, train)
print("\ntraining paths:", [d.path for d in decisions])

# --- evaluation is deterministic and binary ---------------------------------
gate_module = ChannelGate()
gated, eval_decisions = gate_module(features, RunContext.eval())
print("\neval gates (rows are samples):")
print(np.stack([d.gate for d in eval_decisions]))
print("activation ratios:", [activation_ratio(d) for d in eval_decisions])

# --- straight-through: hard-gate forward, soft-gate backward ----------------
readout = Tensor(rng.normal(size=descriptor.shape))
for path in ("alpha", "beta"):
    probe = Tensor(descriptor.data.copy(), requires_grad=True)
    s = saturating_sigmoid(probe)
    h = binary_activation(probe.data)
    g, _ = select_gate(s, h, GateMode(training=True, rng=None, noise=False,
                                      force_path=path))
    T.sum_(T.mul(g, readout)).backward()
    print(f"\n{path}-path gradient (rows are samples):")
    print(np.round(probe.grad, 4))
print("\nthe two gradients above are identical by construction")
