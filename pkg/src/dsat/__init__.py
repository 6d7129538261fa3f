"""Desk-scale dynamically gated hourglass landmark detection.

A numpy-backed tensor kernel with reverse-mode autodiff, a per-sample
binary channel gate with straight-through gradients, cross-channel
attention over a four-scale hourglass pyramid, heatmap heads with an L2
objective, landmark metrics (NME / failure rate), and a synthetic-face
training harness with a CLI.
"""
from .attention import CcaConfig, CrossScaleAttention, concat_scales
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, save_config
from .gate import (ChannelGate, GateDecision, GateMode, activation_ratio,
                   add_noise, apply_gate, binary_activation, pool_descriptor,
                   saturating_sigmoid, select_gate)
from .gradcheck import grad_check
from .heads import HeatmapHeads, heatmap_loss, heatmap_mse, stacked_loss
from .heatmaps import (LandmarkSet, load_heatmap_bundle,
                       render_boundary_heatmaps, render_landmark_heatmaps,
                       save_heatmap_bundle)
from .hourglass import Dss
from .metrics import (EvalRecord, NormalizationLayout, aggregate_metrics,
                      decode, failure_rate, gate_report, nme, norm_distance)
from .model import DsatModel, ModelOutput, build_model
from .nn import RunContext, initialize
from .optim import Adam, lr_at
from .synthetic import (BOUNDARY_CHAINS, LANDMARK_COUNT, SyntheticSample,
                        augment, generate_dataset, generate_sample,
                        load_dataset, parse_mix, write_dataset)
from .tensor import Parameter, Tensor, no_grad
from .train import (evaluate, fit, run_ablation, run_grad_check, train,
                    training_samples)

__version__ = "0.1.0"
