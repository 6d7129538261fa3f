"""Training loop, evaluation, gradient-check runner and ablation protocol."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import TrainConfig, save_config
from .errors import NumericsError, TrainingDiverged
from .gate import activation_ratio
from .gradcheck import GradCheckReport, grad_check
from .heads import stacked_loss
from .heatmaps import LandmarkSet, render_boundary_heatmaps, render_landmark_heatmaps
from .metrics import (EvalRecord, NormalizationLayout, aggregate_metrics, decode,
                      gate_report, norm_distance)
from .model import DsatModel, build_model
from .nn import RunContext, initialize
from .optim import Adam, lr_at
from .synthetic import (BOUNDARY_CHAINS, SyntheticSample, augment,
                        generate_dataset, load_dataset, parse_mix)
from .tensor import Tensor


@dataclass
class FitResult:
    model: DsatModel
    losses: list[float]
    lrs: list[float]


@dataclass
class TrainResult:
    losses: list[float]
    lrs: list[float]
    checkpoint: Path | None
    out_dir: Path | None


def training_samples(cfg: TrainConfig) -> list[SyntheticSample]:
    """Load the configured dataset directory or synthesize one."""
    if cfg.data_dir:
        return load_dataset(cfg.data_dir)
    mix = parse_mix(cfg.difficulty_mix)
    return generate_dataset(cfg.train_samples, mix, seed=cfg.seed,
                            image_size=cfg.image_size)


def ground_truth_maps(sample: SyntheticSample, cfg: TrainConfig
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Rendered landmark and boundary targets in heatmap coordinates."""
    scale = cfg.heatmap_size / cfg.image_size
    pts = LandmarkSet(sample.landmarks * scale)
    lm = render_landmark_heatmaps(pts, cfg.sigma_gt, cfg.heatmap_size)
    bd = render_boundary_heatmaps(pts, BOUNDARY_CHAINS, cfg.sigma_gt, cfg.heatmap_size)
    return lm, bd


def _batch_arrays(samples: list[SyntheticSample], cfg: TrainConfig,
                  cached_gt: list[tuple[np.ndarray, np.ndarray]] | None = None,
                  indices: list[int] | None = None):
    chosen = samples if indices is None else [samples[i] for i in indices]
    images = np.stack([s.image for s in chosen])[:, None, :, :]
    if cached_gt is not None and indices is not None:
        gt = [cached_gt[i] for i in indices]
    else:
        gt = [ground_truth_maps(s, cfg) for s in chosen]
    gt_lm = np.stack([g[0] for g in gt])
    gt_bd = np.stack([g[1] for g in gt])
    return images, gt_lm, gt_bd


def fit(cfg: TrainConfig, samples: list[SyntheticSample],
        on_divergence_save: Path | None = None) -> FitResult:
    """Run the Adam loop over synthetic samples; deterministic under seed."""
    cfg.validate()
    model = build_model(cfg)
    params = list(model.named_parameters())
    opt = Adam(params, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    run_rng = np.random.default_rng([cfg.seed, 101])
    batch_rng = np.random.default_rng([cfg.seed, 102])
    aug_rng = np.random.default_rng([cfg.seed, 103])

    cached_gt = None
    if not cfg.augment:
        cached_gt = [ground_truth_maps(s, cfg) for s in samples]

    losses: list[float] = []
    lrs: list[float] = []
    last_good: dict[str, np.ndarray] | None = None
    order: list[int] = []
    for it in range(cfg.iterations):
        while len(order) < cfg.batch_size:
            order.extend(int(i) for i in batch_rng.permutation(len(samples)))
        idxs = order[:cfg.batch_size]
        del order[:cfg.batch_size]

        if cfg.augment:
            batch = [augment(samples[i], aug_rng) for i in idxs]
            images, gt_lm, gt_bd = _batch_arrays(batch, cfg)
        else:
            images, gt_lm, gt_bd = _batch_arrays(samples, cfg, cached_gt, idxs)

        ctx = RunContext(training=True, rng=run_rng)
        model.zero_grad()
        try:
            out = model(Tensor(images), ctx)
            loss = stacked_loss(out.heatmaps, gt_lm, gt_bd)
            loss_value = float(loss.data)
        except NumericsError:
            loss_value = float("nan")
        if not np.isfinite(loss_value):
            path = None
            if on_divergence_save is not None:
                if last_good is not None:
                    for name, p in params:
                        p.data[...] = last_good[name]
                path = str(save_checkpoint(model, cfg, on_divergence_save))
            raise TrainingDiverged(it, path)
        last_good = {name: p.data.copy() for name, p in params}
        losses.append(loss_value)
        lr = lr_at(it, cfg.lr, cfg.halve_every)
        lrs.append(lr)
        loss.backward()
        opt.step(lr)

    return FitResult(model=model, losses=losses, lrs=lrs)


def train(cfg: TrainConfig, out_dir, samples: list[SyntheticSample] | None = None
          ) -> TrainResult:
    """Fit and persist: checkpoint, loss curve and the resolved config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if samples is None:
        samples = training_samples(cfg)
    result = fit(cfg, samples, on_divergence_save=out_dir / "last_good.json")
    ckpt = save_checkpoint(result.model, cfg, out_dir / "checkpoint.json")
    save_config(cfg, out_dir / "config.cfg")
    with open(out_dir / "losses.csv", "w") as fh:
        fh.write("iteration,loss,lr\n")
        for i, (lv, lr) in enumerate(zip(result.losses, result.lrs)):
            fh.write(f"{i},{lv!r},{lr!r}\n")
    return TrainResult(losses=result.losses, lrs=result.lrs,
                       checkpoint=ckpt, out_dir=out_dir)


EVAL_FORMAT = "dsat-eval-v1"


def evaluate(model: DsatModel, cfg: TrainConfig, samples: list[SyntheticSample],
             fr_threshold: float = 10.0, batch_size: int = 8,
             refine: bool = False) -> dict:
    """Deterministic evaluation: decoded landmark error, gates, aggregates."""
    scale = cfg.heatmap_size / cfg.image_size
    layout = NormalizationLayout()
    records: list[EvalRecord] = []
    labels: dict[str, str] = {}
    ctx = RunContext.eval()
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([s.image for s in chunk])[:, None, :, :]
        with T.no_grad():
            out = model(Tensor(images), ctx)
        lm_maps = out.heatmaps[-1][0].data
        for i, sample in enumerate(chunk):
            pred_pts, _ = decode(lm_maps[i], refine=refine)
            gt_pts = sample.landmarks * scale
            d = norm_distance(LandmarkSet(gt_pts), cfg.norm_kind, layout)
            errors = np.sqrt(((pred_pts - gt_pts) ** 2).sum(axis=1))
            ratios = [(stack_idx, activation_ratio(decisions[i]))
                      for stack_idx, decisions in out.gates]
            records.append(EvalRecord(
                sample_id=sample.sample_id,
                nme_percent=float(errors.mean() / d * 100.0),
                per_landmark_errors=[float(e) for e in errors],
                norm_distance=float(d),
                activation_ratios=ratios,
            ))
            labels[sample.sample_id] = sample.label

    report = {
        "format": EVAL_FORMAT,
        "config_hash": cfg.config_hash(),
        "channels": cfg.channels,
        "norm_kind": cfg.norm_kind,
        "sample_count": len(records),
        "records": [dict(rec.to_dict(), label=labels[rec.sample_id])
                    for rec in records],
        "aggregate": aggregate_metrics(records, labels, fr_threshold),
        "gate_summary": gate_report(records, labels),
    }
    return report


def report_to_json_bytes(report: dict) -> bytes:
    """Canonical serialization so identical reports are identical bytes."""
    return (json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n").encode()


def gate_rows_from_report(report: dict) -> list[tuple]:
    """Per-sample gate export rows (sample_id, dsa_index, ratio, C) from a report."""
    channels = int(report["channels"])
    rows = []
    for rec in report["records"]:
        for idx, ratio in rec["activation_ratios"]:
            rows.append((rec["sample_id"], int(idx), float(ratio), channels))
    return rows


def run_grad_check(cfg: TrainConfig, tol: float = 1e-3, eps: float = 1e-5,
                   batch: int = 2) -> GradCheckReport:
    """Whole-model gradient check with every stochastic switch pinned.

    Zero-initialized residual adapters are randomized so that gradient
    flows through every subgraph, noise is off, dropout is off, and all
    samples take the differentiable soft-gate path. The default step is
    smaller than the generic one because normalization denominators give
    the composed loss a large third derivative; central differences at
    1e-4 would be truncation-limited rather than gradient-limited.
    """
    cfg.validate()
    model = DsatModel(cfg)
    initialize(model, cfg.seed, randomize_zero_init=True)
    samples = generate_dataset(batch, {"neutral": 1.0}, seed=cfg.seed + 17,
                               image_size=cfg.image_size)
    images, gt_lm, gt_bd = _batch_arrays(samples, cfg)
    images_t = Tensor(images)
    ctx = RunContext(training=True, rng=None, gate_noise=False,
                     force_path="alpha", use_dropout=False)

    def objective() -> Tensor:
        out = model(images_t, ctx)
        return stacked_loss(out.heatmaps, gt_lm, gt_bd)

    return grad_check(objective, list(model.named_parameters()), eps=eps, tol=tol)


ABLATION_VARIANTS = {
    "shn": (False, False),
    "shn+dsa": (True, False),
    "shn+dss": (False, True),
    "dsat": (True, True),
}


@dataclass
class AblationResult:
    variant_means: dict[str, float]
    per_seed: dict[str, dict[int, float]] = field(default_factory=dict)

    def ordering_holds(self) -> bool:
        """dsat <= min(shn+dsa, shn+dss) <= shn on the seed means."""
        m = self.variant_means
        middle = min(m["shn+dsa"], m["shn+dss"])
        return m["dsat"] <= middle <= m["shn"]


def run_ablation(cfg: TrainConfig, variants: list[str] | None = None,
                 seeds: int = 3, heldout_count: int = 100,
                 heldout_seed: int = 990001,
                 progress=None) -> AblationResult:
    """Train each variant over several seeds; evaluate on a fixed held-out set."""
    cfg.validate()
    variants = variants or list(ABLATION_VARIANTS)
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {sorted(ABLATION_VARIANTS)}")
    mix = parse_mix(cfg.difficulty_mix)
    heldout = generate_dataset(heldout_count, mix, seed=heldout_seed,
                               image_size=cfg.image_size)
    per_seed: dict[str, dict[int, float]] = {v: {} for v in variants}
    for variant in variants:
        enable_dsa, enable_cca = ABLATION_VARIANTS[variant]
        for s in range(seeds):
            run_cfg = replace(cfg, enable_dsa=enable_dsa, enable_cca=enable_cca,
                              seed=cfg.seed + s)
            samples = training_samples(run_cfg)
            result = fit(run_cfg, samples)
            report = evaluate(result.model, run_cfg, heldout)
            nme_mean = report["aggregate"]["overall"]["nme_mean"]
            per_seed[variant][run_cfg.seed] = nme_mean
            if progress is not None:
                progress(variant, run_cfg.seed, nme_mean)
    means = {v: float(np.mean(list(per_seed[v].values()))) for v in variants}
    return AblationResult(variant_means=means, per_seed=per_seed)
