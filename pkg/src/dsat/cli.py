"""Command-line interface.

Subcommands: gen-data, train, eval, gate-stats, grad-check, ablate.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import load_config
from .gate import write_gate_csv
from .metrics import write_gate_report_csv
from .synthetic import generate_dataset, load_dataset, parse_mix, write_dataset
from .train import (ABLATION_VARIANTS, evaluate, gate_rows_from_report,
                    report_to_json_bytes, run_ablation, run_grad_check, train)


def _cmd_gen_data(args) -> int:
    mix = parse_mix(args.mix)
    samples = generate_dataset(args.count, mix, seed=args.seed,
                               image_size=args.image_size)
    write_dataset(args.out, samples)
    counts: dict[str, int] = {}
    for s in samples:
        counts[s.label] = counts.get(s.label, 0) + 1
    print(f"wrote {len(samples)} samples to {args.out} "
          f"({', '.join(f'{k}={v}' for k, v in sorted(counts.items()))})")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, args.out)
    print(f"trained {len(result.losses)} iterations; "
          f"loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    cfg, model = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data)
    report = evaluate(model, cfg, samples, fr_threshold=args.fr_threshold)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_bytes(report_to_json_bytes(report))
    gates_csv = report_path.with_suffix(report_path.suffix + ".gates.csv")
    write_gate_csv(gates_csv, gate_rows_from_report(report))
    agg = report["aggregate"]["overall"]
    print(f"evaluated {report['sample_count']} samples: "
          f"NME {agg['nme_mean']:.3f}%, FR@{args.fr_threshold:g} {agg['fr_percent']:.2f}%")
    print(f"report: {report_path}")
    print(f"per-sample gates: {gates_csv}")
    return 0


def _cmd_gate_stats(args) -> int:
    with open(args.report) as fh:
        report = json.load(fh)
    rows = report.get("gate_summary", [])
    write_gate_report_csv(rows, args.out)
    for row in rows:
        print(f"{row['cluster']:>10s}  gate {row['dsa_index']}: "
              f"mean {row['mean_ratio']:.4f}  std {row['std_ratio']:.4f}  "
              f"n={row['count']}")
    print(f"wrote {args.out}")
    return 0


def _cmd_grad_check(args) -> int:
    cfg = load_config(args.config)
    report = run_grad_check(cfg, tol=args.tol, eps=args.eps)
    print(report.summary())
    return 0 if report.ok else 1


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]

    def progress(variant, seed, nme):
        print(f"  {variant:8s} seed {seed}: NME {nme:.3f}%")

    result = run_ablation(cfg, variants, seeds=args.seeds,
                          heldout_count=args.heldout, progress=progress)
    print("variant means over seeds:")
    for variant, mean in result.variant_means.items():
        print(f"  {variant:8s} {mean:.3f}%")
    if set(result.variant_means) == set(ABLATION_VARIANTS):
        print(f"ordering dsat <= min(shn+dsa, shn+dss) <= shn: "
              f"{'holds' if result.ordering_holds() else 'violated'}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"means": result.variant_means,
                       "per_seed": {v: {str(k): val for k, val in d.items()}
                                    for v, d in result.per_seed.items()}},
                      fh, sort_keys=True, indent=1)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsat",
        description="Dynamically gated hourglass landmark detection at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--mix", default="neutral:0.4,occluded:0.2,rotated:0.2,blurred:0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--fr-threshold", type=float, default=10.0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gate-stats", help="aggregate gate ratios from an eval report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gate_stats)

    p = sub.add_parser("grad-check", help="verify analytic gradients on a config")
    p.add_argument("--config", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", default="shn,shn+dsa,shn+dss,dsat")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--heldout", type=int, default=100)
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
