"""Command-line front end: evaluation, the wordlength search, and the
rounding-scheme sweep. Summaries go to stdout; machine-readable
artifacts only to --out."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .capsnet import CapsModel, QuantConfig, evaluate
from .fixedpoint import RoundingScheme
from .model_io import (load_idx, load_model, load_quant_config, write_report)
from .search import (SearchInputs, run_framework, select_rounding_scheme,
                     weight_memory_bits)

_ALL_SCHEMES = (RoundingScheme.TRN, RoundingScheme.RTN, RoundingScheme.SR)


def _schemes_from_flag(flag: str) -> tuple[RoundingScheme, ...]:
    if flag == "all":
        return _ALL_SCHEMES
    return (RoundingScheme.parse(flag),)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="weight manifest JSON")
    p.add_argument("--blob", required=True, help="weight blob file")
    p.add_argument("--arch", required=True,
                   help="architecture JSON or preset name")
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-subset", type=int, default=None,
                   help="evaluate on the first N samples only")
    p.add_argument("--routing-iters", type=int, default=None,
                   help="override routing iterations on all routing layers")
    p.add_argument("--out", required=True, help="output artifact path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcaps",
        description="Capsule-network fixed-point quantization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="measure accuracy (FP32 or quantized)")
    _add_model_flags(p_eval)
    p_eval.add_argument("--quant-config", default=None,
                        help="per-layer wordlength JSON; omit for FP32")

    p_quant = sub.add_parser("quantize", help="run the wordlength search")
    _add_model_flags(p_quant)
    p_quant.add_argument("--acc-tol", type=float, required=True,
                         help="tolerated relative accuracy loss, in [0,1)")
    p_quant.add_argument("--mem-budget-bits", type=int, required=True,
                         help="weight memory budget in bits")
    p_quant.add_argument("--rounding", default="all",
                         choices=["trn", "rtn", "sr", "all"])
    p_quant.add_argument("--floor-bits", type=int, default=1,
                         help="minimum fractional bits anywhere")

    p_cmp = sub.add_parser("compare-roundings",
                           help="accuracy sweep over uniform wordlengths")
    _add_model_flags(p_cmp)
    p_cmp.add_argument("--grid", default="2,4,8,16,24,32",
                       help="comma-separated uniform wordlengths (total bits)")
    p_cmp.add_argument("--rounding", default="all",
                       choices=["trn", "rtn", "sr", "all"])

    return parser


def _load_inputs(args) -> tuple[CapsModel, object]:
    model = load_model(args.manifest, args.blob, args.arch)
    if args.routing_iters is not None:
        model = _with_routing_iterations(model, args.routing_iters)
    dataset = load_idx(args.images, args.labels)
    if args.eval_subset is not None:
        dataset = dataset.take(args.eval_subset)
    return model, dataset


def _with_routing_iterations(model: CapsModel, iters: int) -> CapsModel:
    import dataclasses
    layers = [dataclasses.replace(s, routing_iterations=iters)
              if s.uses_dynamic_routing else s for s in model.layers]
    return CapsModel(layers, model.input_shape, model.num_classes,
                     weights=model.weights, biases=model.biases,
                     name=model.name)


def cmd_eval(args) -> int:
    model, dataset = _load_inputs(args)
    cfg = load_quant_config(args.quant_config) if args.quant_config else None
    acc = evaluate(model, dataset, cfg, seed=args.seed)
    label = "FP32" if cfg is None else f"quantized ({cfg.scheme.value})"
    print(f"{label} accuracy: {acc:.6f} over {len(dataset)} samples")
    doc = {
        "accuracy": acc,
        "num_samples": len(dataset),
        "seed": args.seed,
        "config": None if cfg is None else {
            "scheme": cfg.scheme.value, "q_w": list(cfg.q_w),
            "q_a": list(cfg.q_a), "q_dr": {str(l): v for l, v in cfg.q_dr}},
    }
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_quantize(args) -> int:
    model, dataset = _load_inputs(args)
    inputs = SearchInputs(
        model=model, dataset=dataset, acc_tol=args.acc_tol,
        memory_budget_bits=args.mem_budget_bits,
        schemes=_schemes_from_flag(args.rounding), seed=args.seed,
        eval_subset=args.eval_subset, floor_bits=args.floor_bits)
    outcomes = run_framework(inputs)
    selection = select_rounding_scheme(outcomes)

    for o in outcomes:
        if o.error:
            print(f"{o.scheme.value}: failed ({o.error})")
            continue
        line = f"{o.scheme.value}: path {o.path}, acc_fp32={o.acc_fp32:.4f}, " \
               f"acc_target={o.acc_target:.4f}"
        if o.model_satisfied is not None:
            m = o.model_satisfied.metrics
            line += (f"; satisfied acc={m.accuracy:.4f}, "
                     f"W-mem {m.weight_reduction:.2f}x, "
                     f"A-mem {m.activation_reduction:.2f}x")
        print(line)
    if selection.satisfied is not None:
        print(f"selected: {selection.satisfied.scheme.value} (path A)")
    else:
        print("selected: path B pair")

    json_path, csv_path = write_report(outcomes, selection, args.out)
    print(f"report written to {json_path} and {csv_path}")
    return 0


def cmd_compare_roundings(args) -> int:
    model, dataset = _load_inputs(args)
    try:
        grid = sorted({int(v) for v in args.grid.split(",") if v.strip()})
    except ValueError:
        raise ValueError(f"bad --grid value {args.grid!r}") from None
    if not grid or min(grid) < 1:
        raise ValueError("--grid needs wordlengths >= 1")

    rows = []
    for scheme in _schemes_from_flag(args.rounding):
        for n in grid:
            cfg = QuantConfig.uniform(model, scheme, n - 1, n - 1)
            acc = evaluate(model, dataset, cfg, seed=args.seed)
            rows.append({
                "scheme": scheme.value,
                "wordlength": n,
                "accuracy": acc,
                "weight_memory_bits": weight_memory_bits(model, cfg.q_w),
            })
            print(f"{scheme.value} @ {n} bits: accuracy {acc:.4f}")

    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["scheme", "wordlength",
                                               "accuracy", "weight_memory_bits"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep written to {args.out}")
    return 0


_COMMANDS = {
    "eval": cmd_eval,
    "quantize": cmd_quantize,
    "compare-roundings": cmd_compare_roundings,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
