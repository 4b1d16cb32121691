#!/usr/bin/env python3
"""Rebuild the headline comparison: baseline encoder vs the half-width one.

Initializes both shipped presets with the same seed, measures forward-pass
wall time on the standard batch (32 sequences of 10 tokens), and prints
the three-row table plus the percentage reductions. Parameter and memory
numbers are exact; the timing column is whatever this host produces.

Usage:
    python scripts/reproduce_table2.py [--reps 100] [--warmup 10] [--seed 0]
"""

import argparse
import json

from leanformer.model import PRESETS, init_params
from leanformer.profiler import compare, profile_model, render_comparison


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=100)
    parser.add_argument("--warmup", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", default=None, help="also write the comparison to this path")
    args = parser.parse_args()

    reports = []
    for label in ("paper-baseline", "paper-reduced"):
        cfg = PRESETS[label]
        params = init_params(cfg, args.seed)
        reports.append(profile_model(params, cfg, label=label, batch_size=32,
                                     seq_len=10, reps=args.reps, warmup=args.warmup))

    result = compare(reports[0], reports[1])
    print(render_comparison(result))
    print()
    for name, pct in result.reductions_pct.items():
        shown = "undefined" if pct is None else f"{pct:.2f}%"
        print(f"reduction {name}: {shown}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(result.to_json(), fh, indent=2)
        print(f"\nwrote {args.json}")


if __name__ == "__main__":
    main()
