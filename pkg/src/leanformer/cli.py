"""Command-line surface.

Exit codes follow one contract everywhere: 0 success, 1 a checked
condition failed (training did not improve, search found nothing,
gradient check too loose), 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import compression, modelfile, profiler
from .model import (
    GRAD_CHECK_MAX_PARAMS,
    ModelConfig,
    PRESETS,
    grad_check,
    init_params,
    iter_params,
    param_count,
    param_count_enumerated,
    synth_copy_batch,
    train_step,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class InputError(Exception):
    """Bad flag values or unreadable/invalid input files (exit 2)."""


def _load_config(spec: str) -> ModelConfig:
    """Resolve a --config value: preset name or path to a JSON document."""
    if spec in PRESETS:
        return PRESETS[spec]
    path = Path(spec)
    if not path.exists():
        raise InputError(
            f"config '{spec}' is neither a preset ({', '.join(sorted(PRESETS))}) "
            f"nor an existing file"
        )
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{spec}: not valid JSON: {exc}") from exc
    try:
        # user-facing config documents carry exactly the documented keys
        return modelfile.config_from_json_dict(doc, allow_pruned=False)
    except ValueError as exc:
        raise InputError(f"{spec}: {exc}") from exc


def _load_float_model(path: str):
    p = Path(path)
    if not p.exists():
        raise InputError(f"model file '{path}' does not exist")
    try:
        return modelfile.load_model(p)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_init(args) -> int:
    cfg = _load_config(args.config)
    params = init_params(cfg, args.seed)
    modelfile.save_model(args.out, cfg, params)
    count = param_count(cfg)
    print(f"wrote {args.out}")
    print(f"parameters: {count}")
    print(f"parameter bytes: {profiler.BYTES_PER_PARAM * count}")
    return EXIT_OK


def cmd_compare(args) -> int:
    baseline_cfg = _load_config(args.baseline)
    variant_cfg = _load_config(args.variant)
    reports = []
    for label, cfg in (("baseline", baseline_cfg), ("variant", variant_cfg)):
        params = init_params(cfg, args.seed)
        reports.append(profiler.profile_model(
            params, cfg, label=getattr(args, label),
            batch_size=args.batch, seq_len=args.seq,
            reps=args.reps, warmup=args.warmup,
        ))
    result = profiler.compare(reports[0], reports[1])
    print(profiler.render_comparison(result))
    if args.json:
        Path(args.json).write_text(json.dumps(result.to_json(), indent=2) + "\n", "utf-8")
        print(f"wrote {args.json}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.lr < 0:
        raise InputError(f"--lr must be >= 0, got {args.lr}")
    if args.iters < 1:
        raise InputError(f"--iters must be >= 1, got {args.iters}")
    cfg = _load_config(args.config)
    seq_len = min(cfg.max_seq_len, args.seq)
    params = init_params(cfg, args.seed)
    inputs, targets = synth_copy_batch(args.seed, args.batch, seq_len, cfg.vocab_size)
    batch = list(inputs)
    tgts = list(targets)

    losses = []
    for it in range(1, args.iters + 1):
        params, loss = train_step(params, cfg, batch, tgts, args.lr)
        losses.append(loss)
        print(f"iter {it}: loss {loss:.6f}")
    if losses[-1] < losses[0]:
        return EXIT_OK
    print("training did not reduce the loss", file=sys.stderr)
    return EXIT_CHECK_FAILED


def _print_report(report: compression.CompressionReport) -> None:
    for line in report.lines():
        print(line)


def cmd_compress(args) -> int:
    cfg, params = _load_float_model(args.model)

    if args.pass_name == "quantize":
        quantized = compression.quantize_params(params)
        modelfile.save_quantized_model(args.out, cfg, quantized)
        restored = compression.dequantize_params(params, quantized)
        max_err = max(
            float(abs(orig - new).max())
            for (_, orig), (_, new) in zip(iter_params(params), iter_params(restored))
        )
        before = param_count_enumerated(params)
        report = compression.CompressionReport(
            pass_name="quantize",
            params_before=before, params_after=before,
            bytes_before=8 * before,
            bytes_after=compression.quantized_memory_bytes(params),
            sparsity=float(sum(int((qt.values == 0).sum()) for _, qt in quantized)) / before,
            max_error=max_err,
        )
        _print_report(report)
        print(f"wrote {args.out}")
        return EXIT_OK

    if args.pass_name == "prune-magnitude":
        if args.threshold < 0:
            raise InputError(f"--threshold must be >= 0, got {args.threshold}")
        pruned, report = compression.prune_magnitude(params, args.threshold)
        modelfile.save_model(args.out, cfg, pruned)
    elif args.pass_name == "prune-heads":
        try:
            keep = {int(tok) for tok in args.keep.split(",") if tok.strip() != ""}
        except ValueError as exc:
            raise InputError(f"--keep must be a comma-separated list of head indices") from exc
        try:
            pruned, cfg, report = compression.prune_heads(params, cfg, args.layer, keep)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        modelfile.save_model(args.out, cfg, pruned)
    else:  # prune-layers
        try:
            kept = [int(tok) for tok in args.keep_layers.split(",") if tok.strip() != ""]
        except ValueError as exc:
            raise InputError("--keep-layers must be a comma-separated list of layer indices") from exc
        try:
            pruned, cfg, report = compression.prune_layers(params, cfg, kept)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        modelfile.save_model(args.out, cfg, pruned)

    _print_report(report)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_search(args) -> int:
    if args.target_base < 1 or args.target_variant < 1:
        raise InputError("targets must be positive integers")
    bounds = profiler.SearchBounds(
        seq_len=args.seq_len,
        max_layers=args.max_layers,
        max_vocab_plus_seq=args.max_vs_total,
    )
    pairs = profiler.config_search(args.target_base, args.target_variant, bounds)
    for cfg, reduced in pairs:
        print(json.dumps({
            "base": modelfile.config_to_json_dict(cfg),
            "base_params": param_count(cfg),
            "reduced": modelfile.config_to_json_dict(reduced),
            "reduced_params": param_count(reduced),
        }, sort_keys=True))
    return EXIT_OK if pairs else EXIT_CHECK_FAILED


def cmd_gradcheck(args) -> int:
    if args.eps <= 0:
        raise InputError(f"--eps must be > 0, got {args.eps}")
    cfg = _load_config(args.config)
    if param_count(cfg) > GRAD_CHECK_MAX_PARAMS:
        raise InputError(
            f"config has {param_count(cfg)} parameters, more than "
            f"{GRAD_CHECK_MAX_PARAMS}; pick a smaller config (e.g. the 'tiny' preset)"
        )
    err = grad_check(cfg, args.seed, args.eps)
    print(f"max relative error: {err:.3e}")
    return EXIT_OK if err < 1e-4 else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leanformer",
        description="Build, profile, train and compress the slim transformer encoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="initialize a model and write it to disk")
    p.add_argument("--config", required=True, help="preset name or config JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("compare", help="profile two configs and print the comparison table")
    p.add_argument("--baseline", required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seq", type=int, default=10)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", default=None, help="also write the comparison as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("train", help="train on the synthetic copy task")
    p.add_argument("--config", required=True)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seq", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="apply a compression pass to a saved model")
    csub = p.add_subparsers(dest="pass_name", required=True)

    q = csub.add_parser("quantize", help="int8-quantize all tensors")
    q.add_argument("--model", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_compress)

    pm = csub.add_parser("prune-magnitude", help="zero weights below a threshold")
    pm.add_argument("--model", required=True)
    pm.add_argument("--out", required=True)
    pm.add_argument("--threshold", type=float, required=True)
    pm.set_defaults(func=cmd_compress)

    ph = csub.add_parser("prune-heads", help="structurally remove attention heads")
    ph.add_argument("--model", required=True)
    ph.add_argument("--out", required=True)
    ph.add_argument("--layer", type=int, required=True)
    ph.add_argument("--keep", required=True, help="comma-separated head indices to keep")
    ph.set_defaults(func=cmd_compress)

    pl = csub.add_parser("prune-layers", help="keep only the listed layers")
    pl.add_argument("--model", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--keep-layers", dest="keep_layers", required=True,
                    help="comma-separated layer indices to keep")
    pl.set_defaults(func=cmd_compress)

    p = sub.add_parser("search", help="find configs matching two parameter-count targets")
    p.add_argument("--target-base", dest="target_base", type=int, required=True)
    p.add_argument("--target-variant", dest="target_variant", type=int, required=True)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=10)
    p.add_argument("--max-layers", dest="max_layers", type=int, default=4)
    p.add_argument("--max-vs-total", dest="max_vs_total", type=int, default=1_000_000)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("gradcheck", help="verify backprop against finite differences")
    p.add_argument("--config", required=True)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
