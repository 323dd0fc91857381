"""Command-line frontend.

Machine-readable JSON goes to stdout (or files named by --out);
diagnostics go to stderr. Exit codes: 0 success, 1 usage error, 2
data/format error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from tvq import analysis, merge as merge_mod, rtvq, synth, taskvec
from tvq.container import (
    Role,
    read_bundle,
    read_qtv,
    read_tmap,
    write_bundle,
    write_qtv,
    write_tmap,
)
from tvq.errors import TvqError
from tvq.kernels import VALID_BITS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _note(msg: str) -> None:
    sys.stderr.write(msg + "\n")


def _parse_bits(value: str) -> list[int]:
    try:
        bits = [int(b) for b in value.split(",") if b]
    except ValueError as e:
        raise UsageError(f"bad bits list {value!r}") from e
    if not bits or any(b not in VALID_BITS for b in bits):
        raise UsageError(f"bits must come from {VALID_BITS}, got {value!r}")
    return bits


def _parse_shape(value: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(d) for d in value.lower().split("x"))
    except ValueError as e:
        raise UsageError(f"bad shape {value!r}, expected like 64x64") from e
    if any(d < 0 for d in shape):
        raise UsageError(f"bad shape {value!r}")
    return shape


def _parse_rtvq_cfg(value: str) -> tuple[int, int]:
    try:
        b_base, b_offset = (int(x) for x in value.split(":"))
    except ValueError as e:
        raise UsageError(f"bad rtvq config {value!r}, expected B_BASE:B_OFFSET") from e
    return b_base, b_offset


def _task_names(paths: list[str], explicit: list[str] | None) -> list[str]:
    if explicit:
        if len(explicit) != len(paths):
            raise UsageError("--tasks count must match the number of checkpoints")
        return list(explicit)
    return [Path(p).stem for p in paths]


def _load_task_vectors(args, pre) -> list:
    """Collect task vectors from --ft / --tvq / --bundle inputs, in flag order."""
    tvs = []
    for path in args.ft or []:
        ft = read_tmap(path)
        tvs.append(taskvec.task_vector(ft, pre, source_task=Path(path).stem))
    for path in args.tvq or []:
        art = read_qtv(path)
        if art.role is not Role.TVQ:
            raise TvqError(f"{path}: expected a tvq artifact, got {art.role.value}")
        tvs.append(taskvec.tvq_task_vector(art))
    if args.bundle:
        bundle = read_bundle(args.bundle)
        for task in bundle.tasks:
            tvs.append(rtvq.rtvq_reconstruct(bundle, task))
    if not tvs:
        raise UsageError("no task-vector inputs; pass --ft, --tvq, or --bundle")
    return tvs


def build_parser() -> _Parser:
    parser = _Parser(prog="tvq", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="max worker threads (default: TVQ_THREADS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[common], help="value-range stats of a checkpoint")
    p.add_argument("--in", dest="input", required=True)

    p = sub.add_parser("quantize-fq", parents=[common], help="quantize a checkpoint directly")
    p.add_argument("--ft", required=True)
    p.add_argument("--bits", type=int, required=True, choices=VALID_BITS)
    p.add_argument("--task", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("quantize-tvq", parents=[common], help="quantize a task vector")
    p.add_argument("--pre", required=True)
    p.add_argument("--ft", required=True)
    p.add_argument("--bits", type=int, required=True, choices=VALID_BITS)
    p.add_argument("--task", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("quantize-rtvq", parents=[common],
                       help="build a base+offsets bundle from several checkpoints")
    p.add_argument("--pre", required=True)
    p.add_argument("--ft", nargs="+", required=True)
    p.add_argument("--b-base", type=int, required=True, choices=VALID_BITS)
    p.add_argument("--b-offset", type=int, required=True, choices=VALID_BITS)
    p.add_argument("--tasks", nargs="+", default=None)
    p.add_argument("--no-error-correction", action="store_true")
    p.add_argument("--out", required=True, help="bundle directory")

    p = sub.add_parser("dequantize", parents=[common],
                       help="reconstruct a checkpoint from an artifact or bundle")
    p.add_argument("--in", dest="input", required=True, help=".qtv file or bundle directory")
    p.add_argument("--pre", default=None)
    p.add_argument("--task", default=None, help="task to reconstruct from a bundle")
    p.add_argument("--no-verify", action="store_true", help="skip pre-digest verification")
    p.add_argument("--out", required=True)

    p = sub.add_parser("merge", parents=[common], help="merge task vectors into one checkpoint")
    p.add_argument("--pre", required=True)
    p.add_argument("--method", required=True,
                   choices=[m.value for m in merge_mod.MergeMethod])
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--ties-density", type=float, default=1.0)
    p.add_argument("--crumb-low", type=float, default=0.0)
    p.add_argument("--crumb-high", type=float, default=1.0)
    p.add_argument("--lines", nargs=2, type=float, metavar=("ALPHA", "BETA"), default=None)
    p.add_argument("--layer-map", default=None)
    p.add_argument("--ft", nargs="*", default=None, help="fine-tuned .tmap checkpoints")
    p.add_argument("--tvq", nargs="*", default=None, help="quantized task-vector .qtv files")
    p.add_argument("--bundle", default=None, help="rtvq bundle directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", parents=[common],
                       help="reconstruction error of fq/tvq/rtvq paths")
    p.add_argument("--pre", required=True)
    p.add_argument("--ft", nargs="+", required=True)
    p.add_argument("--bits", default="2,3,4,8")
    p.add_argument("--rtvq", nargs="*", default=["3:2"], metavar="B_BASE:B_OFFSET")
    p.add_argument("--no-error-correction", action="store_true")
    p.add_argument("--format", choices=["json", "table"], default="json")

    p = sub.add_parser("sparsity", parents=[common],
                       help="fraction of exactly-zero dequantized values")
    p.add_argument("--in", dest="input", required=True)

    p = sub.add_parser("cosine", parents=[common], help="task-vector cosine similarity matrix")
    p.add_argument("--pre", required=True)
    p.add_argument("--ft", nargs="+", required=True)
    p.add_argument("--format", choices=["json", "table"], default="json")

    p = sub.add_parser("storage-report", parents=[common], help="on-disk byte accounting")
    p.add_argument("--in", dest="inputs", nargs="+", required=True,
                   help=".qtv files or a bundle directory")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--param-count", type=int, required=True)

    p = sub.add_parser("effective-bits", parents=[common],
                       help="amortized per-task bits of a base+offset bundle")
    p.add_argument("--b-offset", type=int, required=True)
    p.add_argument("--b-base", type=int, required=True)
    p.add_argument("--tasks", type=int, required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic checkpoint family")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--shape", action="append", required=True,
                   help="tensor shape like 256x256 (repeatable)")
    p.add_argument("--pre-scale", type=float, default=0.05)
    p.add_argument("--delta-scale", type=float, default=0.005)
    p.add_argument("--cluster-scale", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", parents=[common],
                       help="rtvq error over a base-bits x offset-bits grid")
    p.add_argument("--pre", required=True)
    p.add_argument("--ft", nargs="+", required=True)
    p.add_argument("--b-base-grid", default="2,3,4,8")
    p.add_argument("--b-offset-grid", default="2,3,4,8")
    p.add_argument("--no-error-correction", action="store_true")

    return parser


def _cmd_stats(args) -> None:
    stats = taskvec.range_stats(read_tmap(args.input))
    _emit({
        "global_min": stats.global_min,
        "global_max": stats.global_max,
        "global_range": stats.global_range,
        "histogram": list(stats.histogram),
        "per_tensor": {
            name: {"min": s.min, "max": s.max, "range": s.range,
                   "mean": s.mean, "stddev": s.stddev}
            for name, s in stats.per_tensor.items()
        },
    })


def _cmd_quantize_fq(args) -> None:
    ft = read_tmap(args.ft)
    task = args.task if args.task is not None else Path(args.ft).stem
    art = taskvec.quantize_fq(ft, args.bits, task=task, threads=args.threads)
    write_qtv(art, args.out)
    _emit({"written": args.out, "role": art.role.value, "bits": args.bits,
           "tensors": len(art), "payload_bytes": art.payload_bytes})


def _cmd_quantize_tvq(args) -> None:
    pre = read_tmap(args.pre)
    ft = read_tmap(args.ft)
    task = args.task if args.task is not None else Path(args.ft).stem
    art = taskvec.quantize_tvq(ft, pre, args.bits, task=task, threads=args.threads)
    write_qtv(art, args.out)
    _emit({"written": args.out, "role": art.role.value, "bits": args.bits,
           "tensors": len(art), "payload_bytes": art.payload_bytes})


def _cmd_quantize_rtvq(args) -> None:
    pre = read_tmap(args.pre)
    fts = [read_tmap(p) for p in args.ft]
    tasks = _task_names(args.ft, args.tasks)
    cfg = rtvq.RTVQConfig(
        b_base=args.b_base, b_offset=args.b_offset,
        error_correction=not args.no_error_correction,
    )
    bundle = rtvq.rtvq_quantize(fts, pre, cfg, tasks=tasks, threads=args.threads)
    write_bundle(bundle, args.out)
    _emit({
        "written": args.out, "tasks": list(bundle.tasks),
        "b_base": cfg.b_base, "b_offset": cfg.b_offset,
        "error_correction": cfg.error_correction,
        "effective_bits": rtvq.effective_bits(cfg.b_offset, cfg.b_base, len(fts)),
    })


def _cmd_dequantize(args) -> None:
    target = Path(args.input)
    verify = not args.no_verify
    if target.is_dir():
        if args.pre is None:
            raise UsageError("reconstructing from a bundle requires --pre")
        if args.task is None:
            raise UsageError("reconstructing from a bundle requires --task")
        bundle = read_bundle(target)
        pre = read_tmap(args.pre)
        rec = rtvq.reconstruct_checkpoint(bundle, pre, args.task, verify=verify)
    else:
        art = read_qtv(target)
        if art.role is Role.FQ:
            rec = taskvec.dequantize_fq(art)
        elif art.role is Role.TVQ:
            if args.pre is None:
                raise UsageError("reconstructing a tvq artifact requires --pre")
            rec = taskvec.reconstruct_tvq(art, read_tmap(args.pre), verify=verify)
        else:
            raise TvqError(
                f"{args.input}: role {art.role.value} must be reconstructed via its bundle")
    write_tmap(rec, args.out)
    _emit({"written": args.out, "tensors": len(rec), "params": rec.param_count})


def _cmd_merge(args) -> None:
    pre = read_tmap(args.pre)
    tvs = _load_task_vectors(args, pre)
    cfg = merge_mod.MergeConfig(
        method=merge_mod.MergeMethod(args.method),
        lam=args.lam,
        ties_density=args.ties_density,
        crumb_low=args.crumb_low,
        crumb_high=args.crumb_high,
        lines=tuple(args.lines) if args.lines else None,
    )
    layer_map = merge_mod.load_layer_map(args.layer_map) if args.layer_map else None
    merged = merge_mod.merge(pre, tvs, cfg, layer_map=layer_map)
    write_tmap(merged, args.out)
    _emit({"written": args.out, "method": cfg.method.value, "lambda": cfg.lam,
           "tasks": [tv.source_task for tv in tvs]})


def _rows_to_table(rows: list[dict]) -> str:
    cols = sorted({k for row in rows for k in row})
    widths = {c: max(len(c), *(len(_cell(r.get(c))) for r in rows)) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for row in rows:
        lines.append("  ".join(_cell(row.get(c)).ljust(widths[c]) for c in cols))
    return "\n".join(lines)


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _cmd_compare(args) -> None:
    pre = read_tmap(args.pre)
    fts = [read_tmap(p) for p in args.ft]
    rows = analysis.compare_paths(
        pre, fts,
        bits_grid=_parse_bits(args.bits),
        rtvq_configs=[_parse_rtvq_cfg(v) for v in args.rtvq],
        error_correction=not args.no_error_correction,
        threads=args.threads,
    )
    if args.format == "table":
        sys.stdout.write(_rows_to_table(rows) + "\n")
    else:
        _emit(rows)


def _cmd_sparsity(args) -> None:
    art = read_qtv(args.input)
    _emit({"sparsity": analysis.sparsity(art), "role": art.role.value,
           "params": art.param_count})


def _cmd_cosine(args) -> None:
    pre = read_tmap(args.pre)
    tvs = [taskvec.task_vector(read_tmap(p), pre, source_task=Path(p).stem) for p in args.ft]
    matrix = analysis.cosine_matrix(tvs)
    tasks = [tv.source_task for tv in tvs]
    if args.format == "table":
        rows = [
            {"task": t, **{u: matrix[i, j] for j, u in enumerate(tasks)}}
            for i, t in enumerate(tasks)
        ]
        sys.stdout.write(_rows_to_table(rows) + "\n")
    else:
        _emit({"tasks": tasks, "matrix": [[float(x) for x in row] for row in matrix]})


def _cmd_storage_report(args) -> None:
    targets = args.inputs[0] if len(args.inputs) == 1 else args.inputs
    report = analysis.storage_report(targets, n_tasks=args.tasks,
                                     fp32_param_count=args.param_count)
    _emit({
        "artifacts": [
            {"path": a.path, "payload_bytes": a.payload_bytes,
             "header_bytes": a.header_bytes, "total_bytes": a.total_bytes}
            for a in report.artifacts
        ],
        "payload_bytes": report.payload_bytes,
        "header_bytes": report.header_bytes,
        "total_bytes": report.total_bytes,
        "baseline_fp32_bytes": report.baseline_fp32_bytes,
        "ratio": report.ratio,
        "per_task_effective_bits": report.per_task_effective_bits,
    })


def _cmd_effective_bits(args) -> None:
    value = rtvq.effective_bits(args.b_offset, args.b_base, args.tasks)
    sys.stdout.write(json.dumps(value) + "\n")


def _cmd_synth(args) -> None:
    spec = synth.SynthSpec(
        n_tasks=args.tasks,
        tensor_shapes=tuple(_parse_shape(s) for s in args.shape),
        pre_scale=args.pre_scale,
        delta_scale=args.delta_scale,
        cluster_scale=args.cluster_scale,
        seed=args.seed,
    )
    pre, fts = synth.generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pre_path = out / "pre.tmap"
    write_tmap(pre, pre_path)
    ft_paths = []
    for i, ft in enumerate(fts):
        p = out / f"ft_{i:03d}.tmap"
        write_tmap(ft, p)
        ft_paths.append(str(p))
    _emit({"pre": str(pre_path), "ft": ft_paths, "seed": args.seed,
           "params_per_checkpoint": pre.param_count})


def _cmd_sweep(args) -> None:
    pre = read_tmap(args.pre)
    fts = [read_tmap(p) for p in args.ft]
    rows = analysis.compare_paths(
        pre, fts, bits_grid=[],
        rtvq_configs=[
            (bb, bo)
            for bb in _parse_bits(args.b_base_grid)
            for bo in _parse_bits(args.b_offset_grid)
        ],
        error_correction=not args.no_error_correction,
        threads=args.threads,
    )
    _emit(rows)


_COMMANDS = {
    "stats": _cmd_stats,
    "quantize-fq": _cmd_quantize_fq,
    "quantize-tvq": _cmd_quantize_tvq,
    "quantize-rtvq": _cmd_quantize_rtvq,
    "dequantize": _cmd_dequantize,
    "merge": _cmd_merge,
    "compare": _cmd_compare,
    "sparsity": _cmd_sparsity,
    "cosine": _cmd_cosine,
    "storage-report": _cmd_storage_report,
    "effective-bits": _cmd_effective_bits,
    "synth": _cmd_synth,
    "sweep": _cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _COMMANDS[args.command](args)
    except UsageError as e:
        _note(str(e))
        return 1
    except (TvqError, OSError, ValueError) as e:
        _note(f"error: {e}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
