"""Command line entry point: ``lsrom <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, tlrs
from .core import read_chunk_csv
from .metrics import CSV_FIELDS, evaluate

log = logging.getLogger("lsrom")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


def _int_range(text: str) -> list[int]:
    """``8:12`` -> 8..12, ``7:15:2`` -> 7,9,..,15, ``3,5`` -> [3, 5]."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            step = parts[2] if len(parts) == 3 else 1
            return list(range(parts[0], parts[1] + 1, step))
        return [int(p) for p in text.split(",") if p]
    except (ValueError, IndexError) as exc:
        raise argparse.ArgumentTypeError(f"bad integer range {text!r}") from exc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline settings (override the config file)")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--seed", type=int)
    g.add_argument("--Q", dest="q", type=int, help="map side length (Q*Q neurons)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--kappa", type=int)
    g.add_argument("--kmeans-max-iters", type=int)
    g.add_argument("--neighbor-search", choices=("ann", "exact"))
    g.add_argument("--candidate-scope", choices=("chunk", "topology"))
    g.add_argument("--timings", action="store_true",
                   help="keep wall-clock runtimes in written reports (not byte-reproducible)")


def _config(args) -> harness.RunConfig:
    cfg = harness.load_config(args.config)
    rsom_kw = {k: v for k, v in (("Q", args.q), ("epochs", args.epochs)) if v is not None}
    merge_kw = {k: v for k, v in (("kappa", args.kappa), ("neighbor_search", args.neighbor_search),
                                  ("candidate_scope", args.candidate_scope)) if v is not None}
    cfg = replace(cfg, rsom=replace(cfg.rsom, **rsom_kw), merge=replace(cfg.merge, **merge_kw))
    if args.kmeans_max_iters is not None:
        cfg = replace(cfg, kmeans_max_iters=args.kmeans_max_iters)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.timings:
        cfg = replace(cfg, deterministic=False)
    if getattr(args, "emit_stages", False):
        cfg = replace(cfg, emit_stages=True)
    return cfg


# -- subcommands -------------------------------------------------------------

def _base_from_args(args):
    if args.base == "gaussian4":
        return tlrs.make_four_blob_base(args.n, seed=args.base_seed)
    if args.base == "moons":
        return tlrs.make_two_moons_base(args.n, imbalance=5.0, noise=0.05, seed=args.base_seed)
    if args.base == "bridged":
        return tlrs.make_bridged_blobs(seed=args.base_seed)
    return read_chunk_csv(args.base)


def cmd_generate(args) -> int:
    base = _base_from_args(args)
    ir = args.ir
    if ir is None:
        sizes = np.unique(base.labels, return_counts=True)[1]
        ir = float(sizes.max() / sizes.min())
    spec = tlrs.TlrsSpec(base, ir, args.chunks, args.cap, args.seed)
    recipes = tlrs.write_stream(spec, args.out)
    print(f"wrote {len(recipes)} chunks to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    chunk = read_chunk_csv(args.chunk)
    run = harness.run_chunk(chunk, cfg)
    paths = harness.write_run_outputs(run, cfg, args.out)
    rep = run.report
    msg = f"k*={run.trace.k_star} runtime={rep.runtime_ms:.1f}ms"
    if rep.nmi is not None:
        msg += f" nmi={rep.nmi:.4f} dcv={rep.dcv:.4f}"
    if run.q_lowered:
        msg += f" (Q lowered to {run.q_used})"
    print(msg, file=sys.stderr)
    print(json.dumps({k: str(v) for k, v in sorted(paths.items())}))
    return EXIT_OK


def cmd_stream(args) -> int:
    cfg = _config(args)
    res = harness.run_stream(args.chunk_dir, cfg, args.out, resume=args.resume)
    print(json.dumps(res.aggregate, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    res = harness.run_bench(args.sizes, harness.GaussianSpec(seed=cfg.seed), cfg, args.repeats)
    res.write_csv(args.out)
    print(f"alpha={res.alpha}" if res.alpha is not None else "alpha=n/a")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    chunk = read_chunk_csv(args.chunk)
    rows = harness.run_sensitivity(args.q_range, args.kappa_range, chunk, cfg)
    harness.write_rows(rows, args.out, ["Q", "kappa", "nmi", "dcv", "k_pred"])
    vals = [r["nmi"] for r in rows if r["nmi"] is not None]
    if vals:
        print(f"nmi range {max(vals) - min(vals):.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    chunk = read_chunk_csv(args.chunk)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CSV_FIELDS) + ["note"])
        for v in args.variant:
            rep = harness.persisted(harness.run_ablation(v, chunk, cfg), cfg)
            w.writerow(rep.csv_row() + [rep.note or ""])
            if rep.note:
                print(f"{v}: {rep.note}", file=sys.stderr)
    return EXIT_OK


def _read_labels(path: Path) -> np.ndarray:
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = data.get("trace", data).get("assignment")
        if not isinstance(data, list):
            raise ValueError(f"{path}: no assignment list found")
        return np.asarray(data, dtype=np.int64)
    chunk = None
    try:
        chunk = read_chunk_csv(path)
    except ValueError:
        pass
    if chunk is not None and chunk.labels is not None:
        return chunk.labels
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not rows[0][-1].lstrip("-").isdigit():
        rows = rows[1:]
    try:
        return np.asarray([int(r[-1]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"{path}: last column must hold integer labels") from exc


def cmd_eval(args) -> int:
    pred = _read_labels(args.pred)
    truth = _read_labels(args.truth)
    rep = evaluate(pred, truth)
    if args.format == "json":
        print(rep.without_runtime().to_json())
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        w.writerow(rep.without_runtime().csv_row())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsrom", description="Self-refining SOM clustering of "
                                "imbalanced data chunks.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write an imbalanced chunk stream from a labeled base")
    g.add_argument("--base", default="gaussian4",
                   help="gaussian4 | moons | bridged | path to a labeled CSV")
    g.add_argument("--n", type=int, default=100_000, help="size of a synthetic base")
    g.add_argument("--base-seed", type=int, default=0)
    g.add_argument("--ir", type=float, help="imbalance ratio (default: the base's own)")
    g.add_argument("--chunks", type=int, default=50)
    g.add_argument("--chunk-cap", "--cap", dest="cap", type=int, help="maximum chunk size")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="cluster one chunk")
    r.add_argument("chunk", type=Path)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--emit-stages", action="store_true", help="also write intermediate models")
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("stream", help="cluster every chunk of a directory in filename order")
    s.add_argument("chunk_dir", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--resume", action="store_true")
    _add_config_flags(s)
    s.set_defaults(func=cmd_stream)

    b = sub.add_parser("bench", help="runtime against chunk size")
    b.add_argument("--sizes", type=_int_range, default=[100_000, 200_000, 400_000, 800_000])
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--out", type=Path, required=True)
    _add_config_flags(b)
    b.set_defaults(func=cmd_bench)

    w = sub.add_parser("sweep", help="Q x kappa sensitivity grid on one chunk")
    w.add_argument("chunk", type=Path)
    w.add_argument("--q-range", type=_int_range, default=list(range(8, 13)))
    w.add_argument("--kappa-range", type=_int_range, default=list(range(7, 16, 2)))
    w.add_argument("--out", type=Path, required=True)
    _add_config_flags(w)
    w.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="run pipeline variants on one chunk")
    a.add_argument("chunk", type=Path)
    a.add_argument("--variant", action="append", choices=harness.VARIANTS,
                   help="repeatable; default: all variants")
    a.add_argument("--out", type=Path, required=True)
    _add_config_flags(a)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="NMI / DCV of predicted labels against ground truth")
    e.add_argument("--pred", type=Path, required=True,
                   help="result.json or CSV whose last column is the label")
    e.add_argument("--truth", type=Path, required=True, help="labeled chunk CSV or label CSV")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "variant", None) is None and args.command == "ablate":
        args.variant = list(harness.VARIANTS)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
