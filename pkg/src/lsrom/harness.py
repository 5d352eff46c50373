"""Pipeline driver: single chunks, chunk streams, benchmarks, parameter
sweeps and ablations."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ann import AnnParams
from .core import DataChunk, Partition, normalize_min_max, read_chunk_csv
from .merge import MergeParams, MergeTrace, run_merge
from .metrics import CSV_FIELDS, EvalReport, evaluate, timed
from .refine import MicroClusterModel, kmeans_finetune, remove_bridge_nodes, with_radii
from .rsom import RsomParams, TrainedSom, train

log = logging.getLogger(__name__)

VARIANTS = ("full", "no-finetune", "no-rp", "sgms-placeholder-off")
UNAVAILABLE = {"sgms-placeholder-off": "sgms merge not implemented; ran the full pipeline"}


@dataclass(frozen=True)
class RunConfig:
    """Pipeline settings.

    With ``deterministic`` set, persisted reports omit wall-clock runtime so
    that result files depend only on inputs, config and seed.
    """

    rsom: RsomParams = field(default_factory=RsomParams)
    merge: MergeParams = field(default_factory=MergeParams)
    kmeans_max_iters: int = 100
    emit_stages: bool = False
    deterministic: bool = True
    results_path: str | None = None
    curves_path: str | None = None

    def __post_init__(self):
        if self.kmeans_max_iters < 0:
            raise ValueError("kmeans_max_iters must be non-negative")

    @property
    def seed(self) -> int:
        return self.rsom.seed

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, rsom=replace(self.rsom, seed=int(seed)),
                       merge=replace(self.merge, ann=replace(self.merge.ann, seed=int(seed))))

    def to_json(self) -> dict:
        return {
            "rsom": asdict(self.rsom),
            "merge": {k: v for k, v in asdict(self.merge).items() if k != "ann"}
            | {"ann": asdict(self.merge.ann)},
            "kmeansMaxIters": self.kmeans_max_iters,
            "emitStages": self.emit_stages,
            "deterministic": self.deterministic,
        }


def _pick(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
    return data


def config_from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Overlay a JSON-style dict (``rsom``, ``merge``, ``kmeansMaxIters``,
    ``emitStages``, ``deterministic``, ``seed``) on ``base``."""
    base = base or RunConfig()
    data = dict(data)
    known = {"rsom", "merge", "kmeansMaxIters", "emitStages", "deterministic", "seed",
             "resultsPath", "curvesPath"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    rsom = replace(base.rsom, **_pick(RsomParams, data.get("rsom", {}), "rsom"))
    merge_d = dict(data.get("merge", {}))
    ann_d = merge_d.pop("ann", {})
    merge = replace(base.merge, **_pick(MergeParams, merge_d, "merge"))
    merge = replace(merge, ann=replace(merge.ann, **_pick(AnnParams, ann_d, "ann")))
    cfg = RunConfig(rsom, merge,
                    int(data.get("kmeansMaxIters", base.kmeans_max_iters)),
                    bool(data.get("emitStages", base.emit_stages)),
                    bool(data.get("deterministic", base.deterministic)),
                    data.get("resultsPath", base.results_path),
                    data.get("curvesPath", base.curves_path))
    if "seed" in data:
        cfg = cfg.with_seed(int(data["seed"]))
    return cfg


def load_config(path: str | Path | None, env: dict | None = None) -> RunConfig:
    """Config from a JSON file (or defaults); ``LSROM_SEED`` overrides the seed."""
    cfg = RunConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        cfg = config_from_dict(data)
    env = os.environ if env is None else env
    if env.get("LSROM_SEED"):
        try:
            cfg = cfg.with_seed(int(env["LSROM_SEED"]))
        except ValueError as exc:
            raise ValueError(f"LSROM_SEED must be an integer, got {env['LSROM_SEED']!r}") from exc
    return cfg


# -- single chunk ------------------------------------------------------------

@dataclass
class ChunkRun:
    """Everything produced for one chunk. Unpacks as (partition, trace, report)."""

    partition: Partition
    trace: MergeTrace
    report: EvalReport
    q_used: int
    q_lowered: bool = False
    stages: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.partition, self.trace, self.report))


def effective_q(n: int, q: int) -> int:
    return q if n >= q * q else max(2, math.isqrt(n))


def _pipeline(chunk: DataChunk, config: RunConfig, variant: str, stages: dict | None):
    norm = normalize_min_max(chunk)
    q = effective_q(chunk.n, config.rsom.Q)
    if chunk.n < 4:
        raise ValueError(f"chunk too small to cluster: n={chunk.n}")
    rsom_params = replace(config.rsom, Q=q)
    som: TrainedSom = train(norm, rsom_params)
    iters = 0 if variant == "no-finetune" else config.kmeans_max_iters
    micro: MicroClusterModel = kmeans_finetune(norm, som, iters)
    if variant == "no-rp":
        refined = with_radii(micro)
    else:
        refined = remove_bridge_nodes(norm, with_radii(micro))
    trace = run_merge(norm, refined, config.merge)
    if stages is not None:
        stages["rsom"] = som.to_json()
        stages["micro"] = micro.to_json()
        stages["refined"] = refined.to_json()
    return trace, q


def run_chunk(chunk: DataChunk, config: RunConfig | None = None, *, chunk_id: int = 0,
              variant: str = "full") -> ChunkRun:
    """Normalize, train the map, fine-tune, drop bridge nodes, merge.

    Chunks with fewer than Q*Q objects run with Q lowered to floor(sqrt(n)).
    NMI/DCV are filled only when the chunk carries labels.
    """
    config = config or RunConfig()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    stages = {} if config.emit_stages else None
    (trace, q), ms = timed(lambda: _pipeline(chunk, config, variant, stages))
    if q != config.rsom.Q:
        log.warning("chunk %d: n=%d < Q^2=%d, Q lowered to %d", chunk_id, chunk.n,
                    config.rsom.Q ** 2, q)
    report = evaluate(trace.partition.assignment, chunk.labels, chunk_id=chunk_id,
                      runtime_ms=ms, variant=None if variant == "full" else variant)
    if variant in UNAVAILABLE:
        report = replace(report, note="unavailable: " + UNAVAILABLE[variant])
    return ChunkRun(trace.partition, trace, report, q, q != config.rsom.Q, stages or {})


def persisted(report: EvalReport, config: RunConfig) -> EvalReport:
    return report.without_runtime() if config.deterministic else report


def write_curves(trace: MergeTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "com", "sep"])
        for k, com, sep in trace.curves():
            w.writerow([k, repr(com), repr(sep)])


def write_run_outputs(run: ChunkRun, config: RunConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write result.json, report.csv, curves.csv and (optionally) stages.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = persisted(run.report, config)
    result = {
        "config": config.to_json(),
        "qUsed": run.q_used,
        "qLowered": run.q_lowered,
        "trace": run.trace.to_json(),
        "report": json.loads(report.to_json()),
    }
    paths = {"result": out / "result.json", "report": out / "report.csv",
             "curves": Path(config.curves_path) if config.curves_path else out / "curves.csv"}
    paths["result"].write_text(json.dumps(result, sort_keys=True) + "\n", encoding="utf-8")
    with open(paths["report"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        w.writerow(report.csv_row())
    write_curves(run.trace, paths["curves"])
    if run.stages:
        paths["stages"] = out / "stages.json"
        paths["stages"].write_text(json.dumps(run.stages, sort_keys=True) + "\n",
                                   encoding="utf-8")
    return paths


# -- streams -----------------------------------------------------------------

@dataclass
class StreamResult:
    per_chunk: list[EvalReport]
    k_stars: dict[int, int]
    skipped: list[str]
    aggregate: dict

    @staticmethod
    def summarize(reports: list[EvalReport]) -> dict:
        def stats(values):
            vals = [v for v in values if v is not None]
            if not vals:
                return {"mean": None, "std": None, "count": 0}
            arr = np.asarray(vals, dtype=np.float64)
            return {"mean": float(arr.mean()), "std": float(arr.std()), "count": len(vals)}
        return {"chunks": len(reports),
                "nmi": stats(r.nmi for r in reports),
                "dcv": stats(r.dcv for r in reports),
                "runtime_ms": stats(r.runtime_ms for r in reports)}


def chunk_files(chunk_dir: str | Path) -> list[Path]:
    return sorted(p for p in Path(chunk_dir).iterdir() if p.suffix == ".csv" and p.is_file())


def read_rows(path: str | Path) -> list[EvalReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EvalReport.from_csv_row(row) for row in csv.DictReader(fh)]


def run_stream(chunk_dir: str | Path, config: RunConfig | None = None,
               out_dir: str | Path | None = None, resume: bool = False) -> StreamResult:
    """Process every ``*.csv`` in ``chunk_dir`` in filename order.

    Each chunk's row is appended to ``results.csv`` as soon as it finishes;
    ``aggregate.json`` is written at the end. With ``resume``, chunks whose
    rows already exist are not recomputed.
    """
    config = config or RunConfig()
    files = chunk_files(chunk_dir)
    if not files:
        raise ValueError(f"no chunk files (*.csv) in {chunk_dir}")
    out = Path(out_dir) if out_dir is not None else Path(chunk_dir) / "results"
    out.mkdir(parents=True, exist_ok=True)
    results = Path(config.results_path) if config.results_path else out / "results.csv"
    done: dict[int, EvalReport] = {}
    if resume and results.exists():
        for r in read_rows(results):
            done[r.chunk_id] = r
    mode = "a" if resume and results.exists() else "w"
    reports, k_stars, skipped = [], {}, []
    with open(results, mode, newline="", encoding="utf-8", buffering=1) as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(CSV_FIELDS)
        for cid, path in enumerate(files):
            if cid in done:
                reports.append(done[cid])
                continue
            try:
                chunk = read_chunk_csv(path, timestamp=cid)
            except ValueError as exc:
                log.error("skipping %s: %s", path.name, exc)
                skipped.append(path.name)
                continue
            run = run_chunk(chunk, config, chunk_id=cid)
            rep = persisted(run.report, config)
            w.writerow(rep.csv_row())
            fh.flush()
            reports.append(rep)
            k_stars[cid] = run.trace.k_star
            del run, chunk
    agg = StreamResult.summarize(reports)
    agg["skipped"] = skipped
    (out / "aggregate.json").write_text(json.dumps(agg, sort_keys=True, indent=1) + "\n",
                                        encoding="utf-8")
    return StreamResult(reports, k_stars, skipped, agg)


# -- experiments -------------------------------------------------------------

@dataclass(frozen=True)
class GaussianSpec:
    """Recipe for fresh Gaussian chunks of any size: blob centers, a shared
    isotropic variance and relative weights."""

    centers: tuple[tuple[float, ...], ...] = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
    variance: float = 0.01
    weights: tuple[float, ...] | None = None
    seed: int = 0

    def sample(self, n: int, seed: int | None = None) -> DataChunk:
        k = len(self.centers)
        w = np.ones(k) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        counts = np.floor(n * w / w.sum()).astype(np.int64)
        counts[-1] += n - counts.sum()
        s = self.seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence([int(s), int(n), 0xB1]))
        xs, ys = [], []
        for c, (mu, m) in enumerate(zip(self.centers, counts)):
            xs.append(rng.normal(mu, math.sqrt(self.variance), size=(int(m), len(mu))))
            ys.append(np.full(int(m), c))
        x, y = np.concatenate(xs), np.concatenate(ys)
        perm = rng.permutation(n)
        return DataChunk(x[perm], y[perm])


@dataclass(frozen=True)
class BenchResult:
    rows: list[tuple[int, float]]
    alpha: float | None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "runtimeMs"])
            for n, ms in self.rows:
                w.writerow([n, f"{ms:.3f}"])


def fit_exponent(ns, runtimes) -> float | None:
    """Least-squares slope of log(runtime) against log(n)."""
    if len(ns) < 2:
        return None
    return float(np.polyfit(np.log(ns), np.log(runtimes), 1)[0])


def run_bench(sizes, base: GaussianSpec | None = None, config: RunConfig | None = None,
              repeats: int = 1) -> BenchResult:
    """Time ``run_chunk`` on a fresh Gaussian chunk per size (best of ``repeats``)."""
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    base = base or GaussianSpec()
    config = config or RunConfig()
    rows = []
    for n in sizes:
        chunk = base.sample(n)
        best = min(run_chunk(chunk, config).report.runtime_ms for _ in range(max(1, repeats)))
        rows.append((n, best))
        log.info("bench n=%d %.1f ms", n, best)
    return BenchResult(rows, fit_exponent([r[0] for r in rows], [r[1] for r in rows]))


def run_sensitivity(q_range, kappa_range, chunk: DataChunk,
                    config: RunConfig | None = None) -> list[dict]:
    """One run per (Q, kappa) on the same chunk and seed; rows sorted by (Q, kappa)."""
    q_values = sorted(set(int(q) for q in q_range))
    k_values = sorted(set(int(k) for k in kappa_range))
    if not q_values or not k_values:
        raise ValueError("ranges must be non-empty")
    config = config or RunConfig()
    rows = []
    for q in q_values:
        for kappa in k_values:
            cfg = replace(config, rsom=replace(config.rsom, Q=q),
                          merge=replace(config.merge, kappa=kappa))
            rep = run_chunk(chunk, cfg).report
            rows.append({"Q": q, "kappa": kappa, "nmi": rep.nmi, "dcv": rep.dcv,
                         "k_pred": rep.k_pred})
    return rows


def run_ablation(variant: str, chunk: DataChunk, config: RunConfig | None = None) -> EvalReport:
    """Report for one ablation variant, tagged with the variant name."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rep = run_chunk(chunk, config, variant=variant).report
    return replace(rep, variant=variant)


def write_rows(rows: list[dict], path: str | Path, columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                        for k, v in r.items()})


