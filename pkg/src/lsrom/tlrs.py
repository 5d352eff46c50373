"""Two-layer random sampling of imbalanced chunks from a labeled base set,
and synthetic base-set factories (Gaussian blobs, two moons)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import DataChunk, write_chunk_csv


@dataclass(frozen=True)
class TlrsSpec:
    """Inputs of the chunk generator.

    Args:
        base: labeled base dataset.
        ir: imbalance ratio of the base (upper bound for the per-cluster draws).
        chunk_count: number of chunks in a stream.
        chunk_size_cap: optional maximum chunk size; sizes are scaled down
            proportionally to fit.
        seed: stream seed; chunk ``t`` uses the sub-seed ``(seed, t)``.
        k: number of base clusters (defaults to the number of distinct labels).
    """

    base: DataChunk
    ir: float
    chunk_count: int = 1
    chunk_size_cap: int | None = None
    seed: int = 0
    k: int | None = None

    def __post_init__(self):
        if self.base.labels is None:
            raise ValueError("the base dataset must carry labels")
        n_labels = np.unique(self.base.labels).size
        if n_labels < 2:
            raise ValueError("the base dataset needs at least two distinct labels")
        if not self.ir > 1:
            raise ValueError("IR must be > 1")
        if self.k is not None and not 2 <= self.k <= n_labels:
            raise ValueError(f"k={self.k} must lie in [2, {n_labels}]")
        if self.chunk_count < 1:
            raise ValueError("chunk_count must be positive")
        if self.chunk_size_cap is not None and self.chunk_size_cap < 1:
            raise ValueError("chunk_size_cap must be positive")

    @property
    def n_clusters(self) -> int:
        return self.k if self.k is not None else int(np.unique(self.base.labels).size)

    def sorted_clusters(self) -> tuple[np.ndarray, np.ndarray]:
        """Base labels and their sizes in ascending size order (ties by label)."""
        labels, counts = np.unique(self.base.labels, return_counts=True)
        order = np.lexsort((labels, counts))
        return labels[order][: self.n_clusters], counts[order][: self.n_clusters]


@dataclass(frozen=True)
class ChunkRecipe:
    t: int
    seed: int
    kt: int
    ir_draws: tuple[int, ...]
    sizes: tuple[int, ...]
    source_clusters: tuple[int, ...]
    clamped: tuple[bool, ...]
    capped: bool

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def realized_ir(self) -> float:
        return max(self.sizes) / min(self.sizes)


def planned_sizes(base_sizes: Sequence[int], ir_draws: Sequence[int]) -> tuple[list[int], list[bool]]:
    """Per-cluster counts: the smallest cluster is taken whole; cluster ``i``
    takes ``ir_draws[i-1]`` times the previous base size, capped at what it
    has available."""
    sizes = [int(base_sizes[0])]
    clamped = [False]
    for i in range(1, len(base_sizes)):
        want = int(ir_draws[i - 1]) * int(base_sizes[i - 1])
        if want <= base_sizes[i]:
            sizes.append(want)
            clamped.append(False)
        else:
            sizes.append(int(base_sizes[i]))
            clamped.append(True)
    return sizes, clamped


def _chunk_rng(spec: TlrsSpec, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(spec.seed), int(t)]))


def generate_chunk(spec: TlrsSpec, t: int) -> tuple[DataChunk, ChunkRecipe]:
    """Draw chunk ``t``: cluster count, sorted ratio draws, sizes, then rows."""
    rng = _chunk_rng(spec, t)
    labels, counts = spec.sorted_clusters()
    kt = int(rng.integers(2, spec.n_clusters + 1))
    ir_draws = np.sort(rng.integers(2, int(math.floor(spec.ir)) + 1, size=kt - 1))
    sizes, clamped = planned_sizes(counts[:kt], ir_draws)
    capped = False
    cap = spec.chunk_size_cap
    if cap is not None and sum(sizes) > cap:
        scale = cap / sum(sizes)
        sizes = [max(1, int(math.floor(s * scale))) for s in sizes]
        capped = True
    rows = []
    out_labels = []
    for lab, size in zip(labels[:kt], sizes):
        pool = np.flatnonzero(spec.base.labels == lab)
        rows.append(rng.choice(pool, size=size, replace=False))
        out_labels.append(np.full(size, lab))
    idx = np.concatenate(rows)
    lab_arr = np.concatenate(out_labels)
    perm = rng.permutation(idx.size)
    chunk = DataChunk(spec.base.objects[idx[perm]], lab_arr[perm], timestamp=t)
    recipe = ChunkRecipe(t, int(spec.seed), kt, tuple(int(v) for v in ir_draws),
                         tuple(int(s) for s in sizes), tuple(int(v) for v in labels[:kt]),
                         tuple(clamped), capped)
    return chunk, recipe


def replay(spec: TlrsSpec, recipe: ChunkRecipe) -> DataChunk:
    """Regenerate the chunk described by ``recipe``."""
    if recipe.seed != spec.seed:
        spec = TlrsSpec(spec.base, spec.ir, spec.chunk_count, spec.chunk_size_cap, recipe.seed,
                        spec.k)
    return generate_chunk(spec, recipe.t)[0]


def generate_stream(spec: TlrsSpec) -> Iterator[tuple[DataChunk, ChunkRecipe]]:
    for t in range(spec.chunk_count):
        yield generate_chunk(spec, t)


def write_stream(spec: TlrsSpec, out_dir: str | Path) -> list[ChunkRecipe]:
    """Write ``chunk_0000.csv`` ... and ``recipes.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recipes = []
    for chunk, recipe in generate_stream(spec):
        write_chunk_csv(chunk, out / f"chunk_{recipe.t:04d}.csv")
        recipes.append(recipe)
    (out / "recipes.json").write_text(
        json.dumps([r.to_json() for r in recipes], indent=1) + "\n", encoding="utf-8")
    return recipes


# -- synthetic bases ---------------------------------------------------------

def make_gaussian_base(cluster_specs, seed: int = 0) -> DataChunk:
    """Labeled Gaussian blobs.

    ``cluster_specs`` is a sequence of ``(mean, variance_diagonal, count)``;
    a scalar variance applies to every feature. Blob ``c`` gets label ``c``.
    """
    specs = list(cluster_specs)
    if len(specs) < 2:
        raise ValueError("need at least two cluster specs")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6A55]))
    xs, ys = [], []
    for c, (mean, var, count) in enumerate(specs):
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        var = np.broadcast_to(np.asarray(var, dtype=np.float64), mean.shape)
        if int(count) != count or count < 1:
            raise ValueError(f"cluster {c}: count must be a positive integer")
        if np.any(var <= 0):
            raise ValueError(f"cluster {c}: variances must be positive")
        xs.append(rng.normal(mean, np.sqrt(var), size=(int(count), mean.size)))
        ys.append(np.full(int(count), c))
    return DataChunk(np.concatenate(xs), np.concatenate(ys))


def make_two_moons_base(n: int, imbalance: float = 1.0, noise: float = 0.0,
                        seed: int = 0) -> DataChunk:
    """Two interleaved half circles with counts in ratio ``imbalance : 1``.

    The upper arc (label 0) is the unit half circle at the origin; the lower
    arc (label 1) is centred at (1, 0.5) and opens upward.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    if imbalance < 1:
        raise ValueError("imbalance must be >= 1")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    n_major = int(round(n * imbalance / (imbalance + 1.0)))
    n_minor = n - n_major
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x300]))
    t0 = rng.uniform(0.0, np.pi, n_major)
    t1 = rng.uniform(0.0, np.pi, n_minor)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.concatenate([upper, lower])
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    y = np.concatenate([np.zeros(n_major, np.int64), np.ones(n_minor, np.int64)])
    return DataChunk(x, y)


GAUSSIAN4_PROPORTIONS = (5000, 20000, 40000, 99350)


def make_four_blob_base(n: int = 100_000, spacing: float = 8.0, seed: int = 0,
                        proportions: Sequence[int] = GAUSSIAN4_PROPORTIONS) -> DataChunk:
    """Four unit-variance 2-D blobs on the corners of a square with side
    ``spacing``; counts follow ``proportions`` (IR about 19.87 by default)."""
    w = np.asarray(proportions, dtype=np.float64)
    if w.size != 4 or np.any(w <= 0):
        raise ValueError("need four positive proportions")
    counts = np.floor(n * w / w.sum()).astype(np.int64)
    counts[-1] += n - counts.sum()
    if counts.min() < 1:
        raise ValueError(f"n={n} too small for the requested proportions")
    corners = ((0.0, 0.0), (spacing, 0.0), (0.0, spacing), (spacing, spacing))
    return make_gaussian_base([(c, 1.0, int(m)) for c, m in zip(corners, counts)], seed)


def make_bridged_blobs(n_blob: int = 2000, n_bridge: int = 80, gap: float = 10.0,
                       width: float = 0.2, seed: int = 0) -> DataChunk:
    """Two unit-variance blobs ``gap`` apart joined by a thin sparse strip of
    ``n_bridge`` points; strip points are labeled by the nearer blob."""
    if n_blob < 1 or n_bridge < 0 or gap <= 4.0 or width <= 0:
        raise ValueError("need n_blob >= 1, n_bridge >= 0, gap > 4 and width > 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB71D]))
    a = rng.normal((0.0, 0.0), 1.0, (n_blob, 2))
    b = rng.normal((gap, 0.0), 1.0, (n_blob, 2))
    t = rng.uniform(2.0, gap - 2.0, n_bridge)
    strip = np.column_stack([t, rng.normal(0.0, width, n_bridge)])
    x = np.concatenate([a, b, strip])
    y = np.concatenate([np.zeros(n_blob, np.int64), np.ones(n_blob, np.int64),
                        (t > gap / 2).astype(np.int64)])
    return DataChunk(x, y)
