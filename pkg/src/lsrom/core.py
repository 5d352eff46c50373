"""Shared data model: chunks, partitions, SOM topology, and the basic
distance / normalization / imbalance / SSQ operations."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataChunk:
    """One timestamped chunk of ``n`` objects with ``f`` features.

    Args:
        objects: (n, f) finite feature matrix.
        labels: optional length-n non-negative integer class ids.
        timestamp: position of the chunk in its stream.
    """

    objects: np.ndarray
    labels: np.ndarray | None = None
    timestamp: int = 0

    def __post_init__(self):
        x = np.array(self.objects, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"objects must be a non-empty (n, f) matrix, got shape {x.shape}")
        bad = np.argwhere(~np.isfinite(x))
        if bad.size:
            r, c = bad[0]
            raise ValueError(f"non-finite feature value at row {r}, column {c}")
        object.__setattr__(self, "objects", _frozen(x))
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (x.shape[0],):
                raise ValueError(f"labels length {lab.shape} does not match n = {x.shape[0]}")
            if lab.size and (not np.all(np.equal(np.mod(lab, 1), 0)) or lab.min() < 0):
                raise ValueError("labels must be non-negative integers")
            object.__setattr__(self, "labels", _frozen(lab.astype(np.int64)))
        if int(self.timestamp) < 0:
            raise ValueError("timestamp must be non-negative")

    @property
    def n(self) -> int:
        return self.objects.shape[0]

    @property
    def f(self) -> int:
        return self.objects.shape[1]

    def with_objects(self, objects: np.ndarray) -> DataChunk:
        return DataChunk(objects, self.labels, self.timestamp)


@dataclass(frozen=True)
class Partition:
    """Hard assignment of objects to ``k`` non-empty clusters."""

    assignment: np.ndarray
    centers: np.ndarray
    sizes: np.ndarray

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @classmethod
    def from_assignment(cls, objects: np.ndarray, assignment: np.ndarray) -> Partition:
        """Build a partition, relabelling cluster ids to ``0..k-1`` in order of
        first id and dropping empty ones. Centers are member means."""
        objects = np.asarray(objects, dtype=np.float64)
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape != (objects.shape[0],):
            raise ValueError("assignment length must equal the number of objects")
        used, compact = np.unique(assignment, return_inverse=True)
        k = used.size
        sizes = np.bincount(compact, minlength=k)
        sums = np.zeros((k, objects.shape[1]))
        np.add.at(sums, compact, objects)
        centers = sums / sizes[:, None]
        return cls(_frozen(compact.astype(np.int64)), _frozen(centers), _frozen(sizes.astype(np.int64)))


@dataclass(frozen=True)
class TopologyModel:
    """Node centers in data space, their map (grid) positions and a binary
    symmetric adjacency matrix."""

    centers: np.ndarray
    grid_positions: np.ndarray
    adjacency: np.ndarray
    radii: np.ndarray | None = field(default=None)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        q = adj.shape[0]
        if adj.shape != (q, q) or self.centers.shape[0] != q or self.grid_positions.shape[0] != q:
            raise ValueError("centers, grid positions and adjacency disagree on node count")
        if not np.array_equal(adj, adj.T) or adj.diagonal().any():
            raise ValueError("adjacency must be symmetric with a zero diagonal")
        object.__setattr__(self, "adjacency", _frozen(adj.copy()))
        object.__setattr__(self, "centers", _frozen(np.array(self.centers, dtype=np.float64)))
        object.__setattr__(self, "grid_positions",
                           _frozen(np.array(self.grid_positions, dtype=np.float64)))
        if self.radii is not None:
            object.__setattr__(self, "radii", _frozen(np.array(self.radii, dtype=np.float64)))

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(a), int(b)) for a, b in zip(i, j)]

    def subgraph(self, keep: np.ndarray, centers: np.ndarray | None = None) -> TopologyModel:
        """Induced subgraph on node indices ``keep`` (order preserved)."""
        keep = np.asarray(keep, dtype=np.int64)
        return TopologyModel(
            self.centers[keep] if centers is None else centers,
            self.grid_positions[keep],
            self.adjacency[np.ix_(keep, keep)],
        )

    def with_centers(self, centers: np.ndarray) -> TopologyModel:
        return TopologyModel(centers, self.grid_positions, self.adjacency, self.radii)


def squared_distance(a, b) -> float:
    """Squared Euclidean distance between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d, d))


def normalize_min_max(chunk: DataChunk) -> DataChunk:
    """Map each feature column onto [0, 1]; constant columns become 0."""
    x = chunk.objects
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out = (x - lo) / safe
    out[:, span == 0] = 0.0
    np.clip(out, 0.0, 1.0, out=out)
    return chunk.with_objects(out)


def imbalance_ratio(sizes) -> float:
    """Majority size over minority size."""
    s = np.asarray(sizes)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("imbalance ratio needs at least two cluster sizes")
    if np.any(s < 1):
        raise ValueError("cluster sizes must all be >= 1")
    return float(s.max() / s.min())


def ssq(chunk: DataChunk, partition: Partition) -> float:
    """Sum over objects of squared distance to their cluster center."""
    x = chunk.objects
    if partition.centers.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: chunk has f={x.shape[1]}, "
                         f"centers have f={partition.centers.shape[1]}")
    if partition.assignment.shape != (x.shape[0],):
        raise ValueError("partition does not cover every object")
    d = x - partition.centers[partition.assignment]
    return float(np.einsum("ij,ij->", d, d))


def nearest_center(objects: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center per object (lowest index on ties) and the squared distance."""
    if centers.shape[0] == 0:
        raise ValueError("empty center set")
    if centers.shape[1] != objects.shape[1]:
        raise ValueError(f"dimension mismatch: {objects.shape[1]} vs {centers.shape[1]}")
    return kernels.assign_nearest(objects, centers)


# -- chunk CSV files ---------------------------------------------------------

def read_chunk_csv(path: str | Path, timestamp: int = 0) -> DataChunk:
    """Read a chunk file: header ``f0..f{f-1}`` plus an optional ``label`` column."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_label = bool(header) and header[-1] == "label"
        feats = header[:-1] if has_label else header
        if not feats or feats != [f"f{i}" for i in range(len(feats))]:
            raise ValueError(f"{path}: header must be f0..f{{f-1}} with optional trailing label")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    labels = None
    if has_label:
        labels = table[:, -1]
        table = table[:, :-1]
    return DataChunk(table, labels, timestamp)


def chunk_to_csv(chunk: DataChunk) -> str:
    buf = io.StringIO()
    header = [f"f{i}" for i in range(chunk.f)]
    if chunk.labels is not None:
        header.append("label")
    buf.write(",".join(header) + "\n")
    for i in range(chunk.n):
        fields = [repr(float(v)) for v in chunk.objects[i]]
        if chunk.labels is not None:
            fields.append(str(int(chunk.labels[i])))
        buf.write(",".join(fields) + "\n")
    return buf.getvalue()


def write_chunk_csv(chunk: DataChunk, path: str | Path) -> None:
    Path(path).write_text(chunk_to_csv(chunk), encoding="utf-8")
