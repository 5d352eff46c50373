"""Approximate k-nearest-neighbor search on a multi-level proximity graph
(HNSW), plus an exhaustive exact search used as its oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class AnnParams:
    max_degree: int = 16
    ef_construction: int = 100
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.max_degree < 2 or self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("max_degree must be >= 2 and ef values positive")


class AnnIndex:
    """Immutable HNSW index over ``points``; ids are row indices.

    Each point's top level is drawn geometrically with decay ``1/ln(max_degree)``
    from ``params.seed``; points are inserted in row order.
    """

    def __init__(self, points, params: AnnParams | None = None, backend: str | None = None):
        self.params = params or AnnParams()
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError("need at least one point to index")
        self.levels = draw_levels(self.points.shape[0], self.params.max_degree, self.params.seed)
        self._graph = kernels.hnsw_graph(self.points, self.levels, self.params.max_degree,
                                         self.params.ef_construction, backend=backend)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def entry_point(self) -> int:
        return self._graph.entry_point

    @property
    def top_level(self) -> int:
        return self._graph.top_level

    def level_sizes(self) -> list[int]:
        return [int((self.levels >= lv).sum()) for lv in range(self.top_level + 1)]

    def links(self, node: int, level: int) -> list[int]:
        return self._graph.links(node, level)

    def knn(self, query, k: int, ef: int | None = None) -> np.ndarray:
        """Ids of (approximately) the ``k`` nearest points, nearest first."""
        return self.knn_with_distances(query, k, ef)[0]

    def knn_with_distances(self, query, k: int, ef: int | None = None):
        self._check_k(k)
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.points.shape[1]:
            raise ValueError(f"query has f={q.shape[0]}, index has f={self.points.shape[1]}")
        return self._graph.search(q, k, ef or self.params.ef_search)

    def knn_batch(self, queries, k: int, ef: int | None = None):
        """(ids, squared distances) for every query row; short rows are padded with -1."""
        self._check_k(k)
        return self._graph.search_batch(np.asarray(queries, dtype=np.float64), k,
                                        ef or self.params.ef_search)

    def _check_k(self, k: int):
        if not 1 <= k <= len(self):
            raise ValueError(f"k={k} must lie in [1, {len(self)}]")


def draw_levels(m: int, max_degree: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA77]))
    u = 1.0 - rng.random(m)  # in (0, 1]
    return np.floor(-np.log(u) / math.log(max_degree)).astype(np.int64)


def build(points, params: AnnParams | None = None, backend: str | None = None) -> AnnIndex:
    return AnnIndex(points, params, backend)


def knn(index: AnnIndex, query, k: int) -> np.ndarray:
    return index.knn(query, k)


def exact_knn(points, query, k: int) -> np.ndarray:
    """Exhaustive k-nearest neighbors; ties go to the lower index."""
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k <= points.shape[0]:
        raise ValueError(f"k={k} must lie in [1, {points.shape[0]}]")
    d = points - np.asarray(query, dtype=np.float64).reshape(1, -1)
    d2 = np.einsum("ij,ij->i", d, d)
    return np.lexsort((np.arange(points.shape[0]), d2))[:k]


def recall(approx: np.ndarray, exact: np.ndarray) -> float:
    """Fraction of exact neighbors recovered, averaged over rows."""
    approx = np.atleast_2d(approx)
    exact = np.atleast_2d(exact)
    hits = [len(set(a.tolist()) & set(e.tolist())) / len(e) for a, e in zip(approx, exact)]
    return float(np.mean(hits))
