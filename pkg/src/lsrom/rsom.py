"""Randomized self-organizing map.

Neurons get map positions from Poisson-disk sampling in the unit square,
smoothed by a few Lloyd (CVT) iterations. The map graph is the Delaunay
triangulation of those positions. Training is the classic online Kohonen
rule with a Gaussian neighborhood over map positions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import kernels
from .core import DataChunk, TopologyModel, nearest_center

log = logging.getLogger(__name__)

_UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class RsomParams:
    Q: int = 10
    epochs: int = 10
    lr_start: float = 0.5
    lr_end: float = 0.01
    sigma_start: float = 0.5
    sigma_end: float = 0.01
    lloyd_iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.Q < 2:
            raise ValueError("Q must be >= 2")
        if self.epochs < 1 or self.lloyd_iterations < 0:
            raise ValueError("epochs must be positive and lloyd_iterations non-negative")
        if not 0 < self.lr_end < self.lr_start:
            raise ValueError("need 0 < lr_end < lr_start")
        if not 0 < self.sigma_end < self.sigma_start:
            raise ValueError("need 0 < sigma_end < sigma_start")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_neurons(self) -> int:
        return self.Q * self.Q

    def learning_rate(self, t, total_steps):
        return self.lr_start * (self.lr_end / self.lr_start) ** (np.asarray(t) / total_steps)

    def sigma(self, t, total_steps):
        return self.sigma_start * (self.sigma_end / self.sigma_start) ** (np.asarray(t) / total_steps)


@dataclass(frozen=True)
class TrainedSom:
    topology: TopologyModel
    quantization_error: float
    initial_quantization_error: float
    params: RsomParams
    poisson_radius: float

    def to_json(self) -> dict:
        return {
            "centers": self.topology.centers.tolist(),
            "gridPositions": self.topology.grid_positions.tolist(),
            "adjacency": [list(e) for e in self.topology.edges()],
            "quantizationError": self.quantization_error,
            "params": asdict(self.params),
            "seed": int(self.params.seed),
        }


# -- map placement -----------------------------------------------------------

def _bridson(radius: float, rng: np.random.Generator, attempts: int = 30) -> np.ndarray:
    cell = radius / math.sqrt(2.0)
    side = int(math.ceil(1.0 / cell))
    grid = -np.ones((side, side), dtype=np.int64)
    pts: list[tuple[float, float]] = []
    active: list[int] = []
    r2 = radius * radius

    def add(p):
        grid[min(int(p[0] / cell), side - 1), min(int(p[1] / cell), side - 1)] = len(pts)
        active.append(len(pts))
        pts.append(p)

    add(tuple(rng.random(2)))
    while active:
        slot = int(rng.integers(len(active)))
        px, py = pts[active[slot]]
        angles = rng.random(attempts) * 2.0 * math.pi
        dists = radius * (1.0 + rng.random(attempts))
        placed = False
        for a, d in zip(angles, dists):
            cx, cy = px + d * math.cos(a), py + d * math.sin(a)
            if not (0.0 <= cx < 1.0 and 0.0 <= cy < 1.0):
                continue
            gx, gy = int(cx / cell), int(cy / cell)
            ok = True
            for ix in range(max(gx - 2, 0), min(gx + 3, side)):
                for iy in range(max(gy - 2, 0), min(gy + 3, side)):
                    o = grid[ix, iy]
                    if o >= 0:
                        ox, oy = pts[o]
                        if (ox - cx) ** 2 + (oy - cy) ** 2 < r2:
                            ok = False
                            break
                if not ok:
                    break
            if ok:
                add((cx, cy))
                placed = True
                break
        if not placed:
            active[slot] = active[-1]
            active.pop()
    return np.array(pts)


def poisson_disk_init(Q: int, seed: int) -> tuple[np.ndarray, float]:
    """Place exactly ``Q*Q`` map positions in the unit square.

    Bridson sampling starts at radius ``0.85/Q``; the radius shrinks by 10%
    until enough samples appear, and the surplus is discarded at random.

    Returns:
        The (Q*Q, 2) positions and the radius that succeeded; all pairwise
        distances are at least that radius.
    """
    if Q < 2:
        raise ValueError("Q must be >= 2")
    target = Q * Q
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9D15C]))
    radius = 0.85 / Q
    while True:
        pts = _bridson(radius, rng)
        if len(pts) >= target:
            break
        radius *= 0.9
    if len(pts) > target:
        keep = np.sort(rng.choice(len(pts), size=target, replace=False))
        pts = pts[keep]
    log.debug("poisson disk: %d points at radius %.5f", target, radius)
    return pts, radius


def _clip(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    # keeps {x : normal . x <= offset}
    if len(poly) == 0:
        return poly
    out = []
    s = poly @ normal - offset
    m = len(poly)
    for a in range(m):
        b = (a + 1) % m
        pa, pb, sa, sb = poly[a], poly[b], s[a], s[b]
        if sa <= 0:
            out.append(pa)
        if (sa <= 0) != (sb <= 0):
            out.append(pa + (pb - pa) * (sa / (sa - sb)))
    return np.array(out) if out else np.empty((0, 2))


def _centroid(poly: np.ndarray) -> np.ndarray | None:
    if len(poly) < 3:
        return None
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-15:
        return None
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def _voronoi_neighbors(points: np.ndarray) -> list[np.ndarray]:
    n = len(points)
    if n >= 4:
        try:
            tri = Delaunay(points)
            indptr, idx = tri.vertex_neighbor_vertices
            return [idx[indptr[i]:indptr[i + 1]] for i in range(n)]
        except QhullError:
            pass
    return [np.delete(np.arange(n), i) for i in range(n)]


def _lloyd_step(points: np.ndarray) -> np.ndarray:
    out = points.copy()
    for i, nbrs in enumerate(_voronoi_neighbors(points)):
        p = points[i]
        poly = _UNIT_SQUARE
        for j in nbrs:
            d = points[j] - p
            if not d.any():
                continue
            poly = _clip(poly, d, float(d @ (p + points[j])) / 2.0)
        c = _centroid(poly)
        if c is not None:
            out[i] = c
    return np.clip(out, 0.0, 1.0)


def lloyd_relax(positions: np.ndarray, iterations: int) -> np.ndarray:
    """Move each point to the centroid of its Voronoi cell clipped to [0, 1]^2."""
    pts = np.array(positions, dtype=np.float64)
    for _ in range(iterations):
        pts = _lloyd_step(pts)
    return pts


def cvt_energy(positions: np.ndarray, resolution: int = 200) -> float:
    """Sum over a regular sample grid of squared distance to the nearest point."""
    g = (np.arange(resolution) + 0.5) / resolution
    samples = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    return float(kernels.assign_nearest(samples, positions)[1].sum())


def build_adjacency(grid_positions: np.ndarray) -> np.ndarray:
    """Delaunay edges of the map positions as a boolean matrix."""
    pts = np.asarray(grid_positions, dtype=np.float64)
    n = len(pts)
    adj = np.zeros((n, n), dtype=bool)
    if n < 3:
        adj[:] = True
        np.fill_diagonal(adj, False)
        return adj
    try:
        tri = Delaunay(pts)
    except QhullError:
        # collinear positions: chain them along the principal direction
        order = np.argsort((pts - pts.mean(0)) @ np.linalg.svd(pts - pts.mean(0))[2][0])
        adj[order[:-1], order[1:]] = True
        return adj | adj.T
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                adj[simplex[a], simplex[b]] = adj[simplex[b], simplex[a]] = True
    return adj


def find_bmu(x, centers) -> int:
    """Index of the center nearest to ``x``, lowest index on ties."""
    centers = np.asarray(centers, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("empty center set")
    if centers.shape[1] != x.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {centers.shape[1]}")
    return int(nearest_center(x.reshape(1, -1), centers)[0][0])


def train(chunk: DataChunk, params: RsomParams, backend: str | None = None) -> TrainedSom:
    """Train a randomized SOM on a normalized chunk.

    Runs ``epochs * n`` single-object steps; each epoch presents the chunk in
    a fresh seeded permutation.
    """
    x = np.ascontiguousarray(chunk.objects)
    n = x.shape[0]
    nq = params.n_neurons
    if n < nq:
        raise ValueError(f"chunk has n={n} objects but the map has Q^2={nq} neurons; "
                         f"lower Q to at most {math.isqrt(n)}")
    grid, radius = poisson_disk_init(params.Q, params.seed)
    grid = lloyd_relax(grid, params.lloyd_iterations)
    adjacency = build_adjacency(grid)
    diff = grid[:, None, :] - grid[None, :, :]
    grid_d2 = np.ascontiguousarray((diff * diff).sum(axis=2))

    init_seq, order_seq = np.random.SeedSequence(int(params.seed)).spawn(2)
    weights = np.ascontiguousarray(
        x[np.sort(np.random.default_rng(init_seq).choice(n, size=nq, replace=False))])
    initial_qe = float(nearest_center(x, weights)[1].mean())

    rng = np.random.default_rng(order_seq)
    total = params.epochs * n
    for epoch in range(params.epochs):
        kernels.som_train(x, weights, grid_d2, rng.permutation(n), epoch * n, total,
                          params.lr_start, params.lr_end, params.sigma_start, params.sigma_end,
                          backend=backend)
    qe = float(nearest_center(x, weights)[1].mean())
    topo = TopologyModel(weights, grid, adjacency)
    return TrainedSom(topo, qe, initial_qe, params, radius)
