"""Topology-guided merging of micro-clusters with automatic choice of k.

Adjacent clusters are merged greedily by smallest separation, where the
separation of a pair is the inverse depth of the density valley between
them: members are projected on the line joining the two centers (centers
land on +0.5 / -0.5), each side is modelled by a 1-D Gaussian and the
count-weighted mixture is scanned on [-0.5, 0.5] in steps of 0.01.

Every merge records a compactness value (the separation of the pair just
merged) and a separability value (how many kappa-neighbors of the members
of one reference cluster fall outside it). The chosen k minimizes the sum
of both curves, each normalized by its maximum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .ann import AnnIndex, AnnParams
from .core import DataChunk, Partition
from .refine import MicroClusterModel, local_radii

log = logging.getLogger(__name__)

GRID_STEP = 0.01
_U = np.arange(-50, 51) / 100.0
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class MergeParams:
    """Merge settings.

    ``neighbor_search`` picks the engine for separability ("ann" or
    "exact"); ``candidate_scope`` allows the whole chunk as neighbor
    candidates ("chunk") or restricts them to the reference cluster plus its
    map neighbors ("topology"). ``com_mode`` controls the compactness term of
    the k selection: "cumulative" uses the largest separation merged so far,
    "step" the separation of the last merge alone. ``kstar_tolerance``
    treats objective values within that distance of the minimum as tied;
    ties go to the smallest k.
    """

    kappa: int = 10
    grid_step: float = GRID_STEP
    variance_floor: float = 1e-6
    density_floor: float = 1e-12
    neighbor_search: str = "ann"
    candidate_scope: str = "chunk"
    com_mode: str = "cumulative"
    kstar_tolerance: float = 0.05
    ann: AnnParams = field(default_factory=AnnParams)

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.grid_step != GRID_STEP:
            raise ValueError("grid_step is fixed at 0.01")
        if self.variance_floor <= 0 or self.density_floor <= 0:
            raise ValueError("floors must be positive")
        if self.neighbor_search not in ("ann", "exact"):
            raise ValueError("neighbor_search must be 'ann' or 'exact'")
        if self.candidate_scope not in ("topology", "chunk"):
            raise ValueError("candidate_scope must be 'topology' or 'chunk'")
        if self.com_mode not in ("cumulative", "step"):
            raise ValueError("com_mode must be 'cumulative' or 'step'")
        if self.kstar_tolerance < 0:
            raise ValueError("kstar_tolerance must be non-negative")


@dataclass(frozen=True)
class ProjectedPair:
    cluster_ids: tuple[int, int]
    projections_i: np.ndarray
    projections_j: np.ndarray
    sigma2_i: float
    sigma2_j: float
    count_i: int
    count_j: int
    coincident: bool = False


@dataclass(frozen=True)
class MergeRecord:
    k: int
    merged_pair: tuple[int, int]
    com: float
    sep: float
    fallback_used: bool
    kappa_used: int


@dataclass(frozen=True)
class MergeTrace:
    states: tuple[MergeRecord, ...]
    k_star: int
    partition: Partition
    reference_node: int
    objective: dict[int, float]

    def curves(self) -> list[tuple[int, float, float]]:
        return [(r.k, r.com, r.sep) for r in self.states]

    def to_json(self) -> dict:
        return {
            "states": [{"k": r.k, "mergedPair": list(r.merged_pair), "com": r.com, "sep": r.sep,
                        "fallbackUsed": r.fallback_used} for r in self.states],
            "kStar": self.k_star,
            "assignment": self.partition.assignment.tolist(),
        }


# -- separation --------------------------------------------------------------

def mixture_density(u, n_i, var_i, n_j, var_j):
    """Count-weighted two-Gaussian mixture centred at +0.5 and -0.5."""
    u = np.asarray(u, dtype=np.float64)
    a = np.exp(-((u - 0.5) ** 2) / (2.0 * var_i)) / (_SQRT_2PI * np.sqrt(var_i))
    b = np.exp(-((u + 0.5) ** 2) / (2.0 * var_j)) / (_SQRT_2PI * np.sqrt(var_j))
    return (n_i * a + n_j * b) / (n_i + n_j)


def separation_from_moments(n_i, var_i, n_j, var_j, params: MergeParams | None = None) -> float:
    params = params or MergeParams()
    var_i = max(var_i, params.variance_floor)
    var_j = max(var_j, params.variance_floor)
    dens = mixture_density(_U, n_i, var_i, n_j, var_j)
    return float(1.0 / (dens.min() + params.density_floor))


def project_pair(chunk: DataChunk, model: MicroClusterModel, i: int, j: int,
                 params: MergeParams | None = None) -> ProjectedPair:
    """Project the members of micro-clusters ``i`` and ``j`` onto the line
    between their centers, with ``m_i`` at +0.5 and ``m_j`` at -0.5."""
    params = params or MergeParams()
    labels = model.partition.assignment
    xi = chunk.objects[labels == i]
    xj = chunk.objects[labels == j]
    if len(xi) == 0 or len(xj) == 0:
        raise ValueError("both clusters must be non-empty")
    return _project(xi, xj, model.topology.centers[i], model.topology.centers[j], (i, j), params)


def _project(xi, xj, mi, mj, ids, params) -> ProjectedPair:
    d = mi - mj
    dd = float(d @ d)
    if dd == 0.0:
        return ProjectedPair(ids, np.zeros(0), np.zeros(0), params.variance_floor,
                             params.variance_floor, len(xi), len(xj), coincident=True)
    mid = (mi + mj) / 2.0
    pi = (xi - mid) @ d / dd
    pj = (xj - mid) @ d / dd
    return ProjectedPair(ids, pi, pj, max(float(pi.var()), params.variance_floor),
                         max(float(pj.var()), params.variance_floor), len(xi), len(xj))


def separation(pair: ProjectedPair, params: MergeParams | None = None) -> float:
    """Inverse of the mixture's minimum over the scan grid (0 for coincident centers)."""
    if pair.coincident:
        return 0.0
    return separation_from_moments(pair.count_i, pair.sigma2_i, pair.count_j, pair.sigma2_j,
                                   params)


# -- merge state -------------------------------------------------------------

class MergeState:
    """Clusters made of micro-clusters, with map adjacency and moment sums.

    A merged cluster keeps the smaller of the two ids, so a cluster's id is
    always the smallest micro-cluster id among its members.
    """

    def __init__(self, chunk: DataChunk, model: MicroClusterModel, params: MergeParams):
        x = chunk.objects
        lab = model.partition.assignment
        q = model.size
        self.params = params
        self.counts = np.bincount(lab, minlength=q).astype(np.float64)
        means = np.zeros((q, x.shape[1]))
        np.add.at(means, lab, x)
        means /= self.counts[:, None]
        diff = x - means[lab]
        scat = np.zeros((q, x.shape[1], x.shape[1]))
        np.add.at(scat, lab, diff[:, :, None] * diff[:, None, :])
        self.means = means
        self.scatter = scat
        self.centers = np.array(model.topology.centers, dtype=np.float64)
        self.owner = np.arange(q)
        self.active = set(range(q))
        self.nbrs = {i: set(map(int, model.topology.neighbors(i))) for i in range(q)}
        self._sep: dict[tuple[int, int], float] = {}

    @property
    def k(self) -> int:
        return len(self.active)

    def pair_separation(self, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        s = self._sep.get(key)
        if s is None:
            d = self.centers[i] - self.centers[j]
            dd = float(d @ d)
            if dd == 0.0:
                s = 0.0
            else:
                dd2 = dd * dd
                var_i = float(d @ self.scatter[i] @ d) / self.counts[i] / dd2
                var_j = float(d @ self.scatter[j] @ d) / self.counts[j] / dd2
                s = separation_from_moments(self.counts[i], var_i, self.counts[j], var_j,
                                            self.params)
            self._sep[key] = s
        return s

    def adjacent_pairs(self):
        for i in sorted(self.active):
            for j in sorted(self.nbrs[i]):
                if j > i:
                    yield i, j

    def merge(self, i: int, j: int) -> int:
        a, b = (i, j) if i < j else (j, i)
        na, nb = self.counts[a], self.counts[b]
        n = na + nb
        delta = self.means[b] - self.means[a]
        self.scatter[a] = (self.scatter[a] + self.scatter[b]
                           + np.outer(delta, delta) * (na * nb / n))
        self.means[a] = self.means[a] + delta * (nb / n)
        self.centers[a] = (na * self.centers[a] + nb * self.centers[b]) / n
        self.counts[a] = n
        self.owner[self.owner == b] = a
        self.active.discard(b)
        merged = (self.nbrs[a] | self.nbrs.pop(b)) - {a, b}
        for x in merged:
            self.nbrs[x].discard(b)
            self.nbrs[x].add(a)
        self.nbrs[a] = merged
        self._sep = {key: v for key, v in self._sep.items()
                     if a not in key and b not in key}
        return a


def compactness_step(state: MergeState, params: MergeParams | None = None):
    """Pick the adjacent pair with the smallest separation.

    Returns ``((i, j), com, fallback_used)``. When no two remaining clusters
    are adjacent, the pair with the nearest centers is used instead.
    """
    if state.k < 2:
        raise ValueError("need at least two clusters to merge")
    best = None
    for i, j in state.adjacent_pairs():
        cand = (state.pair_separation(i, j), i, j)
        if best is None or cand < best:
            best = cand
    if best is not None:
        return (best[1], best[2]), best[0], False
    ids = np.array(sorted(state.active))
    c = state.centers[ids]
    diff = c[:, None, :] - c[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    d2[np.tril_indices(len(ids))] = np.inf
    a, b = np.unravel_index(int(np.argmin(d2)), d2.shape)
    i, j = int(ids[a]), int(ids[b])
    return (i, j), state.pair_separation(i, j), True


# -- separability ------------------------------------------------------------

class _NeighborRows:
    """Neighbor lists of the reference-cluster members, expressed as
    micro-cluster ids, searched over a fixed candidate object set.

    Rows start at depth ``2*kappa`` and are re-queried deeper only when a
    state's candidate filter leaves fewer than ``kappa`` usable neighbors.
    """

    def __init__(self, x, micro, candidates, params: MergeParams, n_micro: int):
        self.x = x
        self.cand = candidates
        self.group = np.append(micro[candidates], n_micro)  # last slot = padding
        self.pad = len(candidates)
        self.params = params
        self.levels: list[dict] = []
        pts = x[candidates]
        self.local_of = -np.ones(len(x), dtype=np.int64)
        self.local_of[candidates] = np.arange(len(candidates))
        if params.neighbor_search == "exact":
            self._tree = cKDTree(pts)
            self._index = None
        else:
            self._tree = None
            self._index = AnnIndex(pts, params.ann)

    @property
    def max_depth(self) -> int:
        return len(self.cand) - 1

    def _query(self, rows: np.ndarray, depth: int) -> np.ndarray:
        k = min(depth + 1, len(self.cand))
        q = self.x[rows]
        if self._tree is not None:
            _, ids = self._tree.query(q, k=k)
            ids = np.asarray(ids).reshape(len(rows), k)
        else:
            ids, _ = self._index.knn_batch(q, k, max(self.params.ann.ef_search, k))
        ids = np.where(ids < 0, self.pad, ids)
        self_local = self.local_of[rows]
        hit = ids == self_local[:, None]
        first = hit & (np.cumsum(hit, axis=1) == 1)
        missing = ~first.any(axis=1)
        first[missing, -1] = True
        kept = ids[~first].reshape(len(rows), k - 1)
        return self.group[kept]

    def groups(self, rows: np.ndarray, level: int) -> np.ndarray:
        while len(self.levels) <= level:
            depth = min(2 * self.params.kappa * 2 ** len(self.levels), self.max_depth)
            self.levels.append({"depth": depth, "pos": {}, "data": []})
        lv = self.levels[level]
        pos = lv["pos"]
        todo = np.array([r for r in rows.tolist() if r not in pos], dtype=np.int64)
        if todo.size:
            block = self._query(todo, lv["depth"])
            base = sum(len(b) for b in lv["data"])
            lv["data"].append(block)
            for off, r in enumerate(todo.tolist()):
                pos[r] = base + off
            lv["all"] = np.concatenate(lv["data"]) if len(lv["data"]) > 1 else block
        return lv["all"][[pos[r] for r in rows.tolist()]]

    def depth(self, level: int) -> int:
        return self.levels[level]["depth"]


def _sep_for_state(rows_src: _NeighborRows, members: np.ndarray, in_target: np.ndarray,
                   in_scope: np.ndarray, kappa: int) -> float:
    scope = np.append(in_scope, False)
    target = np.append(in_target, False)
    rows = members
    total = 0
    level = 0
    while rows.size:
        grp = rows_src.groups(rows, level)
        foreign, kept = kernels.count_foreign(grp, scope, target, kappa)
        short = kept < kappa
        if rows_src.depth(level) >= rows_src.max_depth:
            short[:] = False
        total += int(foreign[~short].sum())
        rows = rows[short]
        level += 1
    return total / kappa


def separability(chunk: DataChunk, micro_labels: np.ndarray, target_micro: np.ndarray,
                 scope_micro: np.ndarray, params: MergeParams | None = None,
                 rows_src: _NeighborRows | None = None) -> tuple[float, int]:
    """Sum over members of the target cluster of the fraction of their
    kappa nearest candidates (self excluded) that lie outside the target.

    ``target_micro`` / ``scope_micro`` are boolean masks over micro-clusters
    for the reference cluster and the candidate set. Returns
    ``(sep, kappa_used)``; kappa is truncated when the candidate set is
    too small.
    """
    params = params or MergeParams()
    micro_labels = np.asarray(micro_labels)
    target_micro = np.asarray(target_micro, bool)
    scope_micro = np.asarray(scope_micro, bool) | target_micro
    if params.candidate_scope == "chunk":
        scope_micro = np.ones_like(scope_micro)
    n_scope = int(np.bincount(micro_labels, minlength=len(scope_micro))[scope_micro].sum())
    kappa = min(params.kappa, n_scope - 1)
    if kappa < 1:
        return 0.0, 0
    if rows_src is None:
        cand = np.flatnonzero(scope_micro[micro_labels])
        rows_src = _NeighborRows(chunk.objects, micro_labels, cand, params, len(scope_micro))
    members = np.flatnonzero(target_micro[micro_labels])
    return _sep_for_state(rows_src, members, target_micro, scope_micro, kappa), kappa


# -- driver ------------------------------------------------------------------

def reference_node(model: MicroClusterModel) -> int:
    """Micro-cluster with the largest local radius (lowest index on ties)."""
    radii = model.radii if model.radii is not None else local_radii(model.topology)
    r = np.where(np.isnan(radii), -np.inf, radii)
    return int(np.argmax(r))


def select_k(records, q_hat: int, tolerance: float = 0.0,
             com_mode: str = "step") -> tuple[int, dict[int, float]]:
    """Minimize normalized com + normalized sep over k in [2, q_hat - 1].

    ``records`` must be in merge order. Both terms are divided by their
    maximum over all records (the final merge to one cluster included).
    """
    if q_hat <= 2:
        return q_hat, {}
    com = np.array([r.com for r in records], dtype=np.float64)
    if com_mode == "cumulative":
        com = np.maximum.accumulate(com)
    com_max = float(com.max())
    sep_max = max(r.sep for r in records)
    obj = {}
    for r, c in zip(records, com):
        if 2 <= r.k <= q_hat - 1:
            obj[r.k] = (float(c) / com_max if com_max > 0 else 0.0) + \
                       (r.sep / sep_max if sep_max > 0 else 0.0)
    best = min(obj.values())
    return min(k for k, v in obj.items() if v <= best + tolerance), obj


def run_merge(chunk: DataChunk, model: MicroClusterModel,
              params: MergeParams | None = None) -> MergeTrace:
    """Merge down to one cluster, recording com/sep per state, and return the
    partition at the selected k."""
    params = params or MergeParams()
    x = chunk.objects
    micro = model.partition.assignment
    q_hat = model.size
    if q_hat == 1:
        return MergeTrace((), 1, Partition.from_assignment(x, np.zeros(len(x), np.int64)), 0, {})
    state = MergeState(chunk, model, params)
    g = reference_node(model)
    steps = []
    while state.k > 1:
        pair, com, fallback = compactness_step(state, params)
        cid = state.merge(*pair)
        owner = state.owner.copy()
        gid = owner[g]
        target = owner == gid
        scope = target.copy()
        for nb in state.nbrs.get(gid, ()):
            scope |= owner == nb
        steps.append((state.k, pair, com, fallback, owner, target, scope))
        log.debug("merge %s -> k=%d com=%.4g%s", pair, state.k, com,
                  " (fallback)" if fallback else "")
        del cid

    # separability per state; the candidate union is indexed once
    union = np.zeros(q_hat, dtype=bool)
    widest = np.zeros(q_hat, dtype=bool)
    for k, _, _, _, _, target, scope in steps:
        if k >= 2:
            union |= scope
            widest |= target
    if params.candidate_scope == "chunk":
        union[:] = True
    rows_src = None
    if union.any():
        rows_src = _NeighborRows(x, micro, np.flatnonzero(union[micro]), params, q_hat)
    sizes = np.bincount(micro, minlength=q_hat)
    records = []
    prev = None
    for k, pair, com, fallback, owner, target, scope in steps:
        if k < 2:
            sep, kap = 0.0, min(params.kappa, len(x) - 1)
        else:
            key = (target.tobytes(), scope.tobytes())
            if key == prev:
                sep, kap = records[-1].sep, records[-1].kappa_used
            else:
                eff_scope = union if params.candidate_scope == "chunk" else scope
                kap = min(params.kappa, int(sizes[eff_scope].sum()) - 1)
                sep = 0.0 if kap < 1 else _sep_for_state(
                    rows_src, np.flatnonzero(target[micro]), target, eff_scope, kap)
            prev = key
        records.append(MergeRecord(k, (int(pair[0]), int(pair[1])), float(com), float(sep),
                                   bool(fallback), int(kap)))

    k_star, obj = select_k(records, q_hat, params.kstar_tolerance, params.com_mode)
    if k_star == q_hat:
        labels = micro
    else:
        owner = next(s[4] for s in steps if s[0] == k_star)
        labels = owner[micro]
    return MergeTrace(tuple(records), k_star, Partition.from_assignment(x, labels), g, obj)
