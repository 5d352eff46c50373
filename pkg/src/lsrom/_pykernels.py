"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation (same summation
order, same tie-breaking) so the two backends agree to rounding of
``exp``. They are used when the compiled extension is unavailable or when
``LSROM_PURE=1`` is set.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

_ASSIGN_BLOCK = 2048


def som_train(data, weights, grid_d2, order, t0, total_steps,
              eps0, eps_end, sigma0, sigma_end):
    """Run ``len(order)`` online SOM steps in place on ``weights``.

    Step ``t0 + s`` presents ``data[order[s]]``. Learning rate and kernel
    width decay geometrically over ``total_steps``.
    """
    log_eps = math.log(eps_end / eps0)
    log_sig = math.log(sigma_end / sigma0)
    T = float(total_steps)
    for s in range(order.shape[0]):
        frac = (t0 + s) / T
        eps = eps0 * math.exp(log_eps * frac)
        sig = sigma0 * math.exp(log_sig * frac)
        x = data[order[s]]
        diff = x - weights
        b = int(np.argmin((diff * diff).sum(axis=1)))
        inv = 1.0 / (2.0 * sig * sig)
        c = eps * np.exp(-grid_d2[b] * inv)
        weights += c[:, None] * diff


def assign_nearest(points, centers):
    """Index of and squared distance to the nearest center, lowest index on ties."""
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for lo in range(0, n, _ASSIGN_BLOCK):
        hi = min(lo + _ASSIGN_BLOCK, n)
        diff = points[lo:hi, None, :] - centers[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        lab = d2.argmin(axis=1)
        labels[lo:hi] = lab
        dist[lo:hi] = d2[np.arange(hi - lo), lab]
    return labels, dist


def count_foreign(nbr_group, in_scope, in_target, kappa):
    """Per row, walk neighbors in order, keep the first ``kappa`` inside
    ``in_scope`` and count how many of those are outside ``in_target``.

    Returns ``(foreign_counts, kept_counts)``; a row with ``kept < kappa``
    ran out of candidates and must be re-queried deeper.
    """
    scope = in_scope[nbr_group]
    first = scope & (np.cumsum(scope, axis=1) <= kappa)
    kept = first.sum(axis=1)
    foreign = (first & ~in_target[nbr_group]).sum(axis=1)
    return foreign.astype(np.int64), kept.astype(np.int64)


class HnswGraph:
    """Hierarchical navigable small-world graph over a fixed point set.

    Args:
        data: (m, f) float64 points, inserted in row order.
        levels: top level of each point, drawn by the caller.
        max_degree: link cap on upper levels; level 0 allows twice this.
        ef_construction: candidate list size while inserting.
    """

    def __init__(self, data, levels, max_degree, ef_construction):
        self._rows = [tuple(map(float, r)) for r in np.asarray(data, dtype=np.float64)]
        self._levels = [int(v) for v in levels]
        self.max_degree = int(max_degree)
        self.ef_construction = int(ef_construction)
        self._links = [[[] for _ in range(lv + 1)] for lv in self._levels]
        self.entry_point = -1
        self.top_level = -1
        for i in range(len(self._rows)):
            self._insert(i)

    def __len__(self):
        return len(self._rows)

    def links(self, node, level):
        return list(self._links[node][level])

    @staticmethod
    def _dist(a, b):
        s = 0.0
        for x, y in zip(a, b):
            t = x - y
            s += t * t
        return s

    def _search_layer(self, q, eps, ef, level):
        visited = {i for _, i in eps}
        cand = list(eps)
        heapq.heapify(cand)
        res = [(-d, -i) for d, i in eps]
        heapq.heapify(res)
        links, rows, dist = self._links, self._rows, self._dist
        while cand:
            d, c = heapq.heappop(cand)
            if d > -res[0][0]:
                break
            for e in links[c][level]:
                if e in visited:
                    continue
                visited.add(e)
                de = dist(q, rows[e])
                if len(res) < ef or de < -res[0][0]:
                    heapq.heappush(cand, (de, e))
                    heapq.heappush(res, (-de, -e))
                    if len(res) > ef:
                        heapq.heappop(res)
        return sorted((-d, -i) for d, i in res)

    def _select(self, cands, m):
        # cands sorted ascending by (distance, id)
        out = []
        rows, dist = self._rows, self._dist
        for d, e in cands:
            if len(out) >= m:
                break
            re = rows[e]
            if all(dist(re, rows[r]) >= d for _, r in out):
                out.append((d, e))
        return out

    def _insert(self, i):
        q = self._rows[i]
        lvl = self._levels[i]
        if self.entry_point < 0:
            self.entry_point, self.top_level = i, lvl
            return
        eps = [(self._dist(q, self._rows[self.entry_point]), self.entry_point)]
        for lc in range(self.top_level, lvl, -1):
            eps = self._search_layer(q, eps, 1, lc)[:1]
        for lc in range(min(self.top_level, lvl), -1, -1):
            w = self._search_layer(q, eps, self.ef_construction, lc)
            chosen = self._select(w, self.max_degree)
            self._links[i][lc] = [e for _, e in chosen]
            cap = 2 * self.max_degree if lc == 0 else self.max_degree
            for _, e in chosen:
                le = self._links[e][lc]
                if len(le) < cap:
                    le.append(i)
                    continue
                re = self._rows[e]
                pool = sorted([(self._dist(re, self._rows[x]), x) for x in le]
                              + [(self._dist(re, q), i)])
                self._links[e][lc] = [x for _, x in self._select(pool, cap)]
            eps = w
        if lvl > self.top_level:
            self.entry_point, self.top_level = i, lvl

    def search(self, query, k, ef):
        q = tuple(map(float, query))
        ep = self.entry_point
        eps = [(self._dist(q, self._rows[ep]), ep)]
        for lc in range(self.top_level, 0, -1):
            eps = self._search_layer(q, eps, 1, lc)[:1]
        w = self._search_layer(q, eps, max(ef, k), 0)[:k]
        ids = np.array([i for _, i in w], dtype=np.int64)
        d2 = np.array([d for d, _ in w], dtype=np.float64)
        return ids, d2

    def search_batch(self, queries, k, ef):
        queries = np.asarray(queries, dtype=np.float64)
        ids = np.full((queries.shape[0], k), -1, dtype=np.int64)
        d2 = np.full((queries.shape[0], k), np.inf)
        for r in range(queries.shape[0]):
            a, b = self.search(queries[r], k, ef)
            ids[r, : a.size] = a
            d2[r, : b.size] = b
        return ids, d2
