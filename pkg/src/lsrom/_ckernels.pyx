# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled hot kernels. Semantics match ``lsrom._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY
from libcpp.vector cimport vector
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort

cnp.import_array()

ctypedef pair[double, int] DI


def som_train(const double[:, ::1] data, double[:, ::1] weights,
              const double[:, ::1] grid_d2, const cnp.int64_t[::1] order,
              Py_ssize_t t0, Py_ssize_t total_steps,
              double eps0, double eps_end, double sigma0, double sigma_end):
    cdef Py_ssize_t n_steps = order.shape[0]
    cdef Py_ssize_t nq = weights.shape[0]
    cdef Py_ssize_t f = weights.shape[1]
    cdef double log_eps = log(eps_end / eps0)
    cdef double log_sig = log(sigma_end / sigma0)
    cdef double T = <double>total_steps
    cdef Py_ssize_t s, q, k, j, b
    cdef double frac, eps, sig, inv, best, acc, tmp, c
    with nogil:
        for s in range(n_steps):
            frac = (t0 + s) / T
            eps = eps0 * exp(log_eps * frac)
            sig = sigma0 * exp(log_sig * frac)
            j = order[s]
            b = 0
            best = INFINITY
            for q in range(nq):
                acc = 0.0
                for k in range(f):
                    tmp = data[j, k] - weights[q, k]
                    acc = acc + tmp * tmp
                if acc < best:
                    best = acc
                    b = q
            inv = 1.0 / (2.0 * sig * sig)
            for q in range(nq):
                c = eps * exp(-grid_d2[b, q] * inv)
                for k in range(f):
                    weights[q, k] = weights[q, k] + c * (data[j, k] - weights[q, k])


def assign_nearest(const double[:, ::1] points, const double[:, ::1] centers):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = centers.shape[0]
    cdef Py_ssize_t f = points.shape[1]
    labels_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, q, k, b
    cdef double best, acc, tmp
    with nogil:
        for i in range(n):
            b = 0
            best = INFINITY
            for q in range(m):
                acc = 0.0
                for k in range(f):
                    tmp = points[i, k] - centers[q, k]
                    acc = acc + tmp * tmp
                if acc < best:
                    best = acc
                    b = q
            labels[i] = b
            dist[i] = best
    return labels_arr, dist_arr


def count_foreign(const cnp.int64_t[:, ::1] nbr_group, const cnp.uint8_t[::1] in_scope,
                  const cnp.uint8_t[::1] in_target, Py_ssize_t kappa):
    cdef Py_ssize_t rows = nbr_group.shape[0]
    cdef Py_ssize_t depth = nbr_group.shape[1]
    foreign_arr = np.zeros(rows, dtype=np.int64)
    kept_arr = np.zeros(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] foreign = foreign_arr
    cdef cnp.int64_t[::1] kept = kept_arr
    cdef Py_ssize_t r, c, g, nk, nf
    with nogil:
        for r in range(rows):
            nk = 0
            nf = 0
            for c in range(depth):
                if nk >= kappa:
                    break
                g = nbr_group[r, c]
                if in_scope[g]:
                    nk += 1
                    if not in_target[g]:
                        nf += 1
            foreign[r] = nf
            kept[r] = nk
    return foreign_arr, kept_arr


cdef class HnswGraph:
    """Hierarchical navigable small-world graph over a fixed point set."""

    cdef double[:, ::1] _data
    cdef vector[int] _levels
    cdef vector[vector[vector[int]]] _links
    cdef vector[int] _visited
    cdef int _tag
    cdef Py_ssize_t _f
    cdef readonly int max_degree
    cdef readonly int ef_construction
    cdef readonly int entry_point
    cdef readonly int top_level
    cdef object _keep

    def __init__(self, data, levels, int max_degree, int ef_construction):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self._keep = arr
        self._data = arr
        self._f = arr.shape[1]
        self.max_degree = max_degree
        self.ef_construction = ef_construction
        self.entry_point = -1
        self.top_level = -1
        self._tag = 0
        cdef Py_ssize_t m = arr.shape[0]
        cdef Py_ssize_t i
        cdef cnp.int64_t[::1] lv = np.ascontiguousarray(levels, dtype=np.int64)
        self._levels.resize(m)
        self._links.resize(m)
        self._visited.assign(m, 0)
        for i in range(m):
            self._levels[i] = <int>lv[i]
            self._links[i].resize(lv[i] + 1)
        for i in range(m):
            self._insert(<int>i)

    def __len__(self):
        return self._levels.size()

    def links(self, int node, int level):
        return [self._links[node][level][k] for k in range(self._links[node][level].size())]

    cdef inline double _dist_pt(self, const double* q, int i) noexcept nogil:
        cdef double acc = 0.0, tmp
        cdef Py_ssize_t k
        for k in range(self._f):
            tmp = q[k] - self._data[i, k]
            acc = acc + tmp * tmp
        return acc

    cdef inline double _dist_ij(self, int a, int b) noexcept nogil:
        return self._dist_pt(&self._data[a, 0], b)

    cdef void _search_layer(self, const double* q, vector[DI]& eps, int ef, int level,
                            vector[DI]& out) noexcept nogil:
        cdef priority_queue[DI] cand   # holds (-d, -id): top is nearest
        cdef priority_queue[DI] res    # holds (d, id): top is furthest
        cdef Py_ssize_t k
        cdef int c, e
        cdef double d, de
        self._tag += 1
        if self._tag == 2147483647:
            self._visited.assign(self._visited.size(), 0)
            self._tag = 1
        for k in range(eps.size()):
            self._visited[eps[k].second] = self._tag
            cand.push(DI(-eps[k].first, -eps[k].second))
            res.push(eps[k])
        while not cand.empty():
            d = -cand.top().first
            c = -cand.top().second
            cand.pop()
            if d > res.top().first:
                break
            for k in range(self._links[c][level].size()):
                e = self._links[c][level][k]
                if self._visited[e] == self._tag:
                    continue
                self._visited[e] = self._tag
                de = self._dist_pt(q, e)
                if <int>res.size() < ef or de < res.top().first:
                    cand.push(DI(-de, -e))
                    res.push(DI(de, e))
                    if <int>res.size() > ef:
                        res.pop()
        out.clear()
        while not res.empty():
            out.push_back(res.top())
            res.pop()
        sort(out.begin(), out.end())

    cdef void _select(self, vector[DI]& cands, int m, vector[DI]& out) noexcept nogil:
        cdef Py_ssize_t a, r
        cdef bint good
        cdef int e
        cdef double d
        out.clear()
        for a in range(cands.size()):
            if <int>out.size() >= m:
                break
            d = cands[a].first
            e = cands[a].second
            good = True
            for r in range(out.size()):
                if self._dist_ij(e, out[r].second) < d:
                    good = False
                    break
            if good:
                out.push_back(cands[a])

    cdef void _insert(self, int i) noexcept nogil:
        cdef const double* q = &self._data[i, 0]
        cdef int lvl = self._levels[i]
        cdef vector[DI] eps, w, chosen, pool, kept
        cdef int lc, cap, e, x
        cdef Py_ssize_t a, b
        if self.entry_point < 0:
            self.entry_point = i
            self.top_level = lvl
            return
        eps.push_back(DI(self._dist_pt(q, self.entry_point), self.entry_point))
        lc = self.top_level
        while lc > lvl:
            self._search_layer(q, eps, 1, lc, w)
            eps.clear()
            eps.push_back(w[0])
            lc -= 1
        lc = self.top_level if self.top_level < lvl else lvl
        while lc >= 0:
            self._search_layer(q, eps, self.ef_construction, lc, w)
            self._select(w, self.max_degree, chosen)
            self._links[i][lc].clear()
            for a in range(chosen.size()):
                self._links[i][lc].push_back(chosen[a].second)
            cap = 2 * self.max_degree if lc == 0 else self.max_degree
            for a in range(chosen.size()):
                e = chosen[a].second
                if <int>self._links[e][lc].size() < cap:
                    self._links[e][lc].push_back(i)
                    continue
                pool.clear()
                for b in range(self._links[e][lc].size()):
                    x = self._links[e][lc][b]
                    pool.push_back(DI(self._dist_ij(e, x), x))
                pool.push_back(DI(self._dist_ij(e, i), i))
                sort(pool.begin(), pool.end())
                self._select(pool, cap, kept)
                self._links[e][lc].clear()
                for b in range(kept.size()):
                    self._links[e][lc].push_back(kept[b].second)
            eps = w
            lc -= 1
        if lvl > self.top_level:
            self.entry_point = i
            self.top_level = lvl

    cdef void _query(self, const double* q, int k, int ef, vector[DI]& w) noexcept nogil:
        cdef vector[DI] eps
        cdef int lc = self.top_level
        eps.push_back(DI(self._dist_pt(q, self.entry_point), self.entry_point))
        while lc > 0:
            self._search_layer(q, eps, 1, lc, w)
            eps.clear()
            eps.push_back(w[0])
            lc -= 1
        self._search_layer(q, eps, ef if ef > k else k, 0, w)

    def search(self, query, int k, int ef):
        cdef double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
        cdef vector[DI] w
        self._query(&q[0], k, ef, w)
        cdef Py_ssize_t cnt = min(<Py_ssize_t>k, <Py_ssize_t>w.size())
        ids = np.empty(cnt, dtype=np.int64)
        d2 = np.empty(cnt, dtype=np.float64)
        cdef Py_ssize_t a
        for a in range(cnt):
            ids[a] = w[a].second
            d2[a] = w[a].first
        return ids, d2

    def search_batch(self, queries, int k, int ef):
        cdef double[:, ::1] qs = np.ascontiguousarray(queries, dtype=np.float64)
        cdef Py_ssize_t nq = qs.shape[0]
        ids_arr = np.full((nq, k), -1, dtype=np.int64)
        d2_arr = np.full((nq, k), np.inf, dtype=np.float64)
        cdef cnp.int64_t[:, ::1] ids = ids_arr
        cdef double[:, ::1] d2 = d2_arr
        cdef vector[DI] w
        cdef Py_ssize_t r, a, cnt
        with nogil:
            for r in range(nq):
                self._query(&qs[r, 0], k, ef, w)
                cnt = w.size()
                if cnt > k:
                    cnt = k
                for a in range(cnt):
                    ids[r, a] = w[a].second
                    d2[r, a] = w[a].first
        return ids_arr, d2_arr
