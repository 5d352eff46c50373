from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from helpers import blobs, model_from, path_adjacency
from lsrom.ann import AnnParams
from lsrom.core import DataChunk, Partition, TopologyModel, normalize_min_max
from lsrom.merge import (MergeParams, MergeRecord, MergeState, compactness_step,
                         mixture_density, project_pair, reference_node, run_merge, select_k,
                         separability, separation, separation_from_moments)
from lsrom.metrics import nmi
from lsrom.refine import MicroClusterModel, kmeans_finetune, remove_bridge_nodes, with_radii
from lsrom.rsom import RsomParams, train


def line_model(rng, means, sigma=0.3, count=60):
    """Micro-clusters on the x axis, chained in a path."""
    x, y = blobs(rng, [(m, 0.0) for m in means], sigma, [count] * len(means))
    centers = np.array([x[y == i].mean(0) for i in range(len(means))])
    return x, y, model_from(centers, path_adjacency(len(means)), x)


class TestProjection:
    def test_endpoints_and_midpoint(self):
        x = np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
        m = model_from([[2.0, 0.0], [0.0, 0.0]], path_adjacency(2), x, radii=False)
        x2 = np.array([[2.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        m2 = model_from([[2.0, 0.0], [0.0, 0.0]], path_adjacency(2), x2, radii=False)
        p = project_pair(DataChunk(x), m, 0, 1)
        assert p.projections_i.tolist() == [0.5, 0.0] and p.projections_j.tolist() == [-0.5]
        p2 = project_pair(DataChunk(x2), m2, 0, 1)
        assert 0.0 in p2.projections_i.tolist()

    def test_off_axis_component_ignored(self):
        x = np.array([[2.0, 5.0], [0.0, -3.0]])
        m = model_from([[2.0, 0.0], [0.0, 0.0]], path_adjacency(2), x, radii=False)
        p = project_pair(DataChunk(x), m, 0, 1)
        assert p.projections_i.tolist() == [0.5] and p.projections_j.tolist() == [-0.5]


class TestSeparation:
    def test_symmetric_minimum_at_zero(self):
        u = np.arange(-50, 51) / 100
        d = mixture_density(u, 10, 0.05, 10, 0.05)
        assert u[int(np.argmin(d))] == 0.0

    def test_narrow_components_value(self):
        var = 0.05**2
        s0 = math.exp(-0.25 / (2 * var)) / math.sqrt(2 * math.pi * var)
        assert s0 == pytest.approx(1.5388e-21, rel=1e-3)
        got = separation_from_moments(100, var, 100, var)
        assert got == pytest.approx(1.0 / (s0 + 1e-12), rel=1e-12)

    def test_ordering_narrow_vs_wide(self):
        assert separation_from_moments(5, 0.05**2, 5, 0.05**2) > \
            separation_from_moments(5, 0.5**2, 5, 0.5**2)

    def test_variance_floor(self):
        assert separation_from_moments(3, 0.0, 3, 0.0) == separation_from_moments(3, 1e-6, 3, 1e-6)

    def test_coincident_centers_zero(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0]])
        m = model_from([[0.0, 0.0], [1.0, 1.0]], path_adjacency(2), x, radii=False)
        state = MergeState(DataChunk(x), m, MergeParams())
        state.centers[1] = state.centers[0]
        assert state.pair_separation(0, 1) == 0.0

    def test_matches_loop_oracle_on_many_instances(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            f = int(rng.integers(1, 4))
            ni, nj = int(rng.integers(1, 15)), int(rng.integers(1, 15))
            xi = rng.normal(0, rng.uniform(0.1, 2), (ni, f))
            xj = rng.normal(rng.uniform(0.5, 4), rng.uniform(0.1, 2), (nj, f))
            x = np.vstack([xi, xj])
            lab = np.r_[np.zeros(ni, int), np.ones(nj, int)]
            part = Partition.from_assignment(x, lab)
            topo = TopologyModel(part.centers, np.eye(2), path_adjacency(2))
            m = MicroClusterModel(topo, part, np.arange(2))
            got = separation(project_pair(DataChunk(x), m, 0, 1))
            want = oracles.separation(xi.tolist(), xj.tolist(), part.centers[0].tolist(),
                                      part.centers[1].tolist())
            assert abs(got - want) <= 1e-9 * abs(want)
            # the moment-based shortcut used while merging agrees too
            state = MergeState(DataChunk(x), m, MergeParams())
            assert abs(state.pair_separation(0, 1) - want) <= 1e-9 * abs(want)


class TestMergeState:
    @given(st.integers(0, 10_000))
    def test_moments_after_merges_match_recomputation(self, seed):
        rng = np.random.default_rng(seed)
        x, _, m = line_model(rng, [0.0, 1.0, 2.5, 4.0, 6.0], count=20)
        state = MergeState(DataChunk(x), m, MergeParams())
        while state.k > 1:
            (i, j), _, _ = compactness_step(state)
            a = state.merge(i, j)
            members = x[state.owner[m.partition.assignment] == a]
            np.testing.assert_allclose(state.means[a], members.mean(0), atol=1e-9)
            d = members - members.mean(0)
            np.testing.assert_allclose(state.scatter[a], d.T @ d, atol=1e-8)
            assert state.counts[a] == len(members)
            assert a == min(np.flatnonzero(state.owner == a))
            for p, q in state.adjacent_pairs():
                assert p in state.active and q in state.active

    def test_neighbor_union_after_merge(self):
        rng = np.random.default_rng(0)
        x, _, m = line_model(rng, [0.0, 2.0, 4.0, 6.0])
        state = MergeState(DataChunk(x), m, MergeParams())
        state.merge(1, 2)
        assert state.nbrs[1] == {0, 3} and state.nbrs[0] == {1} and state.nbrs[3] == {1}


class TestCompactnessStep:
    def test_forced_choice(self):
        rng = np.random.default_rng(1)
        x, _, m = line_model(rng, [0.0, 3.0])
        state = MergeState(DataChunk(x), m, MergeParams())
        pair, com, fb = compactness_step(state)
        assert pair == (0, 1) and not fb
        assert com == state.pair_separation(0, 1)

    def test_path_picks_shallowest_valley(self):
        rng = np.random.default_rng(2)
        x, _, m = line_model(rng, [0.0, 1.0, 6.0])  # A-B overlap, B-C far apart
        state = MergeState(DataChunk(x), m, MergeParams())
        pair, com, _ = compactness_step(state)
        scan = {(i, j): state.pair_separation(i, j) for i, j in [(0, 1), (1, 2)]}
        assert pair == (0, 1) == min(scan, key=scan.get)

    def test_disconnected_fallback(self):
        rng = np.random.default_rng(3)
        x, _, _ = line_model(rng, [0.0, 3.0, 20.0])
        centers = np.array([x[:60].mean(0), x[60:120].mean(0), x[120:].mean(0)])
        m = model_from(centers, np.zeros((3, 3), bool), x, radii=False)
        state = MergeState(DataChunk(x), m, MergeParams())
        pair, _, fb = compactness_step(state)
        assert fb and pair == (0, 1)

    def test_single_cluster_rejected(self):
        rng = np.random.default_rng(3)
        x, _, m = line_model(rng, [0.0, 3.0])
        state = MergeState(DataChunk(x), m, MergeParams())
        state.merge(0, 1)
        with pytest.raises(ValueError):
            compactness_step(state)


class TestSeparability:
    def test_isolated_cluster_zero(self):
        rng = np.random.default_rng(4)
        x, _, m = line_model(rng, [0.0, 100.0], sigma=0.1)
        sep, kap = separability(DataChunk(x), m.partition.assignment, np.array([True, False]),
                                np.array([True, True]), MergeParams(neighbor_search="exact"))
        assert sep == 0.0 and kap == 10

    def test_all_foreign_upper_bound(self):
        # two target points far apart, each buried in a foreign cloud
        rng = np.random.default_rng(5)
        cloud_a = rng.normal(0, 0.01, (30, 2))
        cloud_b = rng.normal(50, 0.01, (30, 2))
        x = np.vstack([[[0.0, 0.0]], [[50.0, 50.0]], cloud_a, cloud_b])
        micro = np.r_[0, 0, np.ones(60, int)]
        sep, _ = separability(DataChunk(x), micro, np.array([True, False]),
                              np.array([True, True]), MergeParams(kappa=5, neighbor_search="exact"))
        assert sep == 2.0

    @pytest.mark.parametrize("scope_mode", ["chunk", "topology"])
    def test_matches_brute_force(self, scope_mode):
        rng = np.random.default_rng(6)
        for _ in range(25):
            n = int(rng.integers(10, 60))
            x = rng.normal(size=(n, 2))
            q = int(rng.integers(2, 6))
            micro = rng.integers(0, q, n)
            if len(np.unique(micro)) < q:
                continue
            target = rng.random(q) < 0.4
            target[0] = True
            scope = target | (rng.random(q) < 0.5)
            kappa = int(rng.integers(1, 8))
            p = MergeParams(kappa=kappa, neighbor_search="exact", candidate_scope=scope_mode)
            got, kap = separability(DataChunk(x), micro, target, scope, p)
            cluster_of = [0 if target[c] else 1 + int(c) for c in micro]
            scope_ids = {0} | {1 + c for c in range(q) if scope[c] or scope_mode == "chunk"}
            want = oracles.separability(x.tolist(), cluster_of, 0, scope_ids, kap)
            assert abs(got - want) <= 1e-9

    def test_ann_close_to_exact_on_overlapping_blobs(self):
        rng = np.random.default_rng(7)
        x, y = blobs(rng, [(0.0, 0.0), (1.5, 0.0)], 1.0, [1500, 1500])
        target = np.array([True, False])
        scope = np.array([True, True])
        exact, _ = separability(DataChunk(x), y, target, scope,
                                MergeParams(kappa=10, neighbor_search="exact"))
        approx, _ = separability(DataChunk(x), y, target, scope,
                                 MergeParams(kappa=10, neighbor_search="ann"))
        assert exact > 0 and abs(approx - exact) <= 0.05 * exact


class TestSelectK:
    @staticmethod
    def recs(rows):
        return [MergeRecord(k, (0, 1), c, s, False, 10) for k, c, s in rows]

    def test_small_q_hat(self):
        assert select_k(self.recs([(1, 1.0, 0.0)]), 2) == (2, {})

    def test_step_argmin(self):
        rows = [(4, 1.0, 10.0), (3, 2.0, 4.0), (2, 8.0, 1.0), (1, 10.0, 0.0)]
        k, obj = select_k(self.recs(rows), 5, com_mode="step")
        assert set(obj) == {2, 3, 4}
        assert obj[3] == pytest.approx(0.2 + 0.4)
        assert k == 3

    def test_cumulative_com(self):
        rows = [(4, 5.0, 10.0), (3, 1.0, 4.0), (2, 6.0, 1.0), (1, 10.0, 0.0)]
        k_step, _ = select_k(self.recs(rows), 5, com_mode="step")
        k_cum, obj = select_k(self.recs(rows), 5, com_mode="cumulative")
        assert k_step == 3
        assert obj[3] == pytest.approx(0.5 + 0.4) and k_cum == 2

    def test_tolerance_prefers_smaller_k(self):
        rows = [(3, 1.0, 1.0), (2, 1.0, 1.02), (1, 1.0, 0.0)]
        assert select_k(self.recs(rows), 4, tolerance=0.0, com_mode="step")[0] == 3
        assert select_k(self.recs(rows), 4, tolerance=0.05, com_mode="step")[0] == 2


class TestRunMerge:
    def test_two_micro_clusters(self):
        rng = np.random.default_rng(8)
        x, _, m = line_model(rng, [0.0, 3.0])
        trace = run_merge(DataChunk(x), m)
        assert len(trace.states) == 1 and trace.states[0].k == 1 and trace.k_star == 2
        assert trace.partition.k == 2

    def test_single_micro_cluster(self):
        x = np.random.default_rng(0).random((10, 2))
        m = model_from([[0.5, 0.5]], np.zeros((1, 1), bool), x)
        trace = run_merge(DataChunk(x), m)
        assert trace.k_star == 1 and trace.states == ()

    def test_records_cover_every_state(self):
        rng = np.random.default_rng(9)
        x, _, m = line_model(rng, [0.0, 1.0, 5.0, 6.0, 12.0])
        trace = run_merge(DataChunk(x), m, MergeParams(neighbor_search="exact"))
        assert [r.k for r in trace.states] == [4, 3, 2, 1]
        assert trace.partition.k == trace.k_star
        assert all(r.sep >= 0 and r.com >= 0 for r in trace.states)
        assert trace.reference_node == reference_node(m)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_two_blobs_small_map(self, seed):
        # merge stage alone on the fine-tuned 4x4 map; with so few neurons the
        # minority blob has no interior node, so bridge removal is left out here
        rng = np.random.default_rng(seed)
        x, y = blobs(rng, [(0.0, 0.0), (10.0, 0.0)], 1.0, [3333, 667])
        chunk = normalize_min_max(DataChunk(x, y))
        model = with_radii(kmeans_finetune(chunk, train(chunk, RsomParams(Q=4, seed=seed))))
        assert model.size <= 16
        trace = run_merge(chunk, model, MergeParams(ann=AnnParams(seed=seed)))
        assert trace.k_star == 2
        assert nmi(trace.partition.assignment, y) == 1.0

    @pytest.mark.parametrize("seed", [0, 1])
    def test_two_blobs_full_stage_chain(self, seed):
        rng = np.random.default_rng(seed)
        x, y = blobs(rng, [(0.0, 0.0), (10.0, 0.0)], 1.0, [3333, 667])
        chunk = normalize_min_max(DataChunk(x, y))
        som = train(chunk, RsomParams(Q=10, seed=seed))
        model = remove_bridge_nodes(chunk, with_radii(kmeans_finetune(chunk, som)))
        trace = run_merge(chunk, model, MergeParams(ann=AnnParams(seed=seed)))
        assert trace.k_star == 2
        assert nmi(trace.partition.assignment, y) == 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        x, _, m = line_model(rng, [0.0, 1.0, 5.0, 6.0])
        a = run_merge(DataChunk(x), m)
        b = run_merge(DataChunk(x), m)
        assert a.to_json() == b.to_json()


@pytest.mark.parametrize("kw", [{"kappa": 0}, {"grid_step": 0.02}, {"neighbor_search": "x"},
                                {"candidate_scope": "x"}, {"com_mode": "x"},
                                {"kstar_tolerance": -1.0}, {"variance_floor": 0.0}])
def test_params_rejected(kw):
    with pytest.raises(ValueError):
        MergeParams(**kw)
