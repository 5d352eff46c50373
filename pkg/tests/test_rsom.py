from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

import oracles
from lsrom.core import DataChunk, normalize_min_max
from lsrom.rsom import (RsomParams, build_adjacency, cvt_energy, find_bmu, lloyd_relax,
                        poisson_disk_init, train)
from lsrom.tlrs import make_gaussian_base


class TestPoissonDisk:
    def test_q2_distinct(self):
        pts, _ = poisson_disk_init(2, seed=11)
        assert pts.shape == (4, 2) and pdist(pts).min() > 0

    def test_q10_min_distance(self):
        pts, radius = poisson_disk_init(10, seed=7)
        assert pts.shape == (100, 2)
        assert pdist(pts).min() >= radius - 1e-12
        assert pdist(pts).min() >= 0.5 / 10
        assert pts.min() >= 0.0 and pts.max() <= 1.0

    def test_deterministic(self):
        a, _ = poisson_disk_init(6, seed=3)
        b, _ = poisson_disk_init(6, seed=3)
        assert np.array_equal(a, b)

    def test_seed_matters(self):
        assert not np.array_equal(poisson_disk_init(6, 3)[0], poisson_disk_init(6, 4)[0])

    @given(st.integers(2, 12), st.integers(0, 2**32))
    def test_count_and_radius(self, q, seed):
        pts, radius = poisson_disk_init(q, seed)
        assert len(pts) == q * q
        assert pdist(pts).min() >= radius - 1e-12

    def test_rejects_small_q(self):
        with pytest.raises(ValueError):
            poisson_disk_init(1, 0)


class TestLloyd:
    def test_single_point_to_center(self):
        out = lloyd_relax(np.array([[0.1, 0.9]]), 1)
        np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-12)

    def test_zero_iterations_identity(self):
        pts = poisson_disk_init(4, 0)[0]
        assert np.array_equal(lloyd_relax(pts, 0), pts)

    def test_four_points_symmetric_and_energy_monotone(self):
        pts = np.array([[0.1, 0.2], [0.3, 0.8], [0.7, 0.3], [0.9, 0.9]])
        energies = [cvt_energy(pts)]
        for _ in range(40):
            pts = lloyd_relax(pts, 1)
            energies.append(cvt_energy(pts))
        assert all(b <= a * (1 + 1e-9) for a, b in zip(energies, energies[1:]))
        got = sorted(map(tuple, np.round(pts, 2)))
        assert got == [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]

    def test_energy_decreases_on_sampled_map(self):
        pts = poisson_disk_init(5, 1)[0]
        assert cvt_energy(lloyd_relax(pts, 10)) < cvt_energy(pts)


class TestAdjacency:
    def test_triangle(self):
        adj = build_adjacency(np.array([[0, 0], [1, 0], [0, 1.0]]))
        assert adj.sum() == 6

    def test_square_five_edges(self):
        adj = build_adjacency(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))
        assert adj.sum() // 2 == 5

    def test_collinear_chain(self):
        adj = build_adjacency(np.array([[0, 0], [2, 0], [1, 0.0]]))
        assert adj[0, 2] and adj[1, 2] and not adj[0, 1]

    @given(st.integers(2, 9), st.integers(0, 1000))
    def test_symmetric_zero_diagonal_connected_degrees(self, q, seed):
        adj = build_adjacency(poisson_disk_init(q, seed)[0])
        assert np.array_equal(adj, adj.T) and not adj.diagonal().any()
        assert adj.sum(1).min() >= 1


class TestFindBmu:
    def test_exact_hit(self, rng):
        c = rng.normal(size=(6, 3))
        assert find_bmu(c[3], c) == 3

    def test_tie_lowest_index(self):
        c = np.array([[5.0, 5.0], [1.0, 0.0], [9.0, 9.0], [9.0, 8.0], [-1.0, 0.0]])
        assert find_bmu([0.0, 0.0], c) == 1

    def test_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            c = rng.normal(size=(50, 4))
            x = rng.normal(size=4)
            want = min(range(50), key=lambda i: (oracles.sqdist(x, c[i]), i))
            assert find_bmu(x, c) == want

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            find_bmu([0.0], np.zeros((2, 2)))


class TestSchedules:
    def test_endpoints(self):
        p = RsomParams()
        assert p.learning_rate(0, 100) == pytest.approx(p.lr_start)
        assert p.learning_rate(100, 100) == pytest.approx(p.lr_end)
        assert p.sigma(0, 100) == pytest.approx(p.sigma_start)
        assert p.sigma(100, 100) == pytest.approx(p.sigma_end)

    def test_late_kernel_winner_takes_all(self):
        p = RsomParams()
        s = p.sigma(100, 100)
        # map neighbors are at least ~0.05 apart for Q = 10
        assert np.exp(-0.05**2 / (2 * s * s)) < 1e-5

    @pytest.mark.parametrize("kw", [{"Q": 1}, {"epochs": 0}, {"lr_start": 0.001},
                                    {"sigma_end": 0.9}, {"seed": -1}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            RsomParams(**kw)


@pytest.fixture(scope="module")
def chunk():
    base = make_gaussian_base([((0.0, 0.0), 1.0, 1000), ((10.0, 0.0), 1.0, 1000)], seed=2)
    return normalize_min_max(base)


class TestTrain:
    def test_quantization_improves(self, chunk):
        som = train(chunk, RsomParams(Q=4, epochs=3, seed=5))
        assert som.quantization_error < som.initial_quantization_error
        t = som.topology
        assert t.size == 16 and t.degrees().min() >= 1
        assert pdist(t.grid_positions).min() > 0

    def test_deterministic(self, chunk):
        a = train(chunk, RsomParams(Q=4, epochs=2, seed=9))
        b = train(chunk, RsomParams(Q=4, epochs=2, seed=9))
        assert np.array_equal(a.topology.centers, b.topology.centers)

    def test_too_few_objects(self):
        with pytest.raises(ValueError, match="lower Q"):
            train(DataChunk(np.random.default_rng(0).random((10, 2))), RsomParams(Q=4))

    def test_to_json_keys(self, chunk):
        js = train(chunk, RsomParams(Q=3, epochs=1)).to_json()
        assert {"centers", "gridPositions", "adjacency", "quantizationError", "seed"} <= set(js)
