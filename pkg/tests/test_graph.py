import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netadmm.graph import (
    PowerIterationError,
    build_from_spec,
    build_random_avg_degree,
    build_small_world,
    build_topology,
    constraint_matrices,
    is_connected,
    network_from_edges,
    power_iteration_norm_B,
    spectral_norm_B,
)


def _generated_networks(max_n=30):
    nets = []
    for n in (2, 3, 5, 10, 20, max_n):
        for kind in ("line", "star", "complete"):
            nets.append(build_topology(kind, n))
        if n >= 3:
            nets.append(build_topology("cycle", n))
            cap = n * (n - 1) // 2 - n
            nets.append(build_small_world(n, min(cap, n), seed=n))
        nets.append(build_random_avg_degree(n, 2 if n > 2 else 1, seed=n))
    return nets


class TestBuildTopology:
    def test_line(self):
        net = build_topology("line", 3)
        assert net.undirected_edges == ((0, 1), (1, 2))
        assert net.m == 4

    def test_star(self):
        net = build_topology("star", 5)
        assert net.max_degree == 4
        assert net.degrees[0] == 4
        assert list(net.degrees[1:]) == [1, 1, 1, 1]

    def test_complete(self):
        net = build_topology("complete", 4)
        assert len(net.undirected_edges) == 6
        assert net.m == 12

    @pytest.mark.parametrize("kind,n", [("line", 1), ("star", 1), ("complete", 1), ("cycle", 2)])
    def test_too_small(self, kind, n):
        with pytest.raises(ValueError):
            build_topology(kind, n)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_topology("torus", 5)


class TestSmallWorld:
    def test_twenty_nodes_twenty_extra(self):
        net = build_small_world(20, 20, seed=0)
        assert len(net.undirected_edges) == 40
        assert is_connected(net)

    def test_zero_additions_is_cycle(self):
        net = build_small_world(5, 0, seed=3)
        assert set(net.degrees) == {2}
        assert net == build_topology("cycle", 5)

    def test_saturation_is_complete(self):
        assert build_small_world(6, 9, seed=1) == build_topology("complete", 6)

    @pytest.mark.parametrize("extra", [-1, 10])
    def test_infeasible(self, extra):
        with pytest.raises(ValueError):
            build_small_world(6, extra, seed=0)

    def test_seed_determinism(self):
        a = build_small_world(20, 20, seed=7)
        b = build_small_world(20, 20, seed=7)
        assert a.undirected_edges == b.undirected_edges
        assert a.undirected_edges != build_small_world(20, 20, seed=8).undirected_edges


class TestRandomAvgDegree:
    @pytest.mark.parametrize("n", [10, 30])
    def test_average_degree_two(self, n):
        net = build_random_avg_degree(n, 2, seed=0)
        assert len(net.undirected_edges) == n
        assert is_connected(net)

    def test_two_nodes(self):
        assert build_random_avg_degree(2, 1, seed=5).undirected_edges == ((0, 1),)

    @pytest.mark.parametrize("n,avg", [(10, 1), (10, 10), (10, 0.5)])
    def test_infeasible(self, n, avg):
        with pytest.raises(ValueError):
            build_random_avg_degree(n, avg, seed=0)

    @given(n=st.integers(3, 30), extra=st.integers(0, 40), seed=st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_connected_and_on_budget(self, n, extra, seed):
        edges = min(n - 1 + extra, n * (n - 1) // 2)
        net = build_random_avg_degree(n, 2 * edges / n, seed=seed)
        assert is_connected(net)
        assert abs(len(net.undirected_edges) - edges) <= 1
        assert net == build_random_avg_degree(n, 2 * edges / n, seed=seed)


class TestNetworkInvariants:
    def test_rejects_self_loop_and_duplicates(self):
        with pytest.raises(ValueError):
            network_from_edges(3, [(1, 1)])
        with pytest.raises(ValueError):
            network_from_edges(3, [(0, 1), (1, 0)])
        with pytest.raises(ValueError):
            network_from_edges(3, [(0, 3)])

    @pytest.mark.parametrize("net", _generated_networks(), ids=repr)
    def test_link_bookkeeping(self, net):
        links = net.directed_links
        assert list(links) == sorted(links)
        assert set(links) == {(j, i) for i, j in links}
        assert net.m == 2 * len(net.undirected_edges)
        for i in range(net.n):
            assert list(net.neighbors[i]) == sorted(net.neighbors[i])
            assert sum(1 for a, _ in links if a == i) == net.degrees[i]
            assert sum(1 for _, b in links if b == i) == net.degrees[i]

    def test_rebuild_is_byte_identical(self):
        a = build_small_world(15, 12, seed=2)
        b = build_small_world(15, 12, seed=2)
        assert repr(a.directed_links).encode() == repr(b.directed_links).encode()

    def test_from_spec(self):
        assert build_from_spec({"kind": "star", "n": 4}) == build_topology("star", 4)
        assert build_from_spec({"kind": "small_world", "n": 20, "extra_links": 20, "seed": 0}) == build_small_world(20, 20, 0)
        with pytest.raises(ValueError):
            build_from_spec({"kind": "mesh", "n": 4})


class TestConstraintMatrices:
    def test_single_edge_rows(self):
        cm = constraint_matrices(network_from_edges(2, [(0, 1)]), 1)
        B = cm.dense_B()
        np.testing.assert_array_equal(B, [[1, 0], [0, 1], [0, 1], [1, 0]])
        np.testing.assert_array_equal(B.T @ B, np.diag([2.0, 2.0]))

    def test_star_btb(self):
        cm = constraint_matrices(build_topology("star", 3), 1)
        B = cm.dense_B()
        np.testing.assert_array_equal(B.T @ B, np.diag([3.0, 2.0, 2.0]))

    def test_bad_p(self):
        with pytest.raises(ValueError):
            constraint_matrices(build_topology("line", 3), 0)

    @pytest.mark.parametrize("p", [1, 2, 5])
    @pytest.mark.parametrize("net", _generated_networks(max_n=10), ids=repr)
    def test_block_structure(self, net, p):
        cm = constraint_matrices(net, p)
        A = cm.dense_A()
        blocks = A.reshape(net.m, p, net.n, p)
        eye = np.eye(p)
        for k in range(net.m):
            hits = [j for j in range(net.n) if np.array_equal(blocks[k, :, j, :], eye)]
            assert len(hits) == 1
            assert all(not blocks[k, :, j, :].any() for j in range(net.n) if j not in hits)
        per_column = [sum(np.array_equal(blocks[k, :, j, :], eye) for k in range(net.m)) for j in range(net.n)]
        assert per_column == list(net.degrees)
        B = cm.dense_B()
        expected = np.kron(np.diag(1.0 + net.degrees), eye)
        np.testing.assert_array_equal(B.T @ B, expected)

    def test_matvecs_match_dense(self, rng):
        net = build_small_world(8, 5, seed=1)
        cm = constraint_matrices(net, 3)
        B = cm.dense_B()
        x = rng.standard_normal((8, 3))
        y, z = cm.B_matvec(x)
        np.testing.assert_allclose(np.concatenate([y.ravel(), z.ravel()]), B @ x.ravel(), rtol=0, atol=1e-14)
        v = rng.standard_normal(B.shape[0])
        vy, vz = v[: 8 * 3].reshape(8, 3), v[8 * 3 :].reshape(net.m, 3)
        np.testing.assert_allclose(cm.BT_matvec(vy, vz).ravel(), B.T @ v, rtol=0, atol=1e-13)


class TestSpectralNorm:
    @pytest.mark.parametrize(
        "net,expected",
        [
            (network_from_edges(2, [(0, 1)]), math.sqrt(2)),
            (build_topology("star", 5), math.sqrt(5)),
            (build_topology("complete", 4), 2.0),
        ],
    )
    def test_examples(self, net, expected):
        assert spectral_norm_B(constraint_matrices(net, 2)) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("net", _generated_networks(), ids=repr)
    def test_power_iteration_matches_closed_form(self, net):
        cm = constraint_matrices(net, 2)
        closed = spectral_norm_B(cm)
        assert abs(power_iteration_norm_B(cm) - closed) <= 1e-8 * closed
        assert abs(closed - np.linalg.norm(cm.dense_B(), 2)) <= 1e-10 * closed

    def test_broken_construction_is_reported(self, monkeypatch):
        cm = constraint_matrices(build_topology("star", 5), 1)
        monkeypatch.setattr(type(cm), "BtB_diag", lambda self: np.full(self.n, 2.0))
        with pytest.raises(PowerIterationError):
            spectral_norm_B(cm)

    def test_iteration_cap(self):
        cm = constraint_matrices(build_topology("line", 30), 1)
        with pytest.raises(PowerIterationError):
            power_iteration_norm_B(cm, tol=1e-15, max_iters=2)

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            spectral_norm_B(constraint_matrices(build_topology("line", 3), 1), tol=0)
