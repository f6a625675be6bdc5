from __future__ import annotations

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpc_lab.errors import AsymmetricWeights, DisconnectedGraph, InvalidEdge
from dmpc_lab.topology import build_topology, is_connected, laplacian_spectrum

FIVE_CYCLE = [[1, 2], [2, 3], [3, 5], [4, 5], [1, 4]]
RING4 = [[1, 2], [2, 3], [3, 4], [4, 1]]


def test_five_agent_laplacian():
    topo = build_topology(FIVE_CYCLE, 5)
    expected = np.array(
        [
            [1, -0.5, 0, -0.5, 0],
            [-0.5, 1, -0.5, 0, 0],
            [0, -0.5, 1, 0, -0.5],
            [-0.5, 0, 0, 1, -0.5],
            [0, 0, -0.5, -0.5, 1],
        ]
    )
    np.testing.assert_array_equal(topo.laplacian, expected)


def test_ring_laplacian_and_spectrum():
    topo = build_topology(RING4, 4)
    expected = np.array([[1, -0.5, 0, -0.5], [-0.5, 1, -0.5, 0], [0, -0.5, 1, -0.5], [-0.5, 0, -0.5, 1]])
    np.testing.assert_array_equal(topo.laplacian, expected)
    # characteristic polynomial of the weighted 4-cycle: lam (lam - 1)^2 (lam - 2)
    np.testing.assert_allclose(topo.eigenvalues, [0.0, 1.0, 1.0, 2.0], atol=1e-12)


def test_five_cycle_spectrum():
    eig = build_topology(FIVE_CYCLE, 5).eigenvalues
    assert eig[0] == 0.0
    assert np.all(eig[1:] > 0) and np.all(eig <= 2.0)
    # 1 - cos(2 pi k / 5)
    np.testing.assert_allclose(eig, np.sort(1 - np.cos(2 * np.pi * np.arange(5) / 5)), atol=1e-12)


def test_two_agents():
    topo = build_topology([[1, 2]], 2)
    np.testing.assert_array_equal(topo.laplacian, [[1, -1], [-1, 1]])
    np.testing.assert_allclose(laplacian_spectrum(topo), [0.0, 2.0], atol=1e-15)


def test_weights_and_neighbors():
    topo = build_topology(FIVE_CYCLE, 5)
    assert topo.neighbors[0] == (1, 3)
    np.testing.assert_array_equal(topo.weights(0), [0.5, 0.5])
    assert topo.edges_one_based() == FIVE_CYCLE


@pytest.mark.parametrize(
    "edges, M, err",
    [
        ([[1, 1]], 2, InvalidEdge),
        ([[1, 3]], 2, InvalidEdge),
        ([[1, 2], [2, 1]], 2, InvalidEdge),
        ([[0, 1]], 2, InvalidEdge),
        ([[1, 2], [3, 4]], 4, DisconnectedGraph),
        ([[1, 2], [2, 3]], 3, AsymmetricWeights),
    ],
)
def test_rejections(edges, M, err):
    with pytest.raises(err):
        build_topology(edges, M)


def test_zero_based_indices():
    topo = build_topology([[0, 1], [1, 2], [2, 0]], 3, one_based=False)
    assert topo.M == 3 and topo.neighbors[2] == (0, 1)


def _bfs(M, edges):
    adj = {i: set() for i in range(M)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen, q = {0}, deque([0])
    while q:
        v = q.popleft()
        for w in adj[v] - seen:
            seen.add(w)
            q.append(w)
    return len(seen) == M


graphs = st.integers(2, 8).flatmap(
    lambda M: st.tuples(
        st.just(M),
        st.sets(st.tuples(st.integers(0, M - 1), st.integers(0, M - 1)).filter(lambda e: e[0] < e[1]), max_size=M * (M - 1) // 2),
    )
)


@settings(max_examples=200, deadline=None)
@given(graphs)
def test_connectivity_matches_bfs(graph):
    M, edges = graph
    assert is_connected(M, sorted(edges)) == _bfs(M, sorted(edges))


regular = st.sampled_from(
    [
        (3, [[1, 2], [2, 3], [3, 1]]),
        (4, RING4),
        (4, [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]]),
        (5, FIVE_CYCLE),
        (6, [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 1]]),
        (6, [[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [6, 1], [1, 4], [2, 5], [3, 6]]),
        (8, [[i, i % 8 + 1] for i in range(1, 9)]),
    ]
)


@settings(max_examples=30, deadline=None)
@given(regular)
def test_kernel_and_eigen_residuals(case):
    M, edges = case
    topo = build_topology(edges, M)
    assert np.max(np.abs(topo.laplacian @ np.ones(M))) <= 1e-12
    for lam in topo.eigenvalues:
        assert abs(np.linalg.det(topo.laplacian - lam * np.eye(M))) <= 1e-8
    assert np.all(np.diff(topo.eigenvalues) >= 0)
    np.testing.assert_allclose(topo.adjacency.sum(axis=1), 1.0)
    np.testing.assert_array_equal(topo.adjacency, topo.adjacency.T)
