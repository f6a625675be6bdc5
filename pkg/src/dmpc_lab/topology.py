"""Undirected communication graph with degree-normalized weights.

Neighbor weights are ``a_ij = 1/|N_i|`` so every row of the adjacency
matrix sums to one and the Laplacian is ``L = I - A``. Only graphs where
adjacent agents share the same degree are accepted; otherwise ``a_ij`` and
``a_ji`` differ and ``L`` is not symmetric.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import AsymmetricWeights, DisconnectedGraph, EigenSolverFailure, InvalidEdge

ZERO_EIG_TOL = 1e-9


@dataclass(frozen=True)
class Topology:
    """Immutable graph description (0-based agent indices).

    Attributes:
        M: number of agents.
        neighbors: ``neighbors[i]`` is the sorted tuple of agents adjacent to i.
        adjacency: (M, M) weighted adjacency, ``adjacency[i, j] = a_ij``.
        laplacian: (M, M) matrix ``I - adjacency``.
        eigenvalues: ascending Laplacian spectrum.
        edges: 0-based unordered edges, as given.
    """

    M: int
    neighbors: tuple[tuple[int, ...], ...]
    adjacency: NDArray[np.float64] = field(repr=False)
    laplacian: NDArray[np.float64] = field(repr=False)
    eigenvalues: NDArray[np.float64] = field(repr=False)
    edges: tuple[tuple[int, int], ...] = ()

    def weights(self, i: int) -> NDArray[np.float64]:
        """Weights ``a_ij`` for ``j in neighbors[i]``, in neighbor order."""
        return self.adjacency[i, list(self.neighbors[i])]

    @property
    def nonzero_eigenvalues(self) -> NDArray[np.float64]:
        return self.eigenvalues[1:]

    def edges_one_based(self) -> list[list[int]]:
        return [[i + 1, j + 1] for i, j in self.edges]


def is_connected(M: int, edges: Iterable[tuple[int, int]]) -> bool:
    """Breadth-first reachability from agent 0."""
    adj: list[list[int]] = [[] for _ in range(M)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == M


def build_topology(edge_list: Sequence[Sequence[int]], M: int, *, one_based: bool = True) -> Topology:
    """Assemble weights, Laplacian and spectrum from an undirected edge list.

    Args:
        edge_list: unordered pairs of agent indices.
        M: number of agents (at least 2).
        one_based: indices in ``edge_list`` start at 1 (scenario-file
            convention). Pass ``False`` for 0-based pairs.

    Raises:
        InvalidEdge: out-of-range index, self-loop or duplicate edge.
        DisconnectedGraph: some agent is unreachable.
        AsymmetricWeights: an edge joins agents of different degree.
    """
    if M < 2:
        raise InvalidEdge(f"need at least 2 agents, got M={M}")
    offset = 1 if one_based else 0
    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    for pair in edge_list:
        if len(pair) != 2:
            raise InvalidEdge(f"edge must have two endpoints: {pair!r}")
        i, j = int(pair[0]) - offset, int(pair[1]) - offset
        if not (0 <= i < M and 0 <= j < M):
            raise InvalidEdge(f"edge {tuple(pair)} out of range for M={M}")
        if i == j:
            raise InvalidEdge(f"self-loop at agent {pair[0]}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InvalidEdge(f"duplicate edge {tuple(pair)}")
        seen.add(key)
        edges.append((i, j))

    if not is_connected(M, edges):
        raise DisconnectedGraph(f"graph on {M} agents with edges {list(edge_list)} is not connected")

    nbrs: list[set[int]] = [set() for _ in range(M)]
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    degree = [len(s) for s in nbrs]
    for i, j in edges:
        if degree[i] != degree[j]:
            raise AsymmetricWeights(
                f"agents {i + offset} and {j + offset} have degrees {degree[i]} and {degree[j]}; "
                "a_ij = 1/|N_i| would not be symmetric"
            )

    adjacency = np.zeros((M, M))
    for i in range(M):
        for j in nbrs[i]:
            adjacency[i, j] = 1.0 / degree[i]
    laplacian = np.eye(M) - adjacency
    adjacency.setflags(write=False)
    laplacian.setflags(write=False)
    topo = Topology(
        M=M,
        neighbors=tuple(tuple(sorted(s)) for s in nbrs),
        adjacency=adjacency,
        laplacian=laplacian,
        eigenvalues=np.empty(0),
        edges=tuple(edges),
    )
    eig = laplacian_spectrum(topo)
    eig.setflags(write=False)
    object.__setattr__(topo, "eigenvalues", eig)
    return topo


def laplacian_spectrum(topology: Topology) -> NDArray[np.float64]:
    """Ascending eigenvalues of the (symmetric) Laplacian.

    The smallest eigenvalue is snapped to exactly 0 when it is within
    ``ZERO_EIG_TOL``; anything else is an error since a connected graph has
    a one-dimensional kernel.
    """
    try:
        eig = np.linalg.eigvalsh(np.asarray(topology.laplacian))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise EigenSolverFailure(str(exc)) from exc
    eig = np.sort(eig)
    if abs(eig[0]) > ZERO_EIG_TOL:
        raise EigenSolverFailure(f"smallest Laplacian eigenvalue {eig[0]!r} is not zero")
    eig[0] = 0.0
    if topology.M > 1 and eig[1] <= ZERO_EIG_TOL:
        raise DisconnectedGraph("Laplacian has a repeated zero eigenvalue")
    return eig
