"""Undirected communication graphs between agents.

Geographic graphs place agents uniformly in the unit square and link pairs
closer than a radius; random graphs are Erdos-Renyi G(n, p).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import as_generator

GRAPH_KINDS = ("geographic", "random", "explicit")


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset[tuple[int, int]]
    kind: str = "explicit"
    param: float | None = None
    positions: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"graph needs at least 2 nodes, got n={self.n}")
        if self.kind not in GRAPH_KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_edges(cls, n: int, edges, kind: str = "explicit", param: float | None = None, positions=None) -> "Graph":
        return cls(n=n, edges=frozenset(map(tuple, edges)), kind=kind, param=param, positions=positions)

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls.from_edges(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls.from_edges(n, [])

    @property
    def edge_list(self) -> list[tuple[int, int]]:
        """Edges in sorted order; fixes the edge indexing used by link sampling."""
        return sorted(self.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def union(self, other: "Graph") -> "Graph":
        if other.n != self.n:
            raise ValueError("cannot merge graphs of different sizes")
        # the result no longer obeys the generator's edge rule, so it becomes explicit
        return Graph(self.n, self.edges | other.edges, "explicit", None, self.positions)


def generate_geographic(n: int, r: float, rng=None) -> Graph:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    rng = as_generator(rng)
    pos = rng.random((n, 2))
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    iu, ju = np.triu_indices(n, k=1)
    close = dist[iu, ju] < r
    edges = zip(iu[close].tolist(), ju[close].tolist())
    return Graph.from_edges(n, edges, kind="geographic", param=float(r), positions=pos)


def generate_random(n: int, p: float, rng=None) -> Graph:
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"link probability must lie in [0, 1], got {p}")
    rng = as_generator(rng)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()), kind="random", param=float(p))


def generate(kind: str, n: int, param: float, rng=None) -> Graph:
    if kind == "geographic":
        return generate_geographic(n, param, rng)
    if kind == "random":
        return generate_random(n, param, rng)
    raise ValueError(f"cannot generate graphs of kind {kind!r}")


def generate_connected(kind: str, n: int, param: float, rng=None, max_tries: int = 10_000) -> tuple[Graph, int]:
    """Draw graphs until one is connected; returns the graph and the number of rejected draws."""
    rng = as_generator(rng)
    for rejected in range(max_tries):
        g = generate(kind, n, param, rng)
        if is_connected(g):
            return g, rejected
    raise RuntimeError(f"no connected {kind} graph (n={n}, param={param}) in {max_tries} draws")


def is_connected(g: Graph) -> bool:
    nbrs: list[list[int]] = [[] for _ in range(g.n)]
    for i, j in g.edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == g.n


def laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency()
    lap = np.diag(a.sum(axis=1)) - a  # integer arithmetic, so L @ 1 == 0 exactly
    return lap.astype(float)


def write_edge_list(g: Graph, path) -> None:
    lines = [str(g.n)] + [f"{i} {j}" for i, j in g.edge_list]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    n = int(rows[0][0])
    return Graph.from_edges(n, [(int(a), int(b)) for a, b in rows[1:]])
