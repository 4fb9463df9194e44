"""Communication graphs: generation, edge-list serialization, local views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_CONNECT_ATTEMPTS = 1000


class TopologyError(ValueError):
    """Raised for malformed graphs or impossible generator parameters."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph held as a dense 0/1 adjacency matrix with zero diagonal.

    Connectivity is enforced by the constructors in this module, not by the
    type itself (graphon sampling legitimately produces disconnected draws).
    """

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.int8)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise TopologyError("adjacency must be a square matrix")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise TopologyError("self-loops are not allowed")
        if not np.all((adj == 0) | (adj == 1)):
            raise TopologyError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", adj)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Sorted list of undirected edges (u, v) with u < v."""
        iu, iv = np.nonzero(np.triu(self.adjacency, k=1))
        return sorted(zip(iu.tolist(), iv.tolist()))

    def neighbors(self, node: int) -> np.ndarray:
        return np.nonzero(self.adjacency[node])[0]

    def degree(self, node: int) -> int:
        return int(self.adjacency[node].sum())

    def is_connected(self) -> bool:
        return _is_connected(self.adjacency)

    @property
    def closed_neighborhood(self) -> np.ndarray:
        """adjacency + identity, cached (hot path of the simulator)."""
        cached = getattr(self, "_closed", None)
        if cached is None:
            cached = self.adjacency.astype(np.int64) + np.eye(self.num_nodes,
                                                              dtype=np.int64)
            object.__setattr__(self, "_closed", cached)
        return cached

    @property
    def neighbor_lists(self) -> tuple:
        cached = getattr(self, "_nbrs", None)
        if cached is None:
            cached = tuple(np.flatnonzero(self.adjacency[i])
                           for i in range(self.num_nodes))
            object.__setattr__(self, "_nbrs", cached)
        return cached


@dataclass(frozen=True, eq=False)
class LocalAdjacency:
    """Agent-local view of the adjacency: only row/column of one agent kept."""

    agent: int
    matrix: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


def _is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in np.nonzero(adj[u])[0]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return bool(seen.all())


def gen_watts_strogatz(num_nodes: int, k_ring: int = 4, p_rewire: float = 0.5,
                       seed: int = 0) -> Graph:
    """Connected Watts-Strogatz small-world graph, deterministic given seed.

    Starts from a ring lattice where every node links to its k_ring nearest
    neighbors, then rewires each clockwise edge with probability p_rewire.
    Disconnected samples are rejected and redrawn with an incremented
    sub-seed, up to MAX_CONNECT_ATTEMPTS times.
    """
    if k_ring < 2 or k_ring % 2 != 0:
        raise TopologyError(f"k_ring must be an even integer >= 2, got {k_ring}")
    if k_ring >= num_nodes:
        raise TopologyError(f"k_ring ({k_ring}) must be < num_nodes ({num_nodes})")
    if not 0.0 <= p_rewire <= 1.0:
        raise TopologyError(f"p_rewire must be in [0, 1], got {p_rewire}")

    for attempt in range(MAX_CONNECT_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt, 0x57A7])
        adj = _ws_sample(num_nodes, k_ring, p_rewire, rng)
        if _is_connected(adj):
            return Graph(adj)
    raise TopologyError(
        f"no connected Watts-Strogatz sample in {MAX_CONNECT_ATTEMPTS} attempts "
        f"(M={num_nodes}, k_ring={k_ring}, p={p_rewire}, seed={seed})")


def _ws_sample(n: int, k: int, p: float, rng: np.random.Generator) -> np.ndarray:
    adj = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        for j in range(1, k // 2 + 1):
            adj[i, (i + j) % n] = 1
            adj[(i + j) % n, i] = 1
    if p == 0.0:
        return adj
    # Rewire the clockwise edge (i, i+j); edge count is preserved because each
    # rewire removes exactly one edge and adds one to a non-adjacent target.
    for j in range(1, k // 2 + 1):
        for i in range(n):
            if rng.random() >= p:
                continue
            old = (i + j) % n
            if adj[i, old] == 0:
                continue  # already rewired away by an earlier pass
            candidates = np.nonzero(adj[i] == 0)[0]
            candidates = candidates[candidates != i]
            if candidates.size == 0:
                continue
            new = int(candidates[rng.integers(candidates.size)])
            adj[i, old] = adj[old, i] = 0
            adj[i, new] = adj[new, i] = 1
    return adj


def load_edge_list(text: str) -> Graph:
    """Parse the edge-list text format into a connected Graph.

    Format: optional first line with the node count M, then one "u v" pair
    per line (0-based). Blank lines and "#" comments are skipped.
    """
    pairs: list[tuple[int, int]] = []
    declared_m: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) == 1 and declared_m is None and not pairs:
            try:
                declared_m = int(fields[0])
            except ValueError:
                raise TopologyError(f"line {lineno}: expected node count, got {line!r}")
            if declared_m <= 0:
                raise TopologyError(f"line {lineno}: node count must be positive")
            continue
        if len(fields) != 2:
            raise TopologyError(f"line {lineno}: expected 'u v', got {line!r}")
        try:
            u, v = int(fields[0]), int(fields[1])
        except ValueError:
            raise TopologyError(f"line {lineno}: non-integer endpoint in {line!r}")
        if u == v:
            raise TopologyError(f"line {lineno}: self-loop at node {u}")
        if u < 0 or v < 0:
            raise TopologyError(f"line {lineno}: negative node index")
        pairs.append((u, v))

    if not pairs:
        raise TopologyError("edge list contains no edges")
    m = declared_m if declared_m is not None else max(max(u, v) for u, v in pairs) + 1
    adj = np.zeros((m, m), dtype=np.int8)
    for u, v in pairs:
        if u >= m or v >= m:
            raise TopologyError(f"node index {max(u, v)} out of range for M={m}")
        adj[u, v] = adj[v, u] = 1
    if not _is_connected(adj):
        raise TopologyError("edge list describes a disconnected graph")
    return Graph(adj)


def dump_edge_list(graph: Graph) -> str:
    """Serialize a graph to the edge-list format; round-trips bit-exactly."""
    lines = [str(graph.num_nodes)]
    lines.extend(f"{u} {v}" for u, v in graph.edges)
    return "\n".join(lines) + "\n"


def local_adjacency(graph: Graph, agent: int) -> LocalAdjacency:
    """Star-shaped matrix keeping only the given agent's row and column."""
    m = graph.num_nodes
    if not 0 <= agent < m:
        raise TopologyError(f"agent index {agent} out of range for M={m}")
    base = np.zeros((m, m), dtype=np.int8)
    base[agent, :] = graph.adjacency[agent, :]
    base[:, agent] = graph.adjacency[:, agent]
    return LocalAdjacency(agent=agent, matrix=base)


def relabel(graph: Graph, perm: np.ndarray) -> Graph:
    """Apply a node permutation: node i of the input becomes node perm[i]."""
    perm = np.asarray(perm)
    m = graph.num_nodes
    if sorted(perm.tolist()) != list(range(m)):
        raise TopologyError("perm must be a permutation of 0..M-1")
    new = np.zeros_like(graph.adjacency)
    new[np.ix_(perm, perm)] = graph.adjacency
    return Graph(new)


# Seven-node reference backbone used for fixed-network experiments. Stands in
# for the 7-node operator topology the experiments call for; same node count
# and connectivity class (ring with one chord).
AUS_SIMPLE_EDGE_LIST = """\
7
0 1
0 6
1 2
1 4
2 3
3 4
4 5
5 6
"""


def aus_simple_graph() -> Graph:
    return load_edge_list(AUS_SIMPLE_EDGE_LIST)
