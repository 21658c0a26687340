"""Core containers: datasets with missingness, annotated DAGs and move legality."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class CPDKind(str, enum.Enum):
    LINEAR = "linear"
    SIGMOID = "sigmoid"


class StructureError(ValueError):
    """Raised when a graph violates a structural invariant (cycle, unknown node)."""


@dataclass
class Dataset:
    """M x N real matrix with a per-cell observation mask.

    Unobserved cells keep whatever value is stored in ``values`` but no
    computation reads them; the loaders store 0.0 there.
    """

    values: np.ndarray
    observed: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float, ndmin=2)
        m, n = self.values.shape
        if m < 1 or n < 1:
            raise ValueError("dataset needs at least one instance and one variable")
        if self.observed is None:
            self.observed = np.ones((m, n), dtype=bool)
        else:
            self.observed = np.array(self.observed, dtype=bool)
            if self.observed.shape != (m, n):
                raise ValueError("mask shape does not match values")
        self.values = np.where(self.observed, self.values, 0.0)
        if self.names is None:
            self.names = [f"X{i}" for i in range(n)]
        self.names = list(self.names)
        if len(self.names) != n:
            raise ValueError("one name per column required")
        if len(set(self.names)) != n:
            raise ValueError("variable names must be unique")

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "Dataset":
        idx = [self.names.index(n) for n in names]
        return Dataset(self.values[:, idx], self.observed[:, idx], list(names))

    def standardized(self) -> "Dataset":
        """Zero mean, unit variance per column, using observed cells only."""
        vals = self.values.copy()
        for j in range(self.n_vars):
            obs = self.observed[:, j]
            if not obs.any():
                continue
            col = vals[obs, j]
            sd = col.std()
            vals[obs, j] = (col - col.mean()) / (sd if sd > 0 else 1.0)
        return Dataset(vals, self.observed.copy(), list(self.names))

    def rows(self, idx) -> "Dataset":
        return Dataset(self.values[idx], self.observed[idx], list(self.names))


@dataclass(eq=False)
class FamilyParams:
    """Parameters of one CPD: per-parent scales, link parameters, noise variance.

    ``theta`` is ``[theta0]`` for linear families and ``[theta0, theta1]`` for
    sigmoid ones. ``flags`` carries fit diagnostics and is not serialized.
    """

    alpha: np.ndarray
    theta: np.ndarray
    sigma2: float
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.sigma2 = float(self.sigma2)

    def copy(self) -> "FamilyParams":
        return FamilyParams(self.alpha.copy(), self.theta.copy(), self.sigma2, self.flags)

    def same_values(self, other: "FamilyParams") -> bool:
        return (
            np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.theta, other.theta)
            and self.sigma2 == other.sigma2
        )


@dataclass
class Node:
    name: str
    hidden: bool = False
    kind: CPDKind = CPDKind.LINEAR

    def __post_init__(self):
        self.kind = CPDKind(self.kind)


class MoveKind(str, enum.Enum):
    ADD = "add"
    DELETE = "delete"
    REVERSE = "reverse"
    REPLACE = "replace"
    INSERT_HIDDEN = "insert_hidden"


@dataclass
class SearchMove:
    """A typed structure edit.

    For ADD/DELETE the edge is ``parent -> child``. REVERSE turns
    ``parent -> child`` into ``child -> parent``. REPLACE swaps ``parent`` for
    ``new_parent`` in the family of ``child``. ``families`` holds the refitted
    parameters of every family the move touches, keyed by node index.
    """

    kind: MoveKind
    child: int
    parent: int | None = None
    new_parent: int | None = None
    delta_bic: float = float("nan")
    screened_by: str = "exact"
    families: dict = field(default_factory=dict, repr=False)

    def key(self) -> tuple:
        return (self.kind.value, self.child, self.parent, self.new_parent)

    def inverse(self) -> "SearchMove":
        if self.kind is MoveKind.ADD:
            return SearchMove(MoveKind.DELETE, self.child, self.parent)
        if self.kind is MoveKind.DELETE:
            return SearchMove(MoveKind.ADD, self.child, self.parent)
        if self.kind is MoveKind.REVERSE:
            return SearchMove(MoveKind.REVERSE, self.parent, self.child)
        if self.kind is MoveKind.REPLACE:
            return SearchMove(MoveKind.REPLACE, self.child, self.new_parent, self.parent)
        raise ValueError(f"no inverse for {self.kind}")


class NetworkGraph:
    """A DAG whose nodes carry a CPD kind and fitted family parameters.

    Parent lists are kept sorted by node index and ``params[i].alpha`` is
    aligned with ``parents[i]``. Structural constraints (in-degree cap and the
    two-layer hidden-root/observed-leaf layout) live on the graph so that
    legality checks need nothing else.
    """

    def __init__(self, nodes: Iterable[Node] = (), *, max_in_degree: int | None = None,
                 two_layer: bool = False):
        self.nodes: list[Node] = []
        self.parents: list[list[int]] = []
        self.params: list[FamilyParams | None] = []
        self._index: dict[str, int] = {}
        self.max_in_degree = max_in_degree
        self.two_layer = two_layer
        for node in nodes:
            self.add_node(node)

    @classmethod
    def empty(cls, names: Sequence[str], kind: CPDKind | str = CPDKind.LINEAR,
              **kwargs) -> "NetworkGraph":
        return cls([Node(n, False, CPDKind(kind)) for n in names], **kwargs)

    # -- basic accessors -------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            i = int(name_or_index)
            if not 0 <= i < self.n_nodes:
                raise StructureError(f"unknown node index {i}")
            return i
        try:
            return self._index[name_or_index]
        except KeyError:
            raise StructureError(f"unknown node {name_or_index!r}") from None

    def hidden_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.hidden]

    def observed_indices(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if not n.hidden]

    def children(self, i: int) -> list[int]:
        return [c for c in range(self.n_nodes) if i in self.parents[c]]

    def edges(self) -> list[tuple[int, int]]:
        return [(p, c) for c in range(self.n_nodes) for p in self.parents[c]]

    def n_edges(self) -> int:
        return sum(len(p) for p in self.parents)

    def alpha_of(self, parent: int, child: int) -> float:
        params = self.params[child]
        return float(params.alpha[self.parents[child].index(parent)])

    # -- mutation --------------------------------------------------------
    def add_node(self, node: Node, params: FamilyParams | None = None) -> int:
        if node.name in self._index:
            raise StructureError(f"duplicate node {node.name!r}")
        self._index[node.name] = len(self.nodes)
        self.nodes.append(node)
        self.parents.append([])
        self.params.append(params)
        return len(self.nodes) - 1

    def set_family(self, child: int, parents: Iterable[int], params: FamilyParams | None):
        parents = sorted(int(p) for p in parents)
        if params is not None and len(params.alpha) != len(parents):
            raise StructureError("alpha length must equal the number of parents")
        self.parents[child] = parents
        self.params[child] = params

    def add_edge(self, parent: int, child: int, alpha: float = 0.0):
        """Add ``parent -> child`` and splice ``alpha`` into the child's scales."""
        parent, child = self.index(parent), self.index(child)
        if parent in self.parents[child]:
            raise StructureError("edge already present")
        new = sorted(self.parents[child] + [parent])
        params = self.params[child]
        if params is not None:
            pos = new.index(parent)
            params = params.copy()
            params.alpha = np.insert(params.alpha, pos, alpha)
        self.set_family(child, new, params)

    def remove_edge(self, parent: int, child: int):
        parent, child = self.index(parent), self.index(child)
        pos = self.parents[child].index(parent)
        params = self.params[child]
        if params is not None:
            params = params.copy()
            params.alpha = np.delete(params.alpha, pos)
        self.set_family(child, [p for p in self.parents[child] if p != parent], params)

    def copy(self) -> "NetworkGraph":
        g = NetworkGraph(max_in_degree=self.max_in_degree, two_layer=self.two_layer)
        for node, parents, params in zip(self.nodes, self.parents, self.params):
            i = g.add_node(Node(node.name, node.hidden, node.kind),
                           None if params is None else params.copy())
            g.parents[i] = list(parents)
        return g

    # -- reachability ------------------------------------------------------
    def descendants(self, i: int) -> set[int]:
        kids = [[] for _ in range(self.n_nodes)]
        for p, c in self.edges():
            kids[p].append(c)
        seen, stack = set(), [i]
        while stack:
            for c in kids[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def reachability(self) -> np.ndarray:
        """Boolean matrix R with R[a, b] true iff there is a directed path a ~> b."""
        order = topological_order(self)
        n = self.n_nodes
        reach = np.zeros((n, n), dtype=bool)
        for v in reversed(order):
            for c in self.children(v):
                reach[v, c] = True
                reach[v] |= reach[c]
        return reach

    def has_cycle(self) -> bool:
        try:
            topological_order(self)
        except StructureError:
            return True
        return False


def topological_order(graph: NetworkGraph) -> list[int]:
    """Kahn's algorithm with lowest-index-first tie breaking."""
    indeg = [len(p) for p in graph.parents]
    kids = [[] for _ in range(graph.n_nodes)]
    for p, c in graph.edges():
        kids[p].append(c)
    heap = [i for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for c in kids[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != graph.n_nodes:
        raise StructureError("graph contains a directed cycle")
    return order


def _edge_allowed_by_layers(graph: NetworkGraph, parent: int, child: int) -> bool:
    if not graph.two_layer:
        return True
    return graph.nodes[parent].hidden and not graph.nodes[child].hidden


def _in_degree_ok(graph: NetworkGraph, child: int, extra: int) -> bool:
    cap = graph.max_in_degree
    return cap is None or len(graph.parents[child]) + extra <= cap


def is_legal_move(graph: NetworkGraph, move: SearchMove, reach: np.ndarray | None = None) -> bool:
    """True iff applying ``move`` keeps the graph acyclic and within its constraints.

    ``reach`` may pass a precomputed :meth:`NetworkGraph.reachability` matrix.
    """
    n = graph.n_nodes
    for v in (move.child, move.parent, move.new_parent):
        if v is not None and not 0 <= v < n:
            raise StructureError(f"move references unknown node {v}")
    x, z = move.child, move.parent
    if reach is None and move.kind is not MoveKind.DELETE:
        reach = graph.reachability()

    if move.kind is MoveKind.ADD:
        return (z != x and z not in graph.parents[x]
                and _edge_allowed_by_layers(graph, z, x)
                and _in_degree_ok(graph, x, 1)
                and not reach[x, z])
    if move.kind is MoveKind.DELETE:
        return z in graph.parents[x]
    if move.kind is MoveKind.REPLACE:
        w = move.new_parent
        return (z in graph.parents[x] and w != x and w not in graph.parents[x]
                and _edge_allowed_by_layers(graph, w, x)
                and not reach[x, w])
    if move.kind is MoveKind.REVERSE:
        if z not in graph.parents[x] or not _edge_allowed_by_layers(graph, x, z):
            return False
        if not _in_degree_ok(graph, z, 1):
            return False
        # x -> z closes a cycle iff z reaches x by some path other than z -> x
        return not any(reach[c, x] for c in graph.children(z) if c != x)
    if move.kind is MoveKind.INSERT_HIDDEN:
        return True
    raise ValueError(f"unknown move kind {move.kind}")


def apply_move(graph: NetworkGraph, move: SearchMove) -> NetworkGraph:
    """Apply ``move`` in place, installing the refitted parameters it carries."""
    x, z = move.child, move.parent
    if move.kind is MoveKind.ADD:
        graph.add_edge(z, x)
    elif move.kind is MoveKind.DELETE:
        graph.remove_edge(z, x)
    elif move.kind is MoveKind.REVERSE:
        graph.remove_edge(z, x)
        graph.add_edge(x, z)
    elif move.kind is MoveKind.REPLACE:
        graph.remove_edge(z, x)
        graph.add_edge(move.new_parent, x)
    else:
        raise ValueError(f"cannot apply {move.kind} here")
    for node, params in move.families.items():
        graph.params[node] = params
    return graph
