"""Ground-truth network generators, forward sampling and benchmark bundles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cpd import VARIANCE_FLOOR, predict_mean
from .model import CPDKind, Dataset, FamilyParams, NetworkGraph, Node, topological_order


def sample_network(graph: NetworkGraph, m: int, seed=None, *, return_hidden: bool = False):
    """Forward-sample ``m`` instances in topological order.

    Returns the observed columns as a :class:`Dataset`; with
    ``return_hidden`` the hidden columns come back as a second dataset.
    """
    if any(p is None for p in graph.params):
        raise ValueError("every node needs parameters before sampling")
    rng = np.random.default_rng(seed)
    vals = np.zeros((m, graph.n_nodes))
    for i in topological_order(graph):
        p = graph.params[i]
        mean = predict_mean(graph.nodes[i].kind, p, vals[:, graph.parents[i]])
        vals[:, i] = mean + rng.standard_normal(m) * np.sqrt(p.sigma2)
    obs = graph.observed_indices()
    data = Dataset(vals[:, obs], None, [graph.names[i] for i in obs])
    if not return_hidden:
        return data
    hid = graph.hidden_indices()
    hidden = Dataset(vals[:, hid], None, [graph.names[i] for i in hid]) if hid else None
    return data, hidden


def linear_gaussian_joint(graph: NetworkGraph) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance of an all-linear network (node order)."""
    n = graph.n_nodes
    b = np.zeros((n, n))
    theta = np.zeros(n)
    d = np.zeros(n)
    for i, node in enumerate(graph.nodes):
        if node.kind is not CPDKind.LINEAR:
            raise ValueError("joint Gaussian needs linear families only")
        p = graph.params[i]
        b[i, graph.parents[i]] = p.alpha
        theta[i] = p.theta[0]
        d[i] = p.sigma2
    inv = np.linalg.inv(np.eye(n) - b)
    return inv @ theta, inv @ np.diag(d) @ inv.T


def random_dag(n: int, *, kind: CPDKind | str = CPDKind.LINEAR, max_in_degree: int = 3,
               edge_prob: float | None = None, seed=None, prefix: str = "X") -> NetworkGraph:
    """Random degree-bounded DAG with randomly drawn CPDs.

    Nodes are created in a random causal order; each picks up to
    ``max_in_degree`` parents among its predecessors. Linear networks are
    scaled so that every node has unit marginal variance, with 50-80% of it
    explained by the parents.
    """
    rng = np.random.default_rng(seed)
    kind = CPDKind(kind)
    edge_prob = 2.0 / max(n - 1, 1) * 1.5 if edge_prob is None else edge_prob
    names = [f"{prefix}{i}" for i in range(n)]
    g = NetworkGraph([Node(nm, False, kind) for nm in names])
    order = rng.permutation(n)
    cov = np.zeros((n, n))
    for pos, i in enumerate(order):
        preds = order[:pos]
        chosen = [int(p) for p in preds if rng.random() < edge_prob]
        if len(chosen) > max_in_degree:
            chosen = [int(p) for p in rng.choice(chosen, max_in_degree, replace=False)]
        parents = sorted(chosen)
        if kind is CPDKind.LINEAR:
            params = _linear_unit_family(rng, parents, cov)
            # update the analytic covariance with the new node
            a = np.zeros(n)
            a[parents] = params.alpha
            row = cov @ a
            cov[i, :] = row
            cov[:, i] = row
            cov[i, i] = 1.0
        else:
            params = _sigmoid_family(rng, len(parents))
        g.set_family(int(i), parents, params)
    return g


def _linear_unit_family(rng, parents, cov) -> FamilyParams:
    if not parents:
        return FamilyParams([], [0.0], 1.0)
    raw = rng.uniform(0.5, 1.5, len(parents)) * rng.choice([-1.0, 1.0], len(parents))
    sub = cov[np.ix_(parents, parents)]
    signal = float(raw @ sub @ raw)
    r2 = rng.uniform(0.5, 0.8)
    alpha = raw * np.sqrt(r2 / signal)
    return FamilyParams(alpha, [0.0], max(1.0 - r2, VARIANCE_FLOOR))


def _sigmoid_family(rng, k: int) -> FamilyParams:
    theta1 = rng.uniform(1.5, 3.0)
    if k == 0:
        return FamilyParams([], [-0.5 * theta1, theta1], theta1 ** 2 / 12.0)
    alpha = rng.uniform(1.0, 3.0, k) * rng.choice([-1.0, 1.0], k)
    sigma2 = rng.uniform(0.05, 0.15) * theta1 ** 2
    return FamilyParams(alpha, [-0.5 * theta1, theta1], sigma2)


def two_layer_network(n_observed: int, n_hidden: int, *, overlap: float = 0.2,
                      max_in_degree: int = 2, seed=None) -> NetworkGraph:
    """Hidden standard-normal roots over linear observed leaves.

    Observed node ``i`` gets hidden parent ``i mod n_hidden`` and, with
    probability ``overlap``, one more random hidden parent.
    """
    rng = np.random.default_rng(seed)
    g = NetworkGraph(max_in_degree=max_in_degree, two_layer=True)
    hid = [g.add_node(Node(f"H{j}", True), FamilyParams([], [0.0], 1.0))
           for j in range(n_hidden)]
    for i in range(n_observed):
        x = g.add_node(Node(f"X{i}", False))
        parents = {hid[i % n_hidden]}
        if n_hidden > 1 and max_in_degree > 1 and rng.random() < overlap:
            parents.add(hid[int(rng.choice([h for h in hid if h not in parents]))])
        parents = sorted(parents)
        alpha = rng.uniform(0.7, 1.3, len(parents)) * rng.choice([-1.0, 1.0], len(parents))
        g.set_family(x, parents, FamilyParams(alpha, [0.0], rng.uniform(0.2, 0.5)))
    return g


@dataclass
class SyntheticSuite:
    """A golden network with nested training sets over an M grid and one test set."""

    kind: str
    golden: NetworkGraph
    train: dict = field(default_factory=dict)
    test: Dataset | None = None
    seed: int = 0

    @property
    def m_grid(self) -> list[int]:
        return sorted(self.train)

    def save(self, directory) -> None:
        from .io import save_csv, save_network
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_network(self.golden, d / "golden.json")
        for m, data in self.train.items():
            save_csv(data, d / f"train_{m}.csv")
        save_csv(self.test, d / "test.csv")
        (d / "suite.json").write_text(json.dumps(
            {"kind": self.kind, "seed": self.seed, "m_grid": self.m_grid}, indent=2) + "\n")

    @classmethod
    def load(cls, directory) -> "SyntheticSuite":
        from .io import load_csv, load_network
        d = Path(directory)
        meta = json.loads((d / "suite.json").read_text())
        train = {m: load_csv(d / f"train_{m}.csv") for m in meta["m_grid"]}
        return cls(meta["kind"], load_network(d / "golden.json"), train,
                   load_csv(d / "test.csv"), meta["seed"])


def make_synthetic_suite(kind: str, n: int, hidden_count: int = 0, m_grid=(25, 50, 100, 200, 500),
                         seed: int = 0, *, test_size: int = 1000, max_in_degree: int | None = None
                         ) -> SyntheticSuite:
    """Generate a golden network and sample train/test data from it.

    ``kind`` is ``linear``, ``sigmoid`` or ``two_layer``. Training sets are
    nested (the M=25 set is a prefix of the M=50 one, and so on).
    """
    ss = np.random.SeedSequence(seed)
    net_seed, train_seed, test_seed = ss.spawn(3)
    if kind == "two_layer":
        if hidden_count < 1:
            raise ValueError("two-layer suites need at least one hidden variable")
        golden = two_layer_network(n, hidden_count, max_in_degree=max_in_degree or 2,
                                   seed=net_seed)
    elif kind in ("linear", "sigmoid"):
        if hidden_count:
            raise ValueError("hidden variables are only generated for two-layer suites")
        golden = random_dag(n, kind=kind, max_in_degree=max_in_degree or 3, seed=net_seed)
    else:
        raise ValueError(f"unknown suite kind {kind!r}")
    m_grid = sorted(int(m) for m in m_grid)
    if not m_grid or m_grid[0] < 1:
        raise ValueError("M grid needs positive sizes")
    full = sample_network(golden, m_grid[-1], train_seed)
    train = {m: full.rows(slice(0, m)) for m in m_grid}
    test = sample_network(golden, test_size, test_seed)
    return SyntheticSuite(kind, golden, train, test, seed)
