"""Hidden-variable discovery from ideal parent profiles.

A shared hidden parent for a cluster of children should correlate with all
their ideal profiles at once. Maximizing the summed C1 bound over the shared
profile is a Rayleigh quotient problem whose solution lies in the span of the
scaled profiles, so only an L x L symmetric eigenproblem is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ideal import SIN2_FLOOR, IdealProfile
from .model import CPDKind, FamilyParams, Node, NetworkGraph, StructureError
from .cpd import VARIANCE_FLOOR

HALF_LOG_2PI_E = 0.5 * (np.log(2.0 * np.pi) + 1.0)


class EmptyClusterError(ValueError):
    """All member profiles are zero; there is nothing for a hidden parent to explain."""


@dataclass
class ClusterCandidate:
    members: tuple
    scaled_profiles: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    zstar: np.ndarray = field(repr=False)
    gamma: float = 0.0
    bound_c1: float = 0.0
    bound_c2: float = 0.0
    bic_delta_estimate: float = float("nan")
    profiles: list = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return len(self.members)


def _scaled_column(p: IdealProfile) -> np.ndarray:
    # sigmoid families use the slope-weighted geometry
    y = p.y if p.kind is CPDKind.LINEAR else p.weighted()
    return y / np.sqrt(p.sigma2)


def _corrections(profiles: Sequence[IdealProfile]) -> tuple[float, float]:
    """Summed candidate-independent correction terms (zero for linear families)."""
    k1 = k2 = 0.0
    for p in profiles:
        if p.c1_const != p.c2_const and p.c2_const > 0:
            k1 += (p.c1_const - p.c2_const) / (2.0 * p.sigma2)
            k2 += 0.5 * p.m * np.log(p.c1_const / p.c2_const)
    return k1, k2


def _top_eig(gram: np.ndarray) -> tuple[float, np.ndarray]:
    # Any top eigenvector of A also solves A A lam = gamma A lam, so the
    # symmetric solver covers the singular case as well.
    w, v = np.linalg.eigh(gram)
    lam = v[:, -1]
    # fix the sign so the result does not depend on the solver
    j = int(np.argmax(np.abs(lam)))
    if lam[j] < 0:
        lam = -lam
    return float(w[-1]), lam


def _c2_from_gram(gram: np.ndarray, gamma: float, lam: np.ndarray, m: int) -> float:
    diag = np.diag(gram)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos2 = np.where(diag > 0, gamma * lam ** 2 / np.where(diag > 0, diag, 1.0), 0.0)
    sin2 = np.maximum(1.0 - cos2, SIN2_FLOOR)
    return float(-0.5 * m * np.log(sin2).sum())


def optimal_hidden_profile(profiles: Sequence[IdealProfile], members=None) -> ClusterCandidate:
    """Shared parent profile maximizing the summed C1 bound of ``profiles``.

    Returns the unit-norm profile ``zstar = Y lam`` with Y the matrix of
    profiles divided by their noise standard deviations, and
    ``bound_c1 = gamma / 2`` where gamma is the top eigenvalue of ``Y^T Y``.
    """
    profiles = list(profiles)
    if not profiles:
        raise EmptyClusterError("cluster has no members")
    m = profiles[0].m
    if any(p.m != m for p in profiles):
        raise ValueError("profiles must share the instance count")
    y = np.column_stack([_scaled_column(p) for p in profiles])
    gram = y.T @ y
    gamma, lam = _top_eig(gram)
    if gamma <= 0.0:
        raise EmptyClusterError("all member profiles are zero")
    z = y @ lam
    z /= np.linalg.norm(z)
    k1, k2 = _corrections(profiles)
    cluster = ClusterCandidate(
        members=tuple(range(len(profiles))) if members is None else tuple(members),
        scaled_profiles=y, lam=lam, zstar=z, gamma=gamma,
        bound_c1=0.5 * gamma - k1,
        bound_c2=_c2_from_gram(gram, gamma, lam, m) - k2,
        profiles=profiles,
    )
    cluster.bic_delta_estimate = cluster_bic_estimate(cluster, m)
    return cluster


def _estimate(bound: float, size: int, m: int, penalty_model: str) -> float:
    if penalty_model == "bic":
        penalty = 0.5 * np.log(m) * (2 + size)
    elif penalty_model == "none":
        penalty = 0.0
    else:
        raise ValueError(f"unknown penalty model {penalty_model!r}")
    # root log-likelihood of a standardized profile at its MLE (mean 0, var 1)
    return bound - penalty - m * HALF_LOG_2PI_E


def cluster_bic_estimate(cluster: ClusterCandidate, m: int, penalty_model: str = "bic",
                         similarity: str = "c2") -> float:
    """Estimated BIC change of adding a hidden parent to the cluster.

    Likelihood bound (C1 from the eigenproblem, or C2 rescoring of each member
    against the same profile) minus the penalty for the new parameters (root
    mean and variance plus one scale per member), plus the root log-likelihood
    of the standardized profile.
    """
    if similarity == "c1":
        bound = cluster.bound_c1
    elif similarity == "c2":
        bound = cluster.bound_c2
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    return _estimate(bound, cluster.size, m, penalty_model)


@dataclass
class MergeStep:
    members: tuple
    merge_score: float
    accept_score: float


def agglomerate_clusters(profiles: Mapping[int, IdealProfile] | Sequence[IdealProfile],
                         m: int | None = None, *, merge_similarity: str = "c1",
                         accept_similarity: str = "c2", penalty_model: str = "bic",
                         min_size: int = 2, return_tree: bool = False):
    """Greedy agglomerative search for the best hidden-parent cluster.

    Starts from singletons and repeatedly merges the pair whose union has the
    best estimate under ``merge_similarity``. Every cluster visited is scored
    with ``accept_similarity`` and the best one with at least ``min_size``
    members is returned. A singleton is perfectly collinear with its own
    profile, so its C2 score is the floor cap and carries no information.
    All eigenproblems use submatrices of one precomputed Gram matrix.
    """
    if isinstance(profiles, Mapping):
        ids = list(profiles.keys())
        plist = [profiles[i] for i in ids]
    else:
        plist = list(profiles)
        ids = list(range(len(plist)))
    if len(plist) < max(min_size, 1):
        raise EmptyClusterError(f"fewer than {max(min_size, 1)} eligible variables")
    m = plist[0].m if m is None else m
    y = np.column_stack([_scaled_column(p) for p in plist])
    gram_all = y.T @ y
    corr = [_corrections([p]) for p in plist]

    def scores(members: tuple) -> tuple[float, float]:
        sub = gram_all[np.ix_(members, members)]
        gamma, lam = _top_eig(sub)
        if gamma <= 0.0:
            return -np.inf, -np.inf
        k1 = sum(corr[i][0] for i in members)
        k2 = sum(corr[i][1] for i in members)
        b1 = 0.5 * gamma - k1
        b2 = _c2_from_gram(sub, gamma, lam, m) - k2
        out = {"c1": b1, "c2": b2}
        return (_estimate(out[merge_similarity], len(members), m, penalty_model),
                _estimate(out[accept_similarity], len(members), m, penalty_model))

    active = [(i,) for i in range(len(plist))]
    tree = []
    for c in active:
        tree.append(MergeStep(c, *scores(c)))
    pair_cache: dict[tuple, tuple[float, float, tuple]] = {}

    def pair(a: tuple, b: tuple):
        key = (a, b)
        if key not in pair_cache:
            merged = tuple(sorted(a + b))
            pair_cache[key] = (*scores(merged), merged)
        return pair_cache[key]

    while len(active) > 1:
        best = None
        for i in range(len(active)):
            for j in range(i + 1, len(active)):
                ms, acc, merged = pair(active[i], active[j])
                if best is None or ms > best[0]:
                    best = (ms, acc, merged, i, j)
        ms, acc, merged, i, j = best
        tree.append(MergeStep(merged, ms, acc))
        active = [c for t, c in enumerate(active) if t not in (i, j)] + [merged]

    top = max((s for s in tree if len(s.members) >= min_size), key=lambda s: s.accept_score)
    best_cluster = optimal_hidden_profile([plist[i] for i in top.members],
                                          members=[ids[i] for i in top.members])
    best_cluster.bic_delta_estimate = cluster_bic_estimate(
        best_cluster, m, penalty_model, accept_similarity)
    if return_tree:
        return best_cluster, [MergeStep(tuple(ids[i] for i in s.members), s.merge_score,
                                        s.accept_score) for s in tree]
    return best_cluster


@dataclass
class HiddenInsertion:
    graph: NetworkGraph
    node: int
    init_profile: np.ndarray
    skipped: list


def standardize_profile(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float) - np.mean(z)
    sd = z.std()
    if sd <= 0:
        raise EmptyClusterError("constant hidden profile")
    return z / sd


def insert_hidden_variable(graph: NetworkGraph, cluster: ClusterCandidate,
                           name: str | None = None) -> HiddenInsertion:
    """Add a hidden root parent for the cluster members.

    The root gets a standard normal CPD; each member gains the edge with its
    C1-optimal scale against the standardized cluster profile, which is also
    returned as the initial posterior mean of the new variable. Members that
    cannot take another parent are skipped and reported.
    """
    g = graph.copy()
    if name is None:
        k = 0
        while f"H{k}" in g.names:
            k += 1
        name = f"H{k}"
    h = g.add_node(Node(name, hidden=True, kind=CPDKind.LINEAR), FamilyParams([], [0.0], 1.0))
    z = standardize_profile(cluster.zstar)
    skipped = []
    for member, prof in zip(cluster.members, cluster.profiles):
        child = g.index(member)
        cap = g.max_in_degree
        if (cap is not None and len(g.parents[child]) >= cap) or (
                g.two_layer and g.nodes[child].hidden):
            skipped.append(member)
            continue
        if g.params[child] is None:
            raise StructureError(f"member {member!r} has no fitted family")
        w = prof.weights
        zw, yw = z * w, prof.y * w
        alpha = float(zw @ yw) / float(zw @ zw)
        g.add_edge(h, child, alpha)
        if g.nodes[child].kind is CPDKind.LINEAR:
            resid = prof.y - alpha * z
            g.params[child].sigma2 = max(float(resid @ resid) / len(z), VARIANCE_FLOOR)
    return HiddenInsertion(g, h, z, skipped)
