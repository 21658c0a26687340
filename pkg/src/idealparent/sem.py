"""Structural EM with a mean-field posterior over hidden variables and missing cells.

The posterior ``Q`` factorizes over every unobserved cell and is summarized
by per-cell means and variances. Linear Gaussian neighbourhoods give closed
form coordinate updates; sigmoid children are handled with a Gaussian factor
at the conditional mode whose variance matches the (Gauss-Newton) curvature.

The outer loop alternates E-steps with a structure search on the expected
BIC, and in two-layer mode introduces hidden variables one at a time.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .cpd import (LOG_2PI, FamilyScore, expected_sse, family_dim, fit_family,
                  gaussian_loglik, predict_mean)
from .hidden import (ClusterCandidate, agglomerate_clusters, insert_hidden_variable,
                     optimal_hidden_profile)
from .ideal import IdealProfile, ideal_profile
from .model import CPDKind, Dataset, NetworkGraph
from .search import SearchConfig, greedy_search

log = logging.getLogger(__name__)


@dataclass
class PosteriorMoments:
    """Per-cell posterior means and variances (observed cells have variance 0)."""

    names: list[str]
    mean: np.ndarray
    var: np.ndarray
    observed: np.ndarray
    elbo_history: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def second(self) -> np.ndarray:
        return self.mean ** 2 + self.var

    @property
    def n_unobserved(self) -> int:
        return int((~self.observed).sum())

    def column(self, name: str) -> int:
        return self.names.index(name)

    def copy(self) -> "PosteriorMoments":
        return PosteriorMoments(list(self.names), self.mean.copy(), self.var.copy(),
                                self.observed.copy(), list(self.elbo_history), self.converged)

    def aligned(self, graph: NetworkGraph) -> "PosteriorMoments":
        idx = [self.names.index(n) for n in graph.names]
        return PosteriorMoments(graph.names, self.mean[:, idx].copy(), self.var[:, idx].copy(),
                                self.observed[:, idx].copy(), list(self.elbo_history),
                                self.converged)

    def with_column(self, name: str, mean, var) -> "PosteriorMoments":
        m = self.mean.shape[0]
        return PosteriorMoments(
            self.names + [name],
            np.column_stack([self.mean, np.broadcast_to(mean, m)]),
            np.column_stack([self.var, np.broadcast_to(var, m)]),
            np.column_stack([self.observed, np.zeros(m, dtype=bool)]),
        )


def initial_moments(graph: NetworkGraph, data: Dataset,
                    hidden_init: dict | None = None) -> PosteriorMoments:
    """Observed cells as point masses; missing cells at the column's observed mean
    and variance; hidden columns from ``hidden_init`` (or zero mean, unit variance).
    """
    m = data.n_instances
    n = graph.n_nodes
    mean = np.zeros((m, n))
    var = np.zeros((m, n))
    observed = np.zeros((m, n), dtype=bool)
    hidden_init = hidden_init or {}
    for i, node in enumerate(graph.nodes):
        if node.name in data.names:
            j = data.names.index(node.name)
            obs = data.observed[:, j]
            col = data.values[:, j]
            mu = col[obs].mean() if obs.any() else 0.0
            vv = col[obs].var() if obs.sum() > 1 else 1.0
            mean[:, i] = np.where(obs, col, mu)
            var[:, i] = np.where(obs, 0.0, vv)
            observed[:, i] = obs
        else:
            mean[:, i] = hidden_init.get(node.name, 0.0)
            var[:, i] = 0.0 if node.name in hidden_init else 1.0
    return PosteriorMoments(graph.names, mean, var, observed)


# -- expected scores ---------------------------------------------------------

def expected_family_loglik(kind: CPDKind, params, child_mean, parent_means,
                           child_var=None, parent_var=None) -> float:
    """E_Q[log p(x | u)] for one family at fixed parameters."""
    sse = expected_sse(kind, params, child_mean, parent_means, child_var, parent_var)
    return gaussian_loglik(sse, params.sigma2, len(np.asarray(child_mean)))


def _family_arrays(q: PosteriorMoments, graph: NetworkGraph, child: int, parents):
    ci = q.names.index(graph.names[child])
    pi = [q.names.index(graph.names[p]) for p in parents]
    return q.mean[:, ci], q.mean[:, pi], q.var[:, ci], q.var[:, pi]


def expected_family_score(graph: NetworkGraph, data: Dataset | None, q: PosteriorMoments,
                          child, parents) -> FamilyScore:
    """Refit a family on expected statistics and return its expected score."""
    c = graph.index(child)
    parents = sorted(graph.index(p) for p in parents)
    names = [graph.names[c]] + [graph.names[p] for p in parents]
    missing = [n for n in names if n not in q.names]
    if missing:
        raise KeyError(f"no posterior moments for {missing}")
    x, u, vx, vu = _family_arrays(q, graph, c, parents)
    kind = graph.nodes[c].kind
    fit = fit_family(kind, x, u, child_var=vx if vx.any() else None,
                     parent_var=vu if vu.any() else None)
    return FamilyScore(fit.loglik, fit.dim, fit.bic)


def expected_bic(graph: NetworkGraph, q: PosteriorMoments) -> float:
    """Expected BIC of the graph at its current parameters."""
    m = q.mean.shape[0]
    total = 0.0
    for i, node in enumerate(graph.nodes):
        x, u, vx, vu = _family_arrays(q, graph, i, graph.parents[i])
        total += expected_family_loglik(node.kind, graph.params[i], x, u, vx, vu)
        total -= 0.5 * np.log(m) * family_dim(node.kind, len(graph.parents[i]))
    return float(total)


def posterior_entropy(q: PosteriorMoments) -> float:
    v = q.var[~q.observed]
    if np.any(v <= 0):
        return -np.inf
    return float(0.5 * np.sum(LOG_2PI + 1.0 + np.log(v)))


def elbo(graph: NetworkGraph, q: PosteriorMoments) -> float:
    """Variational lower bound on the observed-data log-likelihood."""
    m = q.mean.shape[0]
    pen = 0.5 * np.log(m) * sum(family_dim(n.kind, len(graph.parents[i]))
                                for i, n in enumerate(graph.nodes))
    return expected_bic(graph, q) + pen + posterior_entropy(q)


def expected_ideal_profile(graph: NetworkGraph, data: Dataset | None, q: PosteriorMoments,
                           child) -> IdealProfile:
    """Ideal profile matched to posterior expectations (moment plug-in for sigmoid)."""
    c = graph.index(child)
    x, u, _, _ = _family_arrays(q, graph, c, graph.parents[c])
    return ideal_profile(graph.nodes[c].kind, x, u, graph.params[c])


# -- E-step ------------------------------------------------------------------

def mean_field_e_step(graph: NetworkGraph, data: Dataset | None, prev: PosteriorMoments, *,
                      tol: float = 1e-6, max_sweeps: int = 50) -> PosteriorMoments:
    """Coordinate-ascent mean-field updates of every unobserved cell.

    Sweeps over variables in node order, updating all instances of a variable
    at once, until the largest change in any posterior mean is below ``tol``.
    The variational objective after each sweep is kept in ``elbo_history``.
    """
    q = prev.aligned(graph)
    unobs = ~q.observed
    targets = [j for j in range(graph.n_nodes) if unobs[:, j].any()]
    if not targets:
        q.elbo_history = []
        return q
    mu, var = q.mean, q.var
    children = [graph.children(j) for j in range(graph.n_nodes)]
    history = []
    converged = False
    for _ in range(max_sweeps):
        change = 0.0
        for j in targets:
            rows = unobs[:, j]
            new, new_var = _update_variable(graph, j, children[j], mu[rows], var[rows],
                                            mu[rows, j])
            change = max(change, float(np.max(np.abs(new - mu[rows, j]))))
            mu[rows, j] = new
            var[rows, j] = new_var
        history.append(elbo(graph, q))
        if change < tol:
            converged = True
            break
    if not converged:
        log.info("mean-field E-step stopped after %d sweeps", max_sweeps)
    q.elbo_history = history
    q.converged = converged
    return q


def _update_variable(graph: NetworkGraph, j: int, kids, mu_rows: np.ndarray,
                     var_rows: np.ndarray, current: np.ndarray):
    node = graph.nodes[j]
    own = graph.params[j]
    prior = predict_mean(node.kind, own, mu_rows[:, graph.parents[j]])
    prior = np.broadcast_to(prior, current.shape).astype(float)
    prec = np.full(current.shape, 1.0 / own.sigma2)
    lin = prior / own.sigma2
    nonlinear = []
    for c in kids:
        pc = graph.params[c]
        pos = graph.parents[c].index(j)
        a = pc.alpha[pos]
        others = [p for p in graph.parents[c] if p != j]
        a_others = np.delete(pc.alpha, pos)
        rest = mu_rows[:, others] @ a_others if others else np.zeros(len(current))
        if graph.nodes[c].kind is CPDKind.LINEAR:
            prec = prec + a * a / pc.sigma2
            lin = lin + a * (mu_rows[:, c] - rest - pc.theta[0]) / pc.sigma2
        else:
            # posterior variance the child's link sees from its other parents
            other_var = var_rows[:, others] @ (a_others ** 2) if others else 0.0
            nonlinear.append((a, rest, other_var, mu_rows[:, c], var_rows[:, c], pc))
    if not nonlinear:
        return lin / prec, 1.0 / prec

    def curvature(h):
        curv = prec.copy()
        for a, rest, _, _, _, pc in nonlinear:
            s = expit(rest + a * h)
            jac = pc.theta[1] * s * (1.0 - s) * a
            curv = curv + jac * jac / pc.sigma2
        return curv

    def local_bound(h, v):
        # terms of the bound that involve this variable, per instance
        out = -((h - prior) ** 2 + v) / (2.0 * own.sigma2) + 0.5 * np.log(v)
        out = out - 0.5 * (prec - 1.0 / own.sigma2) * v
        out = out - 0.5 * (prec - 1.0 / own.sigma2) * h * h + (lin - prior / own.sigma2) * h
        for a, rest, other_var, xc, vc, pc in nonlinear:
            s = expit(rest + a * h)
            slope = pc.theta[1] * s * (1.0 - s)
            r = xc - (pc.theta[1] * s + pc.theta[0])
            out = out - (r * r + vc + slope ** 2 * (a * a * v + other_var)) / (2.0 * pc.sigma2)
        return out

    h = current.astype(float).copy()
    for _ in range(30):
        grad = lin - prec * h
        curv = prec.copy()
        for a, rest, _, xc, _, pc in nonlinear:
            s = expit(rest + a * h)
            r = xc - (pc.theta[1] * s + pc.theta[0])
            jac = pc.theta[1] * s * (1.0 - s) * a
            grad = grad + jac * r / pc.sigma2
            curv = curv + jac * jac / pc.sigma2
        step = grad / curv
        h = h + step
        if np.max(np.abs(step)) < 1e-10:
            break
    v = 1.0 / curvature(h)
    # the factor is an approximation; keep the old cell wherever it scores better
    old_v = var_rows[:, j]
    if np.all(old_v > 0):
        keep = local_bound(current, old_v) > local_bound(h, v)
        h = np.where(keep, current, h)
        v = np.where(keep, old_v, v)
    return h, v


def standardize_hidden(graph: NetworkGraph, q: PosteriorMoments):
    """Rescale each hidden variable to zero mean and unit second moment.

    Parameters are adjusted so that the model is unchanged. Hidden variables
    with sigmoid children are only rescaled, since a shift cannot be absorbed
    inside the sigmoid.
    """
    g = graph.copy()
    q = q.aligned(g)
    for j in g.hidden_indices():
        kids = g.children(j)
        if g.nodes[j].kind is not CPDKind.LINEAR:
            continue
        mu, v = q.mean[:, j], q.var[:, j]
        shift = float(mu.mean())
        if any(g.nodes[c].kind is not CPDKind.LINEAR for c in kids):
            shift = 0.0
        scale2 = float(np.mean(mu ** 2 + v)) - shift ** 2
        if scale2 <= 1e-12:
            continue
        s = np.sqrt(scale2)
        q.mean[:, j] = (mu - shift) / s
        q.var[:, j] = v / (s * s)
        own = g.params[j].copy()
        own.alpha = own.alpha / s
        own.theta = np.array([(own.theta[0] - shift) / s])
        own.sigma2 = own.sigma2 / (s * s)
        g.params[j] = own
        for c in kids:
            pc = g.params[c].copy()
            pos = g.parents[c].index(j)
            if g.nodes[c].kind is CPDKind.LINEAR:
                pc.theta = pc.theta.copy()
                pc.theta[0] += pc.alpha[pos] * shift
            pc.alpha = pc.alpha.copy()
            pc.alpha[pos] *= s
            g.params[c] = pc
    return g, q


# -- outer loop ----------------------------------------------------------------

@dataclass
class SEMTrace:
    records: list[dict] = field(default_factory=list)
    exact_evals: Counter = field(default_factory=Counter)
    move_evals: Counter = field(default_factory=Counter)
    screening_evals: int = 0
    wall_seconds: float = 0.0
    mode: str = ""
    k: int | None = None

    @property
    def addrep_evals(self) -> int:
        return self.exact_evals["add"] + self.exact_evals["replace"]

    @property
    def addrep_moves(self) -> int:
        return self.move_evals["add"] + self.move_evals["replace"]

    @property
    def total_exact_evals(self) -> int:
        return sum(self.exact_evals.values())

    @property
    def moves_taken(self) -> int:
        return sum(r.get("moves", 0) for r in self.records)

    @property
    def final_score(self) -> float:
        scores = [r["score"] for r in self.records if "score" in r]
        return max(scores) if scores else float("nan")


@dataclass
class SEMResult:
    graph: NetworkGraph
    moments: PosteriorMoments | None
    score: float
    trace: object


def _penalty(graph: NetworkGraph, m: int) -> float:
    return 0.5 * np.log(m) * sum(family_dim(n.kind, len(graph.parents[i]))
                                 for i, n in enumerate(graph.nodes))


class _StructuralEM:
    def __init__(self, data: Dataset, config: SearchConfig, max_outer: int, tol: float,
                 max_hidden: int | None, e_tol: float, e_sweeps: int):
        self.data = data
        self.config = config
        self.mstep = dataclasses.replace(config, restarts=0)
        self.max_outer = max_outer
        self.tol = tol
        self.max_hidden = max_hidden
        self.e_tol = e_tol
        self.e_sweeps = e_sweeps
        self.m = data.n_instances
        self.trace = SEMTrace(mode=config.mode, k=config.k)
        self.rng = np.random.default_rng(config.seed)

    def em(self, graph: NetworkGraph, q: PosteriorMoments, stage: str):
        prev = -np.inf
        score = -np.inf
        for outer in range(self.max_outer):
            q = mean_field_e_step(graph, self.data, q, tol=self.e_tol, max_sweeps=self.e_sweeps)
            e_hist = list(q.elbo_history)
            graph, q = standardize_hidden(graph, q)
            res = greedy_search(q, self.mstep, graph)
            graph = res.graph
            t = res.trace
            self.trace.exact_evals.update(t.exact_evals)
            self.trace.move_evals.update(t.move_evals)
            self.trace.screening_evals += t.screening_evals
            score = res.score + posterior_entropy(q)
            self.trace.records.append({
                "stage": stage,
                "outer": outer,
                "n_hidden": len(graph.hidden_indices()),
                "e_step_elbo": e_hist,
                "m_step_scores": [t.initial_score] + [r["score"] for r in t.records
                                                      if r["phase"] == "climb"],
                "moves": t.moves_taken,
                "expected_bic": res.score,
                "score": score,
            })
            if score - prev < self.tol:
                break
            prev = score
        return graph, q, score

    def eligible(self, graph: NetworkGraph) -> list[int]:
        cap = graph.max_in_degree
        return [i for i in graph.observed_indices()
                if cap is None or len(graph.parents[i]) < cap]

    def propose(self, graph: NetworkGraph, q: PosteriorMoments, first: bool):
        members = self.eligible(graph)
        if len(members) < 2:
            return None
        profiles = {i: expected_ideal_profile(graph, self.data, q, i) for i in members}
        if self.config.mode == "ideal" and not first:
            cluster = agglomerate_clusters(profiles, self.m)
            if cluster.size < 2 or cluster.bic_delta_estimate <= 0:
                return None
            return cluster
        cluster = optimal_hidden_profile([profiles[i] for i in members], members=members)
        if self.config.mode == "greedy":
            cluster.zstar = self.rng.standard_normal(self.m)
        return cluster

    def insert(self, graph: NetworkGraph, q: PosteriorMoments, cluster: ClusterCandidate):
        ins = insert_hidden_variable(graph, cluster)
        q2 = q.aligned(graph).with_column(ins.graph.names[ins.node], ins.init_profile, 0.0)
        return ins.graph, q2

    def run_two_layer(self) -> SEMResult:
        cfg = self.config
        names = self.data.names
        graph = NetworkGraph.empty(names, cfg.cpd, two_layer=True,
                                   max_in_degree=cfg.max_in_degree or 2)
        q = initial_moments(graph, self.data)
        for i, node in enumerate(graph.nodes):
            fit = fit_family(node.kind, q.mean[:, i], None,
                             child_var=q.var[:, i] if q.var[:, i].any() else None)
            graph.params[i] = fit.params
        graph, q = self.insert(graph, q, self.propose(graph, q, first=True))
        graph, q, score = self.em(graph, q, "hidden-1")
        while self.max_hidden is None or len(graph.hidden_indices()) < self.max_hidden:
            cluster = self.propose(graph, q, first=False)
            if cluster is None:
                break
            g2, q2 = self.insert(graph, q, cluster)
            g2, q2, s2 = self.em(g2, q2, f"hidden-{len(g2.hidden_indices())}")
            accepted = s2 > score + self.tol
            self.trace.records.append({"stage": "hidden-proposal", "members": [
                graph.names[i] for i in cluster.members], "score_before": score,
                "score_after": s2, "accepted": accepted})
            if not accepted:
                break
            graph, q, score = g2, q2, s2
        return SEMResult(graph, q, score, self.trace)

    def run_missing(self, initial_graph: NetworkGraph | None) -> SEMResult:
        cfg = self.config
        if initial_graph is None:
            graph = NetworkGraph.empty(self.data.names, cfg.cpd,
                                       max_in_degree=cfg.max_in_degree)
        else:
            graph = initial_graph.copy()
        q = initial_moments(graph, self.data)
        for i, node in enumerate(graph.nodes):
            if graph.params[i] is None or len(graph.params[i].alpha) != len(graph.parents[i]):
                x, u, vx, vu = _family_arrays(q, graph, i, graph.parents[i])
                graph.params[i] = fit_family(node.kind, x, u,
                                             child_var=vx if vx.any() else None,
                                             parent_var=vu if vu.any() else None).params
        graph, q, score = self.em(graph, q, "missing")
        return SEMResult(graph, q, score, self.trace)


def structural_em(data: Dataset, config: SearchConfig, *,
                  initial_graph: NetworkGraph | None = None, max_outer: int = 50,
                  tol: float = 1e-4, max_hidden: int | None = None, e_tol: float = 1e-6,
                  e_sweeps: int = 50) -> SEMResult:
    """Structural EM over expected BIC.

    With complete data and no hidden variables this is a single
    :func:`greedy_search`. With missing cells it alternates mean-field E-steps
    and structure search until the bound on the penalized observed-data
    likelihood improves by less than ``tol``. In two-layer mode
    (``config.two_layer``) it starts from one hidden parent of every observed
    variable and adds hidden variables one at a time (the best agglomerated
    cluster in ideal mode, all eligible variables in greedy mode) until one no
    longer improves the score.
    """
    t0 = time.perf_counter()
    has_hidden = initial_graph is not None and bool(initial_graph.hidden_indices())
    if data.fully_observed and not config.two_layer and not has_hidden:
        res = greedy_search(data, config, initial_graph)
        return SEMResult(res.graph, None, res.score, res.trace)
    sem = _StructuralEM(data, config, max_outer, tol, max_hidden, e_tol, e_sweeps)
    if config.two_layer:
        out = sem.run_two_layer()
    else:
        out = sem.run_missing(initial_graph)
    sem.trace.wall_seconds = time.perf_counter() - t0
    return out
