"""Conditional densities: evaluation, maximum-likelihood fitting and BIC scoring.

Both CPD kinds put Gaussian noise around a link of the scaled parent sum:

* linear:  mean = sum_j alpha_j u_j + theta0
* sigmoid: mean = theta1 * logistic(sum_j alpha_j u_j) + theta0

All log-likelihoods are in nats. Fitting optionally accepts per-instance
posterior variances of the child and parents, in which case the returned
log-likelihood is the expectation under a fully factorized posterior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit

from .model import CPDKind, Dataset, FamilyParams, NetworkGraph

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
RIDGE = 1e-8
LOG_2PI = np.log(2.0 * np.pi)

SIGMOID_GTOL = 1e-6
SIGMOID_MAXITER = 200


def _as_matrix(parents, m: int) -> np.ndarray:
    if parents is None:
        return np.zeros((m, 0))
    u = np.asarray(parents, dtype=float)
    if u.ndim == 1:
        u = u.reshape(m, -1) if u.size else np.zeros((m, 0))
    return u


def family_dim(kind: CPDKind, n_parents: int) -> int:
    """Free parameters of a family: scales + link parameters + noise variance."""
    return n_parents + (2 if CPDKind(kind) is CPDKind.LINEAR else 3)


def predict_mean(kind: CPDKind, params: FamilyParams, parent_values) -> np.ndarray | float:
    """Mean of the child given parent values.

    ``parent_values`` is either one value per parent (returns a float) or an
    M x k matrix (returns a length-M vector).
    """
    u = np.asarray(parent_values, dtype=float)
    scalar = u.ndim <= 1
    u = u.reshape(1, -1) if scalar else u
    eta = u @ params.alpha if params.alpha.size else np.zeros(u.shape[0])
    if CPDKind(kind) is CPDKind.LINEAR:
        out = eta + params.theta[0]
    else:
        out = params.theta[1] * expit(eta) + params.theta[0]
    return float(out[0]) if scalar else out


def gaussian_loglik(sse: float, sigma2: float, m: int) -> float:
    """Sum of M Gaussian log-densities with total squared residual ``sse``."""
    return -0.5 * (m * (LOG_2PI + np.log(sigma2)) + sse / sigma2)


def family_loglik(kind: CPDKind, params: FamilyParams, child, parents=None) -> float:
    """Log-likelihood of a fully observed family at the given parameters."""
    x = np.asarray(child, dtype=float)
    u = _as_matrix(parents, len(x))
    sigma2 = params.sigma2
    if sigma2 < VARIANCE_FLOOR:
        log.warning("noise variance %g below floor; clamped", sigma2)
        sigma2 = VARIANCE_FLOOR
    r = x - predict_mean(kind, params, u)
    return gaussian_loglik(float(r @ r), sigma2, len(x))


def expected_sse(kind: CPDKind, params: FamilyParams, child, parents=None,
                 child_var=None, parent_var=None) -> float:
    """Expected squared residual under a factorized posterior over the cells.

    Exact for linear families given first and second moments. For sigmoid
    families the link is linearized at the posterior mean (delta method).
    """
    x = np.asarray(child, dtype=float)
    u = _as_matrix(parents, len(x))
    r = x - predict_mean(kind, params, u)
    sse = float(r @ r)
    if child_var is not None:
        sse += float(np.sum(child_var))
    if parent_var is not None and params.alpha.size:
        pv = _as_matrix(parent_var, len(x))
        a2 = params.alpha ** 2
        if CPDKind(kind) is CPDKind.LINEAR:
            sse += float(pv.sum(axis=0) @ a2)
        else:
            s = expit(u @ params.alpha)
            slope = params.theta[1] * s * (1.0 - s)
            sse += float((slope ** 2) @ (pv @ a2))
    return sse


@dataclass
class FittedFamily:
    params: FamilyParams
    loglik: float
    dim: int
    m: int

    @property
    def bic(self) -> float:
        return self.loglik - 0.5 * np.log(self.m) * self.dim


def fit_linear_gaussian(child, parents=None, *, child_var=None, parent_var=None,
                        ridge: float = RIDGE) -> FamilyParams:
    """Ridge-stabilized least squares for a linear Gaussian family.

    The intercept is left unpenalized (the regression is run on centered
    columns), so with no parents theta0 is the sample mean and sigma2 the
    (biased) sample variance. Posterior variances of parents enter the
    normal equations as a diagonal term.
    """
    x = np.asarray(child, dtype=float)
    m = len(x)
    u = _as_matrix(parents, m)
    k = u.shape[1]
    flags = set()
    x_mean = x.mean()
    if k == 0:
        alpha = np.zeros(0)
        theta0 = x_mean
    else:
        u_mean = u.mean(axis=0)
        uc = u - u_mean
        gram = uc.T @ uc
        if parent_var is not None:
            gram = gram + np.diag(_as_matrix(parent_var, m).sum(axis=0))
        if k > 1 and np.linalg.cond(gram) > 1e10:
            flags.add("ridge")
        gram[np.diag_indices(k)] += ridge
        alpha = np.linalg.solve(gram, uc.T @ (x - x_mean))
        theta0 = x_mean - u_mean @ alpha
    params = FamilyParams(alpha, [theta0], 1.0)
    sse = expected_sse(CPDKind.LINEAR, params, x, u, child_var, parent_var)
    if sse / m < VARIANCE_FLOOR:
        flags.add("variance_floor")
    params.sigma2 = max(sse / m, VARIANCE_FLOOR)
    params.flags = frozenset(flags)
    return params


def sigmoid_objective(vec: np.ndarray, child: np.ndarray, parents: np.ndarray):
    """Half mean squared residual of a sigmoid family and its analytic gradient.

    ``vec`` packs ``[alpha_1..alpha_k, theta0, theta1]``.
    """
    k = parents.shape[1]
    alpha, theta0, theta1 = vec[:k], vec[k], vec[k + 1]
    s = expit(parents @ alpha)
    r = child - (theta1 * s + theta0)
    m = len(child)
    f = 0.5 * float(r @ r) / m
    grad = np.empty(k + 2)
    grad[:k] = -(parents.T @ (r * theta1 * s * (1.0 - s))) / m
    grad[k] = -r.sum() / m
    grad[k + 1] = -(r @ s) / m
    return f, grad


def default_sigmoid_init(child, n_parents: int) -> FamilyParams:
    x = np.asarray(child, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    return FamilyParams(np.zeros(n_parents), [lo, max(hi - lo, 1e-3)], 1.0)


def fit_sigmoid(child, parents=None, init: FamilyParams | None = None, *,
                restarts: int = 3, seed: int = 0, child_var=None,
                parent_var=None) -> FamilyParams:
    """Locally optimal sigmoid family by L-BFGS on the squared residual.

    Starts from ``init`` (if given), the default initialization
    (theta0 = min x, theta1 = range of x, alpha = 0), and ``restarts``
    jittered copies of the default; the best optimum is kept. Noise variance
    is the mean (expected) squared residual at the optimum.
    """
    x = np.asarray(child, dtype=float)
    m = len(x)
    u = _as_matrix(parents, m)
    k = u.shape[1]
    base = default_sigmoid_init(x, k)
    base_vec = np.concatenate([base.alpha, base.theta])
    starts = []
    if init is not None:
        starts.append(np.concatenate([init.alpha, init.theta]))
    starts.append(base_vec)
    rng = np.random.default_rng(seed)
    spread = np.concatenate([np.ones(k), [0.1 * base.theta[1], 0.2 * base.theta[1]]])
    for _ in range(restarts):
        starts.append(base_vec + rng.normal(size=k + 2) * spread)

    best, best_f, converged = None, np.inf, False
    for x0 in starts:
        res = optimize.minimize(
            sigmoid_objective, x0, args=(x, u), jac=True, method="L-BFGS-B",
            options={"gtol": SIGMOID_GTOL, "maxiter": SIGMOID_MAXITER},
        )
        if res.fun < best_f:
            best, best_f = res.x, res.fun
        converged |= bool(np.max(np.abs(res.jac), initial=0.0) < SIGMOID_GTOL or res.success)
    theta1 = best[k + 1]
    if abs(theta1) < 1e-12:
        theta1 = 1e-12 if theta1 >= 0 else -1e-12
    params = FamilyParams(best[:k], [best[k], theta1], 1.0)
    flags = set() if converged else {"nonconverged"}
    sse = expected_sse(CPDKind.SIGMOID, params, x, u, child_var, parent_var)
    if sse / m < VARIANCE_FLOOR:
        flags.add("variance_floor")
    params.sigma2 = max(sse / m, VARIANCE_FLOOR)
    params.flags = frozenset(flags)
    return params


def fit_family(kind: CPDKind, child, parents=None, *, child_var=None, parent_var=None,
               init: FamilyParams | None = None, restarts: int = 3,
               seed: int = 0) -> FittedFamily:
    """Fit a family of either kind and return parameters with their log-likelihood."""
    kind = CPDKind(kind)
    x = np.asarray(child, dtype=float)
    u = _as_matrix(parents, len(x))
    if kind is CPDKind.LINEAR or u.shape[1] == 0:
        # a parentless sigmoid is a constant mean; its optimum is the linear one
        params = fit_linear_gaussian(x, u, child_var=child_var, parent_var=parent_var)
        if kind is CPDKind.SIGMOID:
            span = max(float(x.max() - x.min()), 1e-3)
            params = FamilyParams(params.alpha, [params.theta[0] - 0.5 * span, span],
                                  params.sigma2, params.flags)
    else:
        params = fit_sigmoid(x, u, init, restarts=restarts, seed=seed,
                             child_var=child_var, parent_var=parent_var)
    sse = params.sigma2 * len(x)
    if "variance_floor" in params.flags:
        sse = expected_sse(kind, params, x, u, child_var, parent_var)
    loglik = gaussian_loglik(sse, params.sigma2, len(x))
    return FittedFamily(params, loglik, family_dim(kind, u.shape[1]), len(x))


# -- network-level scoring -----------------------------------------------------

@dataclass
class FamilyScore:
    loglik: float
    dim: int
    bic: float


@dataclass
class BICScore:
    families: dict[str, FamilyScore]
    total: float

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.families.values())

    @property
    def loglik(self) -> float:
        return sum(f.loglik for f in self.families.values())


def _complete_columns(graph: NetworkGraph, data: Dataset) -> np.ndarray:
    cols = []
    for node in graph.nodes:
        if node.name not in data.names:
            raise ValueError(f"node {node.name!r} has no data column; "
                             "use the expected-score functions for hidden variables")
        j = data.names.index(node.name)
        if not data.observed[:, j].all():
            raise ValueError(f"column {node.name!r} has missing values; "
                             "use the expected-score functions")
        cols.append(data.values[:, j])
    return np.column_stack(cols)


def bic_score(graph: NetworkGraph, data: Dataset) -> BICScore:
    """BIC of a fully parameterized graph on complete data.

    total = sum of family log-likelihoods - (log M / 2) * Dim[G].
    """
    x = _complete_columns(graph, data)
    m = x.shape[0]
    half_log_m = 0.5 * np.log(m)
    families = {}
    for i, node in enumerate(graph.nodes):
        params = graph.params[i]
        if params is None:
            raise ValueError(f"family {node.name!r} has no parameters")
        ll = family_loglik(node.kind, params, x[:, i], x[:, graph.parents[i]])
        dim = family_dim(node.kind, len(graph.parents[i]))
        families[node.name] = FamilyScore(ll, dim, ll - half_log_m * dim)
    total = sum(f.loglik for f in families.values()) - half_log_m * sum(
        f.dim for f in families.values())
    return BICScore(families, total)


def delta_family_score_exact(graph: NetworkGraph, data: Dataset, child, new_parents,
                             *, penalized: bool = False, restarts: int = 3) -> float:
    """Exact change in a family's log-likelihood when its parent set changes.

    The family is refitted from scratch for ``new_parents``; the reference is
    the log-likelihood at the graph's current parameters. With
    ``penalized=True`` the BIC penalty difference is included.
    """
    x = _complete_columns(graph, data)
    c = graph.index(child)
    kind = graph.nodes[c].kind
    new = sorted(graph.index(p) for p in new_parents)
    current = graph.parents[c]
    ll_old = family_loglik(kind, graph.params[c], x[:, c], x[:, current])
    init = None
    if kind is CPDKind.SIGMOID and graph.params[c] is not None:
        old = dict(zip(current, graph.params[c].alpha))
        init = FamilyParams([old.get(p, 0.0) for p in new], graph.params[c].theta, 1.0)
    fit = fit_family(kind, x[:, c], x[:, new], init=init, restarts=restarts)
    delta = fit.loglik - ll_old
    if penalized:
        delta -= 0.5 * np.log(x.shape[0]) * (family_dim(kind, len(new))
                                             - family_dim(kind, len(current)))
    return float(delta)


def fit_graph(graph: NetworkGraph, data: Dataset, restarts: int = 3) -> NetworkGraph:
    """Refit every family of ``graph`` on complete data (in place)."""
    x = _complete_columns(graph, data)
    for i, node in enumerate(graph.nodes):
        init = graph.params[i]
        if init is not None and len(init.alpha) != len(graph.parents[i]):
            init = None
        fit = fit_family(node.kind, x[:, i], x[:, graph.parents[i]], restarts=restarts,
                         init=init if node.kind is CPDKind.SIGMOID else None)
        graph.params[i] = fit.params
    return graph
