import numpy as np
import pytest
from scipy.special import expit

from idealparent.cpd import (VARIANCE_FLOOR, bic_score, delta_family_score_exact, expected_sse,
                             family_dim, family_loglik, fit_family, fit_graph,
                             fit_linear_gaussian, fit_sigmoid, predict_mean, sigmoid_objective)
from idealparent.model import CPDKind, Dataset, FamilyParams, NetworkGraph


def test_dims():
    assert family_dim(CPDKind.LINEAR, 3) == 5
    assert family_dim(CPDKind.SIGMOID, 3) == 6


def test_predict_mean_scalar_and_matrix():
    p = FamilyParams([2.0, -1.0], [0.5], 1.0)
    assert predict_mean(CPDKind.LINEAR, p, [1.0, 1.0]) == pytest.approx(1.5)
    s = FamilyParams([1.0], [1.0, 2.0], 1.0)
    np.testing.assert_allclose(predict_mean(CPDKind.SIGMOID, s, np.array([[0.0], [100.0]])),
                               [2.0, 3.0])


class TestLinearFit:
    def test_matches_lstsq(self):
        rng = np.random.default_rng(0)
        u = rng.normal(size=(200, 3))
        x = u @ [1.0, -2.0, 0.5] + 0.3 + rng.normal(size=200) * 0.4
        p = fit_linear_gaussian(x, u)
        design = np.column_stack([u, np.ones(200)])
        coef, *_ = np.linalg.lstsq(design, x, rcond=None)
        np.testing.assert_allclose(p.alpha, coef[:3], atol=1e-7)
        np.testing.assert_allclose(p.theta[0], coef[3], atol=1e-7)
        r = x - design @ coef
        np.testing.assert_allclose(p.sigma2, r @ r / 200, rtol=1e-7)

    def test_no_parents_is_sample_moments(self):
        x = np.array([1.0, 2.0, 4.0, 7.0])
        p = fit_linear_gaussian(x)
        assert p.theta[0] == pytest.approx(x.mean())
        assert p.sigma2 == pytest.approx(x.var())

    def test_loglik_beats_perturbations(self):
        rng = np.random.default_rng(1)
        u = rng.normal(size=(60, 2))
        x = rng.normal(size=60)
        p = fit_linear_gaussian(x, u)
        best = family_loglik(CPDKind.LINEAR, p, x, u)
        for _ in range(1000):
            q = FamilyParams(p.alpha + rng.normal(size=2) * 0.05, p.theta + rng.normal() * 0.05,
                             p.sigma2 * np.exp(rng.normal() * 0.05))
            assert family_loglik(CPDKind.LINEAR, q, x, u) <= best + 1e-9

    def test_exact_fit_hits_floor(self):
        u = np.arange(10.0)[:, None]
        p = fit_linear_gaussian(2 * u[:, 0] + 1, u)
        assert p.sigma2 == VARIANCE_FLOOR
        assert "variance_floor" in p.flags

    def test_collinear_parents_flagged(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=50)
        u = np.column_stack([a, a])
        p = fit_linear_gaussian(a + rng.normal(size=50), u)
        assert "ridge" in p.flags
        assert np.all(np.isfinite(p.alpha))


class TestSigmoid:
    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(3)
        u = rng.normal(size=(40, 2))
        x = rng.normal(size=40)
        for _ in range(20):
            v = rng.normal(size=4)
            _, g = sigmoid_objective(v, x, u)
            h = 1e-6
            num = np.array([(sigmoid_objective(v + h * e, x, u)[0]
                             - sigmoid_objective(v - h * e, x, u)[0]) / (2 * h)
                            for e in np.eye(4)])
            assert np.linalg.norm(num - g) <= 1e-5 * max(np.linalg.norm(g), 1e-8)

    def test_recovers_planted(self):
        rng = np.random.default_rng(4)
        u = rng.normal(size=(2000, 1))
        x = 2.0 * expit(1.5 * u[:, 0]) - 1.0 + rng.normal(size=2000) * 0.1
        p = fit_sigmoid(x, u)
        np.testing.assert_allclose(p.alpha, [1.5], atol=0.1)
        np.testing.assert_allclose(p.theta, [-1.0, 2.0], atol=0.1)
        assert p.sigma2 == pytest.approx(0.01, rel=0.15)

    def test_parentless_sigmoid_equals_linear_loglik(self):
        x = np.random.default_rng(5).normal(size=30)
        a = fit_family(CPDKind.SIGMOID, x)
        b = fit_family(CPDKind.LINEAR, x)
        assert a.loglik == pytest.approx(b.loglik)
        # the constant mean is still theta1 * 0.5 + theta0
        assert predict_mean(CPDKind.SIGMOID, a.params, []) == pytest.approx(x.mean())
        assert a.dim == b.dim + 1


def test_bic_formula():
    rng = np.random.default_rng(6)
    vals = rng.normal(size=(50, 2))
    vals[:, 1] += vals[:, 0]
    g = NetworkGraph.empty(["A", "B"])
    g.add_edge(0, 1)
    data = Dataset(vals, names=["A", "B"])
    fit_graph(g, data)
    s = bic_score(g, data)
    ll = sum(family_loglik(CPDKind.LINEAR, g.params[i], vals[:, i], vals[:, g.parents[i]])
             for i in range(2))
    assert s.total == pytest.approx(ll - 0.5 * np.log(50) * 5)
    assert s.dim == 5


def test_bic_rejects_missing():
    g = NetworkGraph.empty(["A"])
    g.params[0] = FamilyParams([], [0.0], 1.0)
    d = Dataset([[1.0], [2.0]], [[True], [False]], ["A"])
    with pytest.raises(ValueError):
        bic_score(g, d)


def test_delta_score_exact_matches_refit():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=(80, 3))
    vals[:, 2] += vals[:, 0] - vals[:, 1]
    data = Dataset(vals, names=list("ABC"))
    g = NetworkGraph.empty("ABC")
    fit_graph(g, data)
    d = delta_family_score_exact(g, data, "C", ["A", "B"])
    ref = fit_family(CPDKind.LINEAR, vals[:, 2], vals[:, :2]).loglik - \
        fit_family(CPDKind.LINEAR, vals[:, 2]).loglik
    assert d == pytest.approx(ref)
    pen = delta_family_score_exact(g, data, "C", ["A", "B"], penalized=True)
    assert pen == pytest.approx(ref - np.log(80))


def test_expected_sse_monte_carlo():
    rng = np.random.default_rng(8)
    m = 6
    xm, xv = rng.normal(size=m), rng.uniform(0.1, 0.5, m)
    um, uv = rng.normal(size=(m, 2)), rng.uniform(0.1, 0.5, (m, 2))
    p = FamilyParams([0.7, -1.2], [0.3], 1.0)
    exact = expected_sse(CPDKind.LINEAR, p, xm, um, xv, uv)
    n = 100_000
    xs = xm + rng.normal(size=(n, m)) * np.sqrt(xv)
    us = um + rng.normal(size=(n, m, 2)) * np.sqrt(uv)
    r = xs - (us @ p.alpha + 0.3)
    samples = (r ** 2).sum(axis=1)
    se = samples.std() / np.sqrt(n)
    assert abs(samples.mean() - exact) < 3 * se


def test_fit_with_variances_matches_expected_normal_equations():
    rng = np.random.default_rng(9)
    um = rng.normal(size=(100, 1))
    uv = np.full((100, 1), 0.5)
    x = 2 * um[:, 0] + rng.normal(size=100) * 0.1
    p = fit_linear_gaussian(x, um, parent_var=uv)
    uc = um[:, 0] - um[:, 0].mean()
    expected_alpha = (uc @ (x - x.mean())) / (uc @ uc + 50.0)
    assert p.alpha[0] == pytest.approx(expected_alpha, rel=1e-6)
