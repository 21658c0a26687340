import numpy as np
import pytest

from idealparent.cpd import bic_score, fit_family
from idealparent.ideal import ideal_profile_linear
from idealparent.model import CPDKind, Dataset, FamilyParams, NetworkGraph, Node
from idealparent.search import SearchConfig, greedy_search
from idealparent.sem import (PosteriorMoments, elbo, expected_bic, expected_family_loglik,
                             expected_family_score, expected_ideal_profile, initial_moments,
                             mean_field_e_step, standardize_hidden, structural_em)
from idealparent.synth import random_dag, sample_network, two_layer_network


def hidden_root_graph(a=1.5, s_h=1.0, s_x=0.5, th=0.2, tx=-0.3):
    g = NetworkGraph([Node("H", True), Node("X")])
    g.params[0] = FamilyParams([], [th], s_h)
    g.set_family(1, [0], FamilyParams([a], [tx], s_x))
    return g


def test_no_unobserved_cells_is_noop():
    d = Dataset(np.random.default_rng(0).normal(size=(5, 2)), names=["A", "B"])
    g = NetworkGraph.empty(["A", "B"])
    for i in range(2):
        g.params[i] = fit_family(CPDKind.LINEAR, d.values[:, i]).params
    q0 = initial_moments(g, d)
    q = mean_field_e_step(g, d, q0)
    assert q.n_unobserved == 0 and q.elbo_history == []
    np.testing.assert_array_equal(q.mean, d.values)


def test_single_hidden_root_is_exact_conditional():
    a, s_h, s_x, th, tx = 1.5, 1.0, 0.5, 0.2, -0.3
    g = hidden_root_graph(a, s_h, s_x, th, tx)
    x = 1.7
    d = Dataset([[x]], names=["X"])
    q = mean_field_e_step(g, d, initial_moments(g, d))
    # bivariate Gaussian conditional
    mean = th + a * s_h * (x - a * th - tx) / (a * a * s_h + s_x)
    var = s_h * s_x / (a * a * s_h + s_x)
    assert q.mean[0, 0] == pytest.approx(mean, abs=1e-12)
    assert q.var[0, 0] == pytest.approx(var, abs=1e-12)
    assert np.all(q.second >= q.mean ** 2)


def test_sweeps_never_decrease_objective():
    golden = two_layer_network(8, 2, seed=1)
    data = sample_network(golden, 200, seed=2)
    g = golden.copy()
    q0 = initial_moments(g, data, {"H0": np.zeros(200), "H1": np.zeros(200)})
    q0.var[:, :2] = 1.0
    q = mean_field_e_step(g, data, q0)
    h = q.elbo_history
    assert len(h) >= 2
    assert all(b >= a - 1e-9 for a, b in zip(h, h[1:]))
    assert q.converged


def test_sigmoid_child_factor_runs_and_is_monotone():
    g = NetworkGraph([Node("H", True), Node("X", kind=CPDKind.SIGMOID),
                      Node("Y", kind=CPDKind.SIGMOID)])
    g.params[0] = FamilyParams([], [0.0], 1.0)
    g.set_family(1, [0], FamilyParams([2.0], [-1.0, 2.0], 0.05))
    g.set_family(2, [0], FamilyParams([-1.5], [0.0, 1.0], 0.05))
    data, hidden = sample_network(g, 300, seed=3, return_hidden=True)
    q = mean_field_e_step(g, data, initial_moments(g, data))
    assert np.corrcoef(q.mean[:, 0], hidden.values[:, 0])[0, 1] > 0.8
    assert np.all(q.var[:, 0] > 0)
    h = q.elbo_history
    assert all(b >= a - 1e-6 for a, b in zip(h, h[1:]))


def test_expected_score_fully_observed_equals_plain_fit():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=(100, 2))
    vals[:, 1] += vals[:, 0]
    d = Dataset(vals, names=["A", "B"])
    g = NetworkGraph.empty(["A", "B"])
    q = initial_moments(g, d)
    s = expected_family_score(g, d, q, "B", ["A"])
    fit = fit_family(CPDKind.LINEAR, vals[:, 1], vals[:, [0]])
    assert s.loglik == fit.loglik and s.bic == fit.bic


def test_point_mass_hidden_equals_plugging_means():
    rng = np.random.default_rng(5)
    g = hidden_root_graph()
    h = rng.normal(size=50)
    x = 1.5 * h + rng.normal(size=50)
    q = PosteriorMoments(["H", "X"], np.column_stack([h, x]), np.zeros((50, 2)),
                         np.array([[False, True]] * 50))
    s = expected_family_score(g, None, q, "X", ["H"])
    assert s.loglik == fit_family(CPDKind.LINEAR, x, h[:, None]).loglik


def test_expected_loglik_monte_carlo():
    rng = np.random.default_rng(6)
    m = 5
    p = FamilyParams([0.8, -0.4], [0.1], 0.7)
    xm, um = rng.normal(size=m), rng.normal(size=(m, 2))
    xv, uv = rng.uniform(0.1, 0.4, m), rng.uniform(0.1, 0.4, (m, 2))
    exact = expected_family_loglik(CPDKind.LINEAR, p, xm, um, xv, uv)
    n = 100_000
    xs = xm + rng.normal(size=(n, m)) * np.sqrt(xv)
    us = um + rng.normal(size=(n, m, 2)) * np.sqrt(uv)
    r = xs - us @ p.alpha - 0.1
    ll = -0.5 * (m * np.log(2 * np.pi * 0.7) + (r ** 2).sum(axis=1) / 0.7)
    assert abs(ll.mean() - exact) < 3 * ll.std() / np.sqrt(n)


def test_missing_moment_is_an_error():
    g = hidden_root_graph()
    q = PosteriorMoments(["X"], np.zeros((3, 1)), np.zeros((3, 1)), np.ones((3, 1), bool))
    with pytest.raises(KeyError):
        expected_family_score(g, None, q, "X", ["H"])


def test_expected_ideal_profile():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=(40, 2))
    d = Dataset(vals, names=["A", "B"])
    g = NetworkGraph.empty(["A", "B"])
    g.add_edge(0, 1)
    g.params[0] = fit_family(CPDKind.LINEAR, vals[:, 0]).params
    g.params[1] = fit_family(CPDKind.LINEAR, vals[:, 1], vals[:, [0]]).params
    q = initial_moments(g, d)
    prof = expected_ideal_profile(g, d, q, "B")
    ref = ideal_profile_linear(vals[:, 1], vals[:, [0]], g.params[1])
    np.testing.assert_array_equal(prof.y, ref.y)
    # a hidden parent with zero posterior mean leaves the orphan profile x - theta0
    gh = hidden_root_graph()
    qh = PosteriorMoments(["H", "X"], np.column_stack([np.zeros(40), vals[:, 1]]),
                          np.column_stack([np.ones(40), np.zeros(40)]),
                          np.array([[False, True]] * 40))
    np.testing.assert_allclose(expected_ideal_profile(gh, None, qh, "X").y,
                               vals[:, 1] - gh.params[1].theta[0])


def test_planted_profiles_cluster():
    golden = two_layer_network(12, 2, overlap=0.0, seed=8)
    data = sample_network(golden, 500, seed=9)
    g = NetworkGraph.empty(data.names)
    q = initial_moments(g, data)
    for i in range(g.n_nodes):
        g.params[i] = fit_family(CPDKind.LINEAR, data.values[:, i]).params
    profs = [expected_ideal_profile(g, data, q, i).y for i in range(12)]
    group = [golden.parents[golden.index(n)][0] for n in data.names]
    within, across = [], []
    for i in range(12):
        for j in range(i + 1, 12):
            cos = abs(profs[i] @ profs[j]) / np.linalg.norm(profs[i]) / np.linalg.norm(profs[j])
            (within if group[i] == group[j] else across).append(cos)
    assert min(within) > max(across)


def test_standardize_hidden_preserves_model():
    golden = two_layer_network(6, 1, seed=10)
    data = sample_network(golden, 100, seed=11)
    g = golden.copy()
    q = mean_field_e_step(g, data, initial_moments(g, data))
    q.mean[:, 0] = q.mean[:, 0] * 3.0 + 2.0
    q.var[:, 0] *= 9.0
    g.params[0] = FamilyParams([], [2.0], 9.0)
    for c in g.children(0):
        p = g.params[c]
        p.theta = p.theta - p.alpha * 2.0 / 3.0
        p.alpha = p.alpha / 3.0
    g2, q2 = standardize_hidden(g, q)
    assert abs(q2.mean[:, 0].mean()) < 1e-12
    assert np.mean(q2.second[:, 0]) == pytest.approx(1.0)
    # the root's log-density and the entropy shift by opposite amounts; the bound is invariant
    assert elbo(g2, q2) == pytest.approx(elbo(g, q), rel=1e-10)


def test_fully_observed_reduces_to_search():
    golden = random_dag(8, seed=12)
    data = sample_network(golden, 300, seed=13)
    cfg = SearchConfig(k=2, seed=3)
    a = structural_em(data, cfg)
    b = greedy_search(data, cfg)
    assert a.score == b.score
    assert a.moments is None


def test_missing_data_em_is_sound():
    golden = random_dag(6, seed=14)
    data = sample_network(golden, 200, seed=15)
    rng = np.random.default_rng(16)
    mask = rng.random(data.values.shape) > 0.15
    d = Dataset(data.values, mask, data.names)
    res = structural_em(d, SearchConfig(k=2, seed=1), max_outer=6)
    assert res.moments is not None and not res.graph.has_cycle()
    for rec in res.trace.records:
        seq = rec["m_step_scores"]
        assert all(b >= a for a, b in zip(seq, seq[1:]))
        e = rec["e_step_elbo"]
        assert all(b >= a - 1e-8 for a, b in zip(e, e[1:]))
    # missing cells are imputed towards the regression, observed ones untouched
    q = res.moments.aligned(res.graph)
    obs_cols = [data.names.index(n) for n in res.graph.names]
    np.testing.assert_array_equal(q.mean[mask[:, obs_cols]], d.values[:, obs_cols][mask[:, obs_cols]])


def test_two_layer_recovers_planted_latents():
    from idealparent.metrics import evaluate_run
    from idealparent.synth import make_synthetic_suite
    suite = make_synthetic_suite("two_layer", 20, 2, (500,), seed=3)
    res = structural_em(suite.train[500], SearchConfig(k=2, two_layer=True, seed=3))
    assert 2 <= len(res.graph.hidden_indices()) <= 3
    rep = evaluate_run(res.graph, suite.golden, suite.train[500], suite.test)
    gold = evaluate_run(suite.golden, suite.golden, suite.train[500], suite.test)
    assert rep.test_ll_per_var_instance > gold.test_ll_per_var_instance - 0.1
    for p, c in res.graph.edges():
        assert res.graph.nodes[p].hidden and not res.graph.nodes[c].hidden
    assert max(len(p) for p in res.graph.parents) <= 2
