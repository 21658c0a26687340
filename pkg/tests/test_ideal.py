import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar
from scipy.special import expit

from idealparent.cpd import fit_family, gaussian_loglik, predict_mean
from idealparent.ideal import (DegenerateLinkError, c1, c2, distorted_similarity,
                               ideal_profile, ideal_profile_linear, ideal_profile_sigmoid,
                               project_to_image, replacement_profile, screening_scores)
from idealparent.model import CPDKind, FamilyParams


def linear_family(rng, m=200, k=2):
    u = rng.normal(size=(m, k))
    x = u @ rng.normal(size=k) + rng.normal(size=m)
    fit = fit_family(CPDKind.LINEAR, x, u)
    return x, u, fit


def frozen_gain(x, u, params, z, refit_var):
    """Oracle: maximize the log-likelihood over the new scale only (and sigma2 if asked)."""
    base = x - predict_mean(CPDKind.LINEAR, params, u)
    m = len(x)
    ll0 = gaussian_loglik(base @ base, params.sigma2, m)

    def neg(a):
        r = base - a * z
        s2 = r @ r / m if refit_var else params.sigma2
        return -gaussian_loglik(r @ r, s2, m)

    res = minimize_scalar(neg, bracket=(-1.0, 1.0), tol=1e-12)
    return -res.fun - ll0


class TestSpotValues:
    def test_c2_thirty_degrees(self):
        m = 10
        y = np.zeros(m)
        y[0] = 1.0
        z = np.zeros(m)
        z[0], z[1] = np.cos(np.pi / 6), np.sin(np.pi / 6)
        prof = ideal_profile_linear(y, None, FamilyParams([], [0.0], 0.1))
        assert c2(prof, z) == pytest.approx(10 * np.log(2), abs=1e-12)

    def test_c1_self_at_mle_variance(self):
        y = np.random.default_rng(0).normal(size=37)
        prof = ideal_profile_linear(y, None, FamilyParams([], [0.0], float(y @ y) / 37))
        assert c1(prof, y) == pytest.approx(37 / 2, abs=1e-12)

    def test_linear_distorted_is_plain_bit_exact(self):
        rng = np.random.default_rng(1)
        x, u, fit = linear_family(rng)
        prof = ideal_profile(CPDKind.LINEAR, x, u, fit.params)
        z = rng.normal(size=(200, 30))
        assert np.array_equal(distorted_similarity(prof, z, "c1"), c1(prof, z))
        assert np.array_equal(distorted_similarity(prof, z, "c2"), c2(prof, z))


class TestLinearBounds:
    def test_match_refit_oracles_and_chain(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            x, u, fit = linear_family(rng, m=80)
            z = rng.normal(size=80) + 0.5 * x
            prof = ideal_profile(CPDKind.LINEAR, x, u, fit.params)
            a, b = c1(prof, z), c2(prof, z)
            assert a == pytest.approx(frozen_gain(x, u, fit.params, z, False), abs=1e-8)
            assert b == pytest.approx(frozen_gain(x, u, fit.params, z, True), abs=1e-8)
            exact = fit_family(CPDKind.LINEAR, x, np.column_stack([u, z])).loglik - fit.loglik
            assert a <= b + 1e-9 <= exact + 2e-9

    def test_zero_candidate(self):
        rng = np.random.default_rng(3)
        x, u, fit = linear_family(rng)
        prof = ideal_profile(CPDKind.LINEAR, x, u, fit.params)
        assert c1(prof, np.zeros(200)) == 0.0
        assert c2(prof, np.zeros(200)) == 0.0

    def test_collinear_is_capped(self):
        y = np.arange(1.0, 11.0)
        prof = ideal_profile_linear(y, None, FamilyParams([], [0.0], 1.0))
        assert np.isfinite(c2(prof, 3 * y))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_rankings_agree(self, seed):
        rng = np.random.default_rng(seed)
        x, u, fit = linear_family(rng, m=30)
        prof = ideal_profile(CPDKind.LINEAR, x, u, fit.params)
        z = rng.normal(size=(30, 12))
        r1 = np.lexsort((np.arange(12), -c1(prof, z)))
        r2 = np.lexsort((np.arange(12), -c2(prof, z)))
        assert np.array_equal(r1, r2)


class TestProfileIdentity:
    def test_linear_reconstructs(self):
        rng = np.random.default_rng(4)
        x, u, fit = linear_family(rng)
        prof = ideal_profile(CPDKind.LINEAR, x, u, fit.params)
        rebuilt = predict_mean(CPDKind.LINEAR, fit.params, u) + prof.y
        np.testing.assert_allclose(rebuilt, x, atol=1e-12)

    def test_sigmoid_reconstructs_in_image(self):
        rng = np.random.default_rng(5)
        u = rng.normal(size=(300, 2))
        p = FamilyParams([0.8, -0.5], [-1.0, 2.5], 0.2)
        x = rng.uniform(-1.5, 2.0, 300)
        prof = ideal_profile_sigmoid(x, u, p)
        rebuilt = p.theta[1] * expit(u @ p.alpha + prof.y) + p.theta[0]
        inside = (x > -1.0) & (x < 1.5)
        np.testing.assert_allclose(rebuilt[inside], x[inside], atol=1e-12)
        proj = project_to_image(x, -1.0, 2.5)
        np.testing.assert_allclose(rebuilt[~inside], proj[~inside], atol=1e-12)
        assert np.all(np.isfinite(prof.y))

    def test_negative_amplitude(self):
        p = FamilyParams([], [1.0, -2.0], 1.0)
        x = np.array([-0.5, 0.0, 0.5, 2.0])
        prof = ideal_profile_sigmoid(x, None, p)
        rebuilt = -2.0 * expit(prof.y) + 1.0
        np.testing.assert_allclose(rebuilt[:3], x[:3], atol=1e-12)
        assert np.all(prof.weights <= 0)

    def test_degenerate_link(self):
        with pytest.raises(DegenerateLinkError):
            ideal_profile_sigmoid(np.zeros(3), None, FamilyParams([], [0.0, 0.0], 1.0))

    def test_replacement_drops_one_parent(self):
        rng = np.random.default_rng(6)
        x, u, fit = linear_family(rng, k=3)
        prof = replacement_profile(CPDKind.LINEAR, x, u, fit.params, 1)
        expected = x - u[:, [0, 2]] @ fit.params.alpha[[0, 2]] - fit.params.theta[0]
        np.testing.assert_allclose(prof.y, expected)
        with pytest.raises(IndexError):
            replacement_profile(CPDKind.LINEAR, x, u, fit.params, 3)


class TestDistorted:
    def test_c1_at_ideal_profile_is_frozen_gain(self):
        # appending the ideal profile with unit scale removes the whole residual
        rng = np.random.default_rng(7)
        u = rng.normal(size=(100, 1))
        p = FamilyParams([1.0], [0.0, 2.0], 0.05)
        x = 2.0 * expit(1.3 * u[:, 0]) + rng.normal(size=100) * 0.05
        x = np.clip(x, 0.01, 1.99)
        prof = ideal_profile_sigmoid(x, u, p)
        r = x - predict_mean(CPDKind.SIGMOID, p, u)
        got = distorted_similarity(prof, prof.y, "c1")
        assert got == pytest.approx(r @ r / (2 * p.sigma2), rel=1e-9)

    def test_sigmoid_ranking_tracks_exact_gain(self):
        rng = np.random.default_rng(8)
        m = 300
        u = rng.normal(size=(m, 1))
        hidden = rng.normal(size=m)
        x = 3.0 * expit(1.2 * u[:, 0] + 1.5 * hidden) - 1.5 + rng.normal(size=m) * 0.1
        fit = fit_family(CPDKind.SIGMOID, x, u)
        prof = ideal_profile(CPDKind.SIGMOID, x, u, fit.params)
        cands = np.column_stack([hidden + rng.normal(size=m) * s for s in (0.1, 0.5, 1.0, 3.0)]
                                + [rng.normal(size=m)])
        scores = screening_scores(prof, cands, "distorted")
        assert np.argmax(scores) == 0
        assert list(np.argsort(-scores)[:3]) == [0, 1, 2]

    def test_unknown_measure(self):
        prof = ideal_profile_linear(np.ones(3), None, FamilyParams([], [0.0], 1.0))
        with pytest.raises(ValueError):
            screening_scores(prof, np.ones(3), "c3")
