"""Ideal parent profiles and the similarity measures built on them.

The ideal profile of a child is the per-instance value a hypothetical extra
parent (with unit scale) would need for the current link to reproduce the
child exactly. Candidate parents are then compared with that profile:

* ``c1``: log-likelihood gain when only the new scale is fitted,
  ``(y.z)^2 / (2 sigma^2 z.z)``.
* ``c2``: gain when the noise variance is refitted too,
  ``-(M/2) log sin^2(angle(y, z))``.

For non-linear links both measures are computed in a geometry weighted by the
link's slope at the ideal value, plus a correction term that does not depend
on the candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .cpd import _as_matrix, predict_mean
from .model import CPDKind, FamilyParams

log = logging.getLogger(__name__)

IMAGE_MARGIN = 1e-6
SIN2_FLOOR = 1e-12


class DegenerateLinkError(ValueError):
    """The link cannot be inverted (zero sigmoid amplitude)."""


@dataclass
class IdealProfile:
    y: np.ndarray
    weights: np.ndarray
    c1_const: float
    c2_const: float
    sigma2: float
    kind: CPDKind = CPDKind.LINEAR

    @property
    def m(self) -> int:
        return len(self.y)

    def weighted(self) -> np.ndarray:
        return self.y * self.weights


def ideal_profile_linear(child, parents, params: FamilyParams) -> IdealProfile:
    """y = x - U alpha - theta0, unit weights."""
    x = np.asarray(child, dtype=float)
    u = _as_matrix(parents, len(x))
    y = x - predict_mean(CPDKind.LINEAR, params, u)
    yy = float(y @ y)
    return IdealProfile(y, np.ones_like(y), yy, yy, params.sigma2, CPDKind.LINEAR)


def project_to_image(x, theta0: float, theta1: float, margin: float = IMAGE_MARGIN):
    """Clip values into the open image of ``theta1 * logistic(.) + theta0``."""
    lo, hi = sorted((theta0, theta0 + theta1))
    pad = margin * abs(theta1)
    return np.clip(np.asarray(x, dtype=float), lo + pad, hi - pad)


def ideal_profile_sigmoid(child, parents, params: FamilyParams,
                          margin: float = IMAGE_MARGIN) -> IdealProfile:
    """Invert the sigmoid link for the unit-scale extra parent.

    Values outside the link's image are first moved to the closest in-image
    point (with a relative margin so the inversion stays finite).
    """
    theta0, theta1 = params.theta[0], params.theta[1]
    if theta1 == 0:
        raise DegenerateLinkError("sigmoid amplitude theta1 is zero")
    x = np.asarray(child, dtype=float)
    u = _as_matrix(parents, len(x))
    eta = u @ params.alpha if params.alpha.size else np.zeros(len(x))
    x_img = project_to_image(x, theta0, theta1, margin)
    p = (x_img - theta0) / theta1
    y = logit(p) - eta
    weights = theta1 * p * (1.0 - p)
    current = theta1 * expit(eta) + theta0
    yw = y * weights
    r = x_img - current
    return IdealProfile(y, weights, float(yw @ yw), float(r @ r), params.sigma2,
                        CPDKind.SIGMOID)


def ideal_profile(kind: CPDKind, child, parents, params: FamilyParams) -> IdealProfile:
    if CPDKind(kind) is CPDKind.LINEAR:
        return ideal_profile_linear(child, parents, params)
    return ideal_profile_sigmoid(child, parents, params)


def replacement_profile(kind: CPDKind, child, parents, params: FamilyParams,
                        replaced: int) -> IdealProfile:
    """Ideal profile for swapping out parent number ``replaced``.

    The replaced parent's term is dropped from the frozen sum; everything else
    keeps its current value.
    """
    u = _as_matrix(parents, len(np.asarray(child)))
    if not 0 <= replaced < u.shape[1]:
        raise IndexError(f"parent position {replaced} out of range")
    keep = [j for j in range(u.shape[1]) if j != replaced]
    reduced = FamilyParams(params.alpha[keep], params.theta, params.sigma2)
    return ideal_profile(kind, child, u[:, keep], reduced)


# -- similarity measures ------------------------------------------------------

def _projection_core(y: np.ndarray, z: np.ndarray):
    """(y.z)^2 / (z.z) for each column of ``z``; zero-norm columns give 0."""
    yz = z.T @ y
    zz = np.einsum("ij,ij->j", z, z)
    zero = zz <= 0.0
    if zero.any():
        log.debug("zero-norm candidate profile(s); similarity set to 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        core = np.where(zero, 0.0, yz * yz / np.where(zero, 1.0, zz))
    return core


def _c1(y, sigma2, z):
    return _projection_core(y, z) / (2.0 * sigma2)


def _c2(y, z):
    yy = float(y @ y)
    m = len(y)
    if yy <= 0.0:
        log.debug("zero-norm ideal profile; similarity set to 0")
        return np.zeros(z.shape[1])
    core = _projection_core(y, z)
    sin2 = 1.0 - core / yy
    if np.any(sin2 < SIN2_FLOOR):
        log.debug("collinear candidate; C2 capped")
    return -0.5 * m * np.log(np.maximum(sin2, SIN2_FLOOR))


def _columns(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    return (z[:, None], True) if z.ndim == 1 else (z, False)


def c1(profile: IdealProfile, z) -> np.ndarray | float:
    """Frozen-parameter gain with only the candidate's scale fitted.

    ``z`` may be one profile or an M x n matrix of candidate columns.
    """
    z, single = _columns(z)
    out = _c1(profile.y, profile.sigma2, z)
    return float(out[0]) if single else out


def c2(profile: IdealProfile, z) -> np.ndarray | float:
    """Frozen-parameter gain with the candidate's scale and the noise variance fitted."""
    z, single = _columns(z)
    out = _c2(profile.y, z)
    return float(out[0]) if single else out


def distorted_similarity(profile: IdealProfile, z, variant: str = "c2") -> np.ndarray | float:
    """Slope-weighted C1/C2 plus the candidate-independent correction.

    For a linear profile the weights are ones and the two constants agree, so
    the result is exactly the plain measure.
    """
    z, single = _columns(z)
    w = profile.weights
    yw = profile.y * w
    zw = z * w[:, None]
    cst1, cst2 = profile.c1_const, profile.c2_const
    same = cst1 == cst2
    if cst2 <= 0.0 and not same:
        log.debug("non-positive residual constant; floored")
        cst2 = 1e-8 * profile.m
    if variant == "c1":
        corr = 0.0 if same else (cst1 - cst2) / (2.0 * profile.sigma2)
        out = _c1(yw, profile.sigma2, zw) - corr
    elif variant == "c2":
        corr = 0.0 if same or cst1 <= 0 else 0.5 * profile.m * np.log(cst1 / cst2)
        out = _c2(yw, zw) - corr
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(out[0]) if single else out


def screening_scores(profile: IdealProfile, z, measure: str = "c2") -> np.ndarray:
    """Scores used to rank candidates for one profile.

    ``measure`` is one of ``c1``, ``c2`` (plain) or ``distorted`` (slope
    weighted C2, which is plain C2 for linear families).
    """
    if measure == "c1":
        return np.atleast_1d(c1(profile, z))
    if measure == "c2":
        return np.atleast_1d(c2(profile, z))
    if measure == "distorted":
        return np.atleast_1d(distorted_similarity(profile, z, "c2"))
    raise ValueError(f"unknown measure {measure!r}")
