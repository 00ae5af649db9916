"""Exponential-family building blocks used throughout the package.

Three one-parameter families with canonical link and dispersion fixed at 1:
gaussian (identity link), bernoulli (logit link) and poisson (log link).
Everything downstream needs the cumulant function ``b`` and its first four
derivatives, the inverse-variance weighted residual ``(y - b'(eta)) / b''(eta)``,
and the antiderivative of that residual in ``eta`` (the modified
quasi-log-likelihood term), which has a closed form for each family.

All evaluation functions are vectorised: scalars and arrays of any shape are
accepted and broadcast together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataValidationError

# Variance floor applied when dividing by b''(eta); keeps weighted residuals
# and curvature ratios finite when the linear predictor is far in the tails.
VARIANCE_FLOOR = 1e-10

# Stronger floor used where residuals are averaged into covariance and
# variance estimates (the residual covariance matrix, the G matrices and the
# influence terms behind confidence intervals). The estimator's theory
# assumes b'' is bounded away from zero along fitted predictors; without a
# working surrogate for that bound a single badly misclassified bernoulli
# observation (weight 1/b'' ~ e^|eta|) swamps every average it enters,
# degrading the factor direction estimates and the interval widths. The
# quasi-likelihood score itself is NOT floored this way: the optimizer must
# see the exact gradient of the objective it climbs. 0.05 caps a single
# weighted residual at 20; calibrated on the simulation designs, where looser
# caps let residual outliers dominate the covariance spectrum as the response
# count grows.
RESIDUAL_CURVATURE_FLOOR = 5e-2

_FAMILY_NAMES = ("gaussian", "bernoulli", "poisson")


@dataclass(frozen=True)
class GlmFamily:
    """A canonical-link exponential family with fixed unit dispersion."""

    kind: str
    dispersion: float = 1.0

    def __post_init__(self):
        if self.kind not in _FAMILY_NAMES:
            raise DataValidationError(
                f"unknown family {self.kind!r}; expected one of {_FAMILY_NAMES}"
            )

    def __str__(self):
        return self.kind


GAUSSIAN = GlmFamily("gaussian")
BERNOULLI = GlmFamily("bernoulli")
POISSON = GlmFamily("poisson")


def family_from_name(name: str) -> GlmFamily:
    """Look up a family by its lowercase name."""
    key = name.strip().lower()
    if key not in _FAMILY_NAMES:
        raise DataValidationError(
            f"unknown family {name!r}; expected one of {_FAMILY_NAMES}"
        )
    return GlmFamily(key)


def _as_finite_array(t, name: str) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DataValidationError(f"{name} must be finite")
    return arr


def b_derivs(family: GlmFamily, t):
    """Cumulant function and derivatives ``(b, b', b'', b''', b'''')`` at t.

    gaussian:  b(t) = t^2 / 2
    bernoulli: b(t) = log(1 + e^t), evaluated as softplus so it is stable
               for |t| up to ~700
    poisson:   b(t) = e^t (all derivatives coincide)

    Parameters
    ----------
    family : GlmFamily
    t : array_like
        Linear predictor values; must be finite.

    Returns
    -------
    tuple of ndarray
        (b, b1, b2, b3, b4), each with the shape of ``t``.
    """
    t = _as_finite_array(t, "linear predictor")
    if family.kind == "gaussian":
        one = np.ones_like(t)
        zero = np.zeros_like(t)
        return 0.5 * t * t, t.copy(), one, zero, zero
    if family.kind == "bernoulli":
        # sigma(t) * sigma(-t) stays accurate in both tails, unlike p*(1-p).
        p = expit(t)
        q = expit(-t)
        b = np.logaddexp(0.0, t)
        b2 = p * q
        b3 = b2 * (1.0 - 2.0 * p)
        b4 = b2 * (1.0 - 6.0 * b2)
        return b, p, b2, b3, b4
    # poisson
    e = np.exp(t)
    return e, e.copy(), e.copy(), e.copy(), e.copy()


def mean_response(family: GlmFamily, eta):
    """Model mean b'(eta) under the canonical link."""
    return b_derivs(family, eta)[1]


def weighted_residual(family: GlmFamily, y, eta, floor=None):
    """Inverse-variance weighted residual ``(y - b'(eta)) / b''(eta)``.

    Evaluated through the algebraically simplified ratio for each family
    rather than the literal quotient.  For bernoulli the literal form loses
    all precision once numerator and denominator underflow together
    (|eta| > ~23): the true value there is within e^-|eta| of +-1 on the
    correctly classified side, while the floored quotient collapses to 0.
    The simplified forms:

    gaussian:  y - eta
    bernoulli: y/sigma - (1-y)/(1-sigma)  ->  1 + e^-eta  (y=1)
                                             -1 - e^eta   (y=0)
    poisson:   (y - e^eta) / e^eta, denominator floored at VARIANCE_FLOOR

    Magnitudes on the misclassified side grow exponentially; they are capped
    at |y - b'| / floor, the same ceiling the floored quotient imposes. The
    floor defaults to VARIANCE_FLOOR; covariance/variance estimation passes
    RESIDUAL_CURVATURE_FLOOR instead (see that constant's comment).
    """
    y = np.asarray(y, dtype=float)
    eta = _as_finite_array(eta, "linear predictor")
    if floor is None:
        floor = VARIANCE_FLOOR
    if family.kind == "gaussian":
        return y - eta
    cap = 1.0 / floor
    if family.kind == "bernoulli":
        with np.errstate(over="ignore"):
            pos = 1.0 + np.exp(-eta)
            neg = -1.0 - np.exp(eta)
        return np.clip(np.where(y == 1.0, pos, neg), -cap, cap)
    # poisson
    with np.errstate(over="ignore"):
        e = np.exp(eta)
    with np.errstate(invalid="ignore"):
        res = (y - e) / np.maximum(e, floor)
    # e overflows to inf for eta > ~709 where the true ratio tends to -1
    return np.where(np.isfinite(e), res, -1.0)


def quasi_hessian_weight(family: GlmFamily, y, eta, floor=None):
    """Per-observation curvature weight ``1 + (y - b') b''' / b''^2``.

    Multiplied into x x^T gram matrices this gives the negated Hessian of the
    modified quasi-log-likelihood; the same weight drives the variance
    correction matrices used for confidence intervals.  The correction factor
    is the weighted residual times b'''/b'', which simplifies per family
    (gaussian: 0, bernoulli: 1 - 2*sigma, poisson: 1), so the tail-stable
    residual above carries over unchanged, floor included.
    """
    y = np.asarray(y, dtype=float)
    eta = _as_finite_array(eta, "linear predictor")
    if family.kind == "gaussian":
        return np.ones(np.broadcast(y, eta).shape)
    res = weighted_residual(family, y, eta, floor)
    if family.kind == "bernoulli":
        return 1.0 + res * (1.0 - 2.0 * expit(eta))
    return 1.0 + res


def quasi_loglik_term(family: GlmFamily, y, eta):
    """Antiderivative of the weighted residual in ``eta``, zero at eta = 0.

    Closed forms (all checked against adaptive quadrature in the tests):

    gaussian:  y*eta - eta^2/2
    bernoulli: y=1 term  eta - e^(-eta) + 1
               y=0 term  -eta - e^(eta) + 1
    poisson:   -y*e^(-eta) - eta + y

    The bernoulli form requires binary y; other values raise
    DataValidationError.
    """
    y = np.asarray(y, dtype=float)
    eta = _as_finite_array(eta, "linear predictor")
    if not np.all(np.isfinite(y)):
        raise DataValidationError("response must be finite")
    if family.kind == "gaussian":
        return y * eta - 0.5 * eta * eta
    if family.kind == "bernoulli":
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataValidationError("bernoulli response must be 0 or 1")
        with np.errstate(over="ignore"):
            term_one = eta - np.exp(-eta) + 1.0
            term_zero = -eta - np.exp(eta) + 1.0
        # where() keeps inf out of the unused branch so 0 * inf never occurs
        return np.where(y == 1.0, term_one, term_zero)
    with np.errstate(over="ignore"):
        return -y * np.exp(-eta) - eta + y


def validate_response(family: GlmFamily, y) -> None:
    """Check that a response matrix is usable under the family.

    Finiteness always; {0,1} entries for bernoulli; nonnegative entries for
    poisson.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataValidationError("response contains non-finite entries")
    if family.kind == "bernoulli":
        bad = (y != 0.0) & (y != 1.0)
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise DataValidationError(
                f"bernoulli response must be 0 or 1; found {y[tuple(idx)]!r} "
                f"at position {tuple(int(i) for i in idx)}"
            )
    elif family.kind == "poisson":
        if np.any(y < 0):
            idx = np.argwhere(y < 0)[0]
            raise DataValidationError(
                f"poisson response must be nonnegative; found negative entry "
                f"at position {tuple(int(i) for i in idx)}"
            )
