"""Synthetic data generator with hidden confounding, plus oracles.

Model: hidden factors z ~ N(0, sigma_z) with K x K circulant covariance,
observed covariates x = A z + w with w ~ N(0, I_p), and responses drawn from
the family with natural parameter ``theta x + B z`` per response row. The
loading matrices are random with unit-norm rows; B is scaled by the
confounding strength eta, and theta is re-projected so that the true
coefficient matrix lies in the orthogonal complement of span(B).

Randomness uses the counter-based Philox generator with disjoint key
domains, so truth draws, replication draws and oracle draws never share a
stream:

* truth stream     key = (1 << 64) | seed, draw order A, B, theta
* dataset stream   key = (2 << 64) | rep_seed, draw order z, w, response
* oracle dataset   rep_seed = seed XOR 0x9E3779B97F4A7C15

The pseudo-true coefficient matrix (the population target of the per-response
quasi-likelihood fit) has no closed form outside the gaussian family, so
``fstar_oracle`` approximates it by fitting one very large simulated sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import circulant
from scipy.special import expit

from .data_io import Dataset
from .errors import DataValidationError, NumericalError
from .families import family_from_name
from .qml import DEFAULT_MAX_ITER, DEFAULT_TOL, CoefMatrix, _fit_matrix

_MASK64 = (1 << 64) - 1
_TRUTH_DOMAIN = 1
_DATA_DOMAIN = 2
ORACLE_SALT = 0x9E3779B97F4A7C15

DECAY_CONVENTIONS = ("negative", "positive")


def _stream(domain: int, seed: int) -> np.random.Generator:
    key = (domain << 64) | (int(seed) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimConfig:
    """Generator settings; ``k`` is the true factor count.

    ``sigma_z_decay`` picks the circulant covariance convention: "negative"
    uses base -0.5 (the default) and "positive" uses +0.5.
    """

    n: int
    p: int
    m_dim: int
    k: int
    eta: float
    family: str = "bernoulli"
    seed: int = 0
    reps: int = 1
    sigma_z_decay: str = "negative"

    def __post_init__(self):
        family_from_name(self.family)
        if self.n < 2:
            raise DataValidationError(f"n must be >= 2, got {self.n}")
        if self.p < 1 or self.m_dim < 1:
            raise DataValidationError("p and m_dim must be >= 1")
        if not 1 <= self.k <= min(self.p, self.m_dim):
            raise DataValidationError(
                f"k must satisfy 1 <= k <= min(p, m_dim) = "
                f"{min(self.p, self.m_dim)}, got {self.k}"
            )
        if self.eta < 0:
            raise DataValidationError(f"eta must be nonnegative, got {self.eta}")
        if self.reps < 1:
            raise DataValidationError(f"reps must be >= 1, got {self.reps}")
        if self.sigma_z_decay not in DECAY_CONVENTIONS:
            raise DataValidationError(
                f"sigma_z_decay must be one of {DECAY_CONVENTIONS}"
            )

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "m_dim": self.m_dim,
            "k": self.k,
            "eta": self.eta,
            "family": self.family,
            "seed": self.seed,
            "reps": self.reps,
            "sigma_z_decay": self.sigma_z_decay,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "SimConfig":
        required = {"n", "p", "m_dim", "k", "eta"}
        missing = required - set(doc)
        if missing:
            raise DataValidationError(
                f"simulation config is missing fields: {sorted(missing)}"
            )
        known = {
            "n", "p", "m_dim", "k", "eta", "family", "seed", "reps", "sigma_z_decay",
        }
        unknown = set(doc) - known
        if unknown:
            raise DataValidationError(
                f"simulation config has unknown fields: {sorted(unknown)}"
            )
        return SimConfig(**doc)


@dataclass
class SimTruth:
    """Ground-truth generator state and derived oracle quantities."""

    a: np.ndarray  # (p, K) covariate loadings, unit-norm rows
    b: np.ndarray  # (M, K) response loadings, rows of norm eta
    theta: np.ndarray  # (M, p) true coefficients, rows orthogonal to span(b)
    sigma_z: np.ndarray  # (K, K) hidden factor covariance
    p_b: np.ndarray  # (M, M) projector onto span(b)
    p_b_perp: np.ndarray  # (M, M) its complement


def circulant_cov(k: int, decay: str = "negative") -> np.ndarray:
    """Circulant covariance with entries ``base ** min(d, k - d)``.

    The default base -0.5 gives, at k = 3, the matrix with unit diagonal and
    -0.5 off-diagonals (eigenvalues 0, 1.5, 1.5): PSD but singular, which is
    why sampling goes through an eigendecomposition square root rather than
    a Cholesky factor.
    """
    if decay not in DECAY_CONVENTIONS:
        raise DataValidationError(f"decay must be one of {DECAY_CONVENTIONS}")
    base = -0.5 if decay == "negative" else 0.5
    d = np.arange(k)
    first = base ** np.minimum(d, k - d).astype(float)
    first[0] = 1.0
    cov = circulant(first)
    cov = 0.5 * (cov + cov.T)
    lam_min = float(np.linalg.eigvalsh(cov)[0])
    if lam_min < -1e-10:
        raise NumericalError(
            f"circulant covariance with decay {decay!r} is not PSD at k={k} "
            f"(min eigenvalue {lam_min:.3e}); try the other decay convention"
        )
    return cov


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.maximum(norms, 1e-300)


def _column_projector(mat: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column span (zero matrix for rank 0)."""
    m = mat.shape[0]
    if mat.size == 0 or not np.any(mat):
        return np.zeros((m, m))
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12))
    basis = u[:, :rank]
    return basis @ basis.T


def make_truth(config: SimConfig) -> SimTruth:
    """Draw the ground truth for one simulation configuration.

    Draw order (single truth stream): A, then B, then theta.
    """
    rng = _stream(_TRUTH_DOMAIN, config.seed)
    p, m_dim, k = config.p, config.m_dim, config.k
    a = _normalize_rows(rng.standard_normal((p, k)))
    b = config.eta * _normalize_rows(rng.standard_normal((m_dim, k)))
    theta = _normalize_rows(rng.standard_normal((m_dim, p)))
    p_b = _column_projector(b)
    p_b_perp = np.eye(m_dim) - p_b
    theta = p_b_perp @ theta
    sigma_z = circulant_cov(k, config.sigma_z_decay)
    return SimTruth(a=a, b=b, theta=theta, sigma_z=sigma_z, p_b=p_b, p_b_perp=p_b_perp)


def _sigma_z_sqrt(sigma_z: np.ndarray) -> np.ndarray:
    lam, q = np.linalg.eigh(sigma_z)
    return q * np.sqrt(np.clip(lam, 0.0, None))


def sample_dataset(truth: SimTruth, config: SimConfig, rep_seed: int) -> Dataset:
    """Draw one dataset of config.n rows from the truth.

    Draw order (single dataset stream): hidden factors z, covariate noise w,
    then the response draw. z is sampled through the eigendecomposition
    square root of sigma_z, which tolerates the singular default covariance.
    """
    rng = _stream(_DATA_DOMAIN, rep_seed)
    n = config.n
    k = truth.sigma_z.shape[0]
    p = truth.a.shape[0]
    m_dim = truth.b.shape[0]
    z = rng.standard_normal((n, k)) @ _sigma_z_sqrt(truth.sigma_z).T
    w = rng.standard_normal((n, p))
    x = z @ truth.a.T + w
    lin = x @ truth.theta.T + z @ truth.b.T
    kind = config.family
    if kind == "gaussian":
        y = lin + rng.standard_normal((n, m_dim))
    elif kind == "bernoulli":
        y = (rng.random((n, m_dim)) < expit(lin)).astype(float)
    else:  # poisson
        y = rng.poisson(np.exp(lin)).astype(float)
    return Dataset(x, y)


def fstar_oracle(
    truth: SimTruth,
    config: SimConfig,
    family=None,
    n_mc: int = 50_000,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CoefMatrix:
    """Monte-Carlo approximation of the pseudo-true coefficient matrix.

    Fits every response by quasi-likelihood on one simulated sample of
    ``n_mc`` rows (no data splitting; starts at zero and at the naive MLE).
    The oracle draw uses a salted seed so it never shares a stream with
    replication datasets derived from the same config.
    """
    if n_mc < 10_000:
        raise DataValidationError(
            f"n_mc must be at least 10000 for a usable oracle, got {n_mc}"
        )
    if family is None:
        family = family_from_name(config.family)
    big = replace(config, n=int(n_mc))
    ds = sample_dataset(truth, big, rep_seed=config.seed ^ ORACLE_SALT)
    return _fit_matrix(ds.x, ds.y, family, tol, max_iter, kind="quasi", warm=True)


def gaussian_fstar_closed_form(truth: SimTruth) -> np.ndarray:
    """Exact pseudo-true coefficients for the gaussian family.

    F* = theta + B sigma_z A' (A sigma_z A' + I)^{-1}, the population
    least-squares coefficient of the confounded regression.
    """
    p = truth.a.shape[0]
    sigma_x = truth.a @ truth.sigma_z @ truth.a.T + np.eye(p)
    gamma = np.linalg.solve(sigma_x, truth.a @ truth.sigma_z).T
    return truth.theta + truth.b @ gamma


@dataclass
class MetricSet:
    """Evaluation metrics for one fitted replicate.

    frob_err is the figure-caption error ``||theta_hat - theta||_F^2 /
    sqrt(p M)``; rmse_per_response is the un-squared ``||theta_hat -
    theta||_F / sqrt(M)``. bias1 and bias2 measure the unprojected and
    projected approximation bias of the pseudo-true matrix, and proj_err the
    projector estimation error, all in Frobenius norm.
    """

    frob_err: Optional[float] = None
    rmse_per_response: Optional[float] = None
    bias1: Optional[float] = None
    bias2: Optional[float] = None
    proj_err: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_rows(self) -> dict:
        out = {}
        for name in ("frob_err", "rmse_per_response", "bias1", "bias2", "proj_err"):
            value = getattr(self, name)
            if value is not None:
                out[name] = float(value)
        out.update(self.extra)
        return out


def metrics(
    theta_hat: Optional[np.ndarray],
    truth: SimTruth,
    f_star=None,
    p_perp_hat: Optional[np.ndarray] = None,
) -> MetricSet:
    """Compute error metrics against the ground truth.

    ``f_star`` may be a CoefMatrix from :func:`fstar_oracle` or a plain
    array. All arguments other than the truth are optional; metrics whose
    inputs are missing come back as None.
    """
    out = MetricSet()
    m_dim, p = truth.theta.shape
    if theta_hat is not None:
        diff = np.asarray(theta_hat, dtype=float) - truth.theta
        frob = float(np.linalg.norm(diff))
        out.frob_err = frob**2 / np.sqrt(p * m_dim)
        out.rmse_per_response = frob / np.sqrt(m_dim)
    if f_star is not None:
        fs = f_star.values if isinstance(f_star, CoefMatrix) else np.asarray(f_star)
        out.bias1 = float(np.linalg.norm(fs - truth.theta)) / np.sqrt(m_dim)
        out.bias2 = float(
            np.linalg.norm(truth.p_b_perp @ fs - truth.theta)
        ) / np.sqrt(m_dim)
    if p_perp_hat is not None:
        out.proj_err = float(np.linalg.norm(p_perp_hat - truth.p_b_perp))
    return out
