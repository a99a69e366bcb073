"""Regression data model, rotation for a single coefficient, and the analytic
spike-and-slab combination step.

For a fixed column ``j`` the response is rotated by an orthogonal matrix
``Q = [q1 | Q2]`` with ``q1 = x_j / ||x_j||``.  The scalar ``z = q1^T y``
carries all information about ``beta_j``; the remaining ``n - 1`` rotated
observations ``Q2^T y`` form a regression problem in the other coefficients
only.  A Gaussian approximation ``N(mu, tau2)`` of the predictive
distribution of that problem at ``q1^T X_(-j)`` is combined with the prior to
give the approximate marginal posterior of ``beta_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from rotmarg._gauss import log_bernoulli_pair, log_normal_pdf

__all__ = [
    "Dataset",
    "SpikeSlabPrior",
    "RotatedProblem",
    "GaussianPredictive",
    "MarginalResult",
    "standardize",
    "unstandardize",
    "rotate_for_index",
    "rotation_matrix",
    "combine_scalar",
    "combine_marginal",
    "combine_mixture",
    "moment_match",
]


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` (length n) and design ``X`` (n x p) plus the affine maps
    that undo standardization."""

    y: np.ndarray
    X: np.ndarray
    column_means: np.ndarray
    column_scales: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0
    standardized: bool = False

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ValueError(f"shape mismatch: y {y.shape}, X {X.shape}")
        if y.shape[0] < 2 or X.shape[1] < 1:
            raise ValueError("need n >= 2 observations and p >= 1 features")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("data contain non-finite values")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_means", np.asarray(self.column_means, dtype=float))
        object.__setattr__(self, "column_scales", np.asarray(self.column_scales, dtype=float))

    @classmethod
    def from_arrays(cls, y, X) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        p = X.shape[1]
        return cls(y=y, X=X, column_means=np.zeros(p), column_scales=np.ones(p))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SpikeSlabPrior:
    """iid prior ``(1 - lam) delta_0 + lam N(0, psi)`` with noise variance ``sigma2``."""

    lam: float
    psi: float
    sigma2: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must lie in (0, 1), got {self.lam}")
        if not self.psi > 0.0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    def replace(self, **kw) -> "SpikeSlabPrior":
        return SpikeSlabPrior(**{**self.__dict__, **kw})


@dataclass(frozen=True)
class RotatedProblem:
    index_j: int
    a: float
    z: float
    y_tilde: np.ndarray
    X_tilde: np.ndarray
    x_tilde_new: np.ndarray
    q1: np.ndarray = field(repr=False)

    @property
    def p_prime(self) -> int:
        return self.X_tilde.shape[1]


@dataclass(frozen=True)
class GaussianPredictive:
    mu: float
    tau2: float

    def __post_init__(self):
        if not self.tau2 > 0.0:
            raise ValueError(f"predictive variance must be positive, got {self.tau2}")


@dataclass(frozen=True)
class MarginalResult:
    """Approximate marginal ``(1 - incl) delta_0 + incl N(slab_mean, slab_var)``."""

    index_j: int
    inclusion_prob: float
    slab_mean: float
    slab_var: float
    converged: bool = True
    message: str = ""


def standardize(data: Dataset) -> Dataset:
    """Center and scale every column of X and y to sample mean 0, sd 1 (ddof=1).

    The returned means and scales are composed with any stored ones, so
    ``unstandardize`` always recovers the original data.
    """
    if data.standardized:
        return data
    X, y = data.X, data.y
    mx = X.mean(axis=0)
    sx = X.std(axis=0, ddof=1)
    bad = np.flatnonzero(~(sx > 0.0))
    if bad.size:
        raise ValueError(f"column {int(bad[0])} of X is constant; cannot standardize")
    my = y.mean()
    sy = y.std(ddof=1)
    if not sy > 0.0:
        raise ValueError("response y is constant; cannot standardize")
    return Dataset(
        y=(y - my) / sy,
        X=(X - mx) / sx,
        column_means=data.column_means + data.column_scales * mx,
        column_scales=data.column_scales * sx,
        y_mean=data.y_mean + data.y_scale * my,
        y_scale=data.y_scale * sy,
        standardized=True,
    )


def unstandardize(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Return the raw ``(y, X)`` that ``data`` was derived from."""
    X = data.X * data.column_scales + data.column_means
    y = data.y * data.y_scale + data.y_mean
    return y, X


def _householder_vector(q1):
    # H = I - 2 u u^T / (u^T u) maps e1 to -sign(q1[0]) q1; the sign choice
    # avoids cancellation when q1 is close to e1.
    s = 1.0 if q1[0] >= 0 else -1.0
    u = q1.copy()
    u[0] += s
    return u, float(u @ u)


def _apply_q2t(u, uu, M):
    """Rows 2..n of H^T M for the reflector built from ``u``."""
    M = np.asarray(M, dtype=float)
    proj = np.tensordot(u, M, axes=(0, 0)) * (2.0 / uu)
    out = M - np.multiply.outer(u, proj)
    return out[1:]


def rotation_matrix(x_j) -> np.ndarray:
    """Explicit n x n orthogonal ``[q1 | Q2]`` used by ``rotate_for_index``."""
    x_j = np.asarray(x_j, dtype=float)
    q1 = x_j / np.linalg.norm(x_j)
    u, uu = _householder_vector(q1)
    H = np.eye(q1.shape[0]) - (2.0 / uu) * np.outer(u, u)
    return np.column_stack([q1, H[:, 1:]])


def rotate_for_index(data: Dataset, j: int, seed: int | None = None) -> RotatedProblem:
    """Decouple coefficient ``j`` by an orthogonal change of coordinates.

    The completion ``Q2`` comes from a Householder reflection and is a
    deterministic function of ``x_j``; ``seed`` is accepted for interface
    stability and is currently unused.
    """
    n, p = data.X.shape
    if not 0 <= j < p:
        raise IndexError(f"column index {j} out of range for p={p}")
    x_j = data.X[:, j]
    a = float(np.linalg.norm(x_j))
    if not a > 0.0:
        raise ValueError(f"column {j} of X is identically zero")
    q1 = x_j / a
    X_rest = np.delete(data.X, j, axis=1)
    u, uu = _householder_vector(q1)
    return RotatedProblem(
        index_j=j,
        a=a,
        z=float(q1 @ data.y),
        y_tilde=_apply_q2t(u, uu, data.y),
        X_tilde=_apply_q2t(u, uu, X_rest),
        x_tilde_new=q1 @ X_rest,
        q1=q1,
    )


def combine_scalar(z, a, mu, tau2, lam, psi):
    """Vectorized spike-and-slab update of the scalar model
    ``z = a beta + e``, ``e ~ N(mu, tau2)``.

    Returns ``(inclusion_prob, slab_mean, slab_var)``.
    """
    z, a, mu, tau2, lam, psi = np.broadcast_arrays(*map(np.asarray, (z, a, mu, tau2, lam, psi)))
    tot = a * a * psi + tau2
    log_off, log_on = log_bernoulli_pair(lam)
    lnum = log_on + log_normal_pdf(z, mu, tot)
    lden = np.logaddexp(log_off + log_normal_pdf(z, mu, tau2), lnum)
    incl = np.exp(lnum - lden)
    slab_mean = a * psi * (z - mu) / tot
    slab_var = psi * tau2 / tot
    return incl, slab_mean, slab_var


def combine_marginal(rot: RotatedProblem, pred: GaussianPredictive, prior: SpikeSlabPrior) -> MarginalResult:
    incl, m, v = combine_scalar(rot.z, rot.a, pred.mu, pred.tau2, prior.lam, prior.psi)
    return MarginalResult(rot.index_j, float(incl), float(m), float(v))


def moment_match(weights, means, variances) -> GaussianPredictive:
    """Collapse a Gaussian mixture to a single Gaussian with equal first two moments."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    means = np.asarray(means, dtype=float)
    mu = float(w @ means)
    tau2 = float(w @ (np.asarray(variances, dtype=float) + (means - mu) ** 2))
    return GaussianPredictive(mu, tau2)


def combine_mixture(rot: RotatedProblem, log_weights, means, variances, prior: SpikeSlabPrior) -> MarginalResult:
    """Combination step when the predictive is a Gaussian mixture.

    Each component is integrated against the prior separately, so for the
    exact predictive mixture this reproduces the exact marginal.  The slab
    part of the result is moment-matched to one Gaussian.
    """
    lw = np.asarray(log_weights, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    a2psi = rot.a**2 * prior.psi
    tot = a2psi + variances
    log_off, log_on = log_bernoulli_pair(prior.lam)
    slab_terms = lw + log_normal_pdf(rot.z, means, tot)
    lnum = log_on + logsumexp(slab_terms)
    loff = log_off + logsumexp(lw + log_normal_pdf(rot.z, means, variances))
    incl = float(np.exp(lnum - np.logaddexp(loff, lnum)))
    cw = np.exp(slab_terms - logsumexp(slab_terms))
    cm = rot.a * prior.psi * (rot.z - means) / tot
    cv = prior.psi * variances / tot
    mm = moment_match(cw, cm, cv)
    return MarginalResult(rot.index_j, incl, mm.mu, mm.tau2)
