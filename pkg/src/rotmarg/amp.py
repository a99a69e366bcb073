"""Sum-product approximate message passing with the spike-and-slab denoiser.

Three update schedules are provided:

``"vamp"`` (default)
    Alternates the scalar denoiser with a linear MMSE stage computed from one
    SVD of ``X``; extrinsic (Onsager-corrected) messages are passed between
    the two stages.  It stays stable for the structured, non-iid matrices the
    rotation produces, and is exact after one sweep when ``X^T X = I``.
``"amp"``
    Classic AMP on column-normalized ``X`` with the Onsager term
    ``(1/n) sum_j eta'_j`` on the previous residual and the effective noise
    level tracked as ``||residual||^2 / n``.
``"serial"``
    Coordinate-wise sweep in the style of swept AMP, for cases where the
    parallel schedules oscillate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from rotmarg._gauss import log_bernoulli_pair, log_normal_pdf
from rotmarg.core import GaussianPredictive, SpikeSlabPrior

__all__ = [
    "AmpConfig",
    "AmpState",
    "AmpDivergenceError",
    "EmAbortedError",
    "denoise",
    "spike_slab_denoise",
    "amp_run",
    "amp_predictive",
    "em_tune",
]

_ALPHA_MIN = 1e-10
_SIGMA2_FLOOR = 1e-8


class AmpDivergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


class EmAbortedError(RuntimeError):
    """AMP diverged inside a tuning round; ``prior`` holds the last stable
    hyperparameters."""

    def __init__(self, msg, prior):
        super().__init__(msg)
        self.prior = prior


@dataclass(frozen=True)
class AmpConfig:
    max_iter: int = 200
    tol: float = 1e-8
    damping: float = 0.5
    tune_hyperparams: bool = False
    em_max_rounds: int = 50
    em_tol: float = 1e-6
    seed: int = 0
    variant: str = "vamp"

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.variant not in ("vamp", "amp", "serial"):
            raise ValueError(f"unknown AMP variant {self.variant!r}")


@dataclass(frozen=True)
class AmpState:
    m: np.ndarray
    v: np.ndarray
    residual: np.ndarray
    tau_t2: float
    iteration: int
    damping: float
    converged: bool
    incl: np.ndarray = field(repr=False)
    trace: tuple = field(default=(), repr=False)


def denoise(r, s2, lam, psi):
    """Posterior ``(mean, var, incl)`` of beta ~ (1-lam) delta_0 + lam N(0, psi)
    observed as ``r = beta + N(0, s2)``.  Vectorized; ``psi`` may vary per entry."""
    r, s2, lam, psi = np.broadcast_arrays(*map(np.asarray, (r, s2, lam, psi)))
    log_off, log_on = log_bernoulli_pair(lam)
    lnum = log_on + log_normal_pdf(r, 0.0, psi + s2)
    with np.errstate(invalid="ignore"):
        incl = np.exp(lnum - np.logaddexp(log_off + log_normal_pdf(r, 0.0, s2), lnum))
    incl = np.nan_to_num(incl, nan=0.0)
    shrink = psi / (psi + s2)
    slab_mean = shrink * r
    mean = incl * slab_mean
    var = incl * shrink * s2 + incl * (1.0 - incl) * slab_mean**2
    return mean, var, incl


def spike_slab_denoise(r, s2, prior: SpikeSlabPrior):
    return denoise(r, s2, prior.lam, prior.psi)


def _converged(m, m_old, tol):
    return np.linalg.norm(m - m_old) / max(np.linalg.norm(m), 1e-12) < tol


def _diverged(tau, tau0):
    return not np.isfinite(tau) or tau > 1e6 * tau0


def _thin_svd(X):
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    keep = s > 1e-12 * (s[0] if s.size else 0.0)
    return U[:, keep], s[keep], Vt[keep]


def _run_vamp(y, X, prior, config, factor=None):
    n, p = X.shape
    gw = 1.0 / prior.sigma2
    U, s, Vt = _thin_svd(X) if factor is None else factor
    rank = s.size
    Uty = U.T @ y
    s2v = s * s

    def lmmse(r2, g2):
        d = gw * s2v + g2
        x2 = r2 + Vt.T @ ((gw * s * Uty - gw * s2v * (Vt @ r2)) / d)
        alpha = (np.sum(g2 / d) + (p - rank)) / p
        alpha = min(max(alpha, _ALPHA_MIN), 1.0 - _ALPHA_MIN)
        g1 = g2 * (1.0 - alpha) / alpha
        return (x2 - alpha * r2) / (1.0 - alpha), g1

    r2 = np.zeros(p)
    g2 = 1.0 / (prior.lam * prior.psi)
    m = np.zeros(p)
    trace = []
    tau0 = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        r1, g1 = lmmse(r2, g2)
        tau = 1.0 / g1
        tau0 = tau if tau0 is None else tau0
        trace.append(tau)
        if _diverged(tau, tau0):
            raise AmpDivergenceError(f"VAMP diverged at iteration {it}", tuple(trace))
        m_old = m
        m, v, incl = denoise(r1, tau, prior.lam, prior.psi)
        if it > 1 and _converged(m, m_old, config.tol):
            converged = True
            break
        alpha = np.mean(v) * g1
        if alpha >= 1.0 - 1e-6:
            # the denoiser carries no information beyond r1 (its variance can
            # exceed tau for bimodal posteriors); keep the previous message
            continue
        alpha = max(alpha, _ALPHA_MIN)
        g2_new = g1 * (1.0 - alpha) / alpha
        r2_new = (m - alpha * r1) / (1.0 - alpha)
        d = config.damping
        r2 = d * r2_new + (1.0 - d) * r2
        g2 = (d / np.sqrt(g2_new) + (1.0 - d) / np.sqrt(g2)) ** -2
    return AmpState(m, v, y - X @ m, tau, it, config.damping, converged, incl, tuple(trace))


def _run_amp(y, X, prior, config):
    n, p = X.shape
    c = np.linalg.norm(X, axis=0)
    A = X / c
    psi = prior.psi * c * c
    theta = np.zeros(p)
    z = y.copy()
    tau = float(z @ z) / n
    tau0 = tau
    d = config.damping
    trace = [tau]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        r = theta + A.T @ z
        th_new, vth, incl = denoise(r, tau, prior.lam, psi)
        onsager = np.sum(vth) / (tau * n)
        z_new = y - A @ th_new + onsager * z
        theta_old = theta
        theta = d * th_new + (1.0 - d) * theta
        z = d * z_new + (1.0 - d) * z
        tau = max(float(z @ z) / n, 1e-300)
        trace.append(tau)
        if _diverged(tau, tau0):
            raise AmpDivergenceError(f"AMP diverged at iteration {it}", tuple(trace))
        if _converged(theta, theta_old, config.tol):
            converged = True
            break
    m = theta / c
    v = vth / (c * c)
    return AmpState(m, v, y - X @ m, tau, it, d, converged, incl, tuple(trace))


def _run_serial(y, X, prior, config):
    n, p = X.shape
    rng = np.random.default_rng(config.seed)
    X2 = X * X
    s2 = prior.sigma2
    a = np.zeros(p)
    c = np.full(p, prior.lam * prior.psi)
    incl = np.full(p, prior.lam)
    w = y.copy()
    V = np.ones(n)
    r = np.zeros(p)
    s = np.ones(p)
    trace = []
    tau0 = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        g = (y - w) / (s2 + V)
        V = X2 @ c
        w = X @ a - V * g
        a_sweep = a.copy()
        for i in rng.permutation(p):
            prec = X2[:, i] @ (1.0 / (s2 + V))
            s[i] = 1.0 / prec
            r[i] = a[i] + s[i] * (X[:, i] @ ((y - w) / (s2 + V)))
            a_old, c_old = a[i], c[i]
            mi, ci, li = denoise(r[i], s[i], prior.lam, prior.psi)
            a[i], c[i], incl[i] = float(mi), float(ci), float(li)
            V_old = V.copy()
            V += X2[:, i] * (c[i] - c_old)
            w += X[:, i] * (a[i] - a_old) - (V - V_old) * g
        tau = float(np.mean(s))
        tau0 = tau if tau0 is None else tau0
        trace.append(tau)
        if _diverged(tau, tau0):
            raise AmpDivergenceError(f"serial AMP diverged at iteration {it}", tuple(trace))
        if _converged(a, a_sweep, config.tol):
            converged = True
            break
    return AmpState(a.copy(), c.copy(), y - X @ a, tau, it, 1.0, converged, incl.copy(), tuple(trace))


_RUNNERS = {"vamp": _run_vamp, "amp": _run_amp, "serial": _run_serial}


def amp_run(y, X, prior: SpikeSlabPrior, config: AmpConfig = AmpConfig()) -> AmpState:
    """Posterior mean ``m`` and marginal variances ``v`` of the coefficients.

    Non-convergence within ``max_iter`` is reported through
    ``state.converged``; divergence raises :class:`AmpDivergenceError`.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    return _amp_run(y, X, prior, config)


def _amp_run(y, X, prior, config, factor=None):
    if X.shape[1] == 0:
        e = np.zeros(0)
        return AmpState(e, e, y.copy(), prior.sigma2, 0, config.damping, True, e)
    if config.variant == "vamp":
        return _run_vamp(y, X, prior, config, factor)
    return _RUNNERS[config.variant](y, X, prior, config)


def amp_predictive(state: AmpState, x_new, sigma2: float) -> GaussianPredictive:
    """``N(x_new^T m, x_new^T diag(v) x_new + sigma2)``; sums are correctly rounded."""
    x_new = np.asarray(x_new, dtype=float)
    if x_new.shape != state.m.shape:
        raise ValueError(f"x_new has shape {x_new.shape}, state has {state.m.shape}")
    mu = math.fsum(x_new * state.m)
    tau2 = math.fsum(x_new * x_new * state.v) + sigma2
    return GaussianPredictive(mu, tau2)


def _em_step(y, X, state):
    n = y.shape[0]
    p = X.shape[1]
    col2 = np.sum(X * X, axis=0)
    lam = float(np.clip(np.mean(state.incl), 1.0 / p, 1.0 - 1.0 / p))
    resid = y - X @ state.m
    sigma2 = max((float(resid @ resid) + float(col2 @ state.v)) / n, _SIGMA2_FLOOR)
    return lam, sigma2


def em_tune(y, X, prior0: SpikeSlabPrior, config: AmpConfig = AmpConfig()):
    """Alternate AMP with updates of the inclusion rate and noise variance.

    ``lam <- mean inclusion probability`` (clamped to ``[1/p, 1 - 1/p]``) and
    ``sigma2 <- (||y - X m||^2 + sum_j ||x_j||^2 v_j) / n``; ``psi`` is held
    fixed.  Returns the tuned prior and the last AMP state.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    prior = prior0
    if X.shape[1] < 2:
        return prior, amp_run(y, X, prior, config)
    state = None
    # the SVD used by the VAMP schedule does not depend on the hyperparameters
    factor = _thin_svd(X) if config.variant == "vamp" else None
    for _ in range(config.em_max_rounds):
        try:
            state = _amp_run(y, X, prior, config, factor)
        except AmpDivergenceError as exc:
            raise EmAbortedError(str(exc), prior) from exc
        lam, sigma2 = _em_step(y, X, state)
        dl = abs(lam - prior.lam) / prior.lam
        ds = abs(sigma2 - prior.sigma2) / prior.sigma2
        prior = prior.replace(lam=lam, sigma2=sigma2)
        if max(dl, ds) < config.em_tol:
            break
    return prior, state
