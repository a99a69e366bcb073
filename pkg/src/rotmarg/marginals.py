"""Approximate marginal inclusion probabilities for every coefficient.

For each column ``j`` the data are rotated, a backend approximates the
predictive of the rotated nuisance problem, and the result is combined with
the spike-and-slab prior.  Each ``j`` only touches its own rotated data and
its own random substream, so the loop can run on a thread pool without
changing any result.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from rotmarg import amp as _amp
from rotmarg import bcr as _bcr
from rotmarg.core import (
    Dataset,
    MarginalResult,
    SpikeSlabPrior,
    combine_mixture,
    combine_scalar,
    rotate_for_index,
)
from rotmarg.exact import exact_rotated_predictive

__all__ = ["ExactConfig", "BACKENDS", "approximate_all_marginals", "fit_marginals", "tune_prior"]

log = logging.getLogger(__name__)

BACKENDS = ("bcr", "amp", "exact")
_RECOVERABLE = (np.linalg.LinAlgError, _amp.AmpDivergenceError, _bcr.RankDeficientError, FloatingPointError)


@dataclass(frozen=True)
class ExactConfig:
    """Use the exact enumerated predictive; with ``moment_match`` it is first
    collapsed to one Gaussian, otherwise the full mixture is combined."""

    moment_match: bool = False


def _default_config(backend):
    return {"bcr": _bcr.BcrConfig(), "amp": _amp.AmpConfig(), "exact": ExactConfig()}[backend]


@dataclass(frozen=True)
class _Piece:
    """Backend output for one coefficient, before combination with the prior."""

    j: int
    z: float
    a: float
    mu: float = float("nan")
    tau2: float = float("nan")
    mixture: object = None
    rot: object = None
    converged: bool = True
    message: str = ""


def _predict(data, j, prior, backend, config):
    rot = rotate_for_index(data, j)
    if backend == "bcr":
        cfg = _bcr.resolve(config, rot.p_prime, rot.y_tilde.shape[0], prior.lam, prior.psi)
        pred = _bcr.bcr_predictive(rot.y_tilde, rot.X_tilde, rot.x_tilde_new, cfg, prior.sigma2, seed=[cfg.seed, j])
        return _Piece(j, rot.z, rot.a, pred.mu, pred.tau2)
    if backend == "amp":
        state = _amp.amp_run(rot.y_tilde, rot.X_tilde, prior, config)
        pred = _amp.amp_predictive(state, rot.x_tilde_new, prior.sigma2)
        msg = "" if state.converged else f"AMP stopped after {state.iteration} iterations"
        return _Piece(j, rot.z, rot.a, pred.mu, pred.tau2, converged=state.converged, message=msg)
    ep = exact_rotated_predictive(rot, prior)
    if config.moment_match:
        pred = ep.moment_matched
        return _Piece(j, rot.z, rot.a, pred.mu, pred.tau2)
    return _Piece(j, rot.z, rot.a, mixture=ep, rot=rot)


def _safe_predict(args):
    data, j, prior, backend, config = args
    try:
        return _predict(data, j, prior, backend, config)
    except _RECOVERABLE as exc:
        log.warning("coefficient %d failed: %s", j, exc)
        return _Piece(j, float("nan"), float("nan"), converged=False, message=f"{type(exc).__name__}: {exc}")


def _finish(piece, prior):
    if piece.mixture is not None:
        ep = piece.mixture
        return combine_mixture(piece.rot, ep.log_weights, ep.means, ep.variances, prior)
    if np.isnan(piece.mu):
        nan = float("nan")
        return MarginalResult(piece.j, nan, nan, nan, converged=False, message=piece.message)
    incl, m, v = combine_scalar(piece.z, piece.a, piece.mu, piece.tau2, prior.lam, prior.psi)
    return MarginalResult(piece.j, float(incl), float(m), float(v), piece.converged, piece.message)


def _map(fn, jobs, threads):
    if threads is None or threads <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _predict_all(data, prior, backend, config, threads):
    jobs = [(data, j, prior, backend, config) for j in range(data.p)]
    return _map(_safe_predict, jobs, threads)


def _bcr_tune(data, prior, config, threads, max_rounds=50, tol=1e-6):
    """Fixed-point iteration on the inclusion rate with sigma2 marginalized.

    The BCR predictive involves ``lam`` only through the default projection
    dimension, so predictives are cached per dimension and only the scalar
    combination is repeated.
    """
    config = replace(config, marginalize_sigma2=True)
    p = data.p
    cache = {}
    for _ in range(max_rounds):
        key = config.m if config.m is not None else _bcr.default_projection_dim(p - 1, prior.lam)
        if key not in cache:
            cache[key] = _predict_all(data, prior, "bcr", config, threads)
        results = [_finish(pc, prior) for pc in cache[key]]
        lam = float(np.clip(np.nanmean([r.inclusion_prob for r in results]), 1.0 / p, 1.0 - 1.0 / p))
        done = abs(lam - prior.lam) / prior.lam < tol
        prior = prior.replace(lam=lam)
        if done:
            break
    return prior, [_finish(pc, prior) for pc in cache[key]]


def tune_prior(data: Dataset, prior: SpikeSlabPrior, backend: str, config=None, threads: int = 1) -> SpikeSlabPrior:
    """Estimate ``lam`` (and for AMP ``sigma2``) from the data; ``psi`` is kept."""
    config = _default_config(backend) if config is None else config
    if backend == "amp":
        tuned, _ = _amp.em_tune(data.y, data.X, prior, config)
        return tuned
    if backend == "bcr":
        return _bcr_tune(data, prior, config, threads)[0]
    raise ValueError(f"hyperparameter tuning is not available for backend {backend!r}")


def fit_marginals(data: Dataset, prior: SpikeSlabPrior, backend: str = "amp", config=None, *,
                  tune: bool = False, threads: int = 1):
    """Like :func:`approximate_all_marginals` but also returns the prior that
    was finally used (the tuned one when ``tune`` is set)."""
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    config = _default_config(backend) if config is None else config
    if tune:
        if backend == "bcr":
            return _bcr_tune(data, prior, config, threads)
        prior = tune_prior(data, prior, backend, config)
    return prior, [_finish(pc, prior) for pc in _predict_all(data, prior, backend, config, threads)]


def approximate_all_marginals(
    data: Dataset,
    prior: SpikeSlabPrior,
    backend: str = "amp",
    config=None,
    *,
    tune: bool = False,
    allow_unstandardized: bool = False,
    threads: int = 1,
) -> list[MarginalResult]:
    """One :class:`MarginalResult` per column of ``data.X``.

    With ``tune=True`` the AMP backend first runs EM on the full data for
    ``(lam, sigma2)``; the BCR backend marginalizes ``sigma2`` under its
    inverse-gamma prior and iterates ``lam`` to a fixed point.  Failures for
    individual coefficients are reported in the result, not raised.
    """
    if not data.standardized and not allow_unstandardized:
        raise ValueError("data are not standardized; call standardize() or pass allow_unstandardized=True")
    return fit_marginals(data, prior, backend, config, tune=tune, threads=threads)[1]
