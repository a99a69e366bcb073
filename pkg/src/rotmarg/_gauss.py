"""Small log-space helpers for univariate and low-rank Gaussian densities."""

import numpy as np
import scipy.linalg

LOG_2PI = np.log(2.0 * np.pi)


def log_normal_pdf(x, mean, var):
    """Elementwise log N(x | mean, var)."""
    x = np.asarray(x, dtype=float)
    var = np.asarray(var, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def log_bernoulli_pair(lam):
    """Return (log(1 - lam), log(lam)) with exact -inf at the endpoints."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log1p(-lam), np.log(lam)


def lowrank_gauss_logpdf(y, Z, prior_var, sigma2):
    """log N(y | 0, prior_var * Z Z^T + sigma2 * I_n) through the k x k system.

    Uses the determinant lemma and Woodbury identity, so the cost is
    O(n k^2) rather than O(n^3).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    yy = float(y @ y)
    base = -0.5 * n * (LOG_2PI + np.log(sigma2))
    k = Z.shape[1]
    if k == 0 or prior_var == 0.0:
        return base - 0.5 * yy / sigma2
    M = Z.T @ Z + (sigma2 / prior_var) * np.eye(k)
    L = scipy.linalg.cholesky(M, lower=True)
    b = Z.T @ y
    w = scipy.linalg.solve_triangular(L, b, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L))) + k * np.log(prior_var / sigma2)
    quad = (yy - float(w @ w)) / sigma2
    return base - 0.5 * (logdet + quad)


def dense_gauss_logpdf(y, cov):
    """log N(y | 0, cov) by Cholesky of the full covariance."""
    y = np.asarray(y, dtype=float)
    try:
        L = scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(cov)
        raise np.linalg.LinAlgError(
            f"covariance is not positive definite (condition number {cond:.3e})"
        ) from exc
    w = scipy.linalg.solve_triangular(L, y, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (y.shape[0] * LOG_2PI + logdet + float(w @ w))
