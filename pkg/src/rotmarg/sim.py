"""Simulation studies: AR(1)-correlated designs, SNR-calibrated noise, MSE of
approximate inclusion probabilities against exact enumeration, and box-plot
summaries of tuned runs.

Every (cell, replicate) pair draws from its own ``SeedSequence`` substream,
so results are identical whether replicates run serially or on a pool.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from rotmarg.amp import AmpConfig
from rotmarg.bcr import BcrConfig
from rotmarg.core import Dataset, SpikeSlabPrior, standardize
from rotmarg.exact import exact_inclusion_probs
from rotmarg.marginals import ExactConfig, approximate_all_marginals

__all__ = [
    "SimConfig",
    "SimResult",
    "ConfigError",
    "DEFAULT_BOX_CELLS",
    "ar1_covariance",
    "gen_design",
    "calibrate_noise",
    "box_stats",
    "extremeness",
    "run_mse_study",
    "run_boxplot_study",
    "run_study",
    "gen_count_features",
]

log = logging.getLogger(__name__)

DEFAULT_BOX_CELLS = ((0.0, 1.0), (0.2, 1.0), (0.5, 10.0), (0.7, 10.0), (0.8, 10.0))
# IG(3, 1) prior mean of the noise variance on standardized data
_STD_SIGMA2_0 = 0.5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    study: str = "mse"
    n: int = 100
    p: int = 12
    beta_true: tuple = (3.0, 1.5, 2.0) + (0.0,) * 9
    rho_grid: tuple = tuple(round(0.1 * i, 1) for i in range(10))
    snr: float = 2.0
    replicates: int = 100
    psi_rule: float = 10.0
    lambda0: float | None = None
    methods: tuple = ("bcr", "amp")
    bcr: dict = field(default_factory=lambda: {"m": 5, "K": 10})
    amp: dict = field(default_factory=dict)
    cells: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.study not in ("mse", "boxplot"):
            raise ConfigError(f"study must be 'mse' or 'boxplot', got {self.study!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.n < 2 or self.p < 1:
            raise ConfigError("need n >= 2 and p >= 1")
        if len(self.beta_true) != self.p:
            raise ConfigError(f"beta_true has length {len(self.beta_true)}, expected p={self.p}")
        for rho, snr in self.grid():
            if not 0.0 <= rho < 1.0:
                raise ConfigError(f"rho must lie in [0, 1), got {rho}")
            if not snr > 0:
                raise ConfigError(f"snr must be positive, got {snr}")
        for m in self.methods:
            if m not in ("bcr", "amp", "exact"):
                raise ConfigError(f"unknown method {m!r}")
        try:
            BcrConfig(**self.bcr)
            AmpConfig(**self.amp)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        for key in ("beta_true", "rho_grid", "methods"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("cells") is not None:
            d["cells"] = tuple(tuple(float(v) for v in c) for c in d["cells"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("beta_true", "rho_grid", "methods"):
            d[key] = list(d[key])
        if d["cells"] is not None:
            d["cells"] = [list(c) for c in d["cells"]]
        return d

    def grid(self):
        """``(rho, snr)`` cells this study covers."""
        if self.cells is not None:
            return [tuple(c) for c in self.cells]
        if self.study == "boxplot":
            return list(DEFAULT_BOX_CELLS)
        return [(float(r), float(self.snr)) for r in self.rho_grid]

    @property
    def lam0(self) -> float:
        if self.lambda0 is not None:
            return float(self.lambda0)
        k = np.count_nonzero(self.beta_true)
        return float(np.clip(k / self.p, 0.5 / self.p, 1.0 - 0.5 / self.p))


@dataclass
class SimResult:
    """Per-replicate records, per-cell summaries and (box-plot study) per-
    coefficient samples.  ``failures`` counts replicates whose backend failed;
    these are excluded from the summaries."""

    config: dict
    records: list
    summary: list
    samples: dict = field(default_factory=dict)
    boxes: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_plain(asdict(self)), sort_keys=True, indent=1)

    def summary_csv(self) -> str:
        return _rows_to_csv(self.summary)

    def boxes_csv(self) -> str:
        return _rows_to_csv(self.boxes)

    def table(self) -> str:
        lines = []
        for row in self.summary:
            keys = [k for k in ("rho", "snr", "method") if k in row]
            head = "  ".join(f"{k}={row[k]}" for k in keys)
            rest = "  ".join(f"{k}={_fmt(v)}" for k, v in row.items() if k not in keys)
            lines.append(f"{head}  {rest}")
        return "\n".join(lines)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _rows_to_csv(rows):
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def ar1_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx)).astype(float)


def gen_design(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Rows iid N(0, Sigma) with ``Sigma_ij = rho^|i-j|``.

    Uses the banded AR(1) recursion ``x_k = rho x_{k-1} + sqrt(1 - rho^2) e_k``,
    which is multiplication by the Cholesky factor of Sigma.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    E = rng.standard_normal((n, p))
    X = np.empty_like(E)
    X[:, 0] = E[:, 0]
    c = np.sqrt(1.0 - rho * rho)
    for k in range(1, p):
        X[:, k] = rho * X[:, k - 1] + c * E[:, k]
    return X


def calibrate_noise(beta, snr: float, cov) -> float:
    """Noise variance giving population SNR ``beta^T Sigma beta / sigma2 = snr``."""
    beta = np.asarray(beta, dtype=float)
    if not snr > 0:
        raise ValueError("snr must be positive")
    signal = float(beta @ np.asarray(cov, dtype=float) @ beta)
    if not signal > 0:
        raise ValueError("signal variance beta^T Sigma beta is zero")
    return signal / snr


def extremeness(probs, lo=0.05, hi=0.95) -> float:
    probs = np.asarray(probs, dtype=float)
    probs = probs[np.isfinite(probs)]
    return float(np.mean((probs < lo) | (probs > hi))) if probs.size else float("nan")


def box_stats(samples) -> dict:
    """Median, quartiles and Tukey whiskers (furthest points within 1.5 IQR)."""
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[np.isfinite(x)]
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside = x[(x >= q1 - 1.5 * iqr) & (x <= q3 + 1.5 * iqr)]
    return {
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_lo": float(inside.min()),
        "whisker_hi": float(inside.max()),
        "n": int(x.size),
    }


def _substream(seed, *keys):
    return np.random.SeedSequence([seed, *keys])


def _method_config(config, method, bcr_seed):
    if method == "bcr":
        return BcrConfig(**{**config.bcr, "seed": bcr_seed})
    if method == "amp":
        return AmpConfig(**config.amp)
    return ExactConfig()


def _simulate_data(config, rho, snr, ss):
    rng = np.random.default_rng(ss)
    beta = np.asarray(config.beta_true, dtype=float)
    X = gen_design(config.n, config.p, rho, rng)
    sigma2 = calibrate_noise(beta, snr, ar1_covariance(config.p, rho))
    y = X @ beta + np.sqrt(sigma2) * rng.standard_normal(config.n)
    return Dataset.from_arrays(y, X), sigma2


def _mse_job(args):
    config, ci, rho, snr, rep = args
    ss = _substream(config.seed, ci, rep)
    data, sigma2 = _simulate_data(config, rho, snr, ss)
    prior = SpikeSlabPrior(config.lam0, config.psi_rule * sigma2, sigma2)
    exact = exact_inclusion_probs(data, prior)
    bcr_seed = int(ss.generate_state(1)[0])
    out = []
    for method in config.methods:
        res = approximate_all_marginals(
            data, prior, method, _method_config(config, method, bcr_seed), allow_unstandardized=True
        )
        probs = np.array([r.inclusion_prob for r in res])
        ok = bool(np.all(np.isfinite(probs)))
        out.append({
            "rho": rho,
            "snr": snr,
            "replicate": rep,
            "method": method,
            "mse": float(np.mean((probs - exact) ** 2)) if ok else float("nan"),
            "failed": not ok,
            "nonconverged": int(sum(not r.converged for r in res)),
        })
    return out


def _map(fn, jobs, threads):
    if threads is None or threads <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


def _jobs(config):
    return [(config, ci, rho, snr, rep) for ci, (rho, snr) in enumerate(config.grid()) for rep in range(config.replicates)]


def run_mse_study(config: SimConfig, threads: int = 1) -> SimResult:
    """MSE of each method's inclusion probabilities against exact enumeration,
    with known ``(sigma2, lam, psi)``, per ``(rho, replicate)``."""
    records = [row for rows in _map(_mse_job, _jobs(config), threads) for row in rows]
    summary, failures = [], {}
    for rho, snr in config.grid():
        for method in config.methods:
            rows = [r for r in records if r["rho"] == rho and r["snr"] == snr and r["method"] == method]
            vals = np.array([r["mse"] for r in rows if not r["failed"]])
            nfail = len(rows) - vals.size
            failures[f"{rho}|{snr}|{method}"] = nfail
            if vals.size:
                p20, p80 = np.percentile(vals, [20, 80])
                mean = float(vals.mean())
            else:
                p20 = p80 = mean = float("nan")
            summary.append({
                "rho": rho,
                "snr": snr,
                "method": method,
                "mean": mean,
                "p20": float(p20),
                "p80": float(p80),
                "n_ok": int(vals.size),
                "n_failed": nfail,
            })
    return SimResult(config.to_dict(), records, summary, failures=failures)


def _box_job(args):
    config, ci, rho, snr, rep = args
    ss = _substream(config.seed, ci, rep)
    data, _ = _simulate_data(config, rho, snr, ss)
    data = standardize(data)
    prior = SpikeSlabPrior(config.lam0, config.psi_rule * _STD_SIGMA2_0, _STD_SIGMA2_0)
    bcr_seed = int(ss.generate_state(1)[0])
    out = {}
    for method in config.methods:
        cfg = _method_config(config, method, bcr_seed)
        res = approximate_all_marginals(data, prior, method, cfg, tune=method != "exact")
        out[method] = [r.inclusion_prob for r in res]
    return out


def run_boxplot_study(config: SimConfig, threads: int = 1) -> SimResult:
    """Per-coefficient inclusion probabilities across replicates with
    ``sigma2`` and ``lam`` estimated from standardized data."""
    jobs = _jobs(config)
    outs = _map(_box_job, jobs, threads)
    samples, records = {}, []
    for (_, _, rho, snr, rep), out in zip(jobs, outs):
        for method, probs in out.items():
            for j, pr in enumerate(probs):
                samples.setdefault(f"{rho}|{snr}|{method}|{j}", []).append(pr)
                records.append({"rho": rho, "snr": snr, "replicate": rep, "method": method, "j": j, "incl": pr})
    summary, boxes, failures = [], [], {}
    for rho, snr in config.grid():
        for method in config.methods:
            cell = np.array([samples[f"{rho}|{snr}|{method}|{j}"] for j in range(config.p)])
            bad_reps = int(np.sum(~np.all(np.isfinite(cell), axis=0)))
            failures[f"{rho}|{snr}|{method}"] = bad_reps
            summary.append({
                "rho": rho,
                "snr": snr,
                "method": method,
                "extremeness": extremeness(cell),
                "n_failed": bad_reps,
            })
            for j in range(config.p):
                boxes.append({"rho": rho, "snr": snr, "method": method, "j": j, **box_stats(cell[j])})
    return SimResult(config.to_dict(), records, summary, samples=samples, boxes=boxes, failures=failures)


def run_study(config: SimConfig, threads: int = 1) -> SimResult:
    if config.study == "mse":
        return run_mse_study(config, threads)
    return run_boxplot_study(config, threads)


def gen_count_features(n: int, p: int, rng: np.random.Generator, zero_frac: float = 0.5):
    """Sparse, heavy-tailed nonnegative count matrix with no constant column.

    Each column has a random share of structural zeros and lognormal-Poisson
    counts elsewhere; used as a stand-in for connectome edge counts.
    """
    frac = rng.uniform(0.0, 2.0 * zero_frac, size=p).clip(0.0, 0.95)
    scale = rng.lognormal(mean=5.0, sigma=2.0, size=p)
    X = np.empty((n, p))
    for k in range(p):
        lam = scale[k] * rng.lognormal(0.0, 1.0, size=n)
        col = rng.poisson(lam) * (rng.random(n) >= frac[k])
        while np.ptp(col) == 0:
            col[rng.integers(n)] += 1
        X[:, k] = col
    return X
