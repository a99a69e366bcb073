import numpy as np
import pytest
from scipy import stats

from rotmarg.amp import AmpConfig
from rotmarg.bcr import BcrConfig
from rotmarg.core import Dataset, SpikeSlabPrior, standardize
from rotmarg.exact import exact_inclusion_probs
from rotmarg.marginals import ExactConfig, approximate_all_marginals, fit_marginals, tune_prior
from rotmarg.sim import ar1_covariance, calibrate_noise, gen_design

REF_BETA = np.array([3.0, 1.5, 2.0] + [0.0] * 9)


def _ref_data(seed, rho=0.0):
    rng = np.random.default_rng(seed)
    X = gen_design(100, 12, rho, rng)
    s2 = calibrate_noise(REF_BETA, 2.0, ar1_covariance(12, rho))
    y = X @ REF_BETA + np.sqrt(s2) * rng.normal(size=100)
    return Dataset.from_arrays(y, X), SpikeSlabPrior(0.25, 10 * s2, s2)


@pytest.mark.parametrize("backend", ["bcr", "amp"])
def test_single_feature_matches_two_model_formula(backend):
    rng = np.random.default_rng(3)
    x = rng.normal(size=15)
    y = 0.4 * x + rng.normal(size=15)
    data = Dataset.from_arrays(y, x)
    lam, psi, s2 = 0.3, 2.0, 1.0
    l1 = stats.multivariate_normal.logpdf(y, np.zeros(15), psi * np.outer(x, x) + s2 * np.eye(15))
    l0 = stats.multivariate_normal.logpdf(y, np.zeros(15), s2 * np.eye(15))
    expected = lam / (lam + (1 - lam) * np.exp(l0 - l1))
    (res,) = approximate_all_marginals(data, SpikeSlabPrior(lam, psi, s2), backend, allow_unstandardized=True)
    assert res.inclusion_prob == pytest.approx(expected, abs=1e-12)
    assert res.converged


@pytest.mark.parametrize("backend", ["bcr", "amp"])
def test_reference_config_ranks_true_coefficients_first(backend):
    cfg = BcrConfig(m=5, K=10) if backend == "bcr" else AmpConfig()
    hits = 0
    for seed in range(100):
        data, prior = _ref_data(seed)
        res = approximate_all_marginals(data, prior, backend, cfg, allow_unstandardized=True)
        top = np.argsort([-r.inclusion_prob for r in res])[:3]
        hits += set(top) == {0, 1, 2}
    assert hits >= 95


def test_oracle_substitution():
    prior = SpikeSlabPrior(0.3, 4.0, 1.0)
    rng = np.random.default_rng(12)
    X = gen_design(40, 8, 0.3, rng)
    data = Dataset.from_arrays(X @ [1.0, 0, 0, -0.8, 0, 0.5, 0, 0] + rng.normal(size=40), X)
    exact = exact_inclusion_probs(data, prior)
    mixture = approximate_all_marginals(data, prior, "exact", allow_unstandardized=True)
    np.testing.assert_allclose([r.inclusion_prob for r in mixture], exact, atol=1e-8)
    matched = approximate_all_marginals(data, prior, "exact", ExactConfig(moment_match=True), allow_unstandardized=True)
    assert np.mean((np.array([r.inclusion_prob for r in matched]) - exact) ** 2) <= 0.01


@pytest.mark.parametrize("backend", ["bcr", "amp"])
def test_thread_count_does_not_change_results(backend):
    data, prior = _ref_data(4, rho=0.5)
    data = standardize(data)
    prior = SpikeSlabPrior(0.25, 5.0, 0.5)
    serial = fit_marginals(data, prior, backend, tune=True, threads=1)
    pooled = fit_marginals(data, prior, backend, tune=True, threads=4)
    assert serial[0] == pooled[0]
    assert [r.inclusion_prob for r in serial[1]] == [r.inclusion_prob for r in pooled[1]]
    assert [r.slab_mean for r in serial[1]] == [r.slab_mean for r in pooled[1]]


def test_results_are_in_column_order():
    data, prior = _ref_data(1)
    res = approximate_all_marginals(standardize(data), prior, "amp", threads=3)
    assert [r.index_j for r in res] == list(range(12))


def test_failures_are_flagged_not_raised():
    # one projection per coefficient with a single retry: p'=1 draws are
    # rank deficient whenever the sampled entry is zero
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 2))
    data = Dataset.from_arrays(rng.normal(size=10), X)
    cfg = BcrConfig(m=1, K=20, max_retries=1, seed=0)
    res = approximate_all_marginals(data, SpikeSlabPrior(0.5, 1.0, 1.0), "bcr", cfg, allow_unstandardized=True)
    assert len(res) == 2
    bad = [r for r in res if not r.converged]
    assert bad, "expected at least one rank-deficient failure"
    for r in bad:
        assert np.isnan(r.inclusion_prob)
        assert "RankDeficientError" in r.message


def test_nonconvergence_flag_keeps_value():
    data, prior = _ref_data(2, rho=0.5)
    res = approximate_all_marginals(data, prior, "amp", AmpConfig(max_iter=1), allow_unstandardized=True)
    assert all(not r.converged for r in res)
    assert all(0.0 <= r.inclusion_prob <= 1.0 for r in res)
    assert "iterations" in res[0].message


def test_unstandardized_guard():
    data, prior = _ref_data(0)
    with pytest.raises(ValueError, match="standardize"):
        approximate_all_marginals(data, prior, "amp")


def test_unknown_backend():
    data, prior = _ref_data(0)
    with pytest.raises(ValueError, match="backend"):
        approximate_all_marginals(standardize(data), prior, "gibbs")


class TestTuning:
    def test_amp_tuning_estimates_noise(self):
        data, _ = _ref_data(5)
        data = standardize(data)
        tuned = tune_prior(data, SpikeSlabPrior(0.25, 5.0, 0.5), "amp")
        assert tuned.psi == 5.0
        # standardized y has unit variance and population R^2 = 2/3
        assert 0.15 < tuned.sigma2 < 0.6
        assert 1 / 12 <= tuned.lam <= 11 / 12

    def test_bcr_tuning_is_fixed_point(self):
        data, _ = _ref_data(6)
        data = standardize(data)
        prior, res = fit_marginals(data, SpikeSlabPrior(0.25, 5.0, 0.5), "bcr", tune=True)
        mean_incl = np.mean([r.inclusion_prob for r in res])
        assert abs(np.clip(mean_incl, 1 / 12, 11 / 12) - prior.lam) / prior.lam < 1e-5
        assert prior.sigma2 == 0.5

    def test_exact_backend_cannot_tune(self):
        data, _ = _ref_data(0)
        with pytest.raises(ValueError, match="tuning"):
            tune_prior(standardize(data), SpikeSlabPrior(0.25, 5.0, 0.5), "exact")

    def test_tuned_true_coefficients_separate(self):
        data, _ = _ref_data(7)
        data = standardize(data)
        for backend in ("bcr", "amp"):
            res = approximate_all_marginals(data, SpikeSlabPrior(0.25, 5.0, 0.5), backend, tune=True)
            probs = np.array([r.inclusion_prob for r in res])
            assert probs[:3].min() > probs[3:].max()
