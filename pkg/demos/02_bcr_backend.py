"""
Compressed regression predictive
================================

The BCR backend replaces the nuisance regression by a ridge regression on a
random sparse projection of the features, averaged over ``K`` projections
weighted by their marginal likelihoods. With ``m`` equal to the number of
nuisance features and an orthonormal projection the predictive is the plain
conjugate ridge predictive.
"""

import numpy as np

from rotmarg import Dataset, SpikeSlabPrior, approximate_all_marginals
from rotmarg.bcr import BcrConfig, ProjectionDraw, bcr_predictive, bcr_single_predictive
from rotmarg.exact import exact_inclusion_probs
from rotmarg.sim import ar1_covariance, calibrate_noise, gen_design

rng = np.random.default_rng(1)
beta = np.array([3.0, 1.5, 2.0] + [0.0] * 9)
X = gen_design(100, 12, 0.3, rng)
sigma2 = calibrate_noise(beta, 2.0, ar1_covariance(12, 0.3))
y = X @ beta + np.sqrt(sigma2) * rng.normal(size=100)
data = Dataset.from_arrays(y, X)
prior = SpikeSlabPrior(0.25, 10 * sigma2, sigma2)

###############################################################################
# One predictive for a new feature vector, with and without projection.
x_new = rng.normal(size=12)
full = bcr_single_predictive(y, X, x_new, ProjectionDraw(0.5, np.eye(12)), BcrConfig(m=12, kappa=prior.psi), sigma2)
avg = bcr_predictive(y, X, x_new, BcrConfig(m=5, K=10, kappa=prior.psi, seed=3), sigma2)
print(f"identity projection: mu={full.mu:.3f} tau2={full.tau2:.3f}")
print(f"m=5, K=10 average:   mu={avg.mu:.3f} tau2={avg.tau2:.3f}")

###############################################################################
# All twelve inclusion probabilities against enumeration.
res = approximate_all_marginals(data, prior, "bcr", BcrConfig(m=5, K=10, seed=3), allow_unstandardized=True)
approx = np.array([r.inclusion_prob for r in res])
exact = exact_inclusion_probs(data, prior)
for j in range(12):
    print(f"j={j:2d}  exact={exact[j]:.3f}  bcr={approx[j]:.3f}")
print("MSE:", np.mean((approx - exact) ** 2))
