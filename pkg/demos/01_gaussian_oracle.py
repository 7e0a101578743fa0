"""
Minimum-volume ellipsoids for Gaussian data
===========================================

For a Gaussian label with covariance ``S`` the smallest region holding
probability ``eta`` is the ellipsoid ``E(mean, kappa * S)`` with
``kappa`` the chi-square quantile. We check that on simulated draws and then
condition a joint Gaussian on features to get the best ``x``-dependent shape.
"""

import numpy as np

from lmve import chi2_inv_cdf, condition, optimal_single_ellipsoid, optimal_volume, random_joint_spec

# the scaling factor for two labels at 90% is -2 log(0.1)
kappa = chi2_inv_cdf(0.9, 2)
print(f"kappa = {kappa:.10f}, -2 log 0.1 = {-2 * np.log(0.1):.10f}")

# empirical coverage of the optimal ellipsoid
rng = np.random.default_rng(0)
cov = np.array([[2.0, 0.6], [0.6, 0.5]])
mean = np.array([1.0, -1.0])
e = optimal_single_ellipsoid(mean, cov, 0.9)
y = rng.multivariate_normal(mean, cov, size=200_000)
L = np.linalg.cholesky(e.shape)
z = np.linalg.solve(L, (y - mean).T)
print(f"coverage on 200k draws: {np.mean((z * z).sum(axis=0) <= 1):.4f}")

# a joint Gaussian over 3 features and 2 labels
spec = random_joint_spec(d=3, n=2, seed=0)
cond = condition(spec)
print("conditional covariance of y given x:")
print(np.array2string(cond.cond_cov, precision=4))
print(f"best possible volume at eta=0.9: {optimal_volume(cond.cond_cov, 0.9):.4f}")
print(f"volume using the marginal covariance instead: {optimal_volume(spec.cov_yy, 0.9):.4f}")
