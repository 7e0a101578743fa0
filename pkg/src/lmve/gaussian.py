"""Closed-form Gaussian machinery used as ground truth.

Includes the chi-square quantile (built on a self-contained regularized
incomplete gamma), the minimum-volume ellipsoid of a single Gaussian, Gaussian
conditioning, a seeded joint sampler and Monte-Carlo coverage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Dataset
from .ellipsoid import Ellipsoid, batch_mahalanobis, contains, factorize, log_unit_ball_volume

__all__ = [
    "gammainc_lower",
    "chi2_cdf",
    "chi2_inv_cdf",
    "optimal_single_ellipsoid",
    "optimal_volume",
    "JointGaussianSpec",
    "ConditionalGaussian",
    "condition",
    "predict",
    "sample_joint",
    "mc_coverage",
    "random_joint_spec",
]

_EPS = 1e-16
_MAX_ITER = 10_000


def _gser(a, x):
    # power series, converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gcf(a, x):
    # modified Lentz continued fraction for Q(a, x), x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _gser(a, x))
    return max(0.0, 1.0 - _gcf(a, x))


def _gammainc_upper(a, x):
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gser(a, x)
    return _gcf(a, x)


def chi2_cdf(x: float, n: int) -> float:
    if x <= 0:
        return 0.0
    return gammainc_lower(0.5 * n, 0.5 * x)


def _chi2_logpdf(x, n):
    a = 0.5 * n
    return (a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a)


def chi2_inv_cdf(p: float, n: int) -> float:
    """Quantile of the chi-square distribution with ``n`` degrees of freedom.

    Safeguarded Newton iteration on ``P(n/2, x/2) = p`` inside a bisection
    bracket. Upper-tail probabilities use the complementary function so that
    ``p`` close to one keeps full precision.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {n}")
    if not 0.0 <= p < 1.0:
        raise ValueError(f"p must lie in [0, 1), got {p}")
    n = int(n)
    if p == 0.0:
        return 0.0
    a = 0.5 * n

    upper = p > 0.5
    q = 1.0 - p

    def resid(x):
        # signed error in probability, increasing in x
        if upper:
            return q - _gammainc_upper(a, 0.5 * x)
        return gammainc_lower(a, 0.5 * x) - p

    lo, hi = 0.0, max(1.0, float(n))
    while resid(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
    # Wilson-Hilferty starting point, clipped into the bracket
    z = NormalDist().inv_cdf(p)
    k = 2.0 / (9.0 * n)
    x = n * (1.0 - k + z * math.sqrt(k)) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)

    for _ in range(200):
        f = resid(x)
        if f == 0.0:
            return x
        if f < 0.0:
            lo = x
        else:
            hi = x
        step = f / math.exp(_chi2_logpdf(x, n))
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-15 * x or hi - lo <= 1e-15 * hi:
            return x_new
        x = x_new
    return x


def optimal_single_ellipsoid(mean, cov, eta: float) -> Ellipsoid:
    """Smallest ellipsoid holding Gaussian mass ``eta``: ``E(mean, k * cov)``.

    ``k`` is the chi-square quantile at ``eta``. ``eta = 0`` is rejected since
    the zero-scaled shape is not positive definite.
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if eta == 0.0:
        raise ValueError("eta = 0 gives a degenerate zero-volume ellipsoid")
    kappa = chi2_inv_cdf(eta, mean.shape[0])
    return Ellipsoid(mean, kappa * np.asarray(cov, dtype=np.float64))


def optimal_volume(cov, eta: float) -> float:
    """``V_n * k^{n/2} * det(cov)^{1/2}`` for the quantile ``k`` at ``eta``."""
    f = factorize(cov)
    n = f.lower.shape[0]
    kappa = chi2_inv_cdf(eta, n)
    return math.exp(log_unit_ball_volume(n) + 0.5 * n * math.log(kappa) + 0.5 * f.log_det)


@dataclass(frozen=True)
class JointGaussianSpec:
    """Joint Gaussian over ``(x, y)``; the first ``d`` coordinates are ``x``."""

    mean: np.ndarray
    cov: np.ndarray
    d: int
    n: int

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.cov, dtype=np.float64)
        if self.d < 0 or self.n < 1:
            raise ValueError("need d >= 0 and n >= 1")
        if mean.shape != (self.d + self.n,) or cov.shape != (self.d + self.n,) * 2:
            raise ValueError("mean/cov sizes do not match d + n")
        if np.max(np.abs(cov - cov.T)) > 1e-9 * np.max(np.abs(cov)):
            raise ValueError("cov is not symmetric")
        cov = 0.5 * (cov + cov.T)
        factorize(cov)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def mean_x(self):
        return self.mean[: self.d]

    @property
    def mean_y(self):
        return self.mean[self.d :]

    @property
    def cov_xx(self):
        return self.cov[: self.d, : self.d]

    @property
    def cov_xy(self):
        return self.cov[: self.d, self.d :]

    @property
    def cov_yx(self):
        return self.cov[self.d :, : self.d]

    @property
    def cov_yy(self):
        return self.cov[self.d :, self.d :]


@dataclass(frozen=True)
class ConditionalGaussian:
    """``y | x ~ N(offset + gain @ x, cond_cov)``."""

    gain: np.ndarray
    offset: np.ndarray
    cond_cov: np.ndarray


def condition(spec: JointGaussianSpec) -> ConditionalGaussian:
    try:
        cf = cho_factor(spec.cov_xx, lower=True) if spec.d else None
    except np.linalg.LinAlgError as exc:
        raise ValueError("cov_xx is singular") from exc
    if cf is None:
        gain = np.zeros((spec.n, 0))
    else:
        gain = cho_solve(cf, spec.cov_xy).T
    cond_cov = spec.cov_yy - gain @ spec.cov_xy
    cond_cov = 0.5 * (cond_cov + cond_cov.T)
    offset = spec.mean_y - gain @ spec.mean_x
    for arr in (gain, offset, cond_cov):
        arr.setflags(write=False)
    return ConditionalGaussian(gain=gain, offset=offset, cond_cov=cond_cov)


def predict(cond: ConditionalGaussian, x):
    """Return ``(E[y|x], C_{y|x})``; ``x`` may be one vector or a row batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cond.gain.shape[1]:
        raise ValueError(f"expected {cond.gain.shape[1]} features, got {x.shape[-1]}")
    return cond.offset + x @ cond.gain.T, cond.cond_cov


def sample_joint(spec: JointGaussianSpec, m: int, seed: int) -> Dataset:
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    lower = factorize(spec.cov).lower
    z = rng.standard_normal((m, spec.d + spec.n))
    draws = spec.mean + z @ lower.T
    return Dataset(
        name="synthetic_gaussian",
        X=draws[:, : spec.d],
        Y=draws[:, spec.d :],
        feature_names=[f"x{i}" for i in range(spec.d)],
        label_names=[f"y{i}" for i in range(spec.n)],
    )


def mc_coverage(
    region: Callable,
    spec: JointGaussianSpec,
    N: int,
    seed: int,
    vectorized: bool = False,
    chunk: int = 200_000,
) -> float:
    """Monte-Carlo estimate of ``Pr[y in region(x)]``.

    ``region`` maps one feature vector to an :class:`Ellipsoid`. With
    ``vectorized=True`` it instead maps a row batch ``X`` to either a single
    shared :class:`Ellipsoid` or a ``(centers, shapes)`` pair.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    data = sample_joint(spec, N, seed)
    hits = 0
    if not vectorized:
        for x, y in zip(data.X, data.Y):
            hits += contains(region(x), y)
        return hits / N
    for start in range(0, N, chunk):
        X = data.X[start : start + chunk]
        Y = data.Y[start : start + chunk]
        out = region(X)
        if isinstance(out, Ellipsoid):
            m = batch_mahalanobis(out.center, None, Y, lower=out.factor.lower)
        else:
            centers, shapes = out
            m = batch_mahalanobis(centers, shapes, Y)
        hits += int(np.count_nonzero(m <= 1.0))
    return hits / N


def random_joint_spec(d: int, n: int, seed: int, mean_scale: float = 1.0) -> JointGaussianSpec:
    """Random well-conditioned joint Gaussian, handy for synthetic benchmarks."""
    rng = np.random.default_rng(seed)
    k = d + n
    a = rng.standard_normal((k, k))
    cov = a @ a.T / k + 0.5 * np.eye(k)
    mean = mean_scale * rng.standard_normal(k)
    return JointGaussianSpec(mean=mean, cov=cov, d=d, n=n)
