"""Shape estimators, split-conformal calibration and coverage/volume evaluation.

A shape model maps a batch of feature rows to a stack of SPD ``n x n``
matrices through ``shape_at``. Calibration rescales any shape model by one
scalar computed on held-out points, so every method gets the same coverage
guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

from .center import CenterModel
from .data import Standardizer, standardize
from .ellipsoid import (
    Ellipsoid,
    batch_cholesky,
    batch_mahalanobis,
    batch_volume,
    factorize,
    InvalidEllipsoidError,
)
from .gaussian import ConditionalGaussian

__all__ = [
    "ShapeModel",
    "GaussianEllipsoidShape",
    "NearestNeighborShape",
    "OracleShape",
    "CalibratedModel",
    "CalibrationSizeError",
    "Evaluation",
    "fit_ge",
    "fit_nle",
    "nle_shape",
    "oracle_shape",
    "conformal_rank",
    "min_calibration_size",
    "conformal_calibrate",
    "evaluate",
]


class ShapeModel:
    """Base class; subclasses set ``kind`` and implement ``shape_at``."""

    kind = "abstract"

    def shape_at(self, X) -> np.ndarray:
        raise NotImplementedError

    @property
    def n(self) -> int:
        raise NotImplementedError


def _as_rows(X):
    X = np.asarray(X, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


@dataclass(frozen=True)
class GaussianEllipsoidShape(ShapeModel):
    """One global shape, the residual second-moment matrix."""

    matrix: np.ndarray
    ridge: float = 0.0
    kind = "GE"

    @property
    def n(self):
        return self.matrix.shape[0]

    def shape_at(self, X):
        X = _as_rows(X)
        return np.broadcast_to(self.matrix, (X.shape[0],) + self.matrix.shape)


@dataclass(frozen=True)
class OracleShape(ShapeModel):
    """Conditional covariance of a known joint Gaussian (constant in x)."""

    conditional: ConditionalGaussian
    kind = "oracle"

    @property
    def n(self):
        return self.conditional.cond_cov.shape[0]

    def shape_at(self, X):
        X = _as_rows(X)
        if X.shape[1] != self.conditional.gain.shape[1]:
            raise ValueError("feature dimension mismatch")
        c = self.conditional.cond_cov
        return np.broadcast_to(c, (X.shape[0],) + c.shape)


@dataclass(frozen=True)
class NearestNeighborShape(ShapeModel):
    """Local residual second moment over the nearest training points, mixed with GE."""

    standardization: Standardizer
    features: np.ndarray
    residuals: np.ndarray
    n_neighbors: int
    fraction: float
    mix: float
    ge: GaussianEllipsoidShape
    _tree: Any = field(default=None, repr=False, compare=False)
    kind = "NLE"

    @property
    def n(self):
        return self.residuals.shape[1]

    def shape_at(self, X, chunk: int = 4096):
        X = _as_rows(X)
        if X.shape[1] != self.features.shape[1]:
            raise ValueError("feature dimension mismatch")
        Xs = self.standardization.apply(X)
        k = self.n_neighbors
        n = self.n
        out = np.empty((X.shape[0], n, n))
        for s in range(0, X.shape[0], chunk):
            _, idx = self._tree.query(Xs[s : s + chunk], k=k)
            idx = np.asarray(idx).reshape(-1, k)
            r = self.residuals[idx]
            local = np.einsum("bki,bkj->bij", r, r) / k
            out[s : s + chunk] = self.mix * local + (1.0 - self.mix) * self.ge.matrix
        return 0.5 * (out + np.swapaxes(out, -1, -2))


def fit_ge(residuals) -> GaussianEllipsoidShape:
    """``(1/T) sum r_i r_i^T`` over training residuals.

    If the matrix is not positive definite a ridge ``1e-8 * trace / n`` is
    added to the diagonal.
    """
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] == 0:
        raise ValueError("need a nonempty (m x n) residual matrix")
    c = r.T @ r / r.shape[0]
    c = 0.5 * (c + c.T)
    ridge = 0.0
    try:
        factorize(c)
    except InvalidEllipsoidError:
        ridge = 1e-8 * np.trace(c) / c.shape[0]
        if not ridge > 0:
            raise ValueError("residuals are identically zero; no shape can be estimated") from None
        c = c + ridge * np.eye(c.shape[0])
        factorize(c)
    c.setflags(write=False)
    return GaussianEllipsoidShape(matrix=c, ridge=float(ridge))


def fit_nle(X_train, residuals, fraction: float = 0.05, mix: float = 0.95) -> NearestNeighborShape:
    """Nearest-neighbor local shape with ``max(1, ceil(fraction * m))`` neighbors.

    Neighbors use Euclidean distance on features standardized with the
    training statistics. The local matrix is not re-centered: it averages
    outer products of residuals about the global center predictions.
    """
    X = np.asarray(X_train, dtype=np.float64)
    r = np.asarray(residuals, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("empty training set")
    if r.shape[0] != X.shape[0]:
        raise ValueError("features and residuals have different row counts")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if not 0.0 <= mix <= 1.0:
        raise ValueError(f"mix must lie in [0, 1], got {mix}")
    m = X.shape[0]
    k = max(1, math.ceil(round(fraction * m, 9)))
    std = standardize(X)
    Xs = np.ascontiguousarray(std.apply(X))
    r = r.copy()
    r.setflags(write=False)
    Xs.setflags(write=False)
    return NearestNeighborShape(
        standardization=std,
        features=Xs,
        residuals=r,
        n_neighbors=k,
        fraction=fraction,
        mix=mix,
        ge=fit_ge(r),
        _tree=cKDTree(Xs),
    )


def nle_shape(model: NearestNeighborShape, x) -> np.ndarray:
    """Shape matrix at a single feature vector."""
    return model.shape_at(np.asarray(x, dtype=np.float64)[None, :])[0]


def oracle_shape(conditional: ConditionalGaussian) -> OracleShape:
    return OracleShape(conditional)


class CalibrationSizeError(ValueError):
    def __init__(self, m_c, eta, minimum):
        super().__init__(
            f"validation set of {m_c} points is too small for coverage {eta}; need at least {minimum}"
        )
        self.m_c = m_c
        self.eta = eta
        self.minimum = minimum


def conformal_rank(m_c: int, eta: float) -> int:
    """1-based rank ``ceil((m_c + 1) * eta)`` of the calibration quantile."""
    # rounding guards float products such as 0.9 * 11 landing a hair above 9.9
    return math.ceil(round((m_c + 1) * eta, 9))


def min_calibration_size(eta: float) -> int:
    m = 1
    while conformal_rank(m, eta) > m:
        m += 1
    return m


@dataclass(frozen=True)
class CalibratedModel:
    """Shape model rescaled by ``alpha_q``; final shape is ``alpha_q * shape_at(x)``."""

    shape: ShapeModel
    center: CenterModel
    alpha_q: float
    eta: float
    calib_size: int

    def centers(self, X):
        return self.center.predict(_as_rows(X))

    def shapes(self, X):
        return self.alpha_q * self.shape.shape_at(_as_rows(X))

    def ellipsoid(self, x) -> Ellipsoid:
        x = np.asarray(x, dtype=np.float64)
        return Ellipsoid(self.centers(x)[0], self.shapes(x)[0])


def conformal_calibrate(shape: ShapeModel, center: CenterModel, X_val, Y_val, eta: float) -> CalibratedModel:
    """Split-conformal scale from validation Mahalanobis scores.

    ``alpha_q`` is the ``ceil((m_c + 1) eta)``-th smallest score, which makes
    the test coverage at least ``eta`` for exchangeable data.
    """
    X_val = _as_rows(X_val)
    Y_val = np.asarray(Y_val, dtype=np.float64).reshape(X_val.shape[0], -1)
    m_c = X_val.shape[0]
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    k = conformal_rank(m_c, eta)
    if m_c < 1 or k > m_c:
        raise CalibrationSizeError(m_c, eta, min_calibration_size(eta))
    scores = batch_mahalanobis(center.predict(X_val), shape.shape_at(X_val), Y_val)
    alpha_q = float(np.sort(scores, kind="stable")[k - 1])
    if not alpha_q > 0:
        raise ValueError("calibration quantile is zero; validation residuals vanish")
    return CalibratedModel(shape=shape, center=center, alpha_q=alpha_q, eta=eta, calib_size=m_c)


@dataclass(frozen=True)
class Evaluation:
    coverage: float
    mean_volume: float
    volumes: np.ndarray


def evaluate(model: CalibratedModel, X_test, Y_test) -> Evaluation:
    X_test = _as_rows(X_test)
    if X_test.shape[0] == 0:
        raise ValueError("empty test set")
    Y_test = np.asarray(Y_test, dtype=np.float64).reshape(X_test.shape[0], -1)
    lower = batch_cholesky(model.shapes(X_test))
    m = batch_mahalanobis(model.centers(X_test), None, Y_test, lower=lower)
    vols = batch_volume(lower=lower)
    return Evaluation(coverage=float(np.mean(m <= 1.0)), mean_volume=float(vols.mean()), volumes=vols)
