"""Ellipsoid value type and the SPD primitives built on one Cholesky factor.

An ellipsoid ``E(mu, C)`` is the set ``{y : (y - mu)^T C^{-1} (y - mu) <= 1}``.
Every quadratic form and determinant goes through the lower Cholesky factor
of ``C``; no explicit inverse is formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidEllipsoidError",
    "SpdFactor",
    "Ellipsoid",
    "factorize",
    "unit_ball_volume",
    "log_unit_ball_volume",
    "mahalanobis",
    "volume",
    "contains",
    "scale_shape",
    "batch_cholesky",
    "batch_forward_solve",
    "batch_mahalanobis",
    "batch_log_det",
    "batch_volume",
]


class InvalidEllipsoidError(ValueError):
    """Raised when a shape matrix is not symmetric positive definite."""


def _symmetrize(c):
    return 0.5 * (c + np.swapaxes(c, -1, -2))


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``L`` of an SPD matrix with ``C = L L^T``."""

    lower: np.ndarray
    log_det: float

    def solve_lower(self, v):
        """Return ``L^{-1} v`` by forward substitution."""
        from scipy.linalg import solve_triangular

        return solve_triangular(self.lower, v, lower=True, check_finite=False)


def factorize(shape) -> SpdFactor:
    """Symmetrize ``shape`` and factor it.

    Raises
    ------
    InvalidEllipsoidError
        If the matrix is not square, not finite, or not positive definite.
    """
    c = np.asarray(shape, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise InvalidEllipsoidError(f"shape must be a square n x n matrix, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidEllipsoidError("shape has non-finite entries")
    c = _symmetrize(c)
    try:
        lower = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise InvalidEllipsoidError("shape is not positive definite") from exc
    diag = np.diag(lower)
    if not np.all(diag > 0):
        raise InvalidEllipsoidError("shape is not positive definite")
    return SpdFactor(lower=lower, log_det=float(2.0 * np.sum(np.log(diag))))


def log_unit_ball_volume(n: int) -> float:
    """``log(pi^{n/2} / Gamma(n/2 + 1))``."""
    return 0.5 * n * math.log(math.pi) - math.lgamma(0.5 * n + 1.0)


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in ``R^n``."""
    return math.exp(log_unit_ball_volume(n))


@dataclass(frozen=True)
class Ellipsoid:
    """Immutable ellipsoid with a cached Cholesky factor of its shape."""

    center: np.ndarray
    shape: np.ndarray
    factor: SpdFactor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(-1)
        shape = np.array(self.shape, dtype=np.float64)
        factor = factorize(shape)
        if shape.shape[0] != center.shape[0]:
            raise InvalidEllipsoidError(
                f"center has length {center.shape[0]} but shape is {shape.shape}"
            )
        shape = _symmetrize(shape)
        center.setflags(write=False)
        shape.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "factor", factor)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def _check_point(e: Ellipsoid, y):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != e.dim:
        raise ValueError(f"point has dimension {y.shape[0]}, ellipsoid has {e.dim}")
    return y


def mahalanobis(e: Ellipsoid, y) -> float:
    """Quadratic form ``(y - mu)^T C^{-1} (y - mu)``."""
    z = e.factor.solve_lower(_check_point(e, y) - e.center)
    return float(z @ z)


def volume(e: Ellipsoid) -> float:
    return math.exp(log_unit_ball_volume(e.dim) + 0.5 * e.factor.log_det)


def contains(e: Ellipsoid, y) -> bool:
    """Membership test; the boundary counts as covered."""
    return mahalanobis(e, y) <= 1.0


def scale_shape(e: Ellipsoid, alpha: float) -> Ellipsoid:
    """Return ``E(mu, alpha * C)``."""
    if not alpha > 0 or not math.isfinite(alpha):
        raise ValueError(f"scale must be positive and finite, got {alpha}")
    return Ellipsoid(e.center, alpha * e.shape)


# Batched helpers: leading axis indexes points, trailing two the n x n shape.


def batch_cholesky(shapes) -> np.ndarray:
    c = _symmetrize(np.asarray(shapes, dtype=np.float64))
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise InvalidEllipsoidError("a shape in the batch is not positive definite") from exc


def batch_forward_solve(lower, v) -> np.ndarray:
    """Solve ``L_b z_b = v_b`` for a stack of lower-triangular ``L_b``."""
    lower = np.asarray(lower)
    v = np.asarray(v, dtype=np.float64)
    n = lower.shape[-1]
    z = np.empty(np.broadcast_shapes(v.shape, lower.shape[:-1]))
    for i in range(n):
        acc = v[..., i] - np.einsum("...j,...j->...", lower[..., i, :i], z[..., :i])
        z[..., i] = acc / lower[..., i, i]
    return z


def batch_mahalanobis(centers, shapes, ys, lower=None) -> np.ndarray:
    """Mahalanobis form for each row; ``shapes`` may be a single n x n matrix."""
    if lower is None:
        lower = batch_cholesky(shapes)
    r = np.asarray(ys, dtype=np.float64) - np.asarray(centers, dtype=np.float64)
    z = batch_forward_solve(lower, r)
    return np.einsum("...i,...i->...", z, z)


def batch_log_det(shapes=None, lower=None) -> np.ndarray:
    if lower is None:
        lower = batch_cholesky(shapes)
    return 2.0 * np.sum(np.log(np.diagonal(lower, axis1=-2, axis2=-1)), axis=-1)


def batch_volume(shapes=None, lower=None) -> np.ndarray:
    if lower is None:
        lower = batch_cholesky(shapes)
    n = lower.shape[-1]
    return np.exp(log_unit_ball_volume(n) + 0.5 * batch_log_det(lower=lower))
