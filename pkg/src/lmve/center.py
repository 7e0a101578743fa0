"""Frozen predictors of ellipsoid centers ``mu(x)``.

All kinds standardize features with statistics of the training rows. The
fitted model is immutable so shape models can never move the centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

from .data import Standardizer, standardize
from .gaussian import ConditionalGaussian, predict as gaussian_predict

__all__ = ["CenterModel", "fit_center", "predict_center", "CENTER_KINDS"]

CENTER_KINDS = ("linear-ridge", "knn-mean", "oracle-gaussian")


@dataclass(frozen=True)
class CenterModel:
    kind: str
    params: dict
    standardization: Standardizer | None
    _tree: Any = field(default=None, repr=False, compare=False)

    @property
    def weights(self):
        """Linear map ``n x d`` in raw feature units (linear-ridge only)."""
        return self.params["W"] / self.standardization.scale

    @property
    def bias(self):
        """Intercept in raw feature units (linear-ridge only)."""
        return self.params["b"] - self.weights @ self.standardization.mean

    def predict(self, X):
        return predict_center(self, X)


def _readonly(**arrays):
    for a in arrays.values():
        a.setflags(write=False)
    return arrays


def fit_center(X, Y, kind: str = "linear-ridge", hyper: dict | None = None) -> CenterModel:
    """Fit a center model on training rows.

    ``hyper`` keys: ``ridge`` (absolute ridge on standardized features,
    default ``1e-3 * trace(Xs^T Xs) / d``) for linear-ridge; ``k`` (default
    10) for knn-mean; ``conditional`` (a :class:`ConditionalGaussian`) for
    oracle-gaussian.
    """
    hyper = dict(hyper or {})
    if kind not in CENTER_KINDS:
        raise ValueError(f"unknown center kind {kind!r}; choose from {CENTER_KINDS}")
    if kind == "oracle-gaussian":
        cond = hyper.get("conditional")
        if not isinstance(cond, ConditionalGaussian):
            raise ValueError("oracle-gaussian centers need hyper['conditional']")
        return CenterModel(kind, {"conditional": cond}, None)

    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] == 0 or X.shape[0] != Y.shape[0]:
        raise ValueError("need nonempty X (m x d) and Y (m x n) with matching rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite training data")
    std = standardize(X)
    Xs = std.apply(X)

    if kind == "linear-ridge":
        m, d = Xs.shape
        if m < d + 1:
            import warnings

            warnings.warn(f"linear-ridge with m={m} < d+1={d + 1}; relying on the ridge", stacklevel=2)
        gram = Xs.T @ Xs
        ridge = hyper.get("ridge")
        if ridge is None:
            ridge = 1e-3 * np.trace(gram) / max(d, 1)
        if d and not ridge > 0:
            # constant features only: trace is zero, any positive ridge works
            ridge = 1e-3
        y_mean = Y.mean(axis=0)
        # Xs has zero column means, so the intercept is the label mean
        W = np.linalg.solve(gram + ridge * np.eye(d), Xs.T @ (Y - y_mean)).T if d else np.zeros((Y.shape[1], 0))
        if not np.all(np.isfinite(W)):
            raise FloatingPointError("ridge solve produced non-finite weights")
        return CenterModel(kind, _readonly(W=W, b=y_mean.copy()) | {"ridge": float(ridge)}, std)

    k = int(hyper.get("k", 10))
    k = max(1, min(k, Xs.shape[0]))
    Xs = np.ascontiguousarray(Xs)
    return CenterModel(kind, _readonly(Xs=Xs, Y=Y.copy()) | {"k": k}, std, _tree=cKDTree(Xs))


def predict_center(model: CenterModel, X) -> np.ndarray:
    """Centers for one feature vector (returns ``(n,)``) or a row batch."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if model.kind == "oracle-gaussian":
        out, _ = gaussian_predict(model.params["conditional"], X2)
    else:
        d = model.standardization.mean.shape[0]
        if X2.shape[1] != d:
            raise ValueError(f"expected {d} features, got {X2.shape[1]}")
        Xs = model.standardization.apply(X2)
        if model.kind == "linear-ridge":
            out = Xs @ model.params["W"].T + model.params["b"]
        else:
            k = model.params["k"]
            _, idx = model._tree.query(Xs, k=k)
            idx = np.asarray(idx).reshape(Xs.shape[0], k)
            out = model.params["Y"][idx].mean(axis=1)
    return out[0] if single else out
