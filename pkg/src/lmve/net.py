"""The learned shape network.

Three-layer ReLU MLP with dropout producing a factor ``R(x)`` (``n x n``);
the shape is ``C(x) = R^T R + eps I``. Gradients are hand-derived and the
optimizer is a plain Adam, so the whole model is numpy only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .center import CenterModel
from .data import Standardizer, standardize
from .ellipsoid import InvalidEllipsoidError, batch_cholesky, batch_forward_solve, batch_log_det, batch_mahalanobis
from .estimators import ShapeModel, conformal_calibrate, fit_ge, fit_nle

logger = logging.getLogger(__name__)

__all__ = [
    "MlpParams",
    "TrainConfig",
    "TrainingDivergedError",
    "LmveShape",
    "init_params",
    "dropout_masks",
    "forward_shape",
    "lmve_loss",
    "lmve_grad",
    "lmve_loss_and_grad",
    "imitation_loss_and_grad",
    "Adam",
    "select_lambda",
    "init_phase",
    "train_phase",
    "fit_lmve",
    "save_checkpoint",
    "load_checkpoint",
]

_ORDER = ("L1", "b1", "L2", "b2", "L3", "b3")


@dataclass(frozen=True)
class MlpParams:
    L1: np.ndarray  # (4d, d)
    b1: np.ndarray  # (4d,)
    L2: np.ndarray  # (d, 4d)
    b2: np.ndarray  # (d,)
    L3: np.ndarray  # (n*n, d)
    b3: np.ndarray  # (n*n,)

    def __post_init__(self):
        d = self.L1.shape[1]
        n = math.isqrt(self.b3.shape[0])
        expected = {
            "L1": (4 * d, d),
            "b1": (4 * d,),
            "L2": (d, 4 * d),
            "b2": (d,),
            "L3": (n * n, d),
            "b3": (n * n,),
        }
        for name in _ORDER:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != expected[name]:
                raise ValueError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def d(self):
        return self.L1.shape[1]

    @property
    def n(self):
        return math.isqrt(self.b3.shape[0])

    def arrays(self):
        return [getattr(self, k) for k in _ORDER]

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vec, d, n):
        sizes = [4 * d * d, 4 * d, 4 * d * d, d, n * n * d, n * n]
        shapes = [(4 * d, d), (4 * d,), (d, 4 * d), (d,), (n * n, d), (n * n,)]
        parts = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
        return cls(*(p.reshape(s) for p, s in zip(parts, shapes)))

    @classmethod
    def zeros(cls, d, n):
        return cls.from_vector(np.zeros(8 * d * d + 5 * d + n * n * (d + 1)), d, n)


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.9
    # absolute if epsilon_relative is False, else multiplied by trace(GE) / n
    epsilon: float = 1e-4
    epsilon_relative: bool = True
    lam: float | str = "auto"
    lambda_exponent: str = "det"  # "det" as printed, or "sqrt_det"
    dropout_rate: float = 0.1
    iters_init: int = 100_000
    iters_train: int = 100_000
    lr_init: float = 1e-3
    lr_train: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = 128  # None means full batch
    seed: int = 0
    nle_fraction: float = 0.05
    nle_mix: float = 0.95

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.lr_init > 0 and self.lr_train > 0):
            raise ValueError("learning rates must be positive")
        if self.iters_init < 0 or self.iters_train < 0:
            raise ValueError("iteration counts must be nonnegative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.lambda_exponent not in ("det", "sqrt_det"):
            raise ValueError("lambda_exponent must be 'det' or 'sqrt_det'")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")

    @classmethod
    def desk(cls, **overrides):
        """20k total iterations, the default for benchmark sweeps."""
        return cls(**{"iters_init": 10_000, "iters_train": 10_000, **overrides})

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class TrainingDivergedError(FloatingPointError):
    def __init__(self, phase, iteration, loss, grad_norm):
        super().__init__(
            f"{phase} diverged at iteration {iteration}: loss={loss!r}, grad_norm={grad_norm!r}"
        )
        self.phase = phase
        self.iteration = iteration
        self.loss = loss
        self.grad_norm = grad_norm


def init_params(d: int, n: int, rng: np.random.Generator, shape_guess=None) -> MlpParams:
    """Fan-in uniform weights, zero biases, and ``b3`` set to the symmetric
    square root of ``shape_guess`` when given."""

    def uniform(rows, cols):
        bound = 1.0 / math.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    L1 = uniform(4 * d, d)
    L2 = uniform(d, 4 * d)
    L3 = uniform(n * n, d)
    b3 = np.zeros(n * n)
    if shape_guess is not None:
        w, v = np.linalg.eigh(0.5 * (shape_guess + shape_guess.T))
        b3 = ((v * np.sqrt(np.clip(w, 0.0, None))) @ v.T).ravel()
    return MlpParams(L1, np.zeros(4 * d), L2, np.zeros(d), L3, b3)


def dropout_masks(rng: np.random.Generator, batch: int, d: int, rate: float):
    """Inverted-dropout masks for the two hidden layers."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    m1 = (rng.random((batch, 4 * d)) < keep) / keep
    m2 = (rng.random((batch, d)) < keep) / keep
    return m1, m2


def _forward(p: MlpParams, X, eps, masks):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.d:
        raise ValueError(f"expected features of dimension {p.d}, got shape {X.shape}")
    n = p.n
    h1 = X @ p.L1.T + p.b1
    a1 = np.maximum(h1, 0.0)
    if masks is not None:
        a1 = a1 * masks[0]
    h2 = a1 @ p.L2.T + p.b2
    a2 = np.maximum(h2, 0.0)
    if masks is not None:
        a2 = a2 * masks[1]
    R = (a2 @ p.L3.T + p.b3).reshape(-1, n, n)
    C = np.einsum("bki,bkj->bij", R, R)
    C[:, np.arange(n), np.arange(n)] += eps
    return {"X": X, "h1": h1, "a1": a1, "h2": h2, "a2": a2, "R": R, "C": C, "masks": masks}


def _backward(p: MlpParams, cache, dC) -> list:
    # dC is the gradient w.r.t. the symmetric C; C = R^T R gives dR = R (dC + dC^T)
    R = cache["R"]
    masks = cache["masks"]
    dR = R @ (dC + np.swapaxes(dC, -1, -2))
    dout = dR.reshape(R.shape[0], -1)
    dL3 = dout.T @ cache["a2"]
    db3 = dout.sum(axis=0)
    da2 = dout @ p.L3
    if masks is not None:
        da2 = da2 * masks[1]
    dh2 = da2 * (cache["h2"] > 0)
    dL2 = dh2.T @ cache["a1"]
    db2 = dh2.sum(axis=0)
    da1 = dh2 @ p.L2
    if masks is not None:
        da1 = da1 * masks[0]
    dh1 = da1 * (cache["h1"] > 0)
    dL1 = dh1.T @ cache["X"]
    db1 = dh1.sum(axis=0)
    return [dL1, db1, dL2, db2, dL3, db3]


def forward_shape(p: MlpParams, x, eps: float, masks=None):
    """Return ``(R, C)`` for one feature vector or a row batch.

    Dropout is applied only when ``masks`` is given (training); inference is
    deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    cache = _forward(p, x[None, :] if single else x, eps, masks)
    R, C = cache["R"], cache["C"]
    return (R[0], C[0]) if single else (R, C)


def _batch(X, mu, Y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    return X, Y - mu


def lmve_loss_and_grad(p: MlpParams, X, mu, Y, lam: float, eps: float, masks=None):
    """Batch mean of ``M(x, y) + lam * det(C(x))^{1/2}`` and its gradient."""
    loss, grads = _lmve_terms(p, X, mu, Y, lam, eps, masks)
    return loss, MlpParams(*grads)


def _lmve_terms(p, X, mu, Y, lam, eps, masks, need_grad=True):
    X, r = _batch(X, mu, Y)
    cache = _forward(p, X, eps, masks)
    C = cache["C"]
    B, n = r.shape
    lower = batch_cholesky(C)
    z = batch_forward_solve(lower, r)
    maha = np.einsum("bi,bi->b", z, z)
    sqrt_det = np.exp(0.5 * batch_log_det(lower=lower))
    loss = float(np.mean(maha + lam * sqrt_det))
    if not need_grad:
        return loss, None
    # C^{-1} from the triangular inverse: C^{-1} = L^{-T} L^{-1}
    linv = np.swapaxes(batch_forward_solve(lower[:, None, :, :], np.eye(n)), -1, -2)
    cinv = np.swapaxes(linv, -1, -2) @ linv
    w = np.einsum("bij,bj->bi", cinv, r)
    dC = -np.einsum("bi,bj->bij", w, w) + (0.5 * lam) * sqrt_det[:, None, None] * cinv
    return loss, _backward(p, cache, dC / B)


def lmve_loss(p: MlpParams, X, mu, Y, lam: float, eps: float, masks=None) -> float:
    return _lmve_terms(p, X, mu, Y, lam, eps, masks, need_grad=False)[0]


def lmve_grad(p: MlpParams, X, mu, Y, lam: float, eps: float, masks=None) -> MlpParams:
    return MlpParams(*_lmve_terms(p, X, mu, Y, lam, eps, masks)[1])


def imitation_loss_and_grad(p: MlpParams, X, targets, eps: float, masks=None):
    """Mean squared Frobenius error between ``C(x_i)`` and target shapes."""
    loss, grads = _imitation_terms(p, X, targets, eps, masks)
    return loss, MlpParams(*grads)


def _imitation_terms(p, X, targets, eps, masks):
    cache = _forward(p, np.atleast_2d(X), eps, masks)
    diff = cache["C"] - targets
    B = diff.shape[0]
    loss = float(np.sum(diff * diff) / B)
    return loss, _backward(p, cache, 2.0 * diff / B)


class Adam:
    def __init__(self, params: MlpParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, arrays, grads):
        """Update ``arrays`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _grad_norm(grads):
    return float(math.sqrt(sum(float(np.sum(a * a)) for a in grads)))


def _run_adam(phase, params, n_iter, lr, config, rng, m, step_fn, history):
    if n_iter == 0:
        return params
    work = MlpParams(*(a.copy() for a in params.arrays()))
    arrays = work.arrays()
    opt = Adam(work, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    bs = m if config.batch_size is None else min(config.batch_size, m)
    perm = rng.permutation(m)
    pos = 0
    for it in range(n_iter):
        if pos + bs > m:
            perm = rng.permutation(m)
            pos = 0
        idx = perm[pos : pos + bs]
        pos += bs
        masks = dropout_masks(rng, bs, work.d, config.dropout_rate)
        try:
            loss, grad = step_fn(work, idx, masks)
        except InvalidEllipsoidError as exc:
            raise TrainingDivergedError(phase, it, float("nan"), float("nan")) from exc
        norm = _grad_norm(grad)
        if not (math.isfinite(loss) and math.isfinite(norm)):
            raise TrainingDivergedError(phase, it, loss, norm)
        opt.step(arrays, grad)
        if history is not None:
            history.append(loss)
    return MlpParams(*arrays)


def init_phase(params: MlpParams, X, targets, eps: float, config: TrainConfig, rng=None, history=None) -> MlpParams:
    """Adam regression of ``C(x_i)`` onto baseline shapes ``targets[i]``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)

    def step(p, idx, masks):
        return _imitation_terms(p, X[idx], targets[idx], eps, masks)

    return _run_adam("init", params, config.iters_init, config.lr_init, config, rng, X.shape[0], step, history)


def train_phase(params: MlpParams, X, mu, Y, lam: float, eps: float, config: TrainConfig, rng=None, history=None) -> MlpParams:
    """Adam on the penalized Mahalanobis-plus-volume loss; centers ``mu`` are fixed."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    X = np.asarray(X, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)

    def step(p, idx, masks):
        return _lmve_terms(p, X[idx], mu[idx], Y[idx], lam, eps, masks)

    return _run_adam("train", params, config.iters_train, config.lr_train, config, rng, X.shape[0], step, history)


def select_lambda(baseline, X_train, Y_train, exponent: str = "det") -> float:
    """Ratio of the mean calibrated Mahalanobis score to the mean ``det`` of
    the calibrated baseline shapes (``det^{1/2}`` with ``exponent='sqrt_det'``)."""
    shapes = baseline.shapes(X_train)
    lower = batch_cholesky(shapes)
    maha = batch_mahalanobis(baseline.centers(X_train), None, Y_train, lower=lower)
    logdet = batch_log_det(lower=lower)
    power = {"det": 1.0, "sqrt_det": 0.5}[exponent]
    denom = float(np.mean(np.exp(power * logdet)))
    if not denom > 0:
        raise ValueError("baseline determinant average is zero")
    return float(np.mean(maha)) / denom


@dataclass(frozen=True)
class LmveShape(ShapeModel):
    params: MlpParams
    eps: float
    standardization: Standardizer
    info: dict = field(default_factory=dict, compare=False)
    kind = "LMVE"

    @property
    def n(self):
        return self.params.n

    def shape_at(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return forward_shape(self.params, self.standardization.apply(X), self.eps)[1]


def fit_lmve(X_train, Y_train, center: CenterModel, config: TrainConfig, history=None) -> LmveShape:
    """Initialization on NLE shapes, lambda selection, then penalized training.

    ``history`` (optional dict) collects per-step losses under ``"init"`` and
    ``"train"``. The chosen ``lambda`` and ``eps`` are stored in ``info``.
    """
    X = np.asarray(X_train, dtype=np.float64)
    Y = np.asarray(Y_train, dtype=np.float64)
    rng = np.random.default_rng(config.seed)
    mu = center.predict(X)
    resid = Y - mu
    ge = fit_ge(resid)
    n = Y.shape[1]
    eps = config.epsilon * (np.trace(ge.matrix) / n if config.epsilon_relative else 1.0)
    std = standardize(X)
    Xs = std.apply(X)

    nle = fit_nle(X, resid, config.nle_fraction, config.nle_mix)
    targets = nle.shape_at(X)
    guess = ge.matrix - eps * np.eye(n)
    theta = init_params(X.shape[1], n, rng, guess)
    h_init = [] if history is not None else None
    theta = init_phase(theta, Xs, targets, eps, config, rng, h_init)

    if config.lam == "auto":
        baseline = conformal_calibrate(nle, center, X, Y, config.eta)
        lam = select_lambda(baseline, X, Y, config.lambda_exponent)
    else:
        lam = float(config.lam)
    logger.debug("lmve: eps=%g lambda=%g", eps, lam)
    h_train = [] if history is not None else None
    theta = train_phase(theta, Xs, mu, Y, lam, eps, config, rng, h_train)
    if history is not None:
        history["init"] = h_init
        history["train"] = h_train
    return LmveShape(theta, float(eps), std, {"lambda": float(lam), "eps": float(eps)})


# Checkpoint layout (text, one value per token, floats in repr form so they
# round-trip exactly):
#   line 1: "LMVE-CHECKPOINT 1"
#   line 2: "<d> <n> <eps>"
#   then one line per array in the order L1 b1 L2 b2 L3 b3:
#   "<name> <rows> <cols> v0 v1 ..." (row-major; vectors use cols = 1)

_CKPT_MAGIC = "LMVE-CHECKPOINT"
_CKPT_VERSION = 1


def save_checkpoint(path, params: MlpParams, eps: float) -> None:
    lines = [f"{_CKPT_MAGIC} {_CKPT_VERSION}", f"{params.d} {params.n} {float(eps)!r}"]
    for name, arr in zip(_ORDER, params.arrays()):
        rows, cols = (arr.shape[0], arr.shape[1]) if arr.ndim == 2 else (arr.shape[0], 1)
        vals = " ".join(repr(float(v)) for v in arr.ravel())
        lines.append(f"{name} {rows} {cols} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Return ``(params, eps)``."""
    lines = Path(path).read_text().splitlines()
    magic, version = lines[0].split()
    if magic != _CKPT_MAGIC or int(version) != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint header {lines[0]!r}")
    d, n, eps = lines[1].split()
    d, n, eps = int(d), int(n), float(eps)
    arrays = {}
    for line in lines[2:8]:
        name, rows, cols, *vals = line.split()
        arr = np.array([float(v) for v in vals])
        arrays[name] = arr.reshape(int(rows), int(cols)) if name.startswith("L") else arr
    params = MlpParams(*(arrays[k] for k in _ORDER))
    if (params.d, params.n) != (d, n):
        raise ValueError(f"{path}: header says d={d}, n={n} but arrays disagree")
    return params, eps
