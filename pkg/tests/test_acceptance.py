"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the verdict lines are printed
in an "acceptance criteria" section at the end of the session.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy.special import gammainc

from lmve import (
    chi2_inv_cdf,
    conformal_calibrate,
    evaluate,
    fit_center,
    fit_ge,
    fit_nle,
    optimal_single_ellipsoid,
    split_dataset,
)
from lmve.estimators import ShapeModel
from lmve.net import MlpParams, forward_shape, init_params, lmve_grad, lmve_loss
from lmve.bench import ExperimentConfig, run_experiment
from lmve.cli import gaussian_check, main
from lmve.data import resolve_dataset_path

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


def _verdict(number, title, ok, detail, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail} | {seconds:.1f}s"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


class _Scaled(ShapeModel):
    def __init__(self, base, c):
        self.base, self.c = base, c

    @property
    def n(self):
        return self.base.n

    def shape_at(self, X):
        return self.c * self.base.shape_at(X)


def _random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.3 * np.eye(n)


def test_criterion_1_chi2_inverse():
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(1, 11):
        for i in range(1, 100):
            p = i / 100
            worst = max(worst, abs(gammainc(k / 2, chi2_inv_cdf(p, k) / 2) - p))
    x = chi2_inv_cdf(0.9, 2)
    closed = abs(x - (-2.0 * math.log(0.1)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and closed <= 1e-9 and dt < 1.0
    _verdict(1, "chi2 inverse CDF", ok, f"max |P-p| {worst:.1e}, n=2 p=0.9 err {closed:.1e}", dt)


def test_criterion_2_single_gaussian_coverage():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    draws = 1_000_000
    errs = []
    for eta in (0.5, 0.9, 0.95):
        cov = _random_spd(rng, 2)
        mean = rng.normal(size=2)
        e = optimal_single_ellipsoid(mean, cov, eta)
        y = rng.multivariate_normal(mean, cov, size=draws)
        z = np.linalg.solve(np.linalg.cholesky(e.shape), (y - mean).T)
        errs.append(float(np.mean(np.sum(z * z, axis=0) <= 1.0)) - eta)
    dt = time.perf_counter() - t0
    ok = max(abs(e) for e in errs) <= 1e-3
    _verdict(2, "Gaussian ellipsoid MC coverage", ok, "errors " + ", ".join(f"{e:+.4f}" for e in errs), dt)


def test_criterion_3_gaussian_end_to_end():
    t0 = time.perf_counter()
    results = dict(
        (name, (passed, detail))
        for name, passed, detail in gaussian_check(d=3, n=2, eta=0.9, m=5000, mc_draws=100_000, seed=0, lmve=True)
    )
    oracle = results["oracle shape: coverage and volume"]
    net = results["LMVE: coverage and volume"]
    dt = time.perf_counter() - t0
    ok = oracle[0] and net[0] and dt <= 600
    _verdict(3, "Gaussian end to end", ok, f"oracle {oracle[1]}; LMVE {net[1]}", dt)


def test_criterion_4_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    d, n, h = 3, 2, 1e-5
    worst = 0.0
    for _ in range(20):
        p = init_params(d, n, rng, shape_guess=_random_spd(rng, n))
        p = MlpParams.from_vector(p.to_vector() + 0.1 * rng.normal(size=p.to_vector().size), d, n)
        X = rng.normal(size=(6, d))
        mu = rng.normal(size=(6, n))
        Y = mu + rng.normal(size=(6, n))
        lam, eps = float(rng.uniform(0.1, 2.0)), 1e-3
        g = lmve_grad(p, X, mu, Y, lam, eps).to_vector()
        v = p.to_vector()
        fd = np.empty_like(v)
        for i in range(v.size):
            vp, vm = v.copy(), v.copy()
            vp[i] += h
            vm[i] -= h
            fd[i] = (
                lmve_loss(MlpParams.from_vector(vp, d, n), X, mu, Y, lam, eps)
                - lmve_loss(MlpParams.from_vector(vm, d, n), X, mu, Y, lam, eps)
            ) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd)))
    dt = time.perf_counter() - t0
    _verdict(4, "analytic gradient vs central differences", worst <= 1e-5, f"max relative error {worst:.1e}", dt)


def test_criterion_5_conformal_validity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    d, n, eta = 3, 2, 0.9
    W = rng.normal(size=(n, d))

    def draw(m):
        X = rng.normal(size=(m, d))
        # heteroscedastic noise keeps the GE shape misspecified
        noise = rng.normal(size=(m, n)) * (0.5 + np.abs(X[:, :1]))
        return X, X @ W.T + noise

    Xt, Yt = draw(400)
    center = fit_center(Xt, Yt)
    shape = fit_ge(Yt - center.predict(Xt))
    covs = []
    for _ in range(200):
        Xc, Yc = draw(100)
        Xs, Ys = draw(500)
        covs.append(evaluate(conformal_calibrate(shape, center, Xc, Yc, eta), Xs, Ys).coverage)
    mean = float(np.mean(covs))
    dt = time.perf_counter() - t0
    _verdict(5, "split-conformal validity", 0.89 <= mean <= 0.93 and dt <= 120, f"mean coverage {mean:.4f}", dt)


def test_criterion_6_enb_ordering():
    t0 = time.perf_counter()
    try:
        resolve_dataset_path("enb")
    except FileNotFoundError as exc:
        _verdict(6, "enb ordering", False, f"dataset unavailable: {exc}", time.perf_counter() - t0)
    cfg = ExperimentConfig(dataset="enb", methods=("GE", "NLE", "LMVE"), eta=0.9, repetitions=20, base_seed=0)
    report = run_experiment(cfg)
    agg = {a["method"]: a for a in report.aggregates}
    covs_ok = len(agg) == 3 and all(0.84 <= a["coverage_mean"] <= 0.95 for a in agg.values())
    vol = {k: a["volume_mean"] for k, a in agg.items()}
    order_ok = len(agg) == 3 and vol["LMVE"] < vol["GE"] and vol["LMVE"] <= 1.10 * vol["NLE"]
    dt = time.perf_counter() - t0
    detail = ", ".join(f"{k} cov {a['coverage_mean']:.3f} vol {a['volume_mean']:.3g}" for k, a in agg.items())
    _verdict(6, "enb ordering", covs_ok and order_ok and dt <= 3600, detail, dt)


def test_criterion_7_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    notes = []

    # positive definite output for random parameters and inputs
    worst_gap = np.inf
    d, n, eps = 3, 2, 1e-4
    size = MlpParams.zeros(d, n).to_vector().size
    for _ in range(10_000):
        p = MlpParams.from_vector(rng.normal(scale=rng.uniform(0.01, 3.0), size=size), d, n)
        _, C = forward_shape(p, rng.normal(scale=3.0, size=d), eps)
        worst_gap = min(worst_gap, np.linalg.eigvalsh(C)[0] - eps * (1 - 1e-9))
    pd_ok = worst_gap >= 0
    notes.append(f"eigmin-eps {worst_gap:.1e}")

    # calibration scaling invariance
    X = rng.normal(size=(300, d))
    Y = X[:, :n] + (0.3 + np.abs(X[:, 2:3])) * rng.normal(size=(300, n))
    center = fit_center(X[:200], Y[:200])
    nle = fit_nle(X[:200], Y[:200] - center.predict(X[:200]), fraction=0.1)
    Xv, Yv = X[200:], Y[200:]
    ref = conformal_calibrate(nle, center, Xv, Yv, 0.9)
    scale_err = 0.0
    for c in (1e-3, 0.37, 5.0, 1e4):
        got = conformal_calibrate(_Scaled(nle, c), center, Xv, Yv, 0.9)
        a, b = ref.shapes(Xv), got.shapes(Xv)
        scale_err = max(scale_err, abs(got.alpha_q * c / ref.alpha_q - 1), float(np.max(np.abs(a - b) / np.abs(a).max())))
    notes.append(f"scaling {scale_err:.1e}")

    # NLE with every training point as a neighbor equals GE
    r = Y[:200] - center.predict(X[:200])
    collapse = fit_nle(X[:200], r, fraction=1.0, mix=0.6)
    ge = fit_ge(r).matrix
    collapse_err = float(np.max(np.abs(collapse.shape_at(X[200:]) - ge)) / np.abs(ge).max())
    notes.append(f"collapse {collapse_err:.1e}")

    # split determinism and disjointness
    split_ok = True
    for seed in range(100):
        a, b = split_dataset(768, seed), split_dataset(768, seed)
        same = all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("train_idx", "val_idx", "test_idx"))
        allidx = np.concatenate([a.train_idx, a.val_idx, a.test_idx])
        split_ok &= same and np.array_equal(np.sort(allidx), np.arange(768))
    notes.append(f"splits {'ok' if split_ok else 'bad'}")
    dt = time.perf_counter() - t0
    ok = pd_ok and scale_err <= 1e-12 and collapse_err <= 1e-12 and split_ok and dt < 60
    _verdict(7, "invariant suites", ok, ", ".join(notes), dt)


def test_criterion_8_reproducible_reports(tmp_path, capsys):
    t0 = time.perf_counter()
    args = [
        "run", "--dataset", "synthetic:d=3,n=2,m=800,seed=8", "--reps", "3", "--methods", "ge,nle,lmve",
        "--train", "iters_init=300", "--train", "iters_train=300",
    ]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()

    def structured(out):
        lines = (out / "records.jsonl").read_text().splitlines()
        recs = [{k: v for k, v in json.loads(x).items() if k != "wall_time"} for x in lines]
        body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in recs).encode()
        return body + (out / "aggregates.json").read_bytes() + (out / "config.json").read_bytes()

    same = structured(tmp_path / "a") == structured(tmp_path / "b")
    _verdict(8, "byte-identical structured reports", same, "records, aggregates, config", time.perf_counter() - t0)
