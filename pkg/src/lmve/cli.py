"""Command line entry point: ``lmve run | report | gaussian-check``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .bench import ExperimentConfig, load_report, render_table, run_experiment
from .net import TrainConfig

# keys accepted in --config files; train.<field> entries set TrainConfig fields
_RUN_KEYS = {
    "dataset": str,
    "labels": str,
    "eta": float,
    "reps": int,
    "methods": str,
    "seed": int,
    "out": str,
    "full": bool,
    "workers": int,
    "center": str,
    "data-dir": str,
    "delimiter": str,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(text: str, kind):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is None:
        # train options: infer from the literal
        low = text.lower()
        if low in ("none", "null"):
            return None
        if low in _TRUE | _FALSE and low not in ("0", "1"):
            return low in _TRUE
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
        return text
    return kind(text)


def read_config_file(path) -> tuple[dict, dict]:
    """Parse ``key = value`` lines; returns (run options, train overrides)."""
    run, train = {}, {}
    train_fields = set(TrainConfig.field_names())
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-") if not key.startswith("train.") else key
        if key.startswith("train."):
            name = key[len("train.") :]
            if name not in train_fields:
                raise ValueError(f"{path}:{lineno}: unknown training option {name!r}")
            train[name] = _coerce(value, None)
        elif key in _RUN_KEYS:
            run[key] = _coerce(value, _RUN_KEYS[key])
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return run, train


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_config(args) -> ExperimentConfig:
    file_run, file_train = read_config_file(args.config) if args.config else ({}, {})
    flags = {
        "dataset": args.dataset,
        "labels": args.labels,
        "eta": args.eta,
        "reps": args.reps,
        "methods": args.methods,
        "seed": args.seed,
        "out": args.out,
        "full": True if args.full else None,
        "workers": args.workers,
        "center": args.center,
        "data-dir": args.data_dir,
        "delimiter": args.delimiter,
    }
    opts = {**file_run, **{k: v for k, v in flags.items() if v is not None}}
    train = dict(file_train)
    for item in args.train or []:
        if "=" not in item:
            raise ValueError(f"--train expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        train[k.strip()] = _coerce(v, None)
    if "dataset" not in opts:
        raise ValueError("a dataset is required (--dataset or 'dataset =' in --config)")
    labels = opts.get("labels")
    return ExperimentConfig(
        dataset=opts["dataset"],
        labels=_split_list(labels) if labels else None,
        methods=tuple(_split_list(opts.get("methods", "ge,nle,lmve"))),
        eta=opts.get("eta", 0.9),
        repetitions=opts.get("reps", 50),
        base_seed=opts.get("seed", 0),
        center_kind=opts.get("center", "linear-ridge"),
        full=bool(opts.get("full", False)),
        train=train,
        out=opts.get("out"),
        workers=opts.get("workers"),
        data_dir=opts.get("data-dir"),
        delimiter=opts.get("delimiter", ","),
    )


def cmd_run(args) -> int:
    cfg = build_config(args)
    report = run_experiment(cfg)
    title = f"{cfg.dataset}: coverage and mean volume at eta={cfg.eta}"
    print(render_table(report.aggregates, title), end="")
    for r in report.records:
        if r["status"] != "ok":
            print(f"seed {r['seed']} {r['method']}: {r['error']}", file=sys.stderr)
    if cfg.out:
        print(f"report written to {cfg.out}")
    if report.failure_fraction > 0.10:
        print(
            f"{len(report.failed_seeds)} of {cfg.repetitions} seeds failed",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_report(args) -> int:
    report = load_report(args.dir)
    cfg = report.config
    print(render_table(report.aggregates, f"{cfg.get('dataset')}: coverage and mean volume at eta={cfg.get('eta')}"), end="")
    return 0


def gaussian_check(d=3, n=2, eta=0.9, m=5000, mc_draws=1_000_000, seed=0, lmve=False):
    """Oracle acceptance checks on a random joint Gaussian.

    Returns a list of ``(name, passed, detail)``.
    """
    from scipy.special import gammainc

    from .center import fit_center
    from .data import split_dataset
    from .estimators import OracleShape, conformal_calibrate, evaluate
    from .gaussian import (
        chi2_inv_cdf,
        condition,
        mc_coverage,
        optimal_single_ellipsoid,
        optimal_volume,
        random_joint_spec,
        sample_joint,
    )

    results = []
    worst = 0.0
    for k in range(1, 11):
        for i in range(1, 100):
            p = i / 100
            worst = max(worst, abs(gammainc(k / 2, chi2_inv_cdf(p, k) / 2) - p))
    results.append(("chi2 quantile inverts P(n/2, x/2)", worst <= 1e-10, f"max |P - p| = {worst:.2e}"))

    spec = random_joint_spec(d, n, seed)
    cond = condition(spec)
    marginal_y = optimal_single_ellipsoid(spec.mean_y, spec.cov_yy, eta)
    cov = mc_coverage(lambda X: marginal_y, spec, mc_draws, seed, vectorized=True)
    results.append(("single-Gaussian ellipsoid coverage", abs(cov - eta) <= 1e-3, f"{cov:.4f} vs {eta}"))

    ds = sample_joint(spec, m, seed)
    split = split_dataset(ds, seed)
    tr, va, te = split.train_idx, split.val_idx, split.test_idx
    center = fit_center(ds.X[tr], ds.Y[tr])
    opt = optimal_volume(cond.cond_cov, eta)
    model = conformal_calibrate(OracleShape(cond), center, ds.X[va], ds.Y[va], eta)
    ev = evaluate(model, ds.X[te], ds.Y[te])
    results.append(
        (
            "oracle shape: coverage and volume",
            0.87 <= ev.coverage <= 0.93 and abs(ev.mean_volume / opt - 1) <= 0.05,
            f"coverage {ev.coverage:.3f}, volume/optimum {ev.mean_volume / opt:.3f}",
        )
    )
    if lmve:
        from .net import fit_lmve

        cfg = TrainConfig.desk(eta=eta, seed=seed)
        shape = fit_lmve(ds.X[tr], ds.Y[tr], center, cfg)
        ev = evaluate(conformal_calibrate(shape, center, ds.X[va], ds.Y[va], eta), ds.X[te], ds.Y[te])
        results.append(
            (
                "LMVE: coverage and volume",
                0.86 <= ev.coverage <= 0.94 and abs(ev.mean_volume / opt - 1) <= 0.15,
                f"coverage {ev.coverage:.3f}, volume/optimum {ev.mean_volume / opt:.3f}",
            )
        )
    return results


def cmd_gaussian_check(args) -> int:
    t0 = time.perf_counter()
    results = gaussian_check(
        d=args.d, n=args.n, eta=args.eta, m=args.m, mc_draws=args.draws, seed=args.seed, lmve=args.lmve
    )
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    print(f"({time.perf_counter() - t0:.1f}s)")
    return 0 if all(ok for _, ok, _ in results) else 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmve", description="Calibrated minimum-volume uncertainty ellipsoids")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the repeated-split benchmark")
    r.add_argument("--dataset", help="registered name, CSV path, or synthetic[:d=..,n=..,m=..,seed=..]")
    r.add_argument("--labels", help="comma-separated label columns (names or indices) for CSV paths")
    r.add_argument("--eta", type=float)
    r.add_argument("--reps", type=int)
    r.add_argument("--methods", help="comma-separated subset of ge,nle,lmve,oracle")
    r.add_argument("--seed", type=int, help="first seed; repetitions use seed..seed+reps-1")
    r.add_argument("--out", help="report directory")
    r.add_argument("--full", action="store_true", help="100k+100k LMVE iterations instead of 10k+10k")
    r.add_argument("--config", help="key = value file; flags override it")
    r.add_argument("--workers", type=int, help="parallel seed workers (default: all cores)")
    r.add_argument("--center", choices=["linear-ridge", "knn-mean", "oracle-gaussian"])
    r.add_argument("--data-dir", help="directory holding prepared registry CSVs")
    r.add_argument("--delimiter")
    r.add_argument("--train", action="append", metavar="KEY=VALUE", help="override a training option")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="re-render tables from a report directory")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)

    g = sub.add_parser("gaussian-check", help="oracle acceptance checks on synthetic Gaussian data")
    g.add_argument("--d", type=int, default=3)
    g.add_argument("--n", type=int, default=2)
    g.add_argument("--eta", type=float, default=0.9)
    g.add_argument("--m", type=int, default=5000)
    g.add_argument("--draws", type=int, default=1_000_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lmve", action="store_true", help="also train and check the LMVE model")
    g.set_defaults(func=cmd_gaussian_check)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
