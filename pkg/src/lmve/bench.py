"""Repeated-split benchmark: per-seed runs of every method, aggregation to
mean/std tables and line-delimited JSON records."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .center import fit_center
from .data import Dataset, is_cache_file, load_cache, load_csv, load_registered, REGISTRY, split_dataset
from .estimators import OracleShape, conformal_calibrate, evaluate, fit_ge, fit_nle
from .gaussian import JointGaussianSpec, condition, random_joint_spec, sample_joint
from .net import TrainConfig, fit_lmve

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "ExperimentReport",
    "load_dataset",
    "run_seed",
    "run_experiment",
    "aggregate_report",
    "render_table",
    "write_report",
    "load_report",
    "strip_timing",
]

METHODS = ("GE", "NLE", "LMVE", "oracle")
RECORDS_FILE = "records.jsonl"
AGGREGATES_FILE = "aggregates.json"
TABLE_FILE = "table.txt"
CONFIG_FILE = "config.json"
TIMING_FIELDS = ("wall_time",)


@dataclass
class ExperimentConfig:
    dataset: str
    labels: list | None = None
    methods: tuple = ("GE", "NLE", "LMVE")
    eta: float = 0.9
    repetitions: int = 50
    base_seed: int = 0
    center_kind: str = "linear-ridge"
    full: bool = False
    train: dict = field(default_factory=dict)
    out: str | None = None
    workers: int | None = None
    data_dir: str | None = None
    delimiter: str = ","

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        methods = []
        for m in self.methods:
            canon = {k.lower(): k for k in METHODS}.get(str(m).lower())
            if canon is None:
                raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
            methods.append(canon)
        self.methods = tuple(methods)
        unknown = set(self.train) - set(TrainConfig.field_names())
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")

    def train_config(self, seed: int) -> TrainConfig:
        base = TrainConfig(eta=self.eta, seed=seed) if self.full else TrainConfig.desk(eta=self.eta, seed=seed)
        fields_ = {**asdict(base), **self.train, "seed": seed, "eta": self.eta}
        return TrainConfig(**fields_)


@dataclass
class ExperimentReport:
    records: list
    aggregates: list
    config: dict

    @property
    def failed_seeds(self):
        return sorted({r["seed"] for r in self.records if r["status"] != "ok"})

    @property
    def failure_fraction(self):
        seeds = {r["seed"] for r in self.records}
        return len(self.failed_seeds) / max(1, len(seeds))


def _parse_synthetic(name):
    # "synthetic:d=3,n=2,m=5000,seed=0"
    opts = {"d": 3, "n": 2, "m": 5000, "seed": 0}
    _, _, rest = name.partition(":")
    for kv in filter(None, rest.split(",")):
        k, v = kv.split("=")
        if k.strip() not in opts:
            raise ValueError(f"unknown synthetic option {k!r}")
        opts[k.strip()] = int(v)
    return opts


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, JointGaussianSpec | None]:
    """Resolve ``cfg.dataset`` to data (plus the generating spec for synthetic data)."""
    name = cfg.dataset
    if name == "synthetic" or name.startswith("synthetic:"):
        o = _parse_synthetic(name)
        spec = random_joint_spec(o["d"], o["n"], o["seed"])
        return sample_joint(spec, o["m"], o["seed"]), spec
    if name in REGISTRY:
        return load_registered(name, cfg.data_dir), None
    if is_cache_file(name):
        return load_cache(name), None
    if not cfg.labels:
        raise ValueError("--labels is required when --dataset is a file path")
    return load_csv(name, cfg.labels, delimiter=cfg.delimiter), None


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def run_seed(cfg: ExperimentConfig, ds: Dataset, spec: JointGaussianSpec | None, seed: int) -> list[dict]:
    """One repetition: shared split and center, then every method."""
    split = split_dataset(ds, seed)
    Xt, Yt = ds.X[split.train_idx], ds.Y[split.train_idx]
    Xv, Yv = ds.X[split.val_idx], ds.Y[split.val_idx]
    Xs, Ys = ds.X[split.test_idx], ds.Y[split.test_idx]
    split_sum = split.checksum()
    records = []
    try:
        center = fit_center(Xt, Yt, cfg.center_kind, _center_hyper(cfg, spec))
        mu_t = center.predict(Xt)
        center_sum = _digest(mu_t)
    except Exception as exc:  # noqa: BLE001 - recorded as a diagnostic
        return [_failure(m, seed, split_sum, None, exc, 0.0) for m in cfg.methods]
    resid = Yt - mu_t

    for method in cfg.methods:
        t0 = time.perf_counter()
        lam = None
        try:
            if method == "GE":
                shape = fit_ge(resid)
            elif method == "NLE":
                shape = fit_nle(Xt, resid)
            elif method == "LMVE":
                shape = fit_lmve(Xt, Yt, center, cfg.train_config(seed))
                lam = shape.info["lambda"]
            else:
                if spec is None:
                    raise ValueError("the oracle method needs a synthetic Gaussian dataset")
                shape = OracleShape(condition(spec))
            model = conformal_calibrate(shape, center, Xv, Yv, cfg.eta)
            ev = evaluate(model, Xs, Ys)
        except Exception as exc:  # noqa: BLE001 - recorded as a diagnostic
            logger.warning("seed %d, %s failed: %s", seed, method, exc)
            records.append(_failure(method, seed, split_sum, center_sum, exc, time.perf_counter() - t0))
            continue
        records.append(
            {
                "method": method,
                "seed": seed,
                "status": "ok",
                "coverage": ev.coverage,
                "mean_volume": ev.mean_volume,
                "alpha_q": model.alpha_q,
                "lambda": lam,
                "m_train": int(Xt.shape[0]),
                "m_calib": int(Xv.shape[0]),
                "m_test": int(Xs.shape[0]),
                "split_checksum": split_sum,
                "center_checksum": center_sum,
                "wall_time": time.perf_counter() - t0,
            }
        )
    return records


def _center_hyper(cfg, spec):
    if cfg.center_kind == "oracle-gaussian":
        if spec is None:
            raise ValueError("oracle-gaussian centers need a synthetic Gaussian dataset")
        return {"conditional": condition(spec)}
    return None


def _failure(method, seed, split_sum, center_sum, exc, wall):
    return {
        "method": method,
        "seed": seed,
        "status": "failed",
        "error": f"{type(exc).__name__}: {exc}",
        "split_checksum": split_sum,
        "center_checksum": center_sum,
        "wall_time": wall,
    }


def _seed_job(args):
    cfg, ds, spec, seed = args
    return run_seed(cfg, ds, spec, seed)


def run_experiment(cfg: ExperimentConfig, dataset: tuple | None = None) -> ExperimentReport:
    """Run every repetition, aggregate, and write the report if ``cfg.out`` is set.

    ``dataset`` may pass a preloaded ``(Dataset, spec_or_None)`` pair.
    """
    ds, spec = dataset if dataset is not None else load_dataset(cfg)
    seeds = range(cfg.base_seed, cfg.base_seed + cfg.repetitions)
    workers = cfg.workers or os.cpu_count() or 1
    jobs = [(cfg, ds, spec, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            per_seed = list(pool.map(_seed_job, jobs))
    else:
        per_seed = [_seed_job(j) for j in jobs]
    records = [r for recs in per_seed for r in recs]
    ok = [r for r in records if r["status"] == "ok"]
    aggregates = aggregate_report(ok) if ok else []
    config = {k: v for k, v in asdict(cfg).items() if k not in ("out", "workers")}
    config["methods"] = list(cfg.methods)
    config["dataset_shape"] = [ds.m, ds.d, ds.n]
    report = ExperimentReport(records=records, aggregates=aggregates, config=config)
    if cfg.out:
        write_report(report, cfg.out)
    return report


def aggregate_report(records) -> list[dict]:
    """Per-method mean and sample std (ddof=1) of coverage and mean volume."""
    if not records:
        raise ValueError("no records to aggregate")
    order = [m for m in METHODS if any(r["method"] == m for r in records)]
    rows = []
    for method in order:
        recs = [r for r in records if r["method"] == method]
        cov = np.array([r["coverage"] for r in recs], dtype=np.float64)
        vol = np.array([r["mean_volume"] for r in recs], dtype=np.float64)
        single = len(recs) == 1
        rows.append(
            {
                "method": method,
                "reps": len(recs),
                "coverage_mean": float(cov.mean()),
                "coverage_std": 0.0 if single else float(cov.std(ddof=1)),
                "volume_mean": float(vol.mean()),
                "volume_std": 0.0 if single else float(vol.std(ddof=1)),
                "single_rep": single,
            }
        )
    return rows


def _fmt_volume(v):
    if v == 0 or 1e-2 <= abs(v) < 1e4:
        return f"{v:.2f}"
    return f"{v:.2e}"


def render_table(aggregates, title=None) -> str:
    """Aligned text: coverage (%) block above mean-volume block."""
    if not aggregates:
        return "(no successful runs)\n"
    names = [a["method"] for a in aggregates]
    cov = [f"{100 * a['coverage_mean']:.1f} (±{100 * a['coverage_std']:.1f})" for a in aggregates]
    vol = [f"{_fmt_volume(a['volume_mean'])} (±{_fmt_volume(a['volume_std'])})" for a in aggregates]
    label_w = len("volume")
    widths = [max(len(nm), len(c), len(v)) for nm, c, v in zip(names, cov, vol)]

    def row(label, cells):
        return "  ".join([label.ljust(label_w)] + [c.rjust(w) for c, w in zip(cells, widths)])

    head = row("", names)
    rule = "-" * len(head)
    lines = []
    if title:
        lines.append(title)
    lines += [rule, head, rule, row("cover", cov), rule, row("volume", vol), rule]
    if any(a["single_rep"] for a in aggregates):
        lines.append("note: single repetition, std reported as 0")
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_report(report: ExperimentReport, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in report.records)
    _atomic_write(out / RECORDS_FILE, lines)
    _atomic_write(out / AGGREGATES_FILE, json.dumps(report.aggregates, sort_keys=True, indent=1) + "\n")
    _atomic_write(out / CONFIG_FILE, json.dumps(report.config, sort_keys=True, indent=1) + "\n")
    title = f"{report.config.get('dataset')}: coverage and mean volume at eta={report.config.get('eta')}"
    _atomic_write(out / TABLE_FILE, render_table(report.aggregates, title))
    return out


def load_report(out) -> ExperimentReport:
    """Read a report directory and check that stored aggregates match the records."""
    out = Path(out)
    records = [json.loads(line) for line in (out / RECORDS_FILE).read_text().splitlines() if line.strip()]
    stored = json.loads((out / AGGREGATES_FILE).read_text())
    config = json.loads((out / CONFIG_FILE).read_text()) if (out / CONFIG_FILE).exists() else {}
    ok = [r for r in records if r["status"] == "ok"]
    recomputed = aggregate_report(ok) if ok else []
    if json.loads(json.dumps(recomputed)) != stored:
        raise ValueError(f"{out}: stored aggregates do not match per-seed records")
    return ExperimentReport(records=records, aggregates=stored, config=config)


def strip_timing(records):
    return [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in records]
