"""Dataset loading, seeded 81/9/10 splitting, standardization and the
benchmark dataset registry."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "Split",
    "Standardizer",
    "DatasetInfo",
    "REGISTRY",
    "SPLIT_FRACTIONS",
    "load_csv",
    "split_dataset",
    "standardize",
    "split_sizes",
    "save_cache",
    "load_cache",
    "resolve_dataset_path",
    "load_registered",
    "is_cache_file",
]

SPLIT_FRACTIONS = (0.81, 0.09, 0.10)


@dataclass
class Dataset:
    name: str
    X: np.ndarray
    Y: np.ndarray
    feature_names: list = field(default_factory=list)
    label_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise ValueError("X and Y must be 2-d")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows, Y has {self.Y.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("dataset contains non-finite entries")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]
        if not self.label_names:
            self.label_names = [f"y{i}" for i in range(self.Y.shape[1])]

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.Y.shape[1]


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    fractions: tuple = SPLIT_FRACTIONS

    def checksum(self) -> str:
        h = hashlib.sha256()
        for idx in (self.train_idx, self.val_idx, self.test_idx):
            h.update(np.asarray(idx, dtype=np.int64).tobytes())
            h.update(b"|")
        return h.hexdigest()[:16]


def split_sizes(m: int) -> tuple[int, int, int]:
    """floor(0.81 m) train, floor(0.09 m) val, remainder test."""
    # the small offset keeps e.g. 0.81 * 100 = 81.00000000000001 from flooring low
    n_train = math.floor(SPLIT_FRACTIONS[0] * m + 1e-9)
    n_val = math.floor(SPLIT_FRACTIONS[1] * m + 1e-9)
    return n_train, n_val, m - n_train - n_val


def split_dataset(ds: Dataset | int, seed: int) -> Split:
    """Uniform random permutation under ``seed`` cut into 81/9/10 blocks."""
    m = ds if isinstance(ds, int) else ds.m
    if m < 12:
        raise ValueError(f"need at least 12 rows to split, got {m}")
    n_train, n_val, _ = split_sizes(m)
    perm = np.random.default_rng(seed).permutation(m)
    return Split(
        train_idx=perm[:n_train],
        val_idx=perm[n_train : n_train + n_val],
        test_idx=perm[n_train + n_val :],
        seed=seed,
    )


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, rows):
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.scale


def standardize(fit_rows, floor: float = 1e-12) -> Standardizer:
    """Per-column ``(x - mean) / std`` fitted on ``fit_rows`` only."""
    rows = np.asarray(fit_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need a nonempty 2-d array to fit a standardizer")
    mean = rows.mean(axis=0)
    scale = np.maximum(rows.std(axis=0), floor)
    return Standardizer(mean=mean, scale=scale)


def _resolve_columns(header: Sequence[str], cols) -> list[int]:
    out = []
    for c in cols:
        if isinstance(c, (int, np.integer)) or (isinstance(c, str) and c.lstrip("-").isdigit() and c not in header):
            i = int(c)
            if not -len(header) <= i < len(header):
                raise ValueError(f"label column index {i} out of range")
            out.append(i % len(header))
        else:
            if c not in header:
                raise ValueError(f"label column {c!r} not found in header {list(header)}")
            out.append(list(header).index(c))
    return out


def load_csv(path, label_columns, delimiter: str = ",", feature_columns=None, name=None) -> Dataset:
    """Read a delimited text file with a header row.

    Columns listed in ``label_columns`` (names or indices) form ``Y``; the
    rest (or ``feature_columns`` if given) form ``X``, in file order. Rows
    with a missing or non-numeric cell are dropped and counted in the log.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        label_idx = _resolve_columns(header, label_columns)
        if not label_idx:
            raise ValueError("at least one label column is required")
        if feature_columns is None:
            feat_idx = [i for i in range(len(header)) if i not in label_idx]
        else:
            feat_idx = _resolve_columns(header, feature_columns)
        rows = []
        dropped = 0
        for rec in reader:
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                dropped += 1
                continue
            if len(vals) != len(header) or not all(math.isfinite(v) for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    if dropped:
        logger.warning("%s: dropped %d malformed row(s)", path.name, dropped)
    if not rows:
        raise ValueError(f"{path} has no usable rows")
    arr = np.array(rows, dtype=np.float64)
    ds = Dataset(
        name=name or path.stem,
        X=arr[:, feat_idx],
        Y=arr[:, label_idx],
        feature_names=[header[i] for i in feat_idx],
        label_names=[header[i] for i in label_idx],
    )
    ds.dropped_rows = dropped
    return ds


# Cache format: '#'-prefixed header lines, a CSV body with features then
# labels, and a final '# sha256: <hex>' line over every preceding byte.

_CACHE_MAGIC = "# lmve-dataset v1"


def save_cache(ds: Dataset, path) -> None:
    buf = io.StringIO()
    buf.write(_CACHE_MAGIC + "\n")
    buf.write(f"# name: {ds.name}\n")
    buf.write(f"# shape: {ds.m} {ds.d} {ds.n}\n")
    buf.write(f"# labels: {','.join(ds.label_names)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(ds.feature_names) + list(ds.label_names))
    for x, y in zip(ds.X, ds.Y):
        w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
    body = buf.getvalue()
    digest = hashlib.sha256(body.encode()).hexdigest()
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(body + f"# sha256: {digest}\n")
    os.replace(tmp, path)


def load_cache(path) -> Dataset:
    text = Path(path).read_text()
    body, _, last = text.rstrip("\n").rpartition("\n")
    body += "\n"
    if not text.startswith(_CACHE_MAGIC) or not last.startswith("# sha256: "):
        raise ValueError(f"{path} is not an lmve dataset cache")
    if hashlib.sha256(body.encode()).hexdigest() != last.split(": ", 1)[1].strip():
        raise ValueError(f"{path}: checksum mismatch")
    meta = {}
    lines = body.splitlines()
    i = 0
    while lines[i].startswith("#"):
        if ": " in lines[i]:
            k, v = lines[i][2:].split(": ", 1)
            meta[k] = v
        i += 1
    m, d, n = (int(v) for v in meta["shape"].split())
    header = next(csv.reader([lines[i]]))
    arr = np.array([[float(c) for c in r] for r in csv.reader(lines[i + 1 :])], dtype=np.float64)
    arr = arr.reshape(m, d + n)
    return Dataset(meta["name"], arr[:, :d], arr[:, d:], header[:d], header[d:])


@dataclass(frozen=True)
class DatasetInfo:
    """Registry entry. ``m, d, n`` are the published sizes the prepared file must match."""

    name: str
    m: int
    d: int
    n: int
    labels: tuple
    filename: str


REGISTRY = {
    "ble_rssi": DatasetInfo("ble_rssi", 1420, 13, 2, ("x", "y"), "ble_rssi.csv"),
    "enb": DatasetInfo("enb", 768, 8, 2, ("Y1", "Y2"), "enb.csv"),
    "indoor_localization": DatasetInfo(
        "indoor_localization", 19937, 519, 2, ("LONGITUDE", "LATITUDE"), "indoor_localization.csv"
    ),
    "residential_building": DatasetInfo(
        "residential_building", 372, 103, 2, ("V-9", "V-10"), "residential_building.csv"
    ),
}


def resolve_dataset_path(name: str, data_dir=None) -> Path:
    """Locate a registered dataset's prepared CSV.

    Search order: ``data_dir``, ``$LMVE_DATA_DIR``, ``./data``.
    """
    info = REGISTRY[name]
    candidates = []
    for base in (data_dir, os.environ.get("LMVE_DATA_DIR"), "data"):
        if base:
            candidates.append(Path(base) / info.filename)
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(
        f"dataset {name!r} not found (looked in {', '.join(map(str, candidates))}); "
        "see docs/datasets.md for how to prepare it"
    )


def load_registered(name: str, data_dir=None, check_shape: bool = True, cache: bool = True) -> Dataset:
    """Load a prepared registry CSV, checking its shape against the registry.

    With ``cache`` the parsed data is written next to the CSV as
    ``<name>.lmve.csv`` and read from there while the cache is newer than the
    CSV and its checksum verifies.
    """
    info = REGISTRY[name]
    path = resolve_dataset_path(name, data_dir)
    cached = path.with_name(f"{name}.lmve.csv")
    ds = None
    if cache and cached.is_file() and cached.stat().st_mtime >= path.stat().st_mtime:
        try:
            ds = load_cache(cached)
        except (ValueError, KeyError, IndexError) as exc:
            logger.warning("ignoring cache %s: %s", cached, exc)
    if ds is None:
        ds = load_csv(path, list(info.labels), name=name)
        if cache:
            try:
                save_cache(ds, cached)
            except OSError as exc:
                logger.warning("could not write cache %s: %s", cached, exc)
    if check_shape and (ds.m, ds.d, ds.n) != (info.m, info.d, info.n):
        raise ValueError(
            f"{name}: prepared file has (m, d, n) = {(ds.m, ds.d, ds.n)}, "
            f"expected {(info.m, info.d, info.n)}"
        )
    return ds


def is_cache_file(path) -> bool:
    try:
        with open(path) as fh:
            return fh.readline().rstrip("\n") == _CACHE_MAGIC
    except (OSError, UnicodeDecodeError):
        return False
