"""Windowed samples, the four training datasets, mini-batching and archives."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from quadfault.sim.flightlog import FlightLog, load_flight, save_flight

# Row order of every sample matrix.
ROWS = ("pdot", "qdot", "rdot", "w1sq", "w2sq", "w3sq", "w4sq")
N_ROWS = len(ROWS)
N_CLASSES = 5
ROLES = ("A", "B", "D", "E")
ARCHIVE_FORMAT = "quadfault-dataset/1"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    """A 7 x (L+1) input window; column j is time ``t - L + j``."""

    x: np.ndarray
    label: int
    domain: str
    origin: tuple[str, float]


def _window_ends(n_rows: int, L: int, stride: int) -> range:
    return range(L, n_rows, stride)


def window_flight(log: FlightLog, L: int, stride: int = 1) -> list[Sample]:
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    if L < 0:
        raise DataError(f"L must be >= 0, got {L}")
    n = len(log)
    if n < L + 1:
        warnings.warn(f"{log.flight_id}: {n} rows is shorter than the window ({L + 1}); no samples", stacklevel=2)
        return []
    sig = log.signals
    times = log.times
    return [
        Sample(sig[t - L : t + 1].T.copy(), log.label, log.domain, (log.flight_id, float(times[t])))
        for t in _window_ends(n, L, stride)
    ]


def window_array(log: FlightLog, L: int, stride: int = 1) -> np.ndarray:
    """Stacked windows of one flight, shape (n_windows, 7, L+1)."""
    n = len(log)
    if n < L + 1:
        return np.empty((0, N_ROWS, L + 1))
    view = np.lib.stride_tricks.sliding_window_view(log.signals, L + 1, axis=0)  # (n-L, 7, L+1)
    return np.ascontiguousarray(view[::stride])


@dataclass(frozen=True)
class Normalization:
    """Per-row z-score statistics."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Normalization":
        if len(X) == 0:
            raise DataError("cannot fit normalisation on an empty dataset")
        mean = X.mean(axis=(0, 2))
        std = X.std(axis=(0, 2))
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean, std)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean[:, None]) / self.std[:, None]

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return Z * self.std[:, None] + self.mean[:, None]

    def to_dict(self) -> dict:
        return {"rows": list(ROWS), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Normalization)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )


@dataclass
class Dataset:
    """Raw windows plus the normalisation shared across roles.

    ``X`` holds unnormalised values; :attr:`Z` is the normalised view used by
    the network.
    """

    X: np.ndarray
    y: np.ndarray
    origins: list
    role: str
    norm: Normalization | None = None
    domains: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.X.setflags(write=False)
        self.y.setflags(write=False)
        self._Z = None

    def __len__(self) -> int:
        return len(self.y)

    @property
    def L(self) -> int:
        return self.X.shape[2] - 1

    @property
    def Z(self) -> np.ndarray:
        if self.norm is None:
            raise DataError(f"dataset {self.role} has no normalisation attached")
        if self._Z is None:
            z = self.norm.apply(self.X)
            z.setflags(write=False)
            self._Z = z
        return self._Z

    def samples(self) -> list[Sample]:
        doms = self.domains or ["source"] * len(self)
        return [Sample(self.X[i], int(self.y[i]), doms[i], self.origins[i]) for i in range(len(self))]

    def subset(self, mask, role: str | None = None) -> "Dataset":
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return Dataset(
            self.X[idx],
            self.y[idx],
            [self.origins[i] for i in idx],
            role or self.role,
            self.norm,
            [self.domains[i] for i in idx] if self.domains else [],
        )


def dataset_from_logs(logs: list[FlightLog], L: int, stride: int, role: str, norm=None) -> Dataset:
    xs, ys, origins, doms = [], [], [], []
    for lg in logs:
        if len(lg) < L + 1:
            warnings.warn(f"{lg.flight_id}: too short for window L={L}; skipped", stacklevel=2)
            continue
        w = window_array(lg, L, stride)
        ends = list(_window_ends(len(lg), L, stride))
        xs.append(w)
        ys.append(np.full(len(w), lg.label))
        origins.extend((lg.flight_id, float(lg.times[t])) for t in ends)
        doms.extend([lg.domain] * len(w))
    if xs:
        X = np.concatenate(xs)
        y = np.concatenate(ys)
    else:
        X = np.empty((0, N_ROWS, L + 1))
        y = np.empty(0, dtype=int)
    return Dataset(X, y, origins, role, norm, doms)


def build_datasets(
    source_logs: list[FlightLog], target_logs: list[FlightLog], L: int, stride: int = 1
) -> tuple[Dataset, Dataset, Dataset, Dataset]:
    """Datasets A (source), B (target healthy), D (healthy part of A), E (copy of B).

    Normalisation is fitted on A only and attached to all four.
    """
    labels = {lg.label for lg in source_logs}
    if labels != set(range(1, N_CLASSES + 1)):
        raise DataError(f"source flights must cover labels 1..5, got {sorted(labels)}")
    bad = [lg.flight_id for lg in target_logs if lg.label != 1]
    if bad:
        raise DataError(f"target flights used for adaptation must be all-healthy; got faulty flights {bad}")
    if not target_logs:
        raise DataError("at least one all-healthy target flight is required")
    A = dataset_from_logs(source_logs, L, stride, "A")
    norm = Normalization.fit(A.X)
    A.norm = norm
    B = dataset_from_logs(target_logs, L, stride, "B", norm)
    D = A.subset(A.y == 1, role="D")
    E = B.subset(np.arange(len(B)), role="E")
    return A, B, D, E


@dataclass(frozen=True)
class MiniBatch:
    step: int
    epoch: int
    idx: dict
    xa: np.ndarray
    ya: np.ndarray
    xb: np.ndarray
    xd: np.ndarray
    xe: np.ndarray


def steps_per_epoch(A: Dataset, m: int) -> int:
    return len(A) // m


def sample_minibatches(
    A: Dataset, B: Dataset, D: Dataset, E: Dataset, m: int, seed: int, epochs: int = 1
) -> Iterator[MiniBatch]:
    """Yield ``epochs * floor(|A|/m)`` steps of four m-sized batches.

    A is visited as a fresh permutation each epoch; B, D and E are drawn
    without replacement independently at every step.
    """
    if m < 1:
        raise DataError(f"batch size must be >= 1, got {m}")
    for ds in (A, B, D, E):
        if m > len(ds):
            raise DataError(
                f"batch size {m} exceeds dataset {ds.role} ({len(ds)} samples); "
                "lower the batch size or fly more target/healthy flights"
            )
    rng = np.random.default_rng(seed)
    za, zb, zd, ze = A.Z, B.Z, D.Z, E.Z
    n_steps = steps_per_epoch(A, m)
    step = 0
    for epoch in range(epochs):
        perm = rng.permutation(len(A))
        for s in range(n_steps):
            ia = perm[s * m : (s + 1) * m]
            ib = rng.choice(len(B), m, replace=False)
            id_ = rng.choice(len(D), m, replace=False)
            ie = rng.choice(len(E), m, replace=False)
            yield MiniBatch(step, epoch, {"A": ia, "B": ib, "D": id_, "E": ie}, za[ia], A.y[ia], zb[ib], zd[id_], ze[ie])
            step += 1


# --- archive -------------------------------------------------------------


def save_archive(
    directory,
    source_logs: list[FlightLog],
    target_logs: list[FlightLog],
    L: int,
    stride: int,
    norm: Normalization,
    scenario: dict | None = None,
) -> Path:
    """Write flights and ``index.json`` describing roles, window and statistics."""
    directory = Path(directory)
    fdir = directory / "flights"
    entries = []
    for lg in list(source_logs) + list(target_logs):
        save_flight(lg, fdir)
        if lg.domain == "source":
            role = "source"
        else:
            role = "calibration" if lg.meta.get("calibration") else "test"
        entries.append({"file": f"flights/{lg.flight_id}.csv", "label": lg.label, "domain": lg.domain, "role": role})
    index = {
        "format": ARCHIVE_FORMAT,
        "L": L,
        "stride": stride,
        "rows": list(ROWS),
        "normalization": norm.to_dict(),
        "flights": entries,
    }
    if scenario is not None:
        index["scenario"] = scenario
    path = directory / "index.json"
    with open(path, "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    return path


@dataclass
class Archive:
    root: Path
    index: dict
    source: list[FlightLog]
    calibration: list[FlightLog]
    test: list[FlightLog]

    @property
    def L(self) -> int:
        return int(self.index["L"])

    @property
    def stride(self) -> int:
        return int(self.index["stride"])

    @property
    def norm(self) -> Normalization:
        return Normalization.from_dict(self.index["normalization"])

    def datasets(self) -> tuple[Dataset, Dataset, Dataset, Dataset]:
        A, B, D, E = build_datasets(self.source, self.calibration, self.L, self.stride)
        if A.norm != self.norm:
            raise DataError(f"{self.root}: stored normalisation does not match the flights")
        return A, B, D, E

    def test_dataset(self, stride: int | None = None) -> Dataset:
        return dataset_from_logs(self.test, self.L, stride or self.stride, "C", self.norm)


def load_archive(directory) -> Archive:
    root = Path(directory)
    index_path = root / "index.json"
    with open(index_path) as fh:
        index = json.load(fh)
    if index.get("format") != ARCHIVE_FORMAT:
        raise DataError(f"{index_path}: unsupported format {index.get('format')!r}, expected {ARCHIVE_FORMAT}")
    groups = {"source": [], "calibration": [], "test": []}
    for e in index["flights"]:
        groups[e["role"]].append(load_flight(root / e["file"]))
    return Archive(root, index, groups["source"], groups["calibration"], groups["test"])
