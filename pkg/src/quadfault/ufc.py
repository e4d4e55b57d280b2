"""Entropy-gated decisions, threshold calibration and evaluation metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from quadfault.data import N_CLASSES, Dataset, window_array
from quadfault.ensemble import BatchPrediction, EnsemblePrediction, predict_batch
from quadfault.sim.flightlog import FlightLog

NO_THRESHOLD = math.inf
DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 33))  # 0.05 .. 1.60
TRACE_COLUMNS = ("time", "x", "y", "z", "pred_label", "entropy", "decision")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Decision:
    accepted: bool
    label: int | None  # predicted label when accepted
    entropy: float
    threshold: float
    origin: tuple | None = None

    @property
    def outcome(self) -> str:
        return "accept" if self.accepted else "reject"


def decide(pred: EnsemblePrediction, T: float, origin=None) -> Decision:
    """Accept the soft-voted label iff its entropy is strictly below ``T``."""
    ok = pred.entropy < T
    return Decision(ok, pred.label if ok else None, pred.entropy, T, origin)


def accepted_mask(entropy: np.ndarray, T: float) -> np.ndarray:
    return np.asarray(entropy) < T


# --- calibration -------------------------------------------------------------


def calibration_accuracy(pred_labels, entropy, grid) -> list[tuple[int, int]]:
    """``(Q_p, Q_T)`` at each grid threshold for all-healthy calibration data."""
    pred_labels = np.asarray(pred_labels)
    entropy = np.asarray(entropy, dtype=float)
    order = np.argsort(entropy, kind="stable")
    h_sorted = entropy[order]
    correct_cum = np.concatenate([[0], np.cumsum(pred_labels[order] == 1)])
    out = []
    for tau in grid:
        q_t = int(np.searchsorted(h_sorted, tau, side="left"))  # count of H < tau
        out.append((int(correct_cum[q_t]), q_t))
    return out


def calibrate_threshold(calibration, grid=DEFAULT_GRID, labels=None) -> float:
    """Largest grid threshold attaining the best accepted accuracy on healthy data.

    ``calibration`` is a BatchPrediction or a list of EnsemblePredictions.
    An empty acceptance set counts as 100 % accurate.
    """
    grid = [float(t) for t in grid]
    if not grid:
        raise CalibrationError("threshold grid is empty")
    if labels is not None:
        bad = np.flatnonzero(np.asarray(labels) != 1)
        if len(bad):
            raise CalibrationError(
                f"calibration data must be all-healthy (label 1); {len(bad)} samples carry other labels"
            )
    if isinstance(calibration, BatchPrediction):
        pl, h = calibration.labels, calibration.entropy
    else:
        pl = np.array([p.label for p in calibration], dtype=int)
        h = np.array([p.entropy for p in calibration], dtype=float)
    counts = calibration_accuracy(pl, h, grid)

    # compare Q_p/Q_T exactly by cross-multiplying; Q_T = 0 means 100 %
    def num_den(c):
        q_p, q_t = c
        return (1, 1) if q_t == 0 else (q_p, q_t)

    best_i = 0
    for i in range(1, len(grid)):
        a_n, a_d = num_den(counts[i])
        b_n, b_d = num_den(counts[best_i])
        cmp = a_n * b_d - b_n * a_d
        if cmp > 0 or (cmp == 0 and grid[i] > grid[best_i]):
            best_i = i
    return grid[best_i]


# --- evaluation ----------------------------------------------------------------


def confusion(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true label, columns = predicted label (both 1-based)."""
    m = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(m, (np.asarray(y_true, dtype=int) - 1, np.asarray(y_pred, dtype=int) - 1), 1)
    return m


@dataclass
class UfcReport:
    threshold: float
    n_members: int
    y_true: np.ndarray = field(repr=False)
    y_pred: np.ndarray = field(repr=False)
    entropy: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.accepted = accepted_mask(self.entropy, self.threshold)
        self.confusion_all = confusion(self.y_true, self.y_pred)
        self.confusion_accepted = confusion(self.y_true[self.accepted], self.y_pred[self.accepted])
        self.confusion_rejected = confusion(self.y_true[~self.accepted], self.y_pred[~self.accepted])

    @property
    def q_total(self) -> int:
        return int(len(self.y_true))

    @property
    def q_t(self) -> int:
        return int(self.accepted.sum())

    @property
    def q_p(self) -> int:
        return int(np.trace(self.confusion_accepted))

    @property
    def accuracy(self) -> float:
        """Accuracy over accepted predictions; 1.0 when nothing is accepted."""
        return 1.0 if self.q_t == 0 else self.q_p / self.q_t

    @property
    def unfiltered_accuracy(self) -> float:
        return float(np.trace(self.confusion_all) / self.q_total)

    @property
    def class_counts(self) -> np.ndarray:
        return self.confusion_all.sum(axis=1)

    @property
    def class_accepted(self) -> np.ndarray:
        return self.confusion_accepted.sum(axis=1)

    @property
    def usage(self) -> list[float | None]:
        """Per-class data-usage rate; None for classes absent from the data."""
        return [None if q == 0 else float(a / q) for a, q in zip(self.class_accepted, self.class_counts)]

    @property
    def mean_fault_usage(self) -> float | None:
        """Mean usage over fault classes 2..5 present in the data (class 1 excluded)."""
        vals = [u for u in self.usage[1:] if u is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            "threshold": _json_threshold(self.threshold),
            "n_members": self.n_members,
            "n_samples": self.q_total,
            "accuracy": self.accuracy,
            "unfiltered_accuracy": self.unfiltered_accuracy,
            "Q_p": self.q_p,
            "Q_T": self.q_t,
            "Q_i": self.class_counts.tolist(),
            "Q_T_i": self.class_accepted.tolist(),
            "usage": self.usage,
            "mean_fault_usage": self.mean_fault_usage,
            "confusion_all": self.confusion_all.tolist(),
            "confusion_accepted": self.confusion_accepted.tolist(),
            "confusion_rejected": self.confusion_rejected.tolist(),
        }

    def to_text(self) -> str:
        lines = [
            f"UFC report: {self.n_members} members, threshold {_fmt_threshold(self.threshold)}",
            f"  samples {self.q_total}, accepted {self.q_t} ({self.q_t / self.q_total:.1%})",
            f"  accuracy (accepted) {self.accuracy:.1%}   unfiltered {self.unfiltered_accuracy:.1%}",
            "  class  Q_i    Q_T,i  usage",
        ]
        for i, (q, a, u) in enumerate(zip(self.class_counts, self.class_accepted, self.usage), start=1):
            lines.append(f"  {i:>5}  {q:<6} {a:<6} {'-' if u is None else f'{u:.1%}'}")
        mfu = self.mean_fault_usage
        lines.append(f"  mean fault-class usage: {'-' if mfu is None else f'{mfu:.1%}'}")
        for title, m in (("all", self.confusion_all), ("accepted", self.confusion_accepted)):
            lines.append(f"  confusion ({title}); rows true 1..5, cols predicted 1..5")
            lines.extend("    " + " ".join(f"{v:>6d}" for v in row) for row in m)
        return "\n".join(lines) + "\n"

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        jp, tp = stem.with_suffix(".json"), stem.with_suffix(".txt")
        with open(jp, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        tp.write_text(self.to_text())
        return jp, tp


def _json_threshold(T: float):
    return "inf" if math.isinf(T) else T


def _fmt_threshold(T: float) -> str:
    return "none (accept all)" if math.isinf(T) else f"{T:g}"


def parse_threshold(v) -> float:
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "none", "no")):
        return NO_THRESHOLD
    T = float(v)
    if T < 0:
        raise ValueError(f"threshold must be >= 0, got {T}")
    return T


def report_from_predictions(pred: BatchPrediction, y_true, T: float) -> UfcReport:
    y_true = np.asarray(y_true, dtype=int)
    if len(y_true) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return UfcReport(T, pred.member_probs.shape[0], y_true, pred.labels, pred.entropy)


def evaluate(models, dataset: Dataset, T: float) -> UfcReport:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return report_from_predictions(predict_batch(models, dataset.X), dataset.y, T)


# --- sweep ----------------------------------------------------------------------


@dataclass
class SweepTable:
    n_grid: list
    tau_grid: list  # floats; inf = no threshold
    accuracy: np.ndarray  # (len(n_grid), len(tau_grid))
    mean_fault_usage: np.ndarray
    accepted: np.ndarray  # Q_T

    def to_dict(self) -> dict:
        return {
            "n_members": list(self.n_grid),
            "thresholds": [_json_threshold(t) for t in self.tau_grid],
            "accuracy": self.accuracy.tolist(),
            "mean_fault_usage": [[None if math.isnan(v) else v for v in row] for row in self.mean_fault_usage],
            "Q_T": self.accepted.tolist(),
        }

    def to_text(self) -> str:
        head = "models | " + " ".join(f"{('No' if math.isinf(t) else f'{t:g}'):>7}" for t in self.tau_grid)
        lines = [head, "-" * len(head)]
        for n, row in zip(self.n_grid, self.accuracy):
            lines.append(f"{n:>6} | " + " ".join(f"{v:>7.1%}" for v in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_members", "threshold", "accuracy", "mean_fault_usage", "Q_T"])
            for i, n in enumerate(self.n_grid):
                for j, t in enumerate(self.tau_grid):
                    u = self.mean_fault_usage[i, j]
                    w.writerow([n, _json_threshold(t), repr(float(self.accuracy[i, j])), "" if math.isnan(u) else repr(float(u)), int(self.accepted[i, j])])


def sweep_predictions(pred: BatchPrediction, y_true, n_grid, tau_grid) -> SweepTable:
    pool = pred.member_probs.shape[0]
    for n in n_grid:
        if n > pool:
            raise ValueError(f"sub-ensemble size {n} exceeds the member pool ({pool})")
    taus = [parse_threshold(t) for t in tau_grid]
    acc = np.empty((len(n_grid), len(taus)))
    use = np.empty_like(acc)
    qt = np.empty(acc.shape, dtype=int)
    for i, n in enumerate(n_grid):
        sub = pred.first(n)
        for j, t in enumerate(taus):
            r = report_from_predictions(sub, y_true, t)
            acc[i, j] = r.accuracy
            mfu = r.mean_fault_usage
            use[i, j] = math.nan if mfu is None else mfu
            qt[i, j] = r.q_t
    return SweepTable(list(n_grid), taus, acc, use, qt)


def sweep(models, n_grid, tau_grid, dataset: Dataset) -> SweepTable:
    if max(n_grid) > len(models):
        raise ValueError(f"sub-ensemble size {max(n_grid)} exceeds the member pool ({len(models)})")
    pred = predict_batch(models[: max(n_grid)], dataset.X)
    return sweep_predictions(pred, dataset.y, n_grid, tau_grid)


# --- per-timestep trace -----------------------------------------------------------


@dataclass(frozen=True)
class TraceRow:
    time: float
    x: float
    y: float
    z: float
    pred_label: int
    entropy: float
    decision: str


def trace_flight(models, log: FlightLog, L: int, T: float) -> list[TraceRow]:
    """One row per window end time, starting once a full window is available."""
    X = window_array(log, L, 1)
    if len(X) == 0:
        return []
    pred = predict_batch(models, X)
    labels, h = pred.labels, pred.entropy
    pos = log.positions if log.positions is not None else np.full((len(log), 3), np.nan)
    rows = []
    for k, t in enumerate(range(L, len(log))):
        rows.append(
            TraceRow(
                float(log.times[t]), float(pos[t, 0]), float(pos[t, 1]), float(pos[t, 2]),
                int(labels[k]), float(h[k]), "accept" if h[k] < T else "reject",
            )
        )
    return rows


def write_trace(rows: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([repr(r.time), repr(r.x), repr(r.y), repr(r.z), r.pred_label, repr(r.entropy), r.decision])
