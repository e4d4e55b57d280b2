"""FlightLog container and its on-disk format (CSV + JSON sidecar)."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = ("time", "pdot", "qdot", "rdot", "w1sq", "w2sq", "w3sq", "w4sq")
TRAJ_COLUMNS = ("time", "x", "y", "z")
DOMAINS = ("source", "target")


@dataclass
class FlightLog:
    """One simulated flight sampled at a uniform log interval ``dt``.

    ``rows`` has the eight columns of :data:`COLUMNS`; ``positions`` holds the
    world position (m) at the same instants and is kept for trace export.
    """

    dt: float
    rows: np.ndarray
    label: int
    domain: str
    waypoints: list
    positions: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(COLUMNS):
            raise ValueError(f"rows must be n x {len(COLUMNS)}, got {self.rows.shape}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=float)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def flight_id(self) -> str:
        return self.meta.get("flight_id", "flight")

    @property
    def times(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def signals(self) -> np.ndarray:
        """The seven model inputs per row: pdot, qdot, rdot, w1^2..w4^2."""
        return self.rows[:, 1:]

    def manifest(self) -> dict:
        return {
            "flight_id": self.flight_id,
            "label": self.label,
            "domain": self.domain,
            "dt": self.dt,
            "waypoints": [list(map(float, w)) for w in self.waypoints],
            "n_rows": len(self),
            **{k: v for k, v in self.meta.items() if k != "flight_id"},
        }


def _write_csv(path: Path, header, data: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            # repr of a Python float round-trips exactly
            w.writerow([repr(float(v)) for v in row])


def _read_csv(path: Path, header) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r)
        if tuple(got) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        data = [[float(v) for v in row] for row in r if row]
    return np.array(data, dtype=float).reshape(-1, len(header))


def save_flight(log: FlightLog, directory: str | Path, stem: str | None = None) -> Path:
    """Write ``<stem>.csv``, ``<stem>.json`` and (if present) ``<stem>.traj.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or log.flight_id
    csv_path = directory / f"{stem}.csv"
    _write_csv(csv_path, COLUMNS, log.rows)
    if log.positions is not None:
        traj = np.column_stack([log.times, log.positions])
        _write_csv(directory / f"{stem}.traj.csv", TRAJ_COLUMNS, traj)
    with open(directory / f"{stem}.json", "w") as fh:
        json.dump(log.manifest(), fh, indent=2, sort_keys=True)
    return csv_path


def load_flight(csv_path: str | Path) -> FlightLog:
    csv_path = Path(csv_path)
    stem = csv_path.name[: -len(".csv")]
    rows = _read_csv(csv_path, COLUMNS)
    with open(csv_path.with_name(f"{stem}.json")) as fh:
        man = json.load(fh)
    traj_path = csv_path.with_name(f"{stem}.traj.csv")
    positions = _read_csv(traj_path, TRAJ_COLUMNS)[:, 1:] if traj_path.exists() else None
    meta = {k: v for k, v in man.items() if k not in ("label", "domain", "dt", "waypoints", "n_rows")}
    return FlightLog(
        dt=float(man["dt"]),
        rows=rows,
        label=int(man["label"]),
        domain=man["domain"],
        waypoints=[list(w) for w in man["waypoints"]],
        positions=positions,
        meta=meta,
    )
