"""Command-line front end: simulate | train | calibrate | evaluate | sweep | trace."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from quadfault import __version__
from quadfault.config import RunConfig, dump_config, load_config
from quadfault.data import ARCHIVE_FORMAT, DataError, build_datasets, load_archive, save_archive
from quadfault.ensemble import ENSEMBLE_FORMAT, EnsembleError, load_ensemble, predict_batch, save_ensemble
from quadfault.nn.model import MODEL_FORMAT, ModelFormatError, TrainingDiverged
from quadfault.nn.train import train_member
from quadfault.sim.dynamics import SimulationDiverged
from quadfault.sim.scenario import ConfigError, calibration_logs, generate_domain_pair
from quadfault.ufc import (
    CalibrationError,
    calibrate_threshold,
    evaluate,
    parse_threshold,
    sweep,
    trace_flight,
    write_trace,
)

log = logging.getLogger("quadfault")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
THRESHOLD_FORMAT = "quadfault-threshold/1"


class MemberTrainingFailed(FloatingPointError):
    def __init__(self, member: int, seed: int, cause: Exception):
        super().__init__(f"member {member} (seed {seed}) diverged: {cause}")
        self.member = member


# --- paths -------------------------------------------------------------------


def dataset_dir(cfg: RunConfig) -> Path:
    return cfg.out / "dataset"


def ensemble_dir(cfg: RunConfig) -> Path:
    return cfg.out / "ensemble"


def threshold_path(cfg: RunConfig) -> Path:
    return cfg.out / "threshold.json"


def reports_dir(cfg: RunConfig) -> Path:
    return cfg.out / "reports"


# --- stages ------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, jobs: int = 1) -> Path:
    src, tgt = generate_domain_pair(cfg.scenario, jobs=jobs)
    for lg in src + tgt:
        for w in lg.meta.get("warnings", []):
            log.warning("%s: %s", lg.flight_id, w)
    A, B, _, _ = build_datasets(src, calibration_logs(tgt), cfg.L, cfg.stride)
    path = save_archive(dataset_dir(cfg), src, tgt, cfg.L, cfg.stride, A.norm, cfg.scenario.to_dict())
    dump_config(cfg, cfg.out / "config.toml")
    log.info("dataset: %d source windows, %d target healthy windows -> %s", len(A), len(B), path)
    return path


def _train_one(args):
    k, seed, A, B, D, E, hp = args
    try:
        return train_member(A, B, D, E, hp, seed)
    except TrainingDiverged as e:
        raise MemberTrainingFailed(k, seed, e) from e


def cmd_train(cfg: RunConfig, jobs: int = 1) -> Path:
    archive = load_archive(dataset_dir(cfg))
    if archive.L != cfg.L:
        raise ConfigError(f"dataset was built with L={archive.L}, config asks for L={cfg.L}")
    A, B, D, E = archive.datasets()
    tasks = [(k, s, A, B, D, E, cfg.train) for k, s in enumerate(cfg.seeds())]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(_train_one, tasks))
    else:
        models = [_train_one(t) for t in tasks]
    for k, m in enumerate(models):
        log.info("member %d seed %d final loss %.4f", k, m.seed, m.history[-1]["loss"])
    path = save_ensemble(models, ensemble_dir(cfg), {"L": cfg.L, "seeds": cfg.seeds()})
    return path


def cmd_calibrate(cfg: RunConfig, n_members: int | None = None) -> float:
    models, _ = load_ensemble(ensemble_dir(cfg))
    models = _first(models, n_members)
    archive = load_archive(dataset_dir(cfg))
    _, B, _, _ = archive.datasets()
    pred = predict_batch(models, B.X)
    T = calibrate_threshold(pred, cfg.grid, labels=B.y)
    path = threshold_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump({"format": THRESHOLD_FORMAT, "threshold": T, "n_members": len(models), "grid": list(cfg.grid)}, fh, indent=2)
    log.info("calibrated threshold T = %g on %d healthy target windows", T, len(B))
    return T


def load_threshold(path) -> float:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != THRESHOLD_FORMAT:
        raise ModelFormatError(f"{path}: unsupported threshold format {d.get('format')!r}")
    return float(d["threshold"])


def cmd_evaluate(cfg: RunConfig, threshold=None, n_members: int | None = None):
    models, _ = load_ensemble(ensemble_dir(cfg))
    models = _first(models, n_members)
    T = load_threshold(threshold_path(cfg)) if threshold is None else parse_threshold(threshold)
    archive = load_archive(dataset_dir(cfg))
    report = evaluate(models, archive.test_dataset(), T)
    report.save(reports_dir(cfg) / "report")
    return report


def cmd_sweep(cfg: RunConfig):
    models, _ = load_ensemble(ensemble_dir(cfg))
    archive = load_archive(dataset_dir(cfg))
    table = sweep(models, list(cfg.sweep_members), list(cfg.sweep_thresholds), archive.test_dataset())
    out = reports_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    table.write_csv(out / "sweep.csv")
    with open(out / "sweep.json", "w") as fh:
        json.dump(table.to_dict(), fh, indent=2)
    (out / "sweep.txt").write_text(table.to_text())
    return table


def cmd_trace(cfg: RunConfig, flights: list[str] | None = None, threshold=None) -> list[Path]:
    models, _ = load_ensemble(ensemble_dir(cfg))
    T = load_threshold(threshold_path(cfg)) if threshold is None else parse_threshold(threshold)
    archive = load_archive(dataset_dir(cfg))
    logs = archive.test + archive.calibration
    if flights:
        by_id = {lg.flight_id: lg for lg in logs}
        missing = [f for f in flights if f not in by_id]
        if missing:
            raise DataError(f"unknown target flights {missing}; available: {sorted(by_id)}")
        logs = [by_id[f] for f in flights]
    out = reports_dir(cfg) / "traces"
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for lg in logs:
        p = out / f"{lg.flight_id}.csv"
        write_trace(trace_flight(models, lg, archive.L, T), p)
        paths.append(p)
    return paths


def _first(models, n):
    if n is None:
        return models
    if not 1 <= n <= len(models):
        raise ConfigError(f"--members {n} outside 1..{len(models)}")
    return models[:n]


# --- argument handling ---------------------------------------------------------


def version_text() -> str:
    return (
        f"quadfault {__version__} (dataset {ARCHIVE_FORMAT}, member {MODEL_FORMAT}, "
        f"ensemble {ENSEMBLE_FORMAT}, threshold {THRESHOLD_FORMAT})"
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadfault", description="Propeller-fault diagnosis with an uncertainty-gated ensemble.")
    p.add_argument("--version", action="version", version=version_text())
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="TOML run configuration (defaults used when omitted)")
        sp.add_argument("--out", help="override the output directory")
        return sp

    s = common(sub.add_parser("simulate", help="fly source and target flights and write the dataset archive"))
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--flights-per-class", type=int)
    s.add_argument("--jobs", type=int, default=1)

    t = common(sub.add_parser("train", help="train the ensemble members"))
    t.add_argument("--members", type=int, help="override the ensemble size N")
    t.add_argument("--epochs", type=int)
    t.add_argument("--base-seed", type=int)
    t.add_argument("--jobs", type=int, default=1)

    c = common(sub.add_parser("calibrate", help="pick the entropy threshold on healthy target data"))
    c.add_argument("--members", type=int, help="use only the first n members")
    c.add_argument("--grid", type=float, nargs="+", help="candidate thresholds")

    e = common(sub.add_parser("evaluate", help="score the target test flights"))
    e.add_argument("--members", type=int, help="use only the first n members")
    e.add_argument("--threshold", help="threshold to use instead of the calibrated one ('inf' accepts all)")

    w = common(sub.add_parser("sweep", help="accuracy table over ensemble sizes and thresholds"))
    w.add_argument("--members", type=int, nargs="+", help="ensemble sizes")
    w.add_argument("--thresholds", nargs="+", help="thresholds; 'inf' means no threshold")

    r = common(sub.add_parser("trace", help="per-time-step prediction traces for target flights"))
    r.add_argument("--flight", action="append", help="flight id (repeatable; default all target flights)")
    r.add_argument("--threshold")
    return p


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.out:
        cfg.output_dir = args.out
    if args.command == "simulate":
        if args.seed is not None:
            cfg.scenario.seed = args.seed
        if args.flights_per_class is not None:
            cfg.scenario.flights_per_class = args.flights_per_class
    elif args.command == "train":
        if args.members is not None:
            cfg.n_members = args.members
            cfg.member_seeds = None if cfg.member_seeds is None or len(cfg.member_seeds) != args.members else cfg.member_seeds
        if args.epochs is not None:
            cfg.train = replace(cfg.train, epochs=args.epochs)
        if args.base_seed is not None:
            cfg.base_seed = args.base_seed
            cfg.member_seeds = None
    elif args.command == "calibrate" and args.grid:
        cfg.grid = tuple(args.grid)
    elif args.command == "sweep":
        if args.members:
            cfg.sweep_members = tuple(args.members)
        if args.thresholds:
            cfg.sweep_thresholds = tuple(args.thresholds)
    cfg.validate()
    return cfg


def run(args) -> int:
    cfg = _resolve_config(args)
    if args.command == "simulate":
        print(cmd_simulate(cfg, args.jobs))
    elif args.command == "train":
        print(cmd_train(cfg, args.jobs))
    elif args.command == "calibrate":
        print(f"T = {cmd_calibrate(cfg, args.members):g}")
    elif args.command == "evaluate":
        print(cmd_evaluate(cfg, args.threshold, args.members).to_text(), end="")
    elif args.command == "sweep":
        print(cmd_sweep(cfg).to_text(), end="")
    elif args.command == "trace":
        for p in cmd_trace(cfg, args.flight, args.threshold):
            print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except (ConfigError, CalibrationError) as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except (MemberTrainingFailed, SimulationDiverged, TrainingDiverged) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except (OSError, DataError, ModelFormatError, EnsembleError, json.JSONDecodeError) as e:
        log.error("i/o error: %s", e)
        return EXIT_IO
    except ValueError as e:
        log.error("invalid setting: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
