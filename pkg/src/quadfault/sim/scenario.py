"""Source (simulation) and target ("pseudo-real") flight generation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from quadfault.sim.dynamics import FaultConfig, QuadParams
from quadfault.sim.flightlog import FlightLog
from quadfault.sim.mission import SensorModel, fly_mission, square_pattern
from quadfault.sim.wind import horizontal_wind

LABELS = (1, 2, 3, 4, 5)
INHERIT = "source"  # config spelling of a target field that copies the source setting


class ConfigError(ValueError):
    pass


@dataclass
class TargetConfig:
    """Perturbations that turn the simulator into the pseudo-real domain."""

    mass_scale: float = 1.05
    inertia_scale: float = 1.03
    com_offset: tuple[float, float, float] = (0.004, -0.003, 0.0)  # m, installation error
    gyro_bias: float = 0.01
    gyro_noise: float | None = None  # None: same as source
    rotor_noise: float | None = None
    wind_speeds: tuple[float, ...] = (3.0,)
    gust_amplitude: float | None = 3.0  # None: source gust fraction * speed
    gust_period: float = 3.0
    # real damage is milder and differs from the simulated levels
    efficiency_losses: dict | None = field(default_factory=lambda: {2: 0.05, 3: 0.07, 4: 0.10, 5: 0.06})
    calibration_flights: int = 2
    calibration_labels: tuple[int, ...] = (1,)
    test_flights_per_class: int = 2
    test_labels: tuple[int, ...] = LABELS

    def validate(self):
        if tuple(self.calibration_labels) != (1,):
            raise ConfigError(
                f"calibration flights must be all-healthy (label 1 only), got labels {list(self.calibration_labels)}"
            )
        if self.calibration_flights < 1:
            raise ConfigError("at least one target calibration flight is required")
        if self.mass_scale <= 0 or self.inertia_scale <= 0:
            raise ConfigError("mass and inertia scales must be positive")
        if self.efficiency_losses is not None and set(self.efficiency_losses) != {2, 3, 4, 5}:
            raise ConfigError("target efficiency_losses needs entries for labels 2..5")
        if any(lab not in LABELS for lab in self.test_labels):
            raise ConfigError(f"test labels must be in 1..5, got {list(self.test_labels)}")


@dataclass
class ScenarioConfig:
    seed: int = 0
    flights_per_class: int = 5  # per source wind level
    source_wind_speeds: tuple[float, ...] = (0.0, 5.0, 10.0)
    source_gust_fraction: float = 0.2
    gust_period: float = 5.0
    duration: float = 120.0
    sim_dt: float = 0.01
    log_dt: float = 0.5
    efficiency_losses: dict = field(default_factory=lambda: {2: 0.15, 3: 0.20, 4: 0.30, 5: 0.25})
    gyro_noise: float = 0.002
    rotor_noise: float = 0.003
    waypoints: list | None = None
    target: TargetConfig = field(default_factory=TargetConfig)

    def validate(self):
        if self.flights_per_class < 1:
            raise ConfigError("flights_per_class must be >= 1")
        if not self.source_wind_speeds:
            raise ConfigError("at least one source wind speed is required")
        if set(self.efficiency_losses) != {2, 3, 4, 5}:
            raise ConfigError("efficiency_losses needs entries for labels 2..5")
        for v in self.efficiency_losses.values():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"efficiency loss {v} outside [0, 1]")
        if self.duration <= 0 or self.sim_dt <= 0 or self.log_dt <= 0:
            raise ConfigError("duration, sim_dt and log_dt must be positive")
        self.target.validate()

    def flight_waypoints(self) -> list:
        return self.waypoints if self.waypoints is not None else square_pattern()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["efficiency_losses"] = {str(k): v for k, v in self.efficiency_losses.items()}
        t = d["target"]
        if t["efficiency_losses"] is not None:
            t["efficiency_losses"] = {str(k): v for k, v in t["efficiency_losses"].items()}
        # TOML has no null; "inherit from the source domain" is spelled out
        d["target"] = {k: (INHERIT if v is None else v) for k, v in t.items()}
        if d["waypoints"] is None:
            del d["waypoints"]
        for k in ("source_wind_speeds",):
            d[k] = list(d[k])
        for k in ("com_offset", "wind_speeds", "calibration_labels", "test_labels"):
            d["target"][k] = list(d["target"][k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        tgt = {k: (None if v == INHERIT else v) for k, v in d.pop("target", {}).items()}
        tknown = {f.name for f in fields(TargetConfig)}
        if set(tgt) - tknown:
            raise ConfigError(f"unknown target keys: {sorted(set(tgt) - tknown)}")
        if "efficiency_losses" in d:
            d["efficiency_losses"] = {int(k): float(v) for k, v in d["efficiency_losses"].items()}
        if tgt.get("efficiency_losses") is not None:
            tgt["efficiency_losses"] = {int(k): float(v) for k, v in tgt["efficiency_losses"].items()}
        for k in ("com_offset", "wind_speeds", "calibration_labels", "test_labels"):
            if k in tgt:
                tgt[k] = tuple(tgt[k])
        if "source_wind_speeds" in d:
            d["source_wind_speeds"] = tuple(d["source_wind_speeds"])
        return cls(target=TargetConfig(**tgt), **d)


def flight_seed(*parts: int) -> int:
    """Stable 32-bit seed derived from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class _FlightSpec:
    flight_id: str
    domain: str
    label: int
    loss: float
    speed: float
    gust_amplitude: float
    gust_period: float
    seed: int
    params: QuadParams
    sensor: SensorModel
    calibration: bool = False


def _fly(spec: _FlightSpec, cfg: ScenarioConfig) -> FlightLog:
    heading = np.random.default_rng(spec.seed).uniform(0.0, 2.0 * math.pi)
    wind = horizontal_wind(spec.speed, heading, spec.gust_amplitude, spec.gust_period, seed=spec.seed ^ 0x5A5A)
    fault = FaultConfig(spec.label, spec.loss if spec.label != 1 else 0.0)
    log = fly_mission(
        cfg.flight_waypoints(),
        wind,
        fault,
        cfg.duration,
        dt=cfg.sim_dt,
        seed=spec.seed,
        params=spec.params,
        nominal=QuadParams(),
        sensor=spec.sensor,
        log_dt=cfg.log_dt,
        min_rows=1,
        domain=spec.domain,
        flight_id=spec.flight_id,
    )
    log.meta["calibration"] = spec.calibration
    return log


def _specs(cfg: ScenarioConfig) -> tuple[list[_FlightSpec], list[_FlightSpec]]:
    base = QuadParams()
    src_sensor = SensorModel(gyro_noise=cfg.gyro_noise, rotor_noise=cfg.rotor_noise)
    src = []
    for label in LABELS:
        loss = cfg.efficiency_losses.get(label, 0.0)
        for li, speed in enumerate(cfg.source_wind_speeds):
            for rep in range(cfg.flights_per_class):
                src.append(
                    _FlightSpec(
                        flight_id=f"src_l{label}_w{speed:g}_r{rep}",
                        domain="source",
                        label=label,
                        loss=loss,
                        speed=float(speed),
                        gust_amplitude=cfg.source_gust_fraction * speed,
                        gust_period=cfg.gust_period,
                        seed=flight_seed(cfg.seed, 0, label, li, rep),
                        params=base,
                        sensor=src_sensor,
                    )
                )

    t = cfg.target
    tparams = base.perturbed(t.mass_scale, t.inertia_scale, t.com_offset)
    tsensor = SensorModel(
        gyro_noise=cfg.gyro_noise if t.gyro_noise is None else t.gyro_noise,
        gyro_bias=t.gyro_bias,
        rotor_noise=cfg.rotor_noise if t.rotor_noise is None else t.rotor_noise,
    )
    losses = t.efficiency_losses or cfg.efficiency_losses

    def gust(speed):
        return cfg.source_gust_fraction * speed if t.gust_amplitude is None else t.gust_amplitude

    tgt = []
    for rep in range(t.calibration_flights):
        speed = t.wind_speeds[rep % len(t.wind_speeds)]
        tgt.append(
            _FlightSpec(
                flight_id=f"tgt_cal_r{rep}",
                domain="target",
                label=1,
                loss=0.0,
                speed=float(speed),
                gust_amplitude=gust(speed),
                gust_period=t.gust_period,
                seed=flight_seed(cfg.seed, 1, 0, rep % len(t.wind_speeds), rep, 1),
                params=tparams,
                sensor=tsensor,
                calibration=True,
            )
        )
    for label in t.test_labels:
        for li, speed in enumerate(t.wind_speeds):
            for rep in range(t.test_flights_per_class):
                tgt.append(
                    _FlightSpec(
                        flight_id=f"tgt_l{label}_w{speed:g}_r{rep}",
                        domain="target",
                        label=label,
                        loss=losses.get(label, 0.0),
                        speed=float(speed),
                        gust_amplitude=gust(speed),
                        gust_period=t.gust_period,
                        seed=flight_seed(cfg.seed, 1, label, li, rep, 2),
                        params=tparams,
                        sensor=tsensor,
                    )
                )
    return src, tgt


def generate_domain_pair(cfg: ScenarioConfig, jobs: int = 1) -> tuple[list[FlightLog], list[FlightLog]]:
    """Fly every source and target flight described by ``cfg``.

    Target logs flagged ``meta["calibration"]`` are the all-healthy flights
    reserved for domain adaptation and threshold calibration; the rest are
    labelled test flights. Output order and content do not depend on ``jobs``.
    """
    cfg.validate()
    src, tgt = _specs(cfg)
    specs = src + tgt
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(_fly, specs, [cfg] * len(specs)))
    else:
        logs = [_fly(s, cfg) for s in specs]
    return logs[: len(src)], logs[len(src) :]


def calibration_logs(target_logs: list[FlightLog]) -> list[FlightLog]:
    return [lg for lg in target_logs if lg.meta.get("calibration")]


def evaluation_logs(target_logs: list[FlightLog]) -> list[FlightLog]:
    return [lg for lg in target_logs if not lg.meta.get("calibration")]
