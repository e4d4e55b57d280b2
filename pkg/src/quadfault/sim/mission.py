"""Waypoint missions that produce FlightLogs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from quadfault.sim.control import ControllerGains, WaypointController
from quadfault.sim.dynamics import FaultConfig, QuadParams, QuadState, _advance
from quadfault.sim.flightlog import FlightLog
from quadfault.sim.wind import WindField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensorModel:
    """Measurement errors applied to logged gyro rates and rotor speeds."""

    gyro_noise: float = 0.0  # rad/s, white
    gyro_bias: float = 0.0  # rad/s, constant on every axis
    rotor_noise: float = 0.0  # fractional, white

    def to_dict(self) -> dict:
        return {"gyro_noise": self.gyro_noise, "gyro_bias": self.gyro_bias, "rotor_noise": self.rotor_noise}


def square_pattern(side: float = 8.0, altitude: float = 3.0, laps: int = 4) -> list[list[float]]:
    corners = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    pts = [[x, y, altitude] for _ in range(laps) for x, y in corners]
    pts.append([0.0, 0.0, altitude])
    return pts


def fly_mission(
    waypoints,
    wind: WindField,
    fault: FaultConfig,
    duration: float,
    dt: float = 0.01,
    seed: int = 0,
    *,
    params: QuadParams | None = None,
    nominal: QuadParams | None = None,
    sensor: SensorModel | None = None,
    gains: ControllerGains | None = None,
    log_dt: float = 0.5,
    min_rows: int = 16,
    domain: str = "source",
    flight_id: str = "flight",
) -> FlightLog:
    """Fly the waypoint list once and log at ``log_dt`` intervals.

    ``params`` is the true airframe; the controller is tuned on ``nominal``
    (defaults to the same). Angular accelerations in the log are finite
    differences of consecutive logged (measured) body rates.
    """
    if len(waypoints) == 0:
        raise ValueError("at least one waypoint is required")
    params = params or QuadParams()
    nominal = nominal or params
    sensor = sensor or SensorModel()
    ratio = log_dt / dt
    decim = int(round(ratio))
    if decim < 1 or abs(ratio - decim) > 1e-9:
        raise ValueError(f"log_dt ({log_dt}) must be an integer multiple of dt ({dt})")
    n_rows = int(round(duration / log_dt))
    if n_rows < min_rows:
        raise ValueError(f"duration {duration}s gives {n_rows} rows; at least {min_rows} needed")

    rng = np.random.default_rng(seed)
    ctrl = WaypointController(list(waypoints), params=nominal, gains=gains or ControllerGains())
    state = QuadState.hover(params, position=waypoints[0])
    y = state.to_vector().tolist()
    eff = fault.efficiencies()

    def measure(y):
        rates = np.array(y[10:13]) + sensor.gyro_bias
        if sensor.gyro_noise:
            rates = rates + rng.normal(0.0, sensor.gyro_noise, 3)
        w = np.array(y[13:17])
        if sensor.rotor_noise:
            w = w * (1.0 + rng.normal(0.0, sensor.rotor_noise, 4))
        return rates, w * w

    rows = np.empty((n_rows, 8))
    positions = np.empty((n_rows, 3))
    prev_rates, _ = measure(y)
    t = 0.0
    step = 0
    for k in range(n_rows):
        for _ in range(decim):
            cmd = ctrl.update(y, dt)
            y = _advance(y, cmd, wind, params, eff, t, dt, step)
            step += 1
            t = step * dt
        rates, wsq = measure(y)
        rows[k, 0] = (k + 1) * log_dt
        rows[k, 1:4] = (rates - prev_rates) / log_dt
        rows[k, 4:8] = wsq
        positions[k] = y[0:3]
        prev_rates = rates

    warnings = []
    if not ctrl.finished:
        warnings.append(
            f"waypoint {ctrl.index + 1}/{len(ctrl.waypoints)} not reached within {duration}s"
        )
        log.debug("%s: %s", flight_id, warnings[-1])
    meta = {
        "flight_id": flight_id,
        "seed": int(seed),
        "sim_dt": dt,
        "wind": wind.to_dict(),
        "fault": fault.to_dict(),
        "params": params.to_dict(),
        "sensor": sensor.to_dict(),
        "warnings": warnings,
    }
    return FlightLog(
        dt=log_dt,
        rows=rows,
        label=fault.label,
        domain=domain,
        waypoints=[list(map(float, w)) for w in waypoints],
        positions=positions,
        meta=meta,
    )

