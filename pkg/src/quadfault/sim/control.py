"""Cascaded PID waypoint controller: position -> attitude -> rate -> mixer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from quadfault.sim.dynamics import GRAVITY, QuadParams, quat_to_rotation


@dataclass(frozen=True)
class ControllerGains:
    pos_kp: float = 0.8
    max_speed: float = 2.5
    vel_kp: float = 2.2
    vel_ki: float = 0.6
    vel_int_limit: float = 4.0
    max_tilt: float = 0.6
    att_kp: tuple[float, float, float] = (7.0, 7.0, 3.0)
    max_rate: float = 3.0
    rate_kp: tuple[float, float, float] = (18.0, 18.0, 8.0)
    rate_ki: tuple[float, float, float] = (4.0, 4.0, 2.0)
    rate_kd: tuple[float, float, float] = (0.15, 0.15, 0.0)
    accept_radius: float = 0.6

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _clip(v, limit: float) -> np.ndarray:
    return np.minimum(np.maximum(v, -limit), limit)


def mix(thrust: float, torque, params: QuadParams) -> list[float]:
    """Per-rotor thrusts for a commanded wrench (rows of the mixer are orthogonal)."""
    a4 = 4.0 * params.arm / math.sqrt(2.0)
    c4 = 4.0 * params.k_t / params.k_f
    tx, ty, tz = torque
    base = thrust / 4.0
    return [
        base + tx / a4 - ty / a4 - tz / c4,
        base + tx / a4 + ty / a4 + tz / c4,
        base - tx / a4 + ty / a4 - tz / c4,
        base - tx / a4 - ty / a4 + tz / c4,
    ]


@dataclass
class WaypointController:
    """Stateful controller; it only knows the nominal vehicle parameters."""

    waypoints: list
    params: QuadParams = field(default_factory=QuadParams)
    gains: ControllerGains = field(default_factory=ControllerGains)

    def __post_init__(self):
        if len(self.waypoints) == 0:
            raise ValueError("at least one waypoint is required")
        self.waypoints = [np.asarray(w, dtype=float) for w in self.waypoints]
        self.index = 0
        self.vel_int = np.zeros(3)
        self.rate_int = np.zeros(3)
        self.prev_rates: np.ndarray | None = None
        self._reached_last = False

    @property
    def finished(self) -> bool:
        return self.index >= len(self.waypoints) - 1 and self._reached_last

    def target(self, position) -> np.ndarray:
        g = self.gains
        while self.index < len(self.waypoints) - 1 and math.hypot(*(self.waypoints[self.index] - position)) < g.accept_radius:
            self.index += 1
        if self.index == len(self.waypoints) - 1 and math.hypot(*(self.waypoints[-1] - position)) < g.accept_radius:
            self._reached_last = True
        return self.waypoints[self.index]

    def update(self, y, dt: float) -> list[float]:
        """Rotor speed commands (rad/s) for flat state ``y``."""
        g = self.gains
        p = self.params
        pos = np.asarray(y[0:3])
        vel = np.asarray(y[3:6])
        rates = np.asarray(y[10:13])

        err = self.target(pos) - pos
        v_des = g.pos_kp * err
        speed = math.hypot(*v_des)
        if speed > g.max_speed:
            v_des *= g.max_speed / speed
        v_err = v_des - vel
        self.vel_int = _clip(self.vel_int + v_err * dt, g.vel_int_limit)
        a_des = g.vel_kp * v_err + g.vel_ki * self.vel_int
        a_des[2] += GRAVITY

        # tilt limit
        a_des[2] = max(a_des[2], 0.2 * GRAVITY)
        horiz = math.hypot(a_des[0], a_des[1])
        max_h = a_des[2] * math.tan(g.max_tilt)
        if horiz > max_h:
            a_des[0:2] *= max_h / horiz
        f_des = p.mass * a_des

        z_des = f_des / math.hypot(*f_des)
        y_des = _cross(z_des, (1.0, 0.0, 0.0))
        y_des /= math.hypot(*y_des)
        x_des = _cross(y_des, z_des)
        r_des = np.column_stack([x_des, y_des, z_des])

        r = quat_to_rotation(y[6:10])
        e_mat = r_des.T @ r - r.T @ r_des
        e_att = 0.5 * np.array([e_mat[2, 1], e_mat[0, 2], e_mat[1, 0]])
        rate_cmd = _clip(-np.asarray(g.att_kp) * e_att, g.max_rate)

        thrust = float(f_des @ r[:, 2])

        e_rate = rate_cmd - rates
        self.rate_int = _clip(self.rate_int + e_rate * dt, 1.0)
        if self.prev_rates is None:
            d_rate = np.zeros(3)
        else:
            d_rate = (rates - self.prev_rates) / dt
        self.prev_rates = rates.copy()
        inertia = np.asarray(p.inertia)
        ang = np.asarray(g.rate_kp) * e_rate + np.asarray(g.rate_ki) * self.rate_int - np.asarray(g.rate_kd) * d_rate
        torque = inertia * ang + _cross(rates, inertia * rates)

        forces = mix(thrust, torque, p)
        return [min(math.sqrt(max(f, 0.0) / p.k_f), p.omega_max) for f in forces]
