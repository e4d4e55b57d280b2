"""Rigid-body quadrotor model (X configuration, z-up world frame).

Rotor layout seen from above, body x forward, body y left::

    2 (-x,+y) CW    1 (+x,+y) CCW
    3 (-x,-y) CCW   4 (+x,-y) CW

Rotor i produces thrust ``k_f * w_i**2`` along body +z and a reaction yaw
torque ``s_i * k_t * w_i**2`` with ``s = (-1, +1, -1, +1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from quadfault.sim.wind import WindField

GRAVITY = 9.81
YAW_SIGN = (-1.0, 1.0, -1.0, 1.0)
N_STATE = 17  # pos 3, vel 3, quat 4, rates 3, rotors 4


class SimulationDiverged(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"simulation diverged at step {step}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class QuadParams:
    mass: float = 1.0
    arm: float = 0.2
    inertia: tuple[float, float, float] = (0.0082, 0.0082, 0.0149)
    k_f: float = 6.0e-6
    k_t: float = 1.0e-7
    drag_coeff: float = 0.03
    motor_tau: float = 0.03
    omega_max: float = 1100.0
    com_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)  # body frame, m

    @property
    def hover_omega(self) -> float:
        return math.sqrt(self.mass * GRAVITY / (4.0 * self.k_f))

    def perturbed(self, mass_scale: float = 1.0, inertia_scale: float = 1.0, com_offset=None) -> "QuadParams":
        return replace(
            self,
            mass=self.mass * mass_scale,
            inertia=tuple(i * inertia_scale for i in self.inertia),
            com_offset=tuple(float(c) for c in (com_offset if com_offset is not None else self.com_offset)),
        )

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "arm": self.arm,
            "inertia": list(self.inertia),
            "k_f": self.k_f,
            "k_t": self.k_t,
            "drag_coeff": self.drag_coeff,
            "motor_tau": self.motor_tau,
            "omega_max": self.omega_max,
            "com_offset": list(self.com_offset),
        }


@dataclass(frozen=True)
class FaultConfig:
    """Fault category 1..5; category k >= 2 degrades propeller k-1."""

    label: int = 1
    efficiency_loss: float = 0.0

    def __post_init__(self):
        if self.label not in (1, 2, 3, 4, 5):
            raise ValueError(f"fault label must be in 1..5, got {self.label}")
        if not 0.0 <= self.efficiency_loss <= 1.0:
            raise ValueError(f"efficiency loss must be in [0, 1], got {self.efficiency_loss}")

    @property
    def faulty_propeller(self) -> int | None:
        return None if self.label == 1 else self.label - 1

    def efficiencies(self) -> tuple[float, float, float, float]:
        eff = [1.0, 1.0, 1.0, 1.0]
        if self.label != 1:
            eff[self.label - 2] = 1.0 - self.efficiency_loss
        return tuple(eff)

    def to_dict(self) -> dict:
        return {"label": self.label, "efficiency_loss": self.efficiency_loss}


HEALTHY = FaultConfig()


@dataclass
class QuadState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotor_speeds: np.ndarray = field(default_factory=lambda: np.zeros(4))

    @classmethod
    def hover(cls, params: QuadParams, position=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(position=np.array(position, dtype=float), rotor_speeds=np.full(4, params.hover_omega))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.rates, self.rotor_speeds])

    @classmethod
    def from_vector(cls, y) -> "QuadState":
        y = np.asarray(y, dtype=float)
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:10].copy(), y[10:13].copy(), y[13:17].copy())

    def rotation(self) -> np.ndarray:
        return quat_to_rotation(self.attitude)


def quat_to_rotation(q) -> np.ndarray:
    """Body-to-world rotation matrix of the unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotor_wrench(omega, params: QuadParams, efficiencies) -> tuple[float, float, float, float]:
    """Collective thrust (N) and body torques (N m) from rotor speeds."""
    f = [e * params.k_f * w * w for e, w in zip(efficiencies, omega)]
    a = params.arm / math.sqrt(2.0)
    thrust = f[0] + f[1] + f[2] + f[3]
    tx = a * (f[0] + f[1] - f[2] - f[3])
    ty = a * (-f[0] + f[1] + f[2] - f[3])
    cx, cy, _ = params.com_offset
    if cx or cy:
        tx -= cy * thrust
        ty += cx * thrust
    tz = 0.0
    for s, e, w in zip(YAW_SIGN, efficiencies, omega):
        tz += s * e * params.k_t * w * w
    return thrust, tx, ty, tz


def _drag(v, c):
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    return (-c * n * v[0], -c * n * v[1], -c * n * v[2])


def wind_force(velocity, air_velocity, params: QuadParams) -> tuple[float, float, float]:
    """Force added by moving air on top of still-air airframe drag.

    Exactly zero whenever ``air_velocity`` is the zero vector.
    """
    if air_velocity[0] == 0.0 and air_velocity[1] == 0.0 and air_velocity[2] == 0.0:
        return (0.0, 0.0, 0.0)
    rel = (velocity[0] - air_velocity[0], velocity[1] - air_velocity[1], velocity[2] - air_velocity[2])
    d_rel = _drag(rel, params.drag_coeff)
    d_still = _drag(velocity, params.drag_coeff)
    return (d_rel[0] - d_still[0], d_rel[1] - d_still[1], d_rel[2] - d_still[2])


def derivatives(y, commands, air_velocity, params: QuadParams, efficiencies) -> list[float]:
    """Time derivative of the flat 17-element state vector."""
    vx, vy, vz = y[3], y[4], y[5]
    qw, qx, qy, qz = y[6], y[7], y[8], y[9]
    p, q, r = y[10], y[11], y[12]
    omega = y[13:17]

    thrust, tx, ty, tz = rotor_wrench(omega, params, efficiencies)
    m = params.mass
    # body z axis in world frame
    bx = 2 * (qx * qz + qw * qy)
    by = 2 * (qy * qz - qw * qx)
    bz = 1 - 2 * (qx * qx + qy * qy)
    vel = (vx, vy, vz)
    dstill = _drag(vel, params.drag_coeff)
    dwind = wind_force(vel, air_velocity, params)
    ax = (thrust * bx + dstill[0] + dwind[0]) / m
    ay = (thrust * by + dstill[1] + dwind[1]) / m
    az = (thrust * bz + dstill[2] + dwind[2]) / m - GRAVITY

    dqw = 0.5 * (-qx * p - qy * q - qz * r)
    dqx = 0.5 * (qw * p + qy * r - qz * q)
    dqy = 0.5 * (qw * q - qx * r + qz * p)
    dqz = 0.5 * (qw * r + qx * q - qy * p)

    ix, iy, iz = params.inertia
    dp = (tx - (iz - iy) * q * r) / ix
    dq = (ty - (ix - iz) * r * p) / iy
    dr = (tz - (iy - ix) * p * q) / iz

    inv_tau = 1.0 / params.motor_tau
    dw = [(c - w) * inv_tau for c, w in zip(commands, omega)]
    return [vx, vy, vz, ax, ay, az, dqw, dqx, dqy, dqz, dp, dq, dr, dw[0], dw[1], dw[2], dw[3]]


def angular_acceleration(state: QuadState, params: QuadParams, fault: FaultConfig = HEALTHY) -> np.ndarray:
    """Instantaneous body angular acceleration (rad/s^2); independent of wind."""
    y = state.to_vector().tolist()
    d = derivatives(y, y[13:17], (0.0, 0.0, 0.0), params, fault.efficiencies())
    return np.array(d[10:13])


def rk4_raw(y, commands, wind: WindField, params, efficiencies, t, dt) -> list[float]:
    """One classical RK4 step without quaternion renormalisation."""
    w0 = wind.velocity(t)
    wh = wind.velocity(t + 0.5 * dt)
    w1 = wind.velocity(t + dt)
    k1 = derivatives(y, commands, w0, params, efficiencies)
    y2 = [a + 0.5 * dt * b for a, b in zip(y, k1)]
    k2 = derivatives(y2, commands, wh, params, efficiencies)
    y3 = [a + 0.5 * dt * b for a, b in zip(y, k2)]
    k3 = derivatives(y3, commands, wh, params, efficiencies)
    y4 = [a + dt * b for a, b in zip(y, k3)]
    k4 = derivatives(y4, commands, w1, params, efficiencies)
    h = dt / 6.0
    return [a + h * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


def _advance(y, commands, wind, params, efficiencies, t, dt, step):
    cmd = [min(max(float(c), 0.0), params.omega_max) for c in commands]
    out = rk4_raw(y, cmd, wind, params, efficiencies, t, dt)
    if not all(math.isfinite(v) for v in out):
        raise SimulationDiverged(step, f"non-finite state at t={t + dt:.4f}s")
    n = math.sqrt(out[6] * out[6] + out[7] * out[7] + out[8] * out[8] + out[9] * out[9])
    if n == 0.0:
        raise SimulationDiverged(step, "degenerate attitude quaternion")
    for i in range(6, 10):
        out[i] /= n
    for i in range(13, 17):
        out[i] = min(max(out[i], 0.0), params.omega_max)
    return out


def step_dynamics(
    state: QuadState,
    rotor_commands,
    wind: WindField,
    fault: FaultConfig,
    t: float,
    dt: float,
    params: QuadParams | None = None,
    step: int = 0,
) -> QuadState:
    """Advance ``state`` by ``dt`` seconds under constant rotor commands."""
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")
    params = params or QuadParams()
    y = _advance(state.to_vector().tolist(), rotor_commands, wind, params, fault.efficiencies(), t, dt, step)
    return QuadState.from_vector(y)
