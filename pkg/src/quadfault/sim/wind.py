"""Parametric wind: steady mean flow plus seeded multi-tone gusts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Gust = amplitude * weighted sum of tones whose frequencies are random
# multiples of 1/period; weights are normalised so the peak per axis is
# bounded by the amplitude.
_N_TONES = 4


@dataclass(frozen=True)
class WindField:
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gust_amplitude: float = 0.0
    gust_period: float = 5.0
    seed: int = 0
    _tones: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gust_amplitude >= 0.0:
            raise ValueError(f"gust amplitude must be >= 0, got {self.gust_amplitude}")
        if not self.gust_period > 0.0:
            raise ValueError(f"gust period must be > 0, got {self.gust_period}")
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        rng = np.random.default_rng(self.seed)
        # per axis: frequencies (Hz), phases (rad), weights summing to 1
        mult = rng.uniform(0.5, 2.5, size=(3, _N_TONES))
        mult[:, 0] = 1.0
        freqs = mult / self.gust_period
        phases = rng.uniform(0.0, 2.0 * math.pi, size=(3, _N_TONES))
        weights = rng.uniform(0.2, 1.0, size=(3, _N_TONES))
        weights /= weights.sum(axis=1, keepdims=True)
        weights[2] *= 0.3  # vertical gusts are weaker
        tones = tuple(
            tuple(zip(freqs[a].tolist(), phases[a].tolist(), weights[a].tolist())) for a in range(3)
        )
        object.__setattr__(self, "_tones", tones)

    @property
    def is_zero(self) -> bool:
        return self.gust_amplitude == 0.0 and self.mean == (0.0, 0.0, 0.0)

    def velocity(self, t: float) -> tuple[float, float, float]:
        """Air velocity in the world frame at time ``t`` (m/s)."""
        if self.gust_amplitude == 0.0:
            return self.mean
        a = self.gust_amplitude
        out = []
        for axis in range(3):
            g = 0.0
            for f, ph, w in self._tones[axis]:
                g += w * math.sin(2.0 * math.pi * f * t + ph)
            out.append(self.mean[axis] + a * g)
        return (out[0], out[1], out[2])

    def to_dict(self) -> dict:
        return {
            "mean": list(self.mean),
            "gust_amplitude": self.gust_amplitude,
            "gust_period": self.gust_period,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindField":
        return cls(
            mean=tuple(d["mean"]),
            gust_amplitude=float(d["gust_amplitude"]),
            gust_period=float(d["gust_period"]),
            seed=int(d["seed"]),
        )


def horizontal_wind(speed: float, heading: float, gust_amplitude: float, gust_period: float, seed: int) -> WindField:
    """Wind blowing with ``speed`` m/s toward ``heading`` (rad from +x)."""
    mean = (speed * math.cos(heading), speed * math.sin(heading), 0.0)
    if speed == 0.0:
        mean = (0.0, 0.0, 0.0)
    return WindField(mean=mean, gust_amplitude=gust_amplitude, gust_period=gust_period, seed=seed)
