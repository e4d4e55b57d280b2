"""Run configuration: one TOML file drives every pipeline stage."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from quadfault.nn.train import HyperParams
from quadfault.sim.scenario import ConfigError, ScenarioConfig
from quadfault.ufc import DEFAULT_GRID

_SECTIONS = ("scenario", "data", "train", "ufc", "output")


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    L: int = 15
    stride: int = 1
    train: HyperParams = field(default_factory=HyperParams)
    n_members: int = 10
    base_seed: int = 0
    member_seeds: list[int] | None = None  # explicit seeds override base_seed
    grid: tuple[float, ...] = DEFAULT_GRID
    sweep_members: tuple[int, ...] = (1, 3, 5, 7, 10)
    sweep_thresholds: tuple = ("inf", 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4)
    output_dir: str = "run"

    def seeds(self) -> list[int]:
        if self.member_seeds is not None:
            return list(self.member_seeds)
        return [self.base_seed + k for k in range(self.n_members)]

    def validate(self) -> None:
        self.scenario.validate()
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.n_members < 1:
            raise ConfigError(f"n_members must be >= 1, got {self.n_members}")
        if self.member_seeds is not None:
            if len(self.member_seeds) != self.n_members:
                raise ConfigError(f"{len(self.member_seeds)} member seeds given for n_members={self.n_members}")
            if len(set(self.member_seeds)) != len(self.member_seeds):
                raise ConfigError("member seeds must be distinct")
        if not self.grid:
            raise ConfigError("threshold grid is empty")
        if any(t < 0 for t in self.grid):
            raise ConfigError("thresholds must be >= 0")
        try:
            self.train.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        train = {"n_members": self.n_members, "base_seed": self.base_seed, **self.train.to_dict()}
        if self.member_seeds is not None:
            train["member_seeds"] = list(self.member_seeds)
        return {
            "scenario": self.scenario.to_dict(),
            "data": {"L": self.L, "stride": self.stride},
            "train": train,
            "ufc": {
                "grid": list(self.grid),
                "sweep_members": list(self.sweep_members),
                "sweep_thresholds": list(self.sweep_thresholds),
            },
            "output": {"dir": self.output_dir},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        if "scenario" in d:
            cfg.scenario = ScenarioConfig.from_dict(d["scenario"])
        data = dict(d.get("data", {}))
        cfg.L = int(data.pop("L", cfg.L))
        cfg.stride = int(data.pop("stride", cfg.stride))
        _no_leftovers("data", data)
        train = dict(d.get("train", {}))
        cfg.n_members = int(train.pop("n_members", cfg.n_members))
        cfg.base_seed = int(train.pop("base_seed", cfg.base_seed))
        seeds = train.pop("member_seeds", None)
        cfg.member_seeds = None if seeds is None else [int(s) for s in seeds]
        try:
            cfg.train = HyperParams.from_dict(train)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[train]: {e}") from e
        ufc = dict(d.get("ufc", {}))
        cfg.grid = tuple(float(t) for t in ufc.pop("grid", cfg.grid))
        cfg.sweep_members = tuple(int(n) for n in ufc.pop("sweep_members", cfg.sweep_members))
        cfg.sweep_thresholds = tuple(ufc.pop("sweep_thresholds", cfg.sweep_thresholds))
        _no_leftovers("ufc", ufc)
        output = dict(d.get("output", {}))
        cfg.output_dir = str(output.pop("dir", cfg.output_dir))
        _no_leftovers("output", output)
        cfg.validate()
        return cfg


def _no_leftovers(section: str, d: dict) -> None:
    if d:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(d)}")


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"{path}: {e}") from e


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        tomli_w.dump(cfg.to_dict(), fh)
