"""Adam training of one ensemble member on datasets A/B/D/E."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from quadfault.data import Dataset, sample_minibatches
from quadfault.nn.adam import Adam
from quadfault.nn.model import Architecture, MemberModel, TrainingDiverged, features, loss_and_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    lr: float = 3e-4
    batch_size: int = 128
    epochs: int = 10
    dropout: float = 0.1
    lam: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    channels: tuple[int, int] = (16, 32)
    kernel: int = 5
    feature_dim: int = 64

    def validate(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown hyperparameters: {sorted(extra)}")
        d = dict(d)
        for k in ("betas", "channels"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _seeds(seed: int) -> tuple[int, int, int]:
    a, b, c = np.random.SeedSequence(int(seed)).generate_state(3)
    return int(a), int(b), int(c)


def mean_features(model: MemberModel, Z: np.ndarray, chunk: int = 1024) -> np.ndarray:
    total = np.zeros(model.arch.feature_dim)
    for i in range(0, len(Z), chunk):
        total += features(model, Z[i : i + chunk]).sum(axis=0)
    return total / len(Z)


def train_member(A: Dataset, B: Dataset, D: Dataset, E: Dataset, hp: HyperParams, seed: int) -> MemberModel:
    hp.validate()
    arch = Architecture(window=A.L + 1, channels=hp.channels, kernel=hp.kernel, feature_dim=hp.feature_dim)
    init_seed, batch_seed, drop_seed = _seeds(seed)
    model = MemberModel.initial(arch, init_seed, A.norm, hp.to_dict())
    model.seed = int(seed)
    opt = Adam(model.params, hp.lr, hp.betas, hp.eps)
    drop_rng = np.random.default_rng(drop_seed)

    sums = np.zeros(3)
    count = 0
    epoch = 0
    for mb in sample_minibatches(A, B, D, E, hp.batch_size, batch_seed, hp.epochs):
        if mb.epoch != epoch:
            model.history.append(_epoch_record(epoch, sums, count))
            sums[:] = 0.0
            count = 0
            epoch = mb.epoch
        # overflow is caught by the finiteness checks below
        with np.errstate(over="ignore", invalid="ignore"):
            lb, grads = loss_and_grads(model.params, mb.xa, mb.ya, mb.xd, mb.xe, hp.lam, hp.dropout, drop_rng)
        if not math.isfinite(lb.total):
            raise TrainingDiverged(mb.step, f"loss is {lb.total} (classification {lb.classification}, adaptation {lb.adaptation})")
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(mb.step, f"non-finite gradient in {k}")
        opt.step(grads)
        sums += (lb.total, lb.classification, lb.adaptation)
        count += 1
    if count:
        model.history.append(_epoch_record(epoch, sums, count))

    model.mu_source = mean_features(model, D.Z)
    model.mu_healthy = mean_features(model, B.Z)
    if model.history:
        log.info("member seed=%d final loss %.4f", seed, model.history[-1]["loss"])
    return model


def _epoch_record(epoch: int, sums: np.ndarray, count: int) -> dict:
    s = sums / max(count, 1)
    return {"epoch": epoch + 1, "steps": count, "loss": float(s[0]), "classification": float(s[1]), "adaptation": float(s[2])}
