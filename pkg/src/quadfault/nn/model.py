"""Difference-based 1-D CNN fault classifier and its composite loss.

Architecture (time runs along the last axis of a 7 x (L+1) window)::

    conv1 (7 -> c1, k) -> relu -> maxpool/2
    conv2 (c1 -> c2, k) -> relu -> maxpool/2
    flatten -> fc (-> d) -> relu               = features f
    (f - mu_healthy) -> dropout -> head (-> 5) = logits

``mu_healthy`` is the mean feature vector of all-healthy samples: during
training it is the mean over the current source-healthy batch (and is
differentiated through); afterwards it is fixed to the mean over the
target all-healthy set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from quadfault.data import N_CLASSES, N_ROWS, Normalization
from quadfault.nn import layers as ly
from quadfault.nn.mmd import mmd2

MODEL_FORMAT = "quadfault-member/1"
PARAM_ORDER = ("conv1.W", "conv1.b", "conv2.W", "conv2.b", "fc.W", "fc.b", "head.W", "head.b")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"training diverged at step {step}: {detail}")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    window: int = 16  # L + 1
    channels: tuple[int, int] = (16, 32)
    kernel: int = 5
    feature_dim: int = 64
    n_rows: int = N_ROWS
    n_classes: int = N_CLASSES

    @property
    def flat_dim(self) -> int:
        return self.channels[1] * ((self.window // 2) // 2)

    def shapes(self) -> dict:
        c1, c2 = self.channels
        return {
            "conv1.W": (c1, self.n_rows, self.kernel),
            "conv1.b": (c1,),
            "conv2.W": (c2, c1, self.kernel),
            "conv2.b": (c2,),
            "fc.W": (self.flat_dim, self.feature_dim),
            "fc.b": (self.feature_dim,),
            "head.W": (self.feature_dim, self.n_classes),
            "head.b": (self.n_classes,),
        }

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "feature_dim": self.feature_dim,
            "n_rows": self.n_rows,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            window=int(d["window"]),
            channels=tuple(int(c) for c in d["channels"]),
            kernel=int(d["kernel"]),
            feature_dim=int(d["feature_dim"]),
            n_rows=int(d.get("n_rows", N_ROWS)),
            n_classes=int(d.get("n_classes", N_CLASSES)),
        )


def init_params(arch: Architecture, seed: int) -> dict:
    """Uniform fan-in initialisation; biases start at zero."""
    if arch.window // 4 < 1:
        raise ValueError(f"window {arch.window} too short for two width-2 poolings")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = math.prod(shape[1:]) if name.startswith("conv") else shape[0]
        gain = 3.0 if name == "head.W" else 6.0
        bound = math.sqrt(gain / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    classification: float
    adaptation: float
    lam: float


@dataclass
class MemberModel:
    arch: Architecture
    params: dict
    mu_healthy: np.ndarray
    seed: int
    norm: Normalization | None = None
    hyperparams: dict = field(default_factory=dict)
    mu_source: np.ndarray | None = None
    history: list = field(default_factory=list)
    format: str = MODEL_FORMAT

    @classmethod
    def initial(cls, arch: Architecture, seed: int, norm: Normalization | None = None, hyperparams=None):
        return cls(arch, init_params(arch, seed), np.zeros(arch.feature_dim), seed, norm, dict(hyperparams or {}))

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def with_reference(self, mu: np.ndarray) -> "MemberModel":
        """Copy sharing parameters but differencing against ``mu``."""
        return MemberModel(
            self.arch, self.params, np.asarray(mu, dtype=float), self.seed, self.norm,
            self.hyperparams, self.mu_source, self.history, self.format,
        )

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": self.format,
            "arch": self.arch.to_dict(),
            "seed": self.seed,
            "hyperparams": self.hyperparams,
            "normalization": None if self.norm is None else self.norm.to_dict(),
            "mu_healthy": self.mu_healthy.tolist(),
            "mu_source": None if self.mu_source is None else self.mu_source.tolist(),
            "params": {k: {"shape": list(self.params[k].shape), "values": self.params[k].ravel().tolist()} for k in PARAM_ORDER},
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MemberModel":
        fmt = d.get("format")
        if fmt != MODEL_FORMAT:
            raise ModelFormatError(f"unsupported member model format {fmt!r}; expected {MODEL_FORMAT!r}")
        arch = Architecture.from_dict(d["arch"])
        params = {}
        for k, shape in arch.shapes().items():
            entry = d["params"][k]
            if tuple(entry["shape"]) != shape:
                raise ModelFormatError(f"parameter {k} has shape {entry['shape']}, architecture expects {list(shape)}")
            params[k] = np.array(entry["values"], dtype=float).reshape(shape)
        return cls(
            arch=arch,
            params=params,
            mu_healthy=np.array(d["mu_healthy"], dtype=float),
            seed=int(d["seed"]),
            norm=None if d.get("normalization") is None else Normalization.from_dict(d["normalization"]),
            hyperparams=d.get("hyperparams", {}),
            mu_source=None if d.get("mu_source") is None else np.array(d["mu_source"], dtype=float),
            history=d.get("history", []),
            format=fmt,
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
        return path

    @classmethod
    def load(cls, path) -> "MemberModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _check_input(arch: Architecture, x: np.ndarray) -> None:
    want = (arch.n_rows, arch.window)
    if x.ndim != 3 or x.shape[1:] != want:
        raise ly.ShapeError(f"conv1: expected input of shape (m, {want[0]}, {want[1]}), got {tuple(x.shape)}")


def trunk_forward(params: dict, x: np.ndarray):
    h1, c1 = ly.conv1d_forward(x, params["conv1.W"], params["conv1.b"])
    a1, r1 = ly.relu_forward(h1)
    p1, q1 = ly.maxpool2_forward(a1)
    h2, c2 = ly.conv1d_forward(p1, params["conv2.W"], params["conv2.b"])
    a2, r2 = ly.relu_forward(h2)
    p2, q2 = ly.maxpool2_forward(a2)
    flat = p2.reshape(len(x), -1)
    if flat.shape[1] != params["fc.W"].shape[0]:
        raise ly.ShapeError(f"fc: expected {params['fc.W'].shape[0]} flattened inputs, got {flat.shape[1]}")
    hf, cf = ly.dense_forward(flat, params["fc.W"], params["fc.b"])
    f, rf = ly.relu_forward(hf)
    return f, (c1, r1, q1, c2, r2, q2, p2.shape, cf, rf)


def trunk_backward(df: np.ndarray, cache) -> dict:
    c1, r1, q1, c2, r2, q2, p2_shape, cf, rf = cache
    d = ly.relu_backward(df, rf)
    dflat, dWf, dbf = ly.dense_backward(d, cf)
    d = ly.maxpool2_backward(dflat.reshape(p2_shape), q2)
    d = ly.relu_backward(d, r2)
    d, dW2, db2 = ly.conv1d_backward(d, c2)
    d = ly.maxpool2_backward(d, q1)
    d = ly.relu_backward(d, r1)
    _, dW1, db1 = ly.conv1d_backward(d, c1, need_dx=False)
    return {"conv1.W": dW1, "conv1.b": db1, "conv2.W": dW2, "conv2.b": db2, "fc.W": dWf, "fc.b": dbf}


def forward(model: MemberModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inference pass on normalised windows: ``(logits (m, 5), features (m, d))``."""
    x = np.asarray(x, dtype=float)
    _check_input(model.arch, x)
    f, _ = trunk_forward(model.params, x)
    if model.mu_healthy.shape != (f.shape[1],):
        raise ly.ShapeError(f"difference: reference has shape {model.mu_healthy.shape}, features have {f.shape[1]}")
    logits = (f - model.mu_healthy) @ model.params["head.W"] + model.params["head.b"]
    return logits, f


def features(model: MemberModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_input(model.arch, x)
    return trunk_forward(model.params, x)[0]


def objective(params: dict, xa, ya, xd, xe, lam: float, dropout: float = 0.0, rng=None):
    """Forward-only composite loss, returned in the dtype of the inputs."""
    na, nd = len(xa), len(xd)
    F, _ = trunk_forward(params, np.concatenate([xa, xd, xe], axis=0))
    fa, fd, fe = F[:na], F[na : na + nd], F[na + nd :]
    hid = fa - fd.mean(axis=0)
    if dropout > 0.0:
        hid = hid * ((rng.random(hid.shape) >= dropout) / (1.0 - dropout))
    logits = hid @ params["head.W"] + params["head.b"]
    lp = ly.log_softmax(logits)
    lc = -lp[np.arange(na), np.asarray(ya) - 1].mean()
    lda, _, _ = mmd2(fd, fe, with_grad=False)
    return lc + lam * lda


def loss_and_grads(
    params: dict,
    xa: np.ndarray,
    ya: np.ndarray,
    xd: np.ndarray,
    xe: np.ndarray,
    lam: float,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[LossBreakdown, dict]:
    """Composite loss on one step's batches and its parameter gradients.

    ``ya`` holds labels 1..5. Classification uses A; the healthy reference
    and the adaptation term use D (source healthy) and E (target healthy).
    """
    na, nd = len(xa), len(xd)
    x = np.concatenate([xa, xd, xe], axis=0)
    F, cache = trunk_forward(params, x)
    fa, fd, fe = F[:na], F[na : na + nd], F[na + nd :]

    mu = fd.mean(axis=0)
    diff = fa - mu
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout needs a random generator")
        mask = (rng.random(diff.shape) >= dropout) / (1.0 - dropout)
        hid = diff * mask
    else:
        mask = None
        hid = diff
    logits, ch = ly.dense_forward(hid, params["head.W"], params["head.b"])
    lc, dlogits = ly.cross_entropy(logits, np.asarray(ya) - 1)
    lda, dfd_da, dfe_da = mmd2(fd, fe)
    total = lc + lam * lda

    dhid, dWh, dbh = ly.dense_backward(dlogits, ch)
    ddiff = dhid * mask if mask is not None else dhid
    dF = np.zeros_like(F)
    dF[:na] = ddiff
    dF[na : na + nd] = -ddiff.sum(axis=0) / nd + lam * dfd_da
    dF[na + nd :] = lam * dfe_da
    grads = trunk_backward(dF, cache)
    grads["head.W"] = dWh
    grads["head.b"] = dbh
    return LossBreakdown(float(total), float(lc), float(lda), float(lam)), grads


def loss(model: MemberModel, batch_a, batch_b, batch_d, batch_e, lam: float) -> LossBreakdown:
    """Loss on ``(x, y)`` / ``x`` batches without dropout.

    ``batch_b`` is accepted for symmetry with the four sampled batches but
    does not enter the objective (E carries the same target-healthy data).
    """
    xa, ya = batch_a
    lb, _ = loss_and_grads(model.params, xa, ya, batch_d, batch_e, lam)
    if not math.isfinite(lb.total):
        raise TrainingDiverged(-1, f"non-finite loss {lb}")
    return lb
