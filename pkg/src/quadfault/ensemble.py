"""Soft-voting ensemble of member classifiers and its predictive entropy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from quadfault.data import N_CLASSES, Normalization
from quadfault.nn.layers import softmax
from quadfault.nn.model import MODEL_FORMAT, MemberModel, ModelFormatError, forward

ENSEMBLE_FORMAT = "quadfault-ensemble/1"
MAX_ENTROPY = math.log(N_CLASSES)


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class EnsemblePrediction:
    probs: np.ndarray  # (5,)
    label: int  # 1..5
    entropy: float  # nats
    member_probs: np.ndarray  # (N, 5)


def predictive_entropy(probs, tol: float = 1e-9) -> float:
    """Entropy in nats of a class distribution, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"not a probability distribution: {p.tolist()}")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def entropy_rows(P: np.ndarray) -> np.ndarray:
    """Row-wise entropy of an (n, C) matrix of distributions."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return -t.sum(axis=1)


def member_mean(member_probs: np.ndarray) -> np.ndarray:
    """Mean over the member axis (0), bit-identical under any member order.

    Summing the sorted values fixes the floating-point addition order.
    """
    mp = np.asarray(member_probs, dtype=float)
    return np.sort(mp, axis=0).sum(axis=0) / mp.shape[0]


def argmax_label(P: np.ndarray) -> np.ndarray:
    """1-based argmax; ties resolve to the lowest class index."""
    return np.argmax(P, axis=-1) + 1


def soft_vote(member_logits) -> EnsemblePrediction:
    z = np.asarray(member_logits, dtype=float)
    if z.ndim != 2 or z.shape[0] == 0:
        raise EnsembleError(f"need an (N >= 1, {N_CLASSES}) logit matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise EnsembleError("member logits must be finite")
    mp = softmax(z)
    return from_member_probs(mp)


def from_member_probs(member_probs: np.ndarray) -> EnsemblePrediction:
    mp = np.asarray(member_probs, dtype=float)
    if mp.ndim != 2 or mp.shape[0] == 0:
        raise EnsembleError(f"need an (N >= 1, C) probability matrix, got shape {mp.shape}")
    p = member_mean(mp)
    return EnsemblePrediction(p, int(argmax_label(p)), predictive_entropy(p), mp)


@dataclass(frozen=True)
class BatchPrediction:
    """Ensemble predictions for many samples at once."""

    member_probs: np.ndarray  # (N, n, 5)

    @property
    def probs(self) -> np.ndarray:
        return member_mean(self.member_probs)

    @property
    def labels(self) -> np.ndarray:
        return argmax_label(self.probs)

    @property
    def entropy(self) -> np.ndarray:
        return entropy_rows(self.probs)

    def __len__(self) -> int:
        return self.member_probs.shape[1]

    def __getitem__(self, i: int) -> EnsemblePrediction:
        return from_member_probs(self.member_probs[:, i, :])

    def first(self, n: int) -> "BatchPrediction":
        """Predictions of the sub-ensemble made of the first ``n`` members."""
        if not 1 <= n <= self.member_probs.shape[0]:
            raise EnsembleError(f"sub-ensemble size {n} outside 1..{self.member_probs.shape[0]}")
        return BatchPrediction(self.member_probs[:n])


def check_members(models) -> Normalization | None:
    """Validate that members can be combined; returns their shared normalisation."""
    models = list(models)
    if not models:
        raise EnsembleError("an ensemble needs at least one member")
    for i, mdl in enumerate(models):
        if mdl.format != MODEL_FORMAT:
            raise ModelFormatError(f"member {i} has format {mdl.format!r}, expected {MODEL_FORMAT!r}")
    arch = models[0].arch
    norm = models[0].norm
    for i, mdl in enumerate(models[1:], start=1):
        if mdl.arch != arch:
            raise EnsembleError(f"member {i} architecture {mdl.arch} differs from member 0 ({arch})")
        if (mdl.norm is None) != (norm is None) or (norm is not None and mdl.norm != norm):
            raise EnsembleError(f"member {i} was trained with different normalisation statistics")
    return norm


def member_probabilities(models, X: np.ndarray, normalized: bool = False, chunk: int = 2048) -> np.ndarray:
    """Softmax outputs of every member, shape (N, n, 5).

    ``X`` holds raw windows unless ``normalized`` is set.
    """
    norm = check_members(models)
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if not normalized:
        if norm is None:
            raise EnsembleError("members carry no normalisation; pass normalised inputs")
        X = norm.apply(X)
    out = np.empty((len(models), len(X), N_CLASSES))
    for k, mdl in enumerate(models):
        for i in range(0, len(X), chunk):
            logits, _ = forward(mdl, X[i : i + chunk])
            out[k, i : i + chunk] = softmax(logits)
    return out


def predict_batch(models, X, normalized: bool = False) -> BatchPrediction:
    return BatchPrediction(member_probabilities(models, X, normalized))


def predict(models, x) -> EnsemblePrediction:
    """Ensemble prediction for a single raw window (a Sample or a 7 x (L+1) array)."""
    mat = x.x if hasattr(x, "x") else np.asarray(x, dtype=float)
    return predict_batch(models, mat[None])[0]


# --- manifest ---------------------------------------------------------------


def save_ensemble(models, directory, extra: dict | None = None) -> Path:
    """Write member files and ``ensemble.json`` listing them in order."""
    directory = Path(directory)
    norm = check_members(models)
    files = []
    for k, mdl in enumerate(models):
        name = f"member_{k:03d}.json"
        mdl.save(directory / name)
        files.append(name)
    manifest = {
        "format": ENSEMBLE_FORMAT,
        "member_format": MODEL_FORMAT,
        "N": len(models),
        "members": files,
        "normalization": None if norm is None else norm.to_dict(),
    }
    if extra:
        manifest.update(extra)
    path = directory / "ensemble.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def load_ensemble(path) -> tuple[list[MemberModel], dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "ensemble.json"
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != ENSEMBLE_FORMAT:
        raise ModelFormatError(f"{path}: unsupported ensemble format {manifest.get('format')!r}")
    if manifest.get("member_format") != MODEL_FORMAT:
        raise ModelFormatError(
            f"{path}: members use format {manifest.get('member_format')!r}, this build reads {MODEL_FORMAT!r}"
        )
    if int(manifest["N"]) != len(manifest["members"]):
        raise EnsembleError(f"{path}: N={manifest['N']} but {len(manifest['members'])} member files listed")
    models = [MemberModel.load(path.parent / f) for f in manifest["members"]]
    norm = check_members(models)
    if manifest.get("normalization") is not None and norm != Normalization.from_dict(manifest["normalization"]):
        raise EnsembleError(f"{path}: manifest normalisation does not match the members")
    return models, manifest
