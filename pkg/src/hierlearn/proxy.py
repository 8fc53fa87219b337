"""Class representatives: learned proxies and evaluation-time prototypes.

Proxies live on the unit sphere under one of three update policies:

* ``gradient`` — ordinary parameters; the trainer Adam-steps them
  through the classification loss and re-projects to the sphere;
* ``ema`` — blended toward the batch's per-class normalized mean
  embedding (local prototype) and renormalized;
* ``fixed`` — placed once (typically by stress-minimizing placement
  from a hierarchy's transformed distance matrix) and never moved.

Prototypes are the normalized per-class mean embeddings, computed from
data only, and used only for evaluation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._linalg import as_float_matrix, check_unit_rows, normalize_rows, pairwise_distances
from .errors import (
    AbsentClass,
    ConfigConflict,
    DegenerateMatrix,
    SchemaError,
    ShapeMismatch,
    ZeroMean,
    ZeroVector,
)
from .hierarchy import ClassDistanceMatrix
from .optim import AdamState, adam_step

PROXY_POLICIES = ("gradient", "ema", "fixed")


@dataclass
class ProxySet:
    labels: tuple[str, ...]
    matrix: np.ndarray        # (num_classes, embed_dim), unit rows
    policy: str

    def __post_init__(self):
        if self.policy not in PROXY_POLICIES:
            raise ConfigConflict(f"unknown proxy policy {self.policy!r}")
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape[0] != len(self.labels):
            raise ShapeMismatch(f"{m.shape[0]} rows for {len(self.labels)} labels")
        check_unit_rows(m, "proxies")
        if self.policy == "fixed":
            m = m.copy()
            m.flags.writeable = False
        self.matrix = m

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @classmethod
    def random(cls, labels, dim: int, policy: str = "gradient", seed: int = 0) -> "ProxySet":
        rng = np.random.default_rng(seed)
        rows, _ = normalize_rows(rng.standard_normal((len(labels), dim)))
        return cls(tuple(labels), rows, policy)


@dataclass
class PrototypeSet:
    labels: tuple[str, ...]
    matrix: np.ndarray        # unit rows; absent classes hold zeros
    counts: np.ndarray
    present: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.labels)


def ema_update(proxies: ProxySet, batch_embeds, batch_labels, alpha: float) -> ProxySet:
    """Blend proxies toward the batch's per-class local prototypes.

    For each class in the batch, the normalized mean of its unit
    embeddings replaces a fraction alpha of the proxy, after which the
    proxy is renormalized. A batch with one sample for a class reduces
    to the single-point update rule.
    """
    if proxies.policy != "ema":
        raise ConfigConflict(f"ema_update on policy {proxies.policy!r}")
    if not 0.0 < alpha < 1.0:
        raise ConfigConflict(f"alpha must lie in (0, 1), got {alpha}")
    u = as_float_matrix(batch_embeds, "batch_embeds")
    check_unit_rows(u, "batch_embeds")
    labels = np.asarray(batch_labels, dtype=np.intp)
    if labels.shape != (u.shape[0],):
        raise ShapeMismatch(f"labels {labels.shape} for batch of {u.shape[0]}")

    matrix = proxies.matrix.copy()
    for c in np.unique(labels):
        mean = u[labels == c].sum(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ZeroVector(f"class {proxies.labels[c]}: batch embeddings cancel")
        blend = alpha * (mean / norm) + (1.0 - alpha) * matrix[c]
        blend_norm = np.linalg.norm(blend)
        if blend_norm < 1e-12:
            raise ZeroVector(f"class {proxies.labels[c]}: blended proxy degenerate")
        matrix[c] = blend / blend_norm
    return ProxySet(proxies.labels, matrix, "ema")


def _stress_and_grad(rows: np.ndarray, target: np.ndarray):
    """Normalized stress ||D(rows) - target||_F / ||target||_F and its
    gradient w.r.t. rows. Coincident rows contribute zero (subgradient)."""
    d = pairwise_distances(rows)
    resid = d - target
    resid_norm = np.linalg.norm(resid)
    target_norm = np.linalg.norm(target)
    stress = resid_norm / target_norm
    if resid_norm == 0.0:
        return stress, np.zeros_like(rows)
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = np.where(d > 0, resid / d, 0.0)
    grad = 2.0 * (rows * coeff.sum(axis=1, keepdims=True) - coeff @ rows)
    grad /= resid_norm * target_norm
    return stress, grad


def mds_place(
    target: ClassDistanceMatrix,
    dim: int,
    lr: float = 1e-3,
    iters: int = 1000,
    seed: int = 0,
) -> tuple[ProxySet, np.ndarray]:
    """Place fixed unit proxies by minimizing normalized stress.

    Rows start from a seeded isotropic Gaussian, normalized; each Adam
    step is followed by re-projection onto the sphere. Returns the
    fixed ProxySet and the stress value before each step plus the final
    one (length iters + 1).
    """
    t = np.asarray(target.values, dtype=np.float64)
    if not np.any(t):
        raise DegenerateMatrix("target distance matrix is all zeros")
    rng = np.random.default_rng(seed)
    rows, _ = normalize_rows(rng.standard_normal((t.shape[0], dim)))
    opt = AdamState(lr=lr)
    trace = np.empty(iters + 1)
    for i in range(iters):
        stress, grad = _stress_and_grad(rows, t)
        trace[i] = stress
        rows = adam_step(opt, rows, grad)
        rows, _ = normalize_rows(rows)
    trace[iters], _ = _stress_and_grad(rows, t)
    return ProxySet(target.labels, rows, "fixed"), trace


def compute_prototypes(embeds, labels, class_labels) -> PrototypeSet:
    """Normalized per-class mean embeddings.

    Classes with no samples are flagged absent (zero row, present=False)
    rather than fabricated.
    """
    u = as_float_matrix(embeds, "embeds")
    check_unit_rows(u, "embeds")
    labels = np.asarray(labels, dtype=np.intp)
    k = len(class_labels)
    matrix = np.zeros((k, u.shape[1]))
    counts = np.zeros(k, dtype=np.intp)
    present = np.zeros(k, dtype=bool)
    for c in range(k):
        mask = labels == c
        counts[c] = int(mask.sum())
        if counts[c] == 0:
            continue
        mean = u[mask].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ZeroMean(f"class {class_labels[c]}: sample embeddings cancel")
        matrix[c] = mean / norm
        present[c] = True
    return PrototypeSet(tuple(class_labels), matrix, counts, present)


def pairwise_representative_distances(reps) -> ClassDistanceMatrix:
    """Euclidean distance matrix between class representatives."""
    present = getattr(reps, "present", None)
    if present is not None and not np.all(present):
        missing = [reps.labels[i] for i in np.flatnonzero(~present)]
        raise AbsentClass(f"no representative for classes {missing}")
    return ClassDistanceMatrix(reps.labels, pairwise_distances(reps.matrix))


def representatives_to_csv(reps) -> str:
    """Class id column plus one column per dimension, 17 significant
    digits (round-trips float64 exactly)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    dim = reps.matrix.shape[1]
    writer.writerow(["class"] + [f"v{i}" for i in range(dim)])
    for label, row in zip(reps.labels, reps.matrix):
        writer.writerow([label] + [f"{x:.17g}" for x in row])
    return out.getvalue()


def proxies_from_csv(text: str, policy: str = "fixed") -> ProxySet:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows or rows[0][:1] != ["class"]:
        raise SchemaError("expected header starting with 'class'")
    labels = tuple(r[0] for r in rows[1:])
    matrix = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
    return ProxySet(labels, matrix, policy)
