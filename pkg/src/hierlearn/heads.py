"""Class-probability formulations and their losses.

Four ways to turn an embedding into class probabilities:

* plain softmax over affine logits W_y.f(x) + b_y;
* scaled-cosine softmax over unit embeddings and unit proxies,
  p_c ∝ exp(s cos θ_c);
* squared-distance softmax on the sphere, p_c ∝ exp(-(s/2) ||w_c - u||^2),
  identical to the scaled-cosine law in exact arithmetic;
* distance-ratio probabilities p_c = d_c^{-s} / Σ_y d_y^{-s}, which are
  maximized exactly at the class representative.

Plus the cross-entropy loss with analytic gradients per law, and the
cosine-pull loss used with fixed representatives. Gradients returned
here are w.r.t. the *unit* embeddings and *unit* proxies; chaining
through the normalization of raw vectors is the caller's job
(`_linalg.normalize_rows_vjp`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._linalg import as_float_matrix, check_unit_rows
from .errors import AmbiguousLimit, NonFiniteInput, ShapeMismatch

HEAD_KINDS = ("softmax", "normface", "sd_softmax", "proxydr", "corr")

# distances below this are treated as "at the representative": the
# distance-ratio law degenerates to an exact one-hot there
DR_DISTANCE_FLOOR = 1e-12

# probabilities are clamped here before log(); guards exp underflow at
# large scale swings
PROB_FLOOR = 1e-30


@dataclass(frozen=True)
class HeadConfig:
    kind: str
    scale: float = 10.0
    embed_dim: int = 2

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass
class ProbabilityOutput:
    """Probabilities plus the per-class quantity they were computed from.

    aux holds logits (softmax), cosines (normface), or distances
    (sd_softmax / proxydr). The remaining fields cache what the loss
    backward pass needs.
    """

    kind: str
    probs: np.ndarray
    aux: np.ndarray
    embed: Optional[np.ndarray] = field(default=None, repr=False)
    proxies: Optional[np.ndarray] = field(default=None, repr=False)
    scale: Optional[float] = field(default=None, repr=False)
    features: Optional[np.ndarray] = field(default=None, repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)
    biases: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class HeadGradients:
    """Gradients of a batch loss, w.r.t. whichever inputs the head has."""

    d_embed: Optional[np.ndarray] = None     # w.r.t. unit embeddings
    d_proxies: Optional[np.ndarray] = None   # w.r.t. unit proxies
    d_scale: Optional[float] = None
    d_features: Optional[np.ndarray] = None  # plain softmax only
    d_weights: Optional[np.ndarray] = None
    d_biases: Optional[np.ndarray] = None


def _proxy_matrix(proxies) -> np.ndarray:
    m = getattr(proxies, "matrix", proxies)
    return np.asarray(m, dtype=np.float64)


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _squeeze_like(arr: np.ndarray, single: bool) -> np.ndarray:
    return arr[0] if single else arr


def plain_softmax_probs(features, weights, biases) -> ProbabilityOutput:
    """Softmax over affine logits; aux holds the raw logits."""
    single = np.asarray(features).ndim == 1
    f = as_float_matrix(features, "features")
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(biases, dtype=np.float64)
    if w.ndim != 2 or b.shape != (w.shape[0],) or f.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"features {f.shape}, weights {w.shape}, biases {b.shape}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise NonFiniteInput("weights or biases contain non-finite values")
    logits = f @ w.T + b
    probs = _stable_softmax(logits)
    return ProbabilityOutput(
        "softmax",
        _squeeze_like(probs, single),
        _squeeze_like(logits, single),
        features=f,
        weights=w,
        biases=b,
    )


def normface_probs(embed, proxies, s: float) -> ProbabilityOutput:
    """Scaled-cosine softmax; aux holds cos θ_y per class."""
    single = np.asarray(embed).ndim == 1
    u = as_float_matrix(embed, "embed")
    w = _proxy_matrix(proxies)
    check_unit_rows(u, "embed")
    check_unit_rows(w, "proxies")
    cos = u @ w.T
    probs = _stable_softmax(s * cos)
    return ProbabilityOutput(
        "normface",
        _squeeze_like(probs, single),
        _squeeze_like(cos, single),
        embed=u,
        proxies=w,
        scale=float(s),
    )


def _sphere_distances(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    diff = u[:, None, :] - w[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def sd_softmax_sphere_probs(embed, proxies, s: float) -> ProbabilityOutput:
    """Squared-distance softmax on the unit sphere; aux holds distances.

    Equals normface_probs in exact arithmetic: -(s/2)||w-u||^2 differs
    from s cos θ by a per-sample constant, which softmax cancels.
    """
    single = np.asarray(embed).ndim == 1
    u = as_float_matrix(embed, "embed")
    w = _proxy_matrix(proxies)
    check_unit_rows(u, "embed")
    check_unit_rows(w, "proxies")
    d = _sphere_distances(u, w)
    probs = _stable_softmax(-(s / 2.0) * d * d)
    return ProbabilityOutput(
        "sd_softmax",
        _squeeze_like(probs, single),
        _squeeze_like(d, single),
        embed=u,
        proxies=w,
        scale=float(s),
    )


def proxydr_probs(embed, proxies, s: float) -> ProbabilityOutput:
    """Distance-ratio probabilities p_c = d_c^{-s} / Σ_y d_y^{-s}.

    An embedding sitting exactly on a representative gets the exact
    one-hot limit for that class.
    """
    single = np.asarray(embed).ndim == 1
    u = as_float_matrix(embed, "embed")
    w = _proxy_matrix(proxies)
    check_unit_rows(u, "embed")
    check_unit_rows(w, "proxies")
    d = _sphere_distances(u, w)

    at_proxy = d < DR_DISTANCE_FLOOR
    probs = np.empty_like(d)
    regular = ~np.any(at_proxy, axis=1)
    if np.any(regular):
        logits = -s * np.log(d[regular])
        probs[regular] = _stable_softmax(logits)
    for i in np.flatnonzero(~regular):
        hits = np.flatnonzero(at_proxy[i])
        if hits.size > 1:
            raise AmbiguousLimit(f"sample {i} coincides with {hits.size} representatives")
        row = np.zeros(d.shape[1])
        row[hits[0]] = 1.0
        probs[i] = row
    return ProbabilityOutput(
        "proxydr",
        _squeeze_like(probs, single),
        _squeeze_like(d, single),
        embed=u,
        proxies=w,
        scale=float(s),
    )


def head_probs(config: HeadConfig, embed, proxies) -> ProbabilityOutput:
    """Dispatch on config.kind for the proxy-based heads."""
    if config.kind == "normface":
        return normface_probs(embed, proxies, config.scale)
    if config.kind == "sd_softmax":
        return sd_softmax_sphere_probs(embed, proxies, config.scale)
    if config.kind == "proxydr":
        return proxydr_probs(embed, proxies, config.scale)
    raise ValueError(f"head_probs does not handle kind {config.kind!r}")


def cross_entropy_loss(output: ProbabilityOutput, labels) -> tuple[float, HeadGradients]:
    """Mean negative log-likelihood and its gradients through the head's law.

    Gradients flow to unit embeddings / unit proxies / scale (cosine and
    distance heads) or to features / weights / biases (plain softmax).
    Samples sitting exactly on a representative under the distance-ratio
    law contribute zero gradient (one-hot limit).
    """
    labels = np.asarray(labels, dtype=np.intp)
    probs = np.atleast_2d(output.probs)
    n, k = probs.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels {labels.shape} for batch of {n}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ShapeMismatch(f"labels out of range for {k} classes")

    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))

    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    g /= n  # dL/d(logits)

    if output.kind == "softmax":
        return loss, HeadGradients(
            d_features=g @ output.weights,
            d_weights=g.T @ output.features,
            d_biases=g.sum(axis=0),
        )

    u = output.embed
    w = output.proxies
    s = output.scale
    if output.kind == "normface":
        cos = np.atleast_2d(output.aux)
        dcos = s * g
        return loss, HeadGradients(
            d_embed=dcos @ w,
            d_proxies=dcos.T @ u,
            d_scale=float(np.sum(g * cos)),
        )
    if output.kind == "sd_softmax":
        d = np.atleast_2d(output.aux)
        dd2 = -(s / 2.0) * g  # dL/d(d^2)
        colsum = dd2.sum(axis=0)
        rowsum = dd2.sum(axis=1, keepdims=True)
        return loss, HeadGradients(
            d_embed=2.0 * (u * rowsum - dd2 @ w),
            d_proxies=2.0 * (w * colsum[:, None] - dd2.T @ u),
            d_scale=float(np.sum(g * (-0.5 * d * d))),
        )
    if output.kind == "proxydr":
        d = np.atleast_2d(output.aux)
        at_proxy = np.any(d < DR_DISTANCE_FLOOR, axis=1)
        safe_d = np.maximum(d, DR_DISTANCE_FLOOR)
        # logits = -s log d, so dL/dd = -s g / d; the extra /d below is
        # the unit direction (u - w_c)/d
        coeff = -s * g / (safe_d * safe_d)
        coeff[at_proxy] = 0.0
        d_embed = u * coeff.sum(axis=1, keepdims=True) - coeff @ w
        d_proxies = w * coeff.sum(axis=0)[:, None] - coeff.T @ u
        logd = np.log(safe_d)
        g_scale = g.copy()
        g_scale[at_proxy] = 0.0
        return loss, HeadGradients(
            d_embed=d_embed,
            d_proxies=d_proxies,
            d_scale=float(np.sum(g_scale * (-logd))),
        )
    raise ValueError(f"cross_entropy_loss does not handle kind {output.kind!r}")


def corr_loss(embed, labels, proxies) -> tuple[float, np.ndarray]:
    """Mean (1 - cos θ_true) against fixed representatives.

    Returns the loss and its gradient w.r.t. the unit embeddings.
    """
    u = as_float_matrix(embed, "embed")
    w = _proxy_matrix(proxies)
    check_unit_rows(u, "embed")
    check_unit_rows(w, "proxies")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (u.shape[0],):
        raise ShapeMismatch(f"labels {labels.shape} for batch of {u.shape[0]}")
    if np.any(labels < 0) or np.any(labels >= w.shape[0]):
        raise ShapeMismatch(f"labels out of range for {w.shape[0]} classes")
    picked = w[labels]
    cos = np.sum(u * picked, axis=1)
    loss = float(np.mean(1.0 - cos))
    d_embed = -picked / u.shape[0]
    return loss, d_embed


def confidence_argmax_on_circle(kind: str, proxies, s: float, resolution: int = 3600) -> float:
    """Angle (degrees) on the unit circle maximizing p(class 1 | x).

    Scans a uniform grid of `resolution` angles; requires exactly two
    2-D proxies.
    """
    if resolution < 3600:
        raise ValueError("resolution must be at least 3600")
    w = _proxy_matrix(proxies)
    if w.shape != (2, 2):
        raise ShapeMismatch(f"expected two 2-D proxies, got {w.shape}")
    angles = np.arange(resolution) * (360.0 / resolution)
    rad = np.deg2rad(angles)
    points = np.stack([np.cos(rad), np.sin(rad)], axis=1)
    if kind == "normface":
        out = normface_probs(points, w, s)
    elif kind == "sd_softmax":
        out = sd_softmax_sphere_probs(points, w, s)
    elif kind == "proxydr":
        out = proxydr_probs(points, w, s)
    else:
        raise ValueError(f"unsupported head kind {kind!r}")
    return float(angles[int(np.argmax(out.probs[:, 0]))])
