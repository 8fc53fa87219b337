"""Static initialization and dynamic adaptation of the scale factor s.

The confidence p(c|x), viewed as a function of the true-class angle
θ_c, has an inflection where a curvature function ψ(s, θ_c) crosses
zero. Picking s so that the inflection sits at a representative angle
keeps the confidence responsive. Two curvature functions apply:

* cosine-softmax head:
    ψ(s, θ) = cos θ (e^{s cos θ} + B) + s sin²θ (e^{s cos θ} − B)
* distance-ratio head (distance measured as the angle θ):
    ψ(s, θ) = B (s + 1) θ^s − s + 1

where B estimates the summed non-true-class terms of the partition
function. Static estimates: B = |classes| − 1 for the cosine head and
B = (|classes| − 1)(π/2)^{−s} for the distance-ratio head, with
θ = π/4. During training, B is the batch average of per-sample values
and θ the batch median of true-class angles clipped to [0, π/4].

Roots are found by minimizing ψ² with a scalar Adam solver whose
learning rate shrinks on plateaus, so it converges to root precision
instead of orbiting the minimum at a fixed step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EmptyBatch, NoConvergence, OutOfRange
from .optim import AdamState, adam_step

THETA_CLIP_MAX = math.pi / 4.0
SCALE_FLOOR = 1e-3
EXP_GUARD = 700.0  # beyond this, e^{s cos θ} terms are rescaled by e^{-s cos θ}

# |psi| <= STATIONARY_RTOL * (1 + B) counts as "at the root": the update
# skips its steps there, so a converged s stays put instead of orbiting
# the root at the optimizer's step size
STATIONARY_RTOL = 1e-10


def psi_normface(s: float, theta_c: float, b_x: float) -> float:
    """Curvature function of the cosine-softmax confidence.

    For s·cos θ beyond the float64 exp range the value is rescaled by
    e^{-s cos θ}; the zero set and sign are unchanged.
    """
    _check_psi_args(s, theta_c, b_x)
    c = math.cos(theta_c)
    sin2 = math.sin(theta_c) ** 2
    a = s * c
    if a <= EXP_GUARD:
        e = math.exp(a)
        return c * (e + b_x) + s * sin2 * (e - b_x)
    shrink = math.exp(-a)
    return c * (1.0 + b_x * shrink) + s * sin2 * (1.0 - b_x * shrink)


def psi_normface_ds(s: float, theta_c: float, b_x: float) -> float:
    """d psi_normface / d s (matching the same overflow rescaling)."""
    c = math.cos(theta_c)
    sin2 = math.sin(theta_c) ** 2
    a = s * c
    if a <= EXP_GUARD:
        e = math.exp(a)
        return e * c * (c + s * sin2) + sin2 * (e - b_x)
    shrink = math.exp(-a)
    return c * (c + s * sin2) + sin2 * (1.0 - b_x * shrink)


def psi_proxydr(s: float, theta_c: float, b_x: float) -> float:
    """Curvature function of the distance-ratio confidence."""
    _check_psi_args(s, None, b_x)
    if theta_c <= 0 and not float(s).is_integer():
        raise DomainError(f"theta_c={theta_c} invalid for non-integer s={s}")
    if theta_c > math.pi / 2.0:
        raise OutOfRange(f"theta_c must lie in (0, pi/2], got {theta_c}")
    return b_x * (s + 1.0) * theta_c ** s - s + 1.0


def psi_proxydr_ds(s: float, theta_c: float, b_x: float) -> float:
    t = max(theta_c, 1e-300)
    return b_x * t ** s * (1.0 + (s + 1.0) * math.log(t)) - 1.0


def _check_psi_args(s, theta_c, b_x):
    if s <= 0:
        raise OutOfRange(f"s must be positive, got {s}")
    if b_x <= 0:
        raise OutOfRange(f"b_x must be positive, got {b_x}")
    if theta_c is not None and not 0.0 <= theta_c <= math.pi / 2.0:
        raise OutOfRange(f"theta_c must lie in [0, pi/2], got {theta_c}")


def static_bx_normface(num_classes: int) -> float:
    return float(num_classes - 1)


def static_bx_proxydr(num_classes: int, s: float) -> float:
    return (num_classes - 1) * (math.pi / 2.0) ** (-s)


def _psi_pair(kind: str, theta: float, b_x: Optional[float], num_classes: Optional[int]):
    """(psi, dpsi) closures in s. b_x=None uses the static, possibly
    s-dependent estimate."""
    if kind == "normface":
        b = static_bx_normface(num_classes) if b_x is None else b_x
        return (lambda s: psi_normface(s, theta, b),
                lambda s: psi_normface_ds(s, theta, b))
    if kind == "proxydr":
        if b_x is None:
            # B(s) = (K-1)(pi/2)^{-s}: fold into psi = (K-1)(s+1)u^s - s + 1
            u = theta / (math.pi / 2.0)
            k1 = float(num_classes - 1)
            log_u = math.log(u) if u > 0 else -math.inf

            def psi(s):
                return k1 * (s + 1.0) * u ** s - s + 1.0

            def dpsi(s):
                return k1 * u ** s * (1.0 + (s + 1.0) * log_u) - 1.0

            return psi, dpsi
        return (lambda s: psi_proxydr(s, theta, b_x),
                lambda s: psi_proxydr_ds(s, theta, b_x))
    raise OutOfRange(f"unknown head kind {kind!r} for scale adaptation")


@dataclass
class ScaleState:
    """Scale factor plus the persistent scalar solver that tracks it."""

    s: float
    kind: str
    num_classes: int
    solver: AdamState = field(default_factory=lambda: AdamState(lr=1e-2))
    base_lr: float = 1e-2
    steps_per_batch: int = 5
    best_abs_psi: float = math.inf
    stall: int = 0
    last_stats: Optional[tuple[float, float]] = None


def _solve_psi_root(
    psi: Callable[[float], float],
    dpsi: Callable[[float], float],
    s0: float,
    base_lr: float,
    tol: float,
    max_steps: int,
) -> tuple[float, float]:
    """Minimize psi(s)^2 with plateau-decayed Adam; returns (s, |psi(s)|)."""
    opt = AdamState(lr=base_lr)
    s = float(s0)
    best_s, best = s, abs(psi(s))
    stall = 0
    for _ in range(max_steps):
        if best < tol:
            break
        p = psi(s)
        g = 2.0 * p * dpsi(s)
        s = float(adam_step(opt, np.float64(s), np.float64(g)))
        s = max(s, SCALE_FLOOR)
        ap = abs(psi(s))
        if ap < best * (1.0 - 1e-12):
            best, best_s = ap, s
            stall = 0
        else:
            stall += 1
        if stall >= 20:
            opt.lr *= 0.25
            opt.reset_moments()
            stall = 0
            if opt.lr < 1e-15:
                break
    return best_s, best


def init_static_scale(kind: str, num_classes: int, tol: float = 1e-8,
                      max_steps: int = 100_000) -> float:
    """Solve ψ(s, π/4) = 0 with the static B estimate.

    Starts from s = 10 so the solver lands on the large-s root (the one
    the log-partition approximation tracks). Raises NoConvergence when
    no root is reachable, which genuinely happens for small class
    counts: with few classes ψ stays positive for every s.
    """
    if num_classes < 2:
        raise OutOfRange(f"need at least 2 classes, got {num_classes}")
    psi, dpsi = _psi_pair(kind, THETA_CLIP_MAX, None, num_classes)
    s, best = _solve_psi_root(psi, dpsi, 10.0, 0.1, tol, max_steps)
    if best >= tol:
        raise NoConvergence(
            f"|psi| only reached {best:.3e} (kind={kind}, classes={num_classes}); "
            "psi may have no root for this configuration"
        )
    return s


def init_scale_state(kind: str, num_classes: int, s: Optional[float] = None) -> ScaleState:
    """ScaleState starting at the given s, or at the static-estimate root."""
    if s is None:
        s = init_static_scale(kind, num_classes)
    return ScaleState(s=float(s), kind=kind, num_classes=num_classes)


def dynamic_scale_update(state: ScaleState, batch_thetas, batch_bx) -> ScaleState:
    """Per-batch adaptation of s toward the root of ψ(s, θ_med) = 0.

    θ_med is the batch median true-class angle clipped to [0, π/4]; B is
    the batch mean of the per-sample estimates. Takes
    state.steps_per_batch Adam steps on ψ²; the solver's learning rate
    resets when the batch statistics change and decays while they
    plateau, and s never drops below SCALE_FLOOR.
    """
    thetas = np.asarray(batch_thetas, dtype=np.float64)
    bxs = np.asarray(batch_bx, dtype=np.float64)
    if thetas.size == 0 or bxs.size == 0:
        raise EmptyBatch("dynamic scale update needs a non-empty batch")

    theta_med = float(np.clip(np.median(thetas), 0.0, THETA_CLIP_MAX))
    if state.kind == "proxydr":
        theta_med = max(theta_med, 1e-9)  # θ^s needs θ > 0
    b_avg = float(np.mean(bxs))
    stats = (theta_med, b_avg)
    if stats != state.last_stats:
        state.last_stats = stats
        state.solver = AdamState(lr=state.base_lr)
        state.best_abs_psi = math.inf
        state.stall = 0

    psi, dpsi = _psi_pair(state.kind, theta_med, b_avg, state.num_classes)
    stationary = STATIONARY_RTOL * (1.0 + abs(b_avg))
    for _ in range(state.steps_per_batch):
        p = psi(state.s)
        if abs(p) <= stationary:
            break
        g = 2.0 * p * dpsi(state.s)
        state.s = float(adam_step(state.solver, np.float64(state.s), np.float64(g)))
        state.s = max(state.s, SCALE_FLOOR)
        ap = abs(psi(state.s))
        if ap < state.best_abs_psi * (1.0 - 1e-12):
            state.best_abs_psi = ap
            state.stall = 0
        else:
            state.stall += 1
        if state.stall >= 20:
            state.solver.lr = max(state.solver.lr * 0.25, 1e-15)
            state.solver.reset_moments()
            state.stall = 0
    return state
