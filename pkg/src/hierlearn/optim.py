"""From-scratch Adam optimizer and a central-difference gradient checker.

Everything runs in float64: the training problems here are small, and
the gradient checker needs the precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteGradient, NonFiniteValue, ShapeMismatch


@dataclass
class AdamState:
    """Moment estimates for one parameter block.

    m and v lazily take the shape of the first gradient seen; t counts
    completed steps.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = field(default=None, repr=False)
    v: Optional[np.ndarray] = field(default=None, repr=False)

    def reset_moments(self):
        self.m = None
        self.v = None
        self.t = 0


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient("gradient contains non-finite values")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise ShapeMismatch(f"moments {state.m.shape} vs params {params.shape}")

    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    grad_f: Callable[[np.ndarray], np.ndarray],
    point: np.ndarray,
    h: float = 1e-6,
) -> float:
    """Max relative error between an analytic gradient and central differences.

    The error for coordinate i is |analytic_i - numeric_i| / max(1, |numeric_i|),
    so tiny gradient components are compared absolutely.
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_f(point), dtype=np.float64)
    if analytic.shape != point.shape:
        raise ShapeMismatch(f"gradient {analytic.shape} vs point {point.shape}")
    if not np.all(np.isfinite(analytic)):
        raise NonFiniteValue("analytic gradient is non-finite")

    numeric = np.zeros_like(point)
    flat = numeric.reshape(-1)
    p = point.copy().reshape(-1)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        hi = f(p.reshape(point.shape))
        p[i] = orig - h
        lo = f(p.reshape(point.shape))
        p[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteValue(f"f is non-finite near coordinate {i}")
        flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
