"""Embedding models (linear or one-hidden-layer rectifier MLP).

Forward passes cache their intermediates; backward consumes a cache
exactly once and chains loss gradients back to every parameter,
including through the final row normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._linalg import as_float_matrix, normalize_rows, normalize_rows_vjp
from .errors import ShapeMismatch, StaleCache


@dataclass
class ForwardCache:
    inputs: np.ndarray
    raw: np.ndarray            # f(x)
    unit: np.ndarray           # f(x)/||f(x)||
    norms: np.ndarray
    hidden_pre: Optional[np.ndarray] = None
    hidden: Optional[np.ndarray] = None
    consumed: bool = False


@dataclass
class EmbedderModel:
    """Map d_I-dimensional inputs to d_F-dimensional embeddings."""

    arch: str                  # "linear" | "mlp"
    params: dict = field(default_factory=dict)
    input_dim: int = 0
    embed_dim: int = 0
    hidden_dim: int = 0

    @classmethod
    def create(cls, arch: str, input_dim: int, embed_dim: int,
               hidden_dim: int = 64, seed: int = 0) -> "EmbedderModel":
        """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        rng = np.random.default_rng(seed)

        def layer(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            return w, b

        if arch == "linear":
            w, b = layer(input_dim, embed_dim)
            params = {"w": w, "b": b}
            hidden_dim = 0
        elif arch == "mlp":
            w1, b1 = layer(input_dim, hidden_dim)
            w2, b2 = layer(hidden_dim, embed_dim)
            params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
        else:
            raise ValueError(f"unknown architecture {arch!r}")
        return cls(arch, params, input_dim, embed_dim, hidden_dim)

    def forward(self, inputs) -> ForwardCache:
        """Compute raw and unit embeddings; returns the backward cache."""
        x = as_float_matrix(inputs, "inputs")
        if x.shape[1] != self.input_dim:
            raise ShapeMismatch(f"inputs have dim {x.shape[1]}, model expects {self.input_dim}")
        if self.arch == "linear":
            raw = x @ self.params["w"].T + self.params["b"]
            unit, norms = normalize_rows(raw)
            return ForwardCache(x, raw, unit, norms)
        pre = x @ self.params["w1"].T + self.params["b1"]
        hidden = np.maximum(pre, 0.0)
        raw = hidden @ self.params["w2"].T + self.params["b2"]
        unit, norms = normalize_rows(raw)
        return ForwardCache(x, raw, unit, norms, hidden_pre=pre, hidden=hidden)

    def backward(self, cache: ForwardCache, grad_unit=None, grad_raw=None) -> dict:
        """Parameter gradients from a loss gradient w.r.t. unit (or raw)
        embeddings. Each cache may be consumed once."""
        if cache.consumed:
            raise StaleCache("forward cache already consumed")
        cache.consumed = True
        if (grad_unit is None) == (grad_raw is None):
            raise ValueError("pass exactly one of grad_unit / grad_raw")
        if grad_unit is not None:
            g = normalize_rows_vjp(cache.unit, cache.norms, np.asarray(grad_unit, dtype=np.float64))
        else:
            g = np.asarray(grad_raw, dtype=np.float64)
        if g.shape != cache.raw.shape:
            raise ShapeMismatch(f"gradient {g.shape} vs embeddings {cache.raw.shape}")

        if self.arch == "linear":
            return {"w": g.T @ cache.inputs, "b": g.sum(axis=0)}
        g_hidden = (g @ self.params["w2"]) * (cache.hidden_pre > 0)
        return {
            "w2": g.T @ cache.hidden,
            "b2": g.sum(axis=0),
            "w1": g_hidden.T @ cache.inputs,
            "b1": g_hidden.sum(axis=0),
        }

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def copy(self) -> "EmbedderModel":
        return EmbedderModel(
            self.arch,
            {k: v.copy() for k, v in self.params.items()},
            self.input_dim,
            self.embed_dim,
            self.hidden_dim,
        )
