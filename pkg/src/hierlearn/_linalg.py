"""Small shared vector helpers: row normalization and its backward pass."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteInput, ZeroEmbedding

UNIT_NORM_TOL = 1e-9


def as_float_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{name} contains non-finite values")
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise NonFiniteInput(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    return arr


def normalize_rows(x: np.ndarray, min_norm: float = 1e-12):
    """Return (unit rows, row norms). Raises ZeroEmbedding on a ~zero row."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < min_norm):
        bad = int(np.argmin(norms))
        raise ZeroEmbedding(f"row {bad} has norm {float(norms.flat[bad]):.3e} < {min_norm:.0e}")
    return x / norms, norms[..., 0]


def normalize_rows_vjp(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Backward pass of row normalization.

    For u = x/||x||, the Jacobian-transpose product is
    (g - u (u.g)) / ||x|| applied row-wise.
    """
    inner = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    return (grad_unit - unit * inner) / norms[..., None]


def check_unit_rows(x: np.ndarray, name: str):
    """Raise NotNormalized unless every row has unit norm within tolerance."""
    from .errors import NotNormalized

    norms = np.linalg.norm(np.atleast_2d(np.asarray(x, dtype=np.float64)), axis=-1)
    err = np.max(np.abs(norms - 1.0)) if norms.size else 0.0
    if err > UNIT_NORM_TOL:
        raise NotNormalized(f"{name} rows deviate from unit norm by {err:.3e}")


def pairwise_distances(rows: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between rows; exact zeros on the diagonal."""
    diff = rows[:, None, :] - rows[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(d, 0.0)
    return d
