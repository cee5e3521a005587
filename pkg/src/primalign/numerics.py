"""Dense float64 numerical substrate: cosine-similarity kernels, stable row
softmax, and the central-difference gradient oracle that validates every
analytic gradient in the project.

Matrices are plain 2-D C-order ``numpy`` arrays of 64-bit reals; public
operations reject non-finite input and return finite output.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def _check_finite(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def row_norms(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Euclidean row norms, rejecting zero-norm rows by index."""
    a = _check_finite(a, name)
    norms = np.sqrt((a * a).sum(axis=1))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"{name} row {zero[0]} has zero norm")
    return norms


def normalize_rows(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    return a / row_norms(a, name)[:, None]


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"row dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return normalize_rows(a, "left matrix") @ normalize_rows(b, "right matrix").T


def row_softmax(m: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Numerically stable softmax of ``m / tau`` along each row."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    m = _check_finite(m, "softmax input") / tau
    m = m - m.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


def row_log_softmax(m: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Log of :func:`row_softmax`, computed without leaving log space."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    m = _check_finite(m, "softmax input") / tau
    m = m - m.max(axis=1, keepdims=True)
    return m - np.log(np.exp(m).sum(axis=1, keepdims=True))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    The independent oracle used to validate analytic gradients: per
    coordinate, ``(f(x + h e_k) - f(x - h e_k)) / 2h``.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        orig = x.flat[k]
        x.flat[k] = orig + h
        f_plus = f(x)
        x.flat[k] = orig - h
        f_minus = f(x)
        x.flat[k] = orig
        grad.flat[k] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-4) -> float:
    """Worst-case per-entry relative error against a reference gradient.

    Entries are compared relative to ``max(|reference|, floor)`` so that
    coordinates whose true gradient is (near) zero are judged on the
    absolute scale of the finite-difference noise floor.
    """
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if analytic.shape != reference.shape:
        raise ValueError(f"shape mismatch: {analytic.shape} vs {reference.shape}")
    denom = np.maximum(np.abs(reference), floor)
    return float(np.max(np.abs(analytic - reference) / denom)) if analytic.size else 0.0
