"""Symbolic batch affinities: binary per-primitive match matrices, their
weighted average, and row-normalized target distributions for the
contrastive losses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .actions import PrimitiveTriple

TRANS, ROT, GRIP = "trans", "rot", "grip"
INCLUDE_SELF, EXCLUDE_SELF = "include_self", "exclude_self"


@dataclass(frozen=True)
class AffinityWeights:
    """Relative contribution of each primitive to the similarity matrix."""

    w_t: float = 1.0
    w_r: float = 1.0
    w_g: float = 1.0

    def __post_init__(self):
        if min(self.w_t, self.w_r, self.w_g) < 0:
            raise ValueError("affinity weights must be non-negative")
        if self.w_t + self.w_r + self.w_g <= 0:
            raise ValueError("affinity weights must not all be zero")


def _component_key(p: PrimitiveTriple, component: str):
    if component == TRANS:
        return (p.trans_axis, p.trans_bin)
    if component == ROT:
        return (p.rot_axis, p.rot_bin)
    if component == GRIP:
        return p.grip
    raise ValueError(f"unknown component {component!r}")


def match_matrix(triples: Sequence[PrimitiveTriple], component: str) -> np.ndarray:
    """Binary N x N matrix: 1 where two triples share the selected primitive.

    Translation / rotation require both the signed axis and the magnitude bin
    to agree; the gripper compares its state.
    """
    if len(triples) == 0:
        raise ValueError("match_matrix requires a non-empty batch")
    keys = [_component_key(p, component) for p in triples]
    n = len(keys)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            if keys[i] == keys[j]:
                m[i, j] = m[j, i] = 1.0
    return m


def similarity_matrix(
    triples: Sequence[PrimitiveTriple], weights: AffinityWeights = AffinityWeights()
) -> np.ndarray:
    """Weighted average of the three per-primitive match matrices.

    Entries are graded similarities in [0, 1]; the matrix is symmetric with a
    unit diagonal.
    """
    total = weights.w_t + weights.w_r + weights.w_g
    s = (
        weights.w_t * match_matrix(triples, TRANS)
        + weights.w_r * match_matrix(triples, ROT)
        + weights.w_g * match_matrix(triples, GRIP)
    ) / total
    return s


def cross_similarity(
    rows: Sequence[PrimitiveTriple],
    cols: Sequence[PrimitiveTriple],
    weights: AffinityWeights = AffinityWeights(),
) -> np.ndarray:
    """Rectangular graded similarity between two triple lists (same formula)."""
    if len(rows) == 0 or len(cols) == 0:
        raise ValueError("cross_similarity requires non-empty triple lists")
    total = weights.w_t + weights.w_r + weights.w_g
    out = np.zeros((len(rows), len(cols)))
    for component, w in ((TRANS, weights.w_t), (ROT, weights.w_r), (GRIP, weights.w_g)):
        rk = [_component_key(p, component) for p in rows]
        ck = [_component_key(p, component) for p in cols]
        for i, a in enumerate(rk):
            for j, b in enumerate(ck):
                if a == b:
                    out[i, j] += w
    return out / total


def row_normalize(s: np.ndarray, mode: str = INCLUDE_SELF) -> np.ndarray:
    """Turn an affinity matrix into a row-stochastic target distribution.

    ``EXCLUDE_SELF`` zeroes the diagonal first (self-similarity carries no
    information for action-action alignment); rows left with no mass fall
    back to uniform over the off-diagonal entries.
    """
    if mode not in (INCLUDE_SELF, EXCLUDE_SELF):
        raise ValueError(f"unknown normalization mode {mode!r}")
    t = np.array(s, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {t.shape}")
    n = t.shape[0]
    if mode == EXCLUDE_SELF:
        np.fill_diagonal(t, 0.0)
    sums = t.sum(axis=1)
    for i in np.flatnonzero(sums == 0):
        t[i] = 1.0 / (n - 1)
        t[i, i] = 0.0
    sums = t.sum(axis=1)
    return t / sums[:, None]


def collapse_columns(s: np.ndarray, groups: Sequence[int], n_groups: int) -> np.ndarray:
    """Sum the columns of ``s`` that share a group id.

    Used to build action-primitive targets: batch columns with identical
    primitive descriptions collapse onto one candidate column each.
    """
    s = np.asarray(s, dtype=float)
    if len(groups) != s.shape[1]:
        raise ValueError("one group id per column required")
    out = np.zeros((s.shape[0], n_groups))
    for col, g in enumerate(groups):
        out[:, g] += s[:, col]
    return out


def to_csv(matrix: np.ndarray, sample_ids: Sequence, path) -> None:
    """Write a matrix row-major with the sample ids as the header row."""
    matrix = np.asarray(matrix)
    if matrix.shape[1] != len(sample_ids):
        raise ValueError("one sample id per column required")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sample_ids)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
