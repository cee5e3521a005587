"""Training objectives with exact analytic gradients.

The contrastive kernel is a soft-label InfoNCE: a row-stochastic target
distribution weights the log-softmax of cosine similarities between anchor
and candidate embeddings at temperature tau.  Both contrastive branches
(action-action and action-primitive) share it.  The imitation loss is the
sum of three softmax cross-entropies over the primitive class heads, and
fine-tuning uses a plain L1 regression loss.  All losses reduce by batch
mean so their magnitudes are batch-size independent, which the adaptive
weighting relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics


@dataclass(frozen=True)
class ContrastiveConfig:
    """Temperature and branch trade-off of the contrastive objective.

    The default temperature is deliberately milder than the conventional
    0.07: at the soft-label optimum, cosine gaps between graded candidates
    scale with tau times the log target ratios, and 0.07 leaves margins too
    thin for reliable nearest-description retrieval at this scale.
    """

    tau: float = 0.3
    lam: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"branch trade-off must be >= 0, got {self.lam}")


@dataclass
class LossValue:
    """A scalar loss plus gradients w.r.t. each named input."""

    value: float
    grads: dict[str, np.ndarray]

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"loss value is not finite: {self.value!r}")
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise ValueError(f"gradient {name!r} contains non-finite entries")


def _check_target(target: np.ndarray, n: int, k: int) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    if target.shape != (n, k):
        raise ValueError(f"target shape {target.shape} does not match ({n}, {k})")
    sums = target.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
    if bad.size:
        raise ValueError(f"target row {bad[0]} sums to {sums[bad[0]]!r}, expected 1")
    return target


def soft_infonce(
    anchors: np.ndarray, candidates: np.ndarray, target: np.ndarray, tau: float
) -> LossValue:
    """Soft-label InfoNCE over cosine similarities.

    value = -(1/N) sum_i sum_j target_ij * log softmax_j(cos(a_i, c_j) / tau).

    Gradients are exact derivatives w.r.t. both embedding matrices, taken
    through the cosine normalization.  With an identity target this equals
    the standard hard InfoNCE.
    """
    anchors = np.asarray(anchors, dtype=float)
    candidates = np.asarray(candidates, dtype=float)
    n = anchors.shape[0]
    target = _check_target(target, n, candidates.shape[0])
    a_norms = numerics.row_norms(anchors, "anchors")
    c_norms = numerics.row_norms(candidates, "candidates")
    a_hat = anchors / a_norms[:, None]
    c_hat = candidates / c_norms[:, None]

    logits = a_hat @ c_hat.T
    logp = numerics.row_log_softmax(logits, tau)
    value = -float((target * logp).sum()) / n

    # dL/dlogits, then through the cosine normalization of each side.
    g = (np.exp(logp) - target) / (n * tau)
    d_a_hat = g @ c_hat
    d_c_hat = g.T @ a_hat
    d_a = (d_a_hat - (d_a_hat * a_hat).sum(axis=1, keepdims=True) * a_hat) / a_norms[:, None]
    d_c = (d_c_hat - (d_c_hat * c_hat).sum(axis=1, keepdims=True) * c_hat) / c_norms[:, None]
    return LossValue(value, {"anchors": d_a, "candidates": d_c})


def loss_action_action(a: np.ndarray, target: np.ndarray, tau: float) -> LossValue:
    """Action-action branch: anchors and candidates are the same embeddings.

    The gradient sums the anchor- and candidate-side contributions of each
    embedding.  The softmax denominator keeps the self term even though the
    usual target excludes it.
    """
    inner = soft_infonce(a, a, target, tau)
    return LossValue(inner.value, {"embeddings": inner.grads["anchors"] + inner.grads["candidates"]})


def loss_action_primitive(
    a: np.ndarray, p: np.ndarray, target: np.ndarray, tau: float
) -> LossValue:
    """Action-primitive branch: anchors each action to the description texts.

    ``p`` holds one embedding per distinct description in the batch; the
    target collapses affinity mass of duplicate descriptions onto their
    shared column.
    """
    return soft_infonce(a, p, target, tau)


def contrastive_total(l_a: LossValue, l_m: LossValue, lam: float) -> LossValue:
    """Combine both branches: value = L_a + lam * L_m, gradients linear."""
    grads = {"embeddings": l_a.grads["embeddings"] + lam * l_m.grads["anchors"]}
    if "candidates" in l_m.grads:
        grads["primitives"] = lam * l_m.grads["candidates"]
    return LossValue(l_a.value + lam * l_m.value, grads)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray, head: str):
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"{head} labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValueError(f"{head} label {bad} out of range [0, {k})")
    logp = numerics.row_log_softmax(logits)
    value = -float(logp[np.arange(n), labels].sum()) / n
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


def imitation_loss(
    logits_t: np.ndarray,
    logits_r: np.ndarray,
    logits_g: np.ndarray,
    labels: tuple[np.ndarray, np.ndarray, np.ndarray],
) -> LossValue:
    """Primitive-classification loss: mean over the batch of the summed
    translation / rotation / gripper cross-entropies (equal head weights)."""
    v_t, g_t = _cross_entropy(logits_t, labels[0], "translation")
    v_r, g_r = _cross_entropy(logits_r, labels[1], "rotation")
    v_g, g_g = _cross_entropy(logits_g, labels[2], "gripper")
    return LossValue(v_t + v_r + v_g, {"logits_t": g_t, "logits_r": g_r, "logits_g": g_g})


def l1_trajectory_loss(pred: np.ndarray, target: np.ndarray) -> LossValue:
    """Mean absolute error over all entries; subgradient 0 at ties."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return LossValue(float(np.abs(diff).mean()), {"pred": np.sign(diff) / diff.size})
