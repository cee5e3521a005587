"""Moving-average adaptive balancing of the imitation and contrastive losses.

Each loss is smoothed over a sliding window of recent iterations; the weights
are each smoothed loss divided by their sum, so the currently larger loss
receives the larger weight.  The weights are a schedule: no gradient flows
through them.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field


@dataclass
class MAState:
    """Sliding-window buffers of recent imitation / contrastive loss values."""

    window: int = 100
    buf_il: deque = field(default_factory=deque)
    buf_cl: deque = field(default_factory=deque)
    count: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        self.buf_il = deque(self.buf_il, maxlen=self.window)
        self.buf_cl = deque(self.buf_cl, maxlen=self.window)


def update(state: MAState, l_il: float, l_cl: float) -> MAState:
    """Push one observation of each loss, evicting beyond the window."""
    for name, value in (("imitation", l_il), ("contrastive", l_cl)):
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{name} loss must be finite and >= 0, got {value!r}")
    state.buf_il.append(float(l_il))
    state.buf_cl.append(float(l_cl))
    state.count += 1
    return state


def moving_averages(state: MAState) -> tuple[float, float]:
    """Arithmetic means over the buffer contents (partial window at startup)."""
    if state.count == 0:
        raise ValueError("no loss observations yet")
    return (
        sum(state.buf_il) / len(state.buf_il),
        sum(state.buf_cl) / len(state.buf_cl),
    )


def weights(state: MAState) -> tuple[float, float]:
    """(w_il, w_cl): each loss weighted by its own relative moving average.

    Sums to exactly 1.  Falls back to (0.5, 0.5) when both averages are zero.
    """
    ma_il, ma_cl = moving_averages(state)
    if ma_il + ma_cl == 0:
        return 0.5, 0.5
    w_il = ma_il / (ma_il + ma_cl)
    return w_il, 1.0 - w_il


def total_loss(l_cl: float, l_il: float, w: tuple[float, float]) -> float:
    """Convex combination w_cl * L_CL + w_il * L_IL (weights held constant)."""
    w_il, w_cl = w
    return w_cl * l_cl + w_il * l_il
