"""Confidence estimation: the normalized tracker-vs-model disagreement metric,
the particle-budget controller it drives, and weight-based particle pruning.

Budget control: a disagreement above threshold adds a fixed block of
particles and freezes the budget for hold_frames (a further confidence drop
overrides the freeze); once the hold expires and confidence is stable, the
budget decays geometrically by removing the lowest-weight particles, floored
at p_min.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Vec2


def motion_model_reliability(t_pf: Vec2, t_model: Vec2, scale: float) -> float:
    """Normalized distance between the filter estimate and the motion-model
    prediction. scale sets the unit (observation noise std by default)."""
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    dx = t_pf.x - t_model.x
    dy = t_pf.y - t_model.y
    return math.sqrt(dx * dx + dy * dy) / scale


@dataclass(frozen=True)
class BudgetController:
    k: int
    hold_remaining: int = 0
    d_threshold: float = 3.0
    p_add: int = 100
    p_min: int = 100
    p_max: int = 1000
    hold_frames: int = 10
    decay_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.p_min <= self.p_max:
            raise ValueError(f"need 0 < p_min <= p_max, got {self.p_min}, {self.p_max}")
        if not self.p_min <= self.k <= self.p_max:
            raise ValueError(f"k={self.k} outside [{self.p_min}, {self.p_max}]")
        if self.p_add < 1:
            raise ValueError(f"p_add must be >= 1, got {self.p_add}")
        if not 0.0 < self.decay_fraction < 1.0:
            raise ValueError(f"decay_fraction must be in (0, 1), got {self.decay_fraction}")
        if self.hold_remaining < 0 or self.hold_frames < 0:
            raise ValueError("hold counters must be >= 0")


@dataclass(frozen=True)
class BudgetUpdate:
    controller: BudgetController
    resample: bool  # budget grew: redraw the particle set at the new size
    removed: int  # particles to drop (lowest weights first) on decay


def update_budget(c: BudgetController, d: float) -> BudgetUpdate:
    """One budget-control step. Pure: same (controller, d) gives same result."""
    if d > c.d_threshold:
        # Confidence drop: grow and (re)start the hold, even mid-hold.
        new_k = min(c.k + c.p_add, c.p_max)
        return BudgetUpdate(
            replace(c, k=new_k, hold_remaining=c.hold_frames), resample=True, removed=0
        )
    if c.hold_remaining > 0:
        return BudgetUpdate(
            replace(c, hold_remaining=c.hold_remaining - 1), resample=False, removed=0
        )
    p_del = math.ceil(c.decay_fraction * c.k)
    new_k = max(c.k - p_del, c.p_min)
    return BudgetUpdate(replace(c, k=new_k), resample=False, removed=c.k - new_k)


def propagation_reliability(
    weights: np.ndarray, w_threshold: float, n_min: int
) -> tuple[np.ndarray, bool]:
    """Indices of particles whose normalized weight is below w_threshold,
    plus a flag demanding a resample when fewer than n_min would survive."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    normalized = weights / total if total > 0.0 else np.full_like(weights, 1.0 / len(weights))
    prune = np.nonzero(normalized < w_threshold)[0]
    survivors = len(weights) - len(prune)
    return prune, survivors < n_min


def lowest_weight_indices(weights: np.ndarray, count: int) -> np.ndarray:
    """The `count` lowest-weight particle indices; ties resolved by index."""
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(weights, kind="stable")
    return np.sort(order[:count])
