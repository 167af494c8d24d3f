"""Optimal power split between a layer and the aggregate layer above it.

With weights ``u`` (lower layer, gain ``alpha``) and ``w`` (upper layer,
gain ``beta > alpha``), the weighted distortion for total power ``T1`` of
which ``T2`` goes to the upper layer is::

    D1(T2) = ((1 + alpha*T1) / (1 + alpha*T2))**(-b) * (u + w*(1 + beta*T2)**(-b))

Its minimizer is ``min(U2, T1)`` where the ceiling ``U2`` does not depend on
``T1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import ValidationError

__all__ = [
    "TwoLayerParams",
    "TwoLayerSplit",
    "weighted_distortion",
    "power_ceiling",
    "aggregate_weight",
    "optimal_split",
]


@dataclass(frozen=True)
class TwoLayerParams:
    u: float
    w: float
    alpha: float
    beta: float
    b: float

    def __post_init__(self):
        if self.u < 0 or self.w < 0:
            raise ValidationError("weights must be nonnegative")
        if self.u == 0 and self.w == 0:
            raise ValidationError("degenerate weights: u = w = 0")
        if not (self.beta > self.alpha > 0):
            raise ValidationError("gains must satisfy beta > alpha > 0")
        if not self.b > 0:
            raise ValidationError("bandwidth ratio b must be positive")


@dataclass(frozen=True)
class TwoLayerSplit:
    """Result of :func:`optimal_split`.

    ``aggregate_weight`` is set only when the ceiling binds (the
    unconstrained branch ``U2 <= T1``).  ``ceiling_unbounded`` flags
    ``u == 0``, where the upper layer absorbs all power.
    """

    ceiling: float
    assigned_high: float
    min_distortion: float
    aggregate_weight: Optional[float]
    unconstrained: bool
    ceiling_unbounded: bool = False


def weighted_distortion(params: TwoLayerParams, total_power: float, upper_power: float) -> float:
    """Evaluate ``D1`` at a given split (no optimization)."""
    u, w, a, be, b = params.u, params.w, params.alpha, params.beta, params.b
    ratio = (1.0 + a * total_power) / (1.0 + a * upper_power)
    return ratio ** (-b) * (u + w * (1.0 + be * upper_power) ** (-b))


def power_ceiling(params: TwoLayerParams) -> float:
    """Power ``U2`` worth giving the upper layer when power is plentiful.

    Returns ``math.inf`` when ``u == 0`` (every unit of power is better spent
    on the upper layer).
    """
    u, w, a, be, b = params.u, params.w, params.alpha, params.beta, params.b
    # beta/alpha <= 1 + u/w without dividing by w
    if w * (be - a) <= u * a:
        return 0.0
    if u == 0:
        return math.inf
    return ((w / u) * (be / a - 1.0)) ** (1.0 / (1.0 + b)) / be - 1.0 / be


def aggregate_weight(params: TwoLayerParams, ceiling: Optional[float] = None) -> float:
    """Equivalent single-layer weight ``W1`` of the optimally split pair."""
    U = power_ceiling(params) if ceiling is None else ceiling
    if not math.isfinite(U):
        raise ValidationError("aggregate weight undefined for an unbounded ceiling")
    u, w, a, be, b = params.u, params.w, params.alpha, params.beta, params.b
    return (1.0 + a * U) ** b * (u + (1.0 + be * U) ** (-b) * w)


def optimal_split(params: TwoLayerParams, total_power: float) -> TwoLayerSplit:
    """Minimize ``D1`` over ``T2 in [0, T1]``."""
    if not total_power >= 0:
        raise ValidationError("total power must be nonnegative")
    u, w, a, be, b = params.u, params.w, params.alpha, params.beta, params.b
    U = power_ceiling(params)
    if not math.isfinite(U):
        D = w * (1.0 + be * total_power) ** (-b)
        return TwoLayerSplit(U, total_power, D, None, False, ceiling_unbounded=True)
    if U <= total_power:
        W = aggregate_weight(params, U)
        D = (1.0 + a * total_power) ** (-b) * W
        return TwoLayerSplit(U, U, D, W, True)
    D = u + (1.0 + be * total_power) ** (-b) * w
    return TwoLayerSplit(U, total_power, D, None, False)
