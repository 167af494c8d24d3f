"""Reference curves for expected distortion.

Lower bounds from channel knowledge at the transmitter (quantized or
perfect), the constant-gain limit of infinite diversity, and a slope
estimator for the high-SNR decay rate of any curve.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from ._numerics import quad, quad_cells
from .errors import ValidationError
from .fading import ContinuousFading, DiscreteFading

__all__ = [
    "BoundCurve",
    "CURVE_KINDS",
    "csit_quantized",
    "csit_perfect",
    "infinite_diversity",
    "no_csit",
    "bound_curve",
    "distortion_exponent_estimate",
]

CURVE_KINDS = ("csit_quantized", "csit_perfect", "no_csit", "infinite_diversity")
TAIL_MASS = 1e-12


@dataclass(frozen=True)
class BoundCurve:
    """Expected distortion sampled over an SNR sweep."""

    kind: str
    snr_db: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise ValidationError(f"unknown curve kind {self.kind!r}")
        snr = np.asarray(self.snr_db, dtype=float).ravel()
        vals = np.asarray(self.values, dtype=float).ravel()
        if snr.shape != vals.shape:
            raise ValidationError("snr_db and values differ in length")
        object.__setattr__(self, "snr_db", snr)
        object.__setattr__(self, "values", vals)

    @property
    def points(self):
        return list(zip(self.snr_db.tolist(), self.values.tolist()))


def _check(P, b):
    if not P >= 0:
        raise ValidationError("power must be nonnegative")
    if not b > 0:
        raise ValidationError("bandwidth ratio b must be positive")


def csit_quantized(fading: DiscreteFading, total_power: float, b: float) -> float:
    """Expected distortion when the transmitter knows the quantized state.

    All power goes to the single layer matching the realized state; the
    outage state keeps distortion 1.
    """
    _check(total_power, b)
    terms = fading.probs * (1.0 + fading.gammas * total_power) ** (-b)
    return math.fsum(np.append(terms, fading.outage_prob))


def csit_perfect(fading: ContinuousFading, total_power: float, b: float) -> float:
    """Expected distortion when the transmitter knows the exact gain.

    The integral is cut where the tail mass drops below ``1e-12`` and split
    at ``1/P``: linear variable below, ``log`` variable above where the
    integrand decays like a power law.
    """
    _check(total_power, b)
    P = float(total_power)

    def integrand(g):
        return fading.pdf(g) * (1.0 + g * P) ** (-b)

    grid = getattr(fading, "gammas", None)
    if grid is not None:
        return quad_cells(integrand, grid)
    top = fading.tail_quantile(TAIL_MASS)
    split = min(1.0 / P, top) if P > 0 else top
    low = quad(integrand, 0.0, split)
    if split >= top:
        return low
    high = quad(lambda x: math.exp(x) * integrand(math.exp(x)), math.log(split), math.log(top))
    return low + high


def infinite_diversity(mean_gain: float, total_power: float, b: float) -> float:
    """Distortion over a constant channel with gain ``mean_gain``."""
    _check(total_power, b)
    if not mean_gain > 0:
        raise ValidationError("mean gain must be positive")
    return (1.0 + mean_gain * total_power) ** (-b)


def no_csit(fading, total_power: float, b: float) -> float:
    """Minimum expected distortion with layered coding and no transmitter CSI."""
    if isinstance(fading, DiscreteFading):
        from .discrete_alloc import minimize_expected_distortion

        return minimize_expected_distortion(fading, total_power, b).expected_distortion
    from .continuous_alloc import min_expected_distortion_continuous

    return min_expected_distortion_continuous(fading, b, total_power).min_expected_distortion


def bound_curve(kind: str, fading, b: float, snr_db: Sequence[float]) -> BoundCurve:
    """Evaluate one curve kind over a list of SNRs in dB.

    ``csit_quantized`` needs discrete fading, ``csit_perfect`` continuous
    fading; ``infinite_diversity`` uses the fading's mean gain.
    """
    snr = np.asarray(snr_db, dtype=float).ravel()
    if snr.size == 0:
        raise ValidationError("empty SNR list")
    power = 10.0 ** (snr / 10.0)
    if kind == "csit_quantized":
        if not isinstance(fading, DiscreteFading):
            raise ValidationError("csit_quantized needs discrete fading")
        fn = lambda P: csit_quantized(fading, P, b)  # noqa: E731
    elif kind == "csit_perfect":
        if not isinstance(fading, ContinuousFading):
            raise ValidationError("csit_perfect needs continuous fading")
        fn = lambda P: csit_perfect(fading, P, b)  # noqa: E731
    elif kind == "infinite_diversity":
        fn = lambda P: infinite_diversity(fading.mean, P, b)  # noqa: E731
    elif kind == "no_csit":
        fn = lambda P: no_csit(fading, P, b)  # noqa: E731
    else:
        raise ValidationError(f"unknown curve kind {kind!r}")
    return BoundCurve(kind, snr, np.array([fn(P) for P in power]))


def distortion_exponent_estimate(
    curve: Union[BoundCurve, Tuple[Sequence[float], Sequence[float]]],
    snr_window_db: Tuple[float, float] = (40.0, 60.0),
) -> float:
    """Least-squares slope of ``-log10 E[D]`` against ``log10 P`` in a window.

    Parameters
    ----------
    curve : BoundCurve or (snr_db, expected_distortion)
    snr_window_db : (low, high)
        Inclusive window in dB.

    Raises
    ------
    ValidationError
        If fewer than two points fall in the window, or any of them has
        ``E[D] >= 0.1`` (not yet in the high-SNR regime).
    """
    if isinstance(curve, BoundCurve):
        snr, ed = curve.snr_db, curve.values
    else:
        snr, ed = (np.asarray(a, dtype=float).ravel() for a in curve)
    lo, hi = snr_window_db
    keep = (snr >= lo) & (snr <= hi)
    if keep.sum() < 2 or np.ptp(snr[keep]) == 0:
        raise ValidationError(f"window [{lo}, {hi}] dB holds fewer than two distinct SNRs")
    if np.any(ed[keep] >= 0.1):
        raise ValidationError("window includes points with E[D] >= 0.1")
    if keep.sum() < 5:
        warnings.warn("slope fitted from fewer than five points", RuntimeWarning)
    slope, _ = np.polyfit(snr[keep] / 10.0, -np.log10(ed[keep]), 1)
    return float(slope)
