"""Optimal layered power distribution over a continuum of fading states.

For a continuous gain pdf ``f`` the optimal cumulative power ``U(gamma)``
(power spent on layers above ``gamma``) has three regions: zero above an
upper edge ``gamma_o``, all of ``P`` below a lower edge ``gamma_P``, and in
between the solution of the linear ODE::

    U'(g) = -(2/g + f'(g)/f(g)) / (1 + b) * (U(g) + 1/g),    U(gamma_o) = 0

Everything below is written in terms of ``h(s) = (s**2 f(s))**(1/(1+b))``,
for which the ODE coefficient is ``h'/h``.  Integrals are taken in
``log s`` and the ratios ``h(s)/h(g)`` are formed from log-pdfs, so very
small gains (high SNR) do not underflow.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import BoundaryNotFoundError, NumericalError, ValidationError
from ._numerics import quad as _quad, quad_log as _quad_log
from .fading import ContinuousFading

__all__ = [
    "ContinuousSolution",
    "upper_boundary",
    "cumulative_power",
    "lower_boundary",
    "min_expected_distortion_continuous",
    "capacity_maximizing_power",
]

GAMMA_FLOOR = 1e-12  # relative to the mean gain


def _check_b(b):
    if not b > 0:
        raise ValidationError("bandwidth ratio b must be positive")


def _log_h(fading: ContinuousFading, b: float, s: float) -> float:
    """``log h(s) = (2 log s + log f(s)) / (1 + b)``."""
    lf = fading.log_pdf(s)
    if not np.all(np.isfinite(lf)):
        raise ValidationError(f"pdf vanishes inside [{np.min(s):.6g}, {np.max(s):.6g}]")
    return (2.0 * np.log(s) + lf) / (1.0 + b)


def _dlog_h(fading: ContinuousFading, b: float, s: float) -> float:
    return (2.0 / s + fading.dlog_pdf(s)) / (1.0 + b)


def _support_floor(fading: ContinuousFading) -> float:
    """Smallest gain worth searching: the floor, or the start of a tabulated support."""
    floor = GAMMA_FLOOR * fading.mean
    grid = getattr(fading, "gammas", None)
    if grid is not None:
        k = int(np.argmax(np.asarray(fading.pdf_values) > 0))
        if k == 0:
            floor = max(floor, float(grid[0]))
        else:
            # the pdf rises linearly from zero at grid[k-1]
            floor = max(floor, float(grid[k - 1] + 1e-9 * (grid[k] - grid[k - 1])))
    return floor


# ---------------------------------------------------------------------------
# upper edge
# ---------------------------------------------------------------------------


def _edge_condition(fading: ContinuousFading, g: float) -> float:
    # g f(g) + F(g) - 1, with the survival function to keep digits in the tail
    return g * float(fading.pdf(g)) - float(fading.survival(g))


def upper_boundary(fading: ContinuousFading) -> float:
    """Largest gain that still receives power.

    Solves ``g f(g) + F(g) = 1`` on ``[mean/100, 100 mean]``.

    Raises
    ------
    BoundaryNotFoundError
        If the condition does not change sign inside the bracket.
    """
    lo = fading.mean / 100.0
    hi = 100.0 * fading.mean
    grid = getattr(fading, "gammas", None)
    if grid is not None:
        hi = min(hi, float(grid[-1]))
        lo = max(lo, float(grid[0]))
    glo, ghi = _edge_condition(fading, lo), _edge_condition(fading, hi)
    if not (glo < 0 < ghi):
        # scan for an interior sign change (e.g. a pdf vanishing at the grid end)
        xs = np.geomspace(lo, hi, 400) if lo > 0 else np.linspace(lo, hi, 400)
        vals = np.array([_edge_condition(fading, x) for x in xs])
        idx = np.flatnonzero((vals[:-1] < 0) & (vals[1:] > 0))
        if idx.size == 0:
            raise BoundaryNotFoundError(
                "no sign change of g*f(g) + F(g) - 1 in the search bracket",
                {"lo": lo, "hi": hi, "g_lo": glo, "g_hi": ghi},
            )
        lo, hi = float(xs[idx[-1]]), float(xs[idx[-1] + 1])
    root = optimize.brentq(lambda x: _edge_condition(fading, x), lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(root)


# ---------------------------------------------------------------------------
# cumulative power
# ---------------------------------------------------------------------------


def _u_derivative_route(fading, b, g, g_o):
    """``U(g) = int_g^go (h'(s)/h(g)) / s ds`` with the analytic ``h'/h``."""
    lh0 = _log_h(fading, b, g)

    def integrand(x):
        s = np.exp(x)
        return _dlog_h(fading, b, s) * np.exp(_log_h(fading, b, s) - lh0)

    return _quad_log(fading, integrand, g, g_o)


def _u_by_parts_route(fading, b, g, g_o):
    """Same integral after integrating by parts; needs only ``f``.

    ``U(g) = h(go)/(go h(g)) - 1/g + int_g^go h(s)/(s**2 h(g)) ds``
    """
    lh0 = _log_h(fading, b, g)

    def integrand(x):
        s = np.exp(x)
        return np.exp(_log_h(fading, b, s) - lh0) / s

    tail = _quad_log(fading, integrand, g, g_o)
    return math.exp(_log_h(fading, b, g_o) - lh0) / g_o - 1.0 / g + tail


def cumulative_power(
    fading: ContinuousFading,
    b: float,
    gamma: float,
    gamma_o: Optional[float] = None,
    method: str = "auto",
) -> float:
    """Power ``U(gamma)`` on layers above ``gamma`` in the optimal distribution.

    Parameters
    ----------
    method : {"auto", "derivative", "by_parts"}
        ``derivative`` integrates with the analytic ``f'/f`` and is the default
        when the law provides it; ``by_parts`` uses only ``f``.
    """
    _check_b(b)
    g_o = upper_boundary(fading) if gamma_o is None else float(gamma_o)
    g = float(gamma)
    if not 0 < g <= g_o * (1 + 1e-12):
        raise ValidationError(f"gamma must lie in (0, gamma_o={g_o:.6g}]")
    if g >= g_o:
        return 0.0
    if method == "auto":
        method = "derivative" if fading.has_dlog_pdf else "by_parts"
    if method == "derivative":
        if not fading.has_dlog_pdf:
            raise ValidationError("derivative route needs an analytic f'/f")
        return _u_derivative_route(fading, b, g, g_o)
    if method == "by_parts":
        return _u_by_parts_route(fading, b, g, g_o)
    raise ValidationError(f"unknown method {method!r}")


def capacity_maximizing_power(fading: ContinuousFading, gamma: float) -> float:
    """Cumulative power maximizing expected capacity (the ``b -> 0`` limit)."""
    g = float(gamma)
    f = float(fading.pdf(g))
    if not f > 0:
        raise ValidationError(f"pdf vanishes at gamma={g:.6g}")
    return (float(fading.survival(g)) - g * f) / (g * g * f)


# ---------------------------------------------------------------------------
# lower edge
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _LowerEdge:
    gamma: float
    absorbed: bool  # False when U stays below P all the way down to the floor


def _lower_edge(fading, b, P, g_o, method) -> _LowerEdge:
    floor = _support_floor(fading)

    def excess(x):
        return cumulative_power(fading, b, math.exp(x), g_o, method) - P

    hi = g_o
    lo = 0.5 * g_o
    while excess(math.log(lo)) <= 0:
        if lo <= floor:
            return _LowerEdge(0.0, False)
        hi = lo
        lo = max(0.5 * lo, floor)
    x = optimize.brentq(excess, math.log(lo), math.log(hi), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    g = math.exp(x)
    miss = abs(excess(x))
    if miss > 1e-9 * (1 + P):
        raise NumericalError("lower boundary did not meet U(gamma_P) = P", {"gamma_P": g, "miss": miss})
    return _LowerEdge(g, True)


def lower_boundary(fading: ContinuousFading, b: float, total_power: float, method: str = "auto") -> float:
    """Smallest gain that still receives power: the root of ``U(g) = P``.

    Returns 0.0 when ``U`` never reaches ``P`` above the search floor.
    """
    _check_b(b)
    if not total_power > 0:
        raise ValidationError("total power must be positive")
    g_o = upper_boundary(fading)
    return _lower_edge(fading, b, float(total_power), g_o, method).gamma


# ---------------------------------------------------------------------------
# full solution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousSolution:
    """Optimal distribution for one ``(fading, b, P)``.

    Attributes
    ----------
    gamma_o, gamma_P : float
        Upper and lower edges of the band of gains that receive power.
        ``gamma_P`` is 0.0 if ``U`` stays below ``P`` (see ``power_absorbed``).
    min_expected_distortion : float
        ``F(gamma_P) + D(gamma_P)``.
    valid : bool
        False if ``U`` was found to increase somewhere in the band
        (negative power density).  Nothing is repaired.
    """

    fading: ContinuousFading
    b: float
    total_power: float
    gamma_o: float
    gamma_P: float
    min_expected_distortion: float
    valid: bool
    power_absorbed: bool
    method: str

    @property
    def band_start(self) -> float:
        """``gamma_P``, or the search floor when the power was not absorbed."""
        return self.gamma_P if self.gamma_P > 0 else _support_floor(self.fading)

    def U(self, gamma):
        """Cumulative power on ``[gamma_P, gamma_o]`` (vectorized)."""
        return _vectorize(lambda g: cumulative_power(self.fading, self.b, g, self.gamma_o, self.method), gamma)

    def T(self, gamma):
        """Cumulative power over all gains: ``P`` below ``gamma_P``, 0 above ``gamma_o``."""

        def one(g):
            if g >= self.gamma_o:
                return 0.0
            if g <= self.gamma_P:
                return self.total_power
            return cumulative_power(self.fading, self.b, g, self.gamma_o, self.method)

        return _vectorize(one, gamma)

    def rho(self, gamma):
        """Power density ``-U'(gamma)`` inside the band."""
        step = 1e-5 * self.fading.mean

        def one(g):
            if self.fading.has_dlog_pdf:
                u = cumulative_power(self.fading, self.b, g, self.gamma_o, self.method)
                return _dlog_h(self.fading, self.b, g) * (u + 1.0 / g)
            up = _raw_u(self, min(g + step, self.gamma_o))
            dn = _raw_u(self, max(g - step, self.band_start))
            return -(up - dn) / (min(g + step, self.gamma_o) - max(g - step, self.band_start))

        return _vectorize(one, gamma)

    def D(self, gamma):
        """Distortion-weighted tail ``int_g^inf f(s) D_r(s) / D_r(g) ds`` for ``g`` in the band."""
        return _vectorize(lambda g: _d_tail(self.fading, self.b, g, self.gamma_o), gamma)

    def realized_distortion(self, gamma):
        """Distortion delivered to a receiver with gain ``gamma`` (vectorized).

        Layers between ``gamma_P`` and ``g`` are decoded, so the delivered
        distortion is ``(h(g)/h(gamma_P))**(-b)``, frozen above ``gamma_o``.
        """
        g = np.asarray(gamma, dtype=float)
        low = self.band_start
        top = np.clip(g, low, self.gamma_o)
        out = np.exp(-self.b * (_log_h(self.fading, self.b, top) - _log_h(self.fading, self.b, low)))
        out = np.where(g < low, 1.0, out)
        return float(out) if out.ndim == 0 else out


def _raw_u(sol: ContinuousSolution, g: float) -> float:
    if g >= sol.gamma_o:
        return 0.0
    return cumulative_power(sol.fading, sol.b, g, sol.gamma_o, sol.method)


def _vectorize(fn, gamma):
    arr = np.asarray(gamma, dtype=float)
    if arr.ndim == 0:
        return float(fn(float(arr)))
    return np.array([fn(float(x)) for x in arr.ravel()]).reshape(arr.shape)


def _d_tail(fading, b, g, g_o):
    """``D(g) = int_g^go f(s) (h(g)/h(s))**b ds + go f(go) (h(g)/h(go))**b``."""
    if g >= g_o:
        return float(fading.survival(g))
    lh0 = _log_h(fading, b, g)

    def integrand(x):
        s = np.exp(x)
        return s * np.exp(fading.log_pdf(s) + b * (lh0 - _log_h(fading, b, s)))

    body = _quad_log(fading, integrand, g, g_o)
    return body + g_o * float(fading.pdf(g_o)) * math.exp(b * (lh0 - _log_h(fading, b, g_o)))


def _check_monotone(sol: ContinuousSolution, points: int = 64) -> bool:
    lo, hi = sol.band_start, sol.gamma_o
    if not hi > lo:
        return True
    grid = np.geomspace(lo, hi, points + 2)[1:-1]
    return bool(np.all(sol.rho(grid) >= -1e-9 * (1 + sol.total_power) / lo))


def min_expected_distortion_continuous(
    fading: ContinuousFading, b: float, total_power: float, method: str = "auto"
) -> ContinuousSolution:
    """Solve for both band edges and the minimum expected distortion."""
    _check_b(b)
    if not total_power > 0:
        raise ValidationError("total power must be positive")
    P = float(total_power)
    if method == "auto":
        method = "derivative" if fading.has_dlog_pdf else "by_parts"
    g_o = upper_boundary(fading)
    edge = _lower_edge(fading, b, P, g_o, method)
    low = edge.gamma if edge.absorbed else _support_floor(fading)
    ed = float(fading.cdf(low)) + _d_tail(fading, b, low, g_o)
    sol = ContinuousSolution(
        fading=fading,
        b=float(b),
        total_power=P,
        gamma_o=g_o,
        gamma_P=edge.gamma,
        min_expected_distortion=ed,
        valid=True,
        power_absorbed=edge.absorbed,
        method=method,
    )
    if not _check_monotone(sol):
        sol = dataclasses.replace(sol, valid=False)
    return sol
