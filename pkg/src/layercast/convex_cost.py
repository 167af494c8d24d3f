"""Convex distortion-cost minimization over the feasible distortion region.

The decision variables are the realized distortions ``d_k = D^(k)``,
``k = 1..M``.  A distortion vector is achievable with total power ``P``
exactly when it is a nonincreasing chain in ``(0, 1]`` and

    -1/g_1 + sum_i (1/g_i - 1/g_{i+1}) * d_i**(-1/b) <= P,   1/g_{M+1} = 0,

which is a convex set.  Any convex cost of ``d`` can therefore be minimized
with a standard barrier method; this module ships one (dense Newton steps,
problems are small).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from .discrete_alloc import Allocation, realized_distortions
from .errors import InfeasibleError, NumericalError, ValidationError
from .fading import DiscreteFading

__all__ = [
    "DISTORTION_FLOOR",
    "CostSpec",
    "ConvexResult",
    "power_required",
    "power_required_gradient",
    "distortion_to_allocation",
    "expected_and_variance",
    "evaluate_cost",
    "cost_gradient",
    "minimize_cost",
]

#: Lower bound on ``D^(M)`` inside the solver; ``d**(-1/b)`` needs ``d > 0``.
DISTORTION_FLOOR = 1e-12


@dataclass(frozen=True)
class CostSpec:
    """Cost to minimize and optional worst-case constraints.

    ``kind`` is ``"expected"`` (E[D]), ``"risk_sensitive"`` (E[D] + phi*VAR[D])
    or ``"custom"``.  A custom cost is a callable ``d -> (value, gradient)``;
    an optional ``custom_hessian`` callable ``d -> matrix`` avoids finite
    differencing.  ``caps`` maps 1-based state index ``k`` to an upper bound
    on ``D^(k)``.
    """

    kind: str = "expected"
    phi: float = 0.0
    custom: Optional[Callable[[np.ndarray], Tuple[float, np.ndarray]]] = None
    custom_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    max_expected: Optional[float] = None
    max_variance: Optional[float] = None
    caps: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("expected", "risk_sensitive", "custom"):
            raise ValidationError(f"unknown cost kind {self.kind!r}")
        if self.phi < 0:
            raise ValidationError("risk aversion phi must be >= 0")
        if self.kind == "custom" and self.custom is None:
            raise ValidationError("custom cost needs a value/gradient callable")
        for k, v in dict(self.caps).items():
            if not (0 < v <= 1):
                raise ValidationError(f"cap for state {k} must lie in (0, 1]")
        if self.max_expected is not None and not self.max_expected > 0:
            raise ValidationError("max_expected must be positive")
        if self.max_variance is not None and not self.max_variance > 0:
            raise ValidationError("max_variance must be positive")

    @classmethod
    def risk_sensitive(cls, phi: float, **kw) -> "CostSpec":
        return cls(kind="risk_sensitive", phi=phi, **kw)


@dataclass(frozen=True)
class ConvexResult:
    distortions: np.ndarray
    allocation: Allocation
    cost: float
    expected: float
    variance: float
    power_used: float
    kkt_residual: float
    newton_steps: int


def _coefficients(fading: DiscreteFading) -> np.ndarray:
    inv = 1.0 / fading.gammas
    return inv - np.append(inv[1:], 0.0)


def _check_d(d, fading) -> np.ndarray:
    d = np.asarray(d, dtype=float).ravel()
    if d.size != fading.num_states:
        raise ValidationError(f"distortion vector has {d.size} entries, fading has {fading.num_states} states")
    if np.any(d <= 0):
        raise ValidationError("realized distortions must be strictly positive")
    return d


def power_required(d, fading: DiscreteFading, b: float) -> float:
    """Total power needed to realize the distortion vector ``d``."""
    d = _check_d(d, fading)
    # the coefficients telescope to 1/gamma_1, so every term is nonnegative
    return math.fsum(_coefficients(fading) * np.expm1(-np.log(d) / b))


def power_required_gradient(d, fading: DiscreteFading, b: float) -> np.ndarray:
    d = _check_d(d, fading)
    return -(_coefficients(fading) / b) * d ** (-1.0 / b - 1.0)


def distortion_to_allocation(
    d, fading: DiscreteFading, b: float, total_power: Optional[float] = None, rtol: float = 1e-9
) -> Allocation:
    """Invert ``realized_distortions``: recover ``T_M, ..., T_1`` from ``d``.

    If ``total_power`` is given, a vector needing more power than that
    (beyond ``rtol``) raises :class:`InfeasibleError` with the deficit.
    """
    d = _check_d(d, fading)
    g = fading.gammas
    prev = np.concatenate(([1.0], d[:-1]))
    ratio = np.minimum(d / prev, 1.0)
    T = np.empty(d.size)
    nxt = 0.0
    for j in range(d.size - 1, -1, -1):
        nxt = (nxt + 1.0 / g[j]) * ratio[j] ** (-1.0 / b) - 1.0 / g[j]
        T[j] = max(nxt, 0.0)
    if total_power is not None:
        deficit = T[0] - total_power
        if deficit > rtol * (1.0 + total_power):
            raise InfeasibleError(
                f"distortion vector needs {T[0]!r} power, {deficit!r} more than available",
                constraint="power",
                violation=float(deficit),
            )
    T = np.minimum.accumulate(T)
    return Allocation.from_cumulative(T)


def expected_and_variance(d, fading: DiscreteFading) -> Tuple[float, float]:
    d = np.asarray(d, dtype=float)
    p = fading.all_probs
    full = np.concatenate(([1.0], d))
    mean = math.fsum(p * full)
    var = math.fsum(p * (full - mean) ** 2)
    return mean, var


def evaluate_cost(d, fading: DiscreteFading, spec: CostSpec) -> Tuple[float, float, float]:
    """Return ``(cost, E[D], VAR[D])`` for the distortion vector ``d``."""
    d = np.asarray(d, dtype=float).ravel()
    if d.size != fading.num_states:
        raise ValidationError("dimension mismatch between d and fading")
    mean, var = expected_and_variance(d, fading)
    if spec.kind == "expected":
        cost = mean
    elif spec.kind == "risk_sensitive":
        cost = mean + spec.phi * var
    else:
        cost = float(spec.custom(d)[0])
    return cost, mean, var


def _variance_grad(d, fading):
    p = fading.probs
    mean, _ = expected_and_variance(d, fading)
    return 2.0 * p * (d - mean)


def _variance_hess(fading):
    p = fading.probs
    return 2.0 * np.diag(p) - 2.0 * np.outer(p, p)


def cost_gradient(d, fading: DiscreteFading, spec: CostSpec) -> np.ndarray:
    d = np.asarray(d, dtype=float).ravel()
    if spec.kind == "custom":
        return np.asarray(spec.custom(d)[1], dtype=float)
    g = fading.probs.copy()
    if spec.kind == "risk_sensitive" and spec.phi:
        g = g + spec.phi * _variance_grad(d, fading)
    return g


def _fd_hessian(grad, x, h=1e-6):
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# barrier solver
# ---------------------------------------------------------------------------


@dataclass
class _Smooth:
    """Nonlinear constraint ``value(x) <= 0``."""

    name: str
    value: Callable
    grad: Callable
    hess: Callable


@dataclass
class _Problem:
    n: int
    f: Callable
    fgrad: Callable
    fhess: Callable
    A: np.ndarray
    c: np.ndarray
    names: List[str]
    smooth: List[_Smooth]
    domain: Callable

    @property
    def m(self) -> int:
        return self.A.shape[0] + len(self.smooth)

    def slacks(self, x):
        """Return linear slacks and smooth constraint values, or None outside the domain."""
        if not self.domain(x):
            return None
        s = self.c - self.A @ x
        if np.any(s <= 0):
            return None
        gv = np.array([con.value(x) for con in self.smooth])
        if gv.size and (np.any(gv >= 0) or not np.all(np.isfinite(gv))):
            return None
        return s, gv

    def barrier_value(self, x, t):
        sl = self.slacks(x)
        if sl is None:
            return math.inf
        s, gv = sl
        return t * self.f(x) - np.sum(np.log(s)) - np.sum(np.log(-gv))

    def barrier_grad(self, x, t, sl=None):
        s, gv = self.slacks(x) if sl is None else sl
        grad = t * self.fgrad(x) + self.A.T @ (1.0 / s)
        for con, v in zip(self.smooth, gv):
            grad = grad + con.grad(x) / (-v)
        return grad

    def barrier_derivs(self, x, t):
        s, gv = self.slacks(x)
        grad = self.barrier_grad(x, t, (s, gv))
        H = t * self.fhess(x) + (self.A.T * (1.0 / s**2)) @ self.A
        for con, v in zip(self.smooth, gv):
            gk = con.grad(x)
            H = H + np.outer(gk, gk) / v**2 + con.hess(x) / (-v)
        return grad, H

    def duals(self, x, t):
        s, gv = self.slacks(x)
        return 1.0 / (t * s), 1.0 / (t * -gv)

    def kkt_residual(self, x, t, active_tol=1e-7):
        """Scaled stationarity plus complementary slackness at ``x``.

        Two multiplier estimates are tried: the barrier duals ``1/(t s)`` and
        a nonnegative least-squares fit over the nearly active constraints.
        The smaller residual is reported; either one certifies optimality.
        """
        s, gv = self.slacks(x)
        g0 = self.fgrad(x)
        J = np.vstack([self.A] + [con.grad(x)[None, :] for con in self.smooth])
        slack = np.concatenate([s, -gv])
        scale = max(1.0, float(np.max(np.abs(g0))))

        lam = np.concatenate(self.duals(x, t))
        barrier = float(np.max(np.abs(g0 + J.T @ lam))) / scale + float(np.max(lam * slack))

        active = slack <= active_tol * np.maximum(1.0, np.abs(J).max(axis=1))
        if not active.any():
            return min(barrier, float(np.max(np.abs(g0))) / scale)
        lam_a, _ = optimize.nnls(J[active].T, -g0)
        fitted = (
            float(np.max(np.abs(g0 + J[active].T @ lam_a))) / scale
            + float(np.max(lam_a * slack[active]))
        )
        return min(barrier, fitted)


def _newton_direction(H, grad):
    # symmetric diagonal equilibration keeps the solve accurate when some
    # slacks are O(1/t) and others O(1)
    dg = np.sqrt(np.abs(np.diag(H)))
    dg[dg == 0] = 1.0
    Hs = H / np.outer(dg, dg)
    try:
        y = linalg.solve(Hs, -grad / dg, assume_a="sym")
    except (linalg.LinAlgError, ValueError):
        y = np.linalg.lstsq(Hs, -grad / dg, rcond=None)[0]
    return y / dg


def _newton_center(prob: _Problem, x, t, tol=1e-14, max_iter=200, stop=None):
    """Minimize the barrier function for fixed ``t`` by damped Newton steps.

    A trial step is accepted when it stays strictly feasible and either
    satisfies Armijo or keeps the directional derivative nonpositive; the
    barrier function is convex along the line, so both imply descent, and
    the derivative test stays reliable when ``t*f`` is large enough for the
    value difference to drown in rounding.
    """
    steps = 0
    for _ in range(max_iter):
        grad, H = prob.barrier_derivs(x, t)
        dx = _newton_direction(H, grad)
        dec2 = float(-grad @ dx)
        if not dec2 > 0 or dec2 / 2.0 <= tol:
            break
        f0 = prob.barrier_value(x, t)
        step = 1.0
        accepted = False
        while step > 1e-14:
            xn = x + step * dx
            sl = prob.slacks(xn)
            if sl is not None:
                if prob.barrier_grad(xn, t, sl) @ dx <= 0:
                    accepted = True
                    break
                if prob.barrier_value(xn, t) <= f0 - 0.25 * step * dec2:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        x = xn
        steps += 1
        if stop is not None and stop(x):
            break
    return x, steps


def _barrier(prob: _Problem, x0, gap_tol, t0=1.0, mu=10.0, stop=None):
    x, t, total = x0, t0, 0
    while True:
        x, k = _newton_center(prob, x, t, stop=stop)
        total += k
        if stop is not None and stop(x):
            break
        if prob.m / t <= gap_tol:
            break
        t *= mu
    return x, t, total


# ---------------------------------------------------------------------------
# problem assembly
#
# The solver works in increments y_0 = 1 - d_1, y_k = d_k - d_{k+1}, i.e.
# d = 1 - L y with L the lower-triangular matrix of ones.  Inactive layers
# have d_k = d_{k+1}; as increments their O(1/t) barrier slacks are stored
# exactly instead of being differences of O(1) numbers.
# ---------------------------------------------------------------------------


def _to_d(y):
    return 1.0 - np.cumsum(y)


def _to_y(d):
    return -np.diff(np.concatenate(([1.0], d)))


def _pull_grad(gd):
    return -np.cumsum(gd[::-1])[::-1]


def _pull_hess(Hd):
    # L^T H L via cumulative sums along both axes
    S = np.cumsum(np.cumsum(Hd[::-1, ::-1], axis=0), axis=1)[::-1, ::-1]
    return S


def _pull(fn_value, fn_grad, fn_hess):
    return (
        lambda y: fn_value(_to_d(y)),
        lambda y: _pull_grad(fn_grad(_to_d(y))),
        lambda y: _pull_hess(fn_hess(_to_d(y))),
    )


def _structural(M: int):
    """``y >= 0`` (chain and ``d_1 <= 1``) and the positivity floor on ``d_M``."""
    A = np.vstack([-np.eye(M), np.ones((1, M))])
    c = np.append(np.zeros(M), 1.0 - DISTORTION_FLOOR)
    names = ["unit[1]"] + [f"chain[{k + 1}<={k}]" for k in range(1, M)] + ["floor"]
    return A, c, names


def _optional(fading: DiscreteFading, P: float, b: float, spec: CostSpec):
    """Power, cap, mean and variance constraints, the ones phase I may relax."""
    M = fading.num_states
    p = fading.probs
    coef = _coefficients(fading)
    rows, rhs, names = [], [], []
    for k, cap in sorted(dict(spec.caps).items()):
        if not 1 <= int(k) <= M:
            raise ValidationError(f"cap index {k} outside 1..{M}")
        if cap >= 1.0:
            continue  # implied by d_1 <= 1 and the chain
        r = np.zeros(M)
        r[int(k) - 1] = 1.0
        rows.append(r)
        rhs.append(float(cap))
        names.append(f"cap[{int(k)}]")
    if spec.max_expected is not None:
        rows.append(p.copy())
        rhs.append(spec.max_expected - fading.outage_prob)
        names.append("max_expected")
    A_d = np.array(rows).reshape(-1, M)
    c_d = np.array(rhs, dtype=float)
    # A_d d <= c  <=>  -A_d L y <= c - A_d 1
    A_y = -np.cumsum(A_d[:, ::-1], axis=1)[:, ::-1]
    c_y = c_d - A_d.sum(axis=1)

    scale = 1.0 + P
    smooth = [
        _Smooth(
            "power",
            lambda y: (math.fsum(coef * np.expm1(-np.log1p(-np.cumsum(y)) / b)) - P) / scale,
            lambda y: _pull_grad(-(coef / b) * _to_d(y) ** (-1.0 / b - 1.0) / scale),
            lambda y: _pull_hess(np.diag((coef / b) * (1.0 / b + 1.0) * _to_d(y) ** (-1.0 / b - 2.0)) / scale),
        )
    ]
    if spec.max_variance is not None:
        vh = _variance_hess(fading)
        vmax = float(spec.max_variance)
        smooth.append(
            _Smooth(
                "max_variance",
                *_pull(
                    lambda d: expected_and_variance(d, fading)[1] - vmax,
                    lambda d: _variance_grad(d, fading),
                    lambda d: vh,
                ),
            )
        )
    return A_y, c_y, names, smooth


def _objective(fading: DiscreteFading, spec: CostSpec):
    M = fading.num_states
    if spec.kind == "expected":
        zero = np.zeros((M, M))
        return _pull(lambda d: evaluate_cost(d, fading, spec)[0], lambda d: fading.probs.copy(), lambda d: zero)
    if spec.kind == "risk_sensitive":
        vh = spec.phi * _variance_hess(fading)
        return _pull(lambda d: evaluate_cost(d, fading, spec)[0], lambda d: cost_gradient(d, fading, spec), lambda d: vh)
    grad = lambda d: np.asarray(spec.custom(d)[1], dtype=float)  # noqa: E731
    hess = spec.custom_hessian or (lambda d: _fd_hessian(grad, d))
    return _pull(lambda d: float(spec.custom(d)[0]), grad, hess)


def _initial_point(fading: DiscreteFading, P: float, b: float) -> np.ndarray:
    """Distortions of a uniform split of 90% of the budget (strictly interior)."""
    M = fading.num_states
    alloc = Allocation.from_per_layer(np.full(M, 0.9 * P / M))
    return realized_distortions(fading, alloc, b)[1:]


def _in_domain(y):
    return bool(np.sum(y) < 1.0)


def _phase_one(y0, A_s, c_s, A_o, c_o, names_o, smooth_o):
    """Find a point strictly inside every optional constraint, or prove none exists."""
    M = y0.size
    n = M + 1

    def hval(y):
        return np.concatenate([A_o @ y - c_o, [con.value(y) for con in smooth_o]])

    s0 = max(float(hval(y0).max()), 0.0) + 1.0
    A = np.vstack([
        np.hstack([A_s, np.zeros((A_s.shape[0], 1))]),
        np.hstack([A_o, -np.ones((A_o.shape[0], 1))]),
    ])
    c = np.concatenate([c_s, c_o])

    def relax(con):
        return _Smooth(
            con.name,
            lambda z: con.value(z[:M]) - z[M],
            lambda z: np.append(con.grad(z[:M]), -1.0),
            lambda z: np.pad(con.hess(z[:M]), ((0, 1), (0, 1))),
        )

    e = np.zeros(n)
    e[M] = 1.0
    prob = _Problem(
        n, lambda z: z[M], lambda z: e, lambda z: np.zeros((n, n)),
        A, c, [], [relax(con) for con in smooth_o],
        lambda z: _in_domain(z[:M]),
    )

    def feasible(z):
        return bool(np.all(hval(z[:M]) < 0))

    z, _, _ = _barrier(prob, np.append(y0, s0), gap_tol=1e-10, stop=feasible)
    y = z[:M]
    h = hval(y)
    if np.all(h < 0):
        return y
    labels = list(names_o) + [con.name for con in smooth_o]
    worst = int(np.argmax(h))
    raise InfeasibleError(
        f"constraint set infeasible: {labels[worst]} violated by at least {h[worst]:.3g}",
        constraint=labels[worst],
        violation=float(h[worst]),
    )


def _convexity_spot_check(f, d0, rng, trials=8):
    """Warn if the custom cost fails midpoint convexity on random segments."""
    for _ in range(trials):
        da = d0 * (1 + 0.05 * rng.uniform(-1, 1, d0.size))
        db = d0 * (1 + 0.05 * rng.uniform(-1, 1, d0.size))
        mid = f(0.5 * (da + db))
        if mid > 0.5 * (f(da) + f(db)) + 1e-12 * (1 + abs(mid)):
            warnings.warn("custom cost failed a midpoint-convexity spot check", RuntimeWarning)
            return False
    return True


def minimize_cost(
    fading: DiscreteFading,
    total_power: float,
    b: float,
    spec: CostSpec = CostSpec(),
    gap_tol: Optional[float] = None,
) -> ConvexResult:
    """Minimize a convex cost of the realized distortions under power ``P``.

    The barrier weight starts at 1 and grows tenfold per outer step until the
    duality-gap bound ``m/t`` drops below ``gap_tol`` (default ``1e-9 * M``).

    Raises
    ------
    InfeasibleError
        If no distortion vector satisfies the power budget together with the
        caps, ``max_expected`` and ``max_variance`` constraints.
    """
    if not total_power > 0:
        raise ValidationError("total power must be positive")
    if not b > 0:
        raise ValidationError("bandwidth ratio b must be positive")
    P = float(total_power)
    M = fading.num_states
    A_s, c_s, names_s = _structural(M)
    A_o, c_o, names_o, smooth = _optional(fading, P, b, spec)
    f, fg, fh = _objective(fading, spec)

    d0 = _initial_point(fading, P, b)
    if spec.kind == "custom":
        _convexity_spot_check(lambda d: float(spec.custom(d)[0]), d0, np.random.default_rng(0))
    y0 = _to_y(d0)
    h0 = np.concatenate([A_o @ y0 - c_o, [con.value(y0) for con in smooth]])
    if np.any(h0 >= 0):
        y0 = _phase_one(y0, A_s, c_s, A_o, c_o, names_o, smooth)

    prob = _Problem(
        M, f, fg, fh,
        np.vstack([A_s, A_o]), np.concatenate([c_s, c_o]), names_s + names_o,
        smooth, _in_domain,
    )
    tol = 1e-9 * M if gap_tol is None else gap_tol
    y, t, steps = _barrier(prob, y0, gap_tol=tol)
    if not np.all(np.isfinite(y)):
        raise NumericalError("barrier iterates left the finite range")

    kkt = prob.kkt_residual(y, t)

    d = _to_d(y)
    cost, mean, var = evaluate_cost(d, fading, spec)
    alloc = distortion_to_allocation(d, fading, b, total_power=P, rtol=1e-8)
    return ConvexResult(
        distortions=d,
        allocation=alloc,
        cost=cost,
        expected=mean,
        variance=var,
        power_used=power_required(d, fading, b),
        kkt_residual=kkt,
        newton_steps=steps,
    )
