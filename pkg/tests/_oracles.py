"""Independent reference computations shared by the test modules.

Nothing here imports the package's solvers; each helper recomputes a quantity
from its defining formula with a different numerical method.
"""

import math

import numpy as np
from scipy import integrate

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_min(fn, lo, hi, tol=1e-13, grid=64):
    """Minimum of ``fn`` on ``[lo, hi]``: coarse grid scan, then golden section.

    The scan picks the bracketing cell so that a boundary minimum or a
    flat start is still located.
    """
    xs = np.linspace(lo, hi, grid + 1)
    vals = [fn(x) for x in xs]
    k = int(np.argmin(vals))
    a, c = xs[max(k - 1, 0)], xs[min(k + 1, grid)]
    x1 = c - INV_PHI * (c - a)
    x2 = a + INV_PHI * (c - a)
    f1, f2 = fn(x1), fn(x2)
    while c - a > tol * (1.0 + abs(a) + abs(c)):
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - INV_PHI * (c - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (c - a)
            f2 = fn(x2)
    best = min((fn(a), a), (fn(c), c), (f1, x1), (f2, x2), (vals[k], xs[k]))
    return best[1], best[0]


def two_layer_objective(u, w, alpha, beta, b, T1, T2):
    return ((1 + alpha * T1) / (1 + alpha * T2)) ** (-b) * (u + w * (1 + beta * T2) ** (-b))


def layered_expected_distortion(gammas, probs, p0, T, b):
    """``E[D]`` by direct per-state summation of decoded rates (bits)."""
    T = list(T) + [0.0]
    total = p0
    for k in range(len(gammas)):
        bits = 0.0
        for i in range(k + 1):
            bits += math.log2(1 + gammas[i] * (T[i] - T[i + 1]) / (1 + gammas[i] * T[i + 1]))
        total += probs[k] * 2.0 ** (-b * bits)
    return total


def continuous_optimum_ode(pdf, dlog_pdf, cdf, survival, b, P, gamma_o, floor):
    """Continuous optimum by integrating the optimality ODEs with ``solve_ivp``.

    ``U' = -((2/g + f'/f)/(1+b)) (U + 1/g)`` is integrated downward from
    ``U(gamma_o) = 0`` until ``U = P``.  The decoded rate
    ``R' = -g U'/(1 + g U)`` and the accumulated distortion ``f exp(-b R)``
    are then integrated upward across the band.  Returns
    ``(E[D], gamma_P, dense U)``.
    """

    def du(g, y):
        return [-((2.0 / g + dlog_pdf(g)) / (1.0 + b)) * (y[0] + 1.0 / g)]

    def hit(g, y):
        return y[0] - P

    hit.terminal = True
    down = integrate.solve_ivp(
        du, (gamma_o, floor), [0.0], method="DOP853", rtol=1e-12, atol=1e-14,
        events=hit, dense_output=True,
    )
    if down.t_events[0].size == 0:
        raise RuntimeError("power not absorbed above the floor")
    gP = float(down.t_events[0][0])
    U = down.sol

    def up(g, y):
        u = U(g)[0]
        dU = du(g, [u])[0]
        rate = -g * dU / (1.0 + g * u)
        return [rate, pdf(g) * math.exp(-b * y[0])]

    fwd = integrate.solve_ivp(up, (gP, gamma_o), [0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14)
    R_top, inside = fwd.y[0, -1], fwd.y[1, -1]
    return cdf(gP) + inside + survival(gamma_o) * math.exp(-b * R_top), gP, U
