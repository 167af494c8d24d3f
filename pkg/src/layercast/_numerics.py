"""Quadrature shared by the continuous-fading modules."""

import math
import warnings

import numpy as np
from scipy import integrate

from .errors import NumericalError

QUAD_EPSREL = 1e-10
QUAD_LIMIT = 400
QUAD_ACCEPT = 1e-8
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def quad(fn, a, b):
    # quad warns when rounding stops it short of epsrel; only an error
    # estimate beyond QUAD_ACCEPT is treated as a failure
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
    if not math.isfinite(val) or err > QUAD_ACCEPT * abs(val):
        raise NumericalError("quadrature did not converge", {"a": a, "b": b, "value": val, "err": err})
    return val


def quad_log(fading, fn, lo, hi):
    """Integrate ``fn(x)`` over ``x = log s`` for ``s`` in ``[lo, hi]``.

    ``fn`` must accept arrays.  Tabulated pdfs have kinks at their grid
    nodes, so the range is split there and each smooth piece gets a fixed
    Gauss-Legendre rule; other laws use adaptive quadrature.
    """
    grid = getattr(fading, "gammas", None)
    if grid is None:
        return quad(fn, math.log(lo), math.log(hi))
    inner = grid[(grid > lo) & (grid < hi)]
    return quad_cells(fn, np.log(np.concatenate(([lo], inner, [hi]))))


def quad_cells(fn, knots):
    """10-point Gauss-Legendre on every cell between consecutive ``knots``."""
    knots = np.asarray(knots, dtype=float)
    half = 0.5 * np.diff(knots)
    mid = 0.5 * (knots[:-1] + knots[1:])
    x = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.asarray(fn(x.ravel()), dtype=float).reshape(x.shape)
    return float(np.sum(half * (vals @ _GL_WEIGHTS)))
