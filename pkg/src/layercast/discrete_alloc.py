"""Expected-distortion minimization over a discrete fading pmf.

Powers are stored both per layer (``P_i``) and as cumulative tail sums
``T_j = P_j + ... + P_M``.  The minimizer walks from the top layer down,
solving a two-layer split between the current layer and the aggregate of
everything above it, and backtracks when a tentative ceiling turns out to
exceed the power the lower layers leave available.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .fading import DiscreteFading
from .two_layer import TwoLayerParams, aggregate_weight, power_ceiling

__all__ = [
    "Allocation",
    "DiscreteResult",
    "realized_rates",
    "realized_distortions",
    "expected_distortion",
    "minimize_expected_distortion",
    "brute_force_min",
    "snr_sweep",
    "db_to_linear",
]


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class Allocation:
    """Per-layer powers ``P_1..P_M`` and their cumulative tails ``T_1..T_M``."""

    per_layer: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_per_layer(cls, powers: Sequence[float]) -> "Allocation":
        p = np.asarray(powers, dtype=float).ravel()
        if p.size == 0:
            raise ValidationError("allocation needs at least one layer")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("layer powers must be finite and nonnegative")
        T = np.cumsum(p[::-1])[::-1]
        p.setflags(write=False)
        T.setflags(write=False)
        return cls(p, T)

    @classmethod
    def from_cumulative(cls, cumulative: Sequence[float]) -> "Allocation":
        """Build from ``T_1 >= T_2 >= ... >= T_M >= 0``.

        Tiny negative increments from rounding are clipped to zero.
        """
        T = np.asarray(cumulative, dtype=float).ravel()
        if T.size == 0:
            raise ValidationError("allocation needs at least one layer")
        scale = 1e-12 * (1.0 + abs(T[0]))
        P = T - np.append(T[1:], 0.0)
        if np.any(P < -scale):
            raise ValidationError("cumulative powers must be nonincreasing and nonnegative")
        return cls.from_per_layer(np.maximum(P, 0.0))

    @property
    def num_layers(self) -> int:
        return int(self.per_layer.size)

    @property
    def total_power(self) -> float:
        return float(self.cumulative[0])

    def tails(self) -> np.ndarray:
        """``T_1..T_M`` followed by ``T_{M+1} = 0``."""
        return np.append(self.cumulative, 0.0)


@dataclass(frozen=True)
class DiscreteResult:
    allocation: Allocation
    expected_distortion: float
    realized_distortions: np.ndarray
    realized_rates: np.ndarray
    total_power: float
    b: float


def _check_dims(fading: DiscreteFading, alloc: Allocation):
    if alloc.num_layers != fading.num_states:
        raise ValidationError(
            f"allocation has {alloc.num_layers} layers but fading has {fading.num_states} states"
        )


def _log_layer_gains(fading: DiscreteFading, alloc: Allocation) -> np.ndarray:
    # ln((1 + g_i T_i) / (1 + g_i T_{i+1})), i.e. rate of layer i in nats
    T = alloc.tails()
    g = fading.gammas
    return np.log1p(g * T[:-1]) - np.log1p(g * T[1:])


def realized_rates(fading: DiscreteFading, alloc: Allocation) -> np.ndarray:
    """Rate ``R_i`` (bits per channel use) decodable in layer ``i``.

    Higher layers act as interference for layer ``i``.
    """
    _check_dims(fading, alloc)
    return np.maximum(_log_layer_gains(fading, alloc), 0.0) / math.log(2.0)


def realized_distortions(fading: DiscreteFading, alloc: Allocation, b: float) -> np.ndarray:
    """Distortion ``D^(k)`` when state ``k`` is realized, for ``k = 0..M``.

    ``D^(0) = 1`` (outage).
    """
    _check_dims(fading, alloc)
    if not b > 0:
        raise ValidationError("bandwidth ratio b must be positive")
    nats = np.maximum(_log_layer_gains(fading, alloc), 0.0)
    return np.exp(-b * np.concatenate(([0.0], np.cumsum(nats))))


def expected_distortion(fading: DiscreteFading, alloc: Allocation, b: float) -> float:
    """``E[D] = p_0 + sum_i p_i * D^(i)``."""
    d = realized_distortions(fading, alloc, b)
    return math.fsum(fading.all_probs * d)


class _Alloc1:
    """Top-down allocation with feasibility backtracking.

    ``solve`` returns ``T_2*, ..., T_M*``.  Each frame of the explicit stack
    handles one call ``alloc(i, w, beta, u, alpha)`` which fixes ``T_{i+1}*``;
    results are memoized on the exact parameter tuple.
    """

    def __init__(self, fading: DiscreteFading, total_power: float, b: float):
        self.g = fading.gammas
        self.p = fading.probs
        self.P = float(total_power)
        self.b = float(b)
        self.slack = 1e-12 * (1.0 + self.P)
        self.memo: Dict[tuple, Tuple[float, ...]] = {}
        self.calls = 0

    def _ceiling(self, w, beta, u, alpha):
        prm = TwoLayerParams(u, w, alpha, beta, self.b)
        U = power_ceiling(prm)
        return prm, U

    def solve(self) -> Tuple[float, ...]:
        M = self.g.size
        if M == 1:
            return ()
        g, p = self.g, self.p
        # layer index i is 1-based as in the recursion; arrays are 0-based
        root = (M - 1, p[M - 1], g[M - 1], p[M - 2], g[M - 2])
        stack: List[list] = [[root, 0, None, None]]
        ret: Optional[Tuple[float, ...]] = None
        while stack:
            frame = stack[-1]
            key, stage, U, W = frame
            i, w, beta, u, alpha = key
            if stage == 0:
                if key in self.memo:
                    ret = self.memo[key]
                    stack.pop()
                    continue
                self.calls += 1
                prm, U = self._ceiling(w, beta, u, alpha)
                frame[2] = U
                if i == 1:
                    ret = (min(U, self.P),)
                    self.memo[key] = ret
                    stack.pop()
                    continue
                if U <= self.P + self.slack:
                    W = aggregate_weight(prm, U)
                    frame[3] = W
                    frame[1] = 1
                    stack.append([(i - 1, W, alpha, p[i - 2], g[i - 2]), 0, None, None])
                else:
                    frame[1] = 2
                    stack.append([(i - 1, w, beta, p[i - 2] + u, g[i - 2]), 0, None, None])
                continue
            if stage == 1:
                lower = ret
                if lower[-1] >= U - self.slack:
                    ret = lower + (U,)
                    self.memo[key] = ret
                    stack.pop()
                    continue
                frame[1] = 2
                stack.append([(i - 1, w, beta, p[i - 2] + u, g[i - 2]), 0, None, None])
                continue
            # stage 2: constrained, upper aggregate takes all of T_i
            lower = ret
            ret = lower + (lower[-1],)
            self.memo[key] = ret
            stack.pop()
        return ret


def _result(fading: DiscreteFading, alloc: Allocation, b: float) -> DiscreteResult:
    d = realized_distortions(fading, alloc, b)
    ed = math.fsum(fading.all_probs * d)
    return DiscreteResult(
        allocation=alloc,
        expected_distortion=ed,
        realized_distortions=d,
        realized_rates=realized_rates(fading, alloc),
        total_power=alloc.total_power,
        b=float(b),
    )


def minimize_expected_distortion(fading: DiscreteFading, total_power: float, b: float) -> DiscreteResult:
    """Optimal per-layer power for a discrete pmf.

    Parameters
    ----------
    fading : DiscreteFading
        Channel pmf with ``M >= 1`` states.
    total_power : float
        Power budget ``P > 0`` (linear scale).
    b : float
        Bandwidth ratio (channel uses per source symbol).

    Returns
    -------
    DiscreteResult
        Allocation, minimum expected distortion, realized distortions
        ``D^(0..M)`` and per-layer rates.
    """
    if not isinstance(fading, DiscreteFading) or fading.num_states == 0:
        raise ValidationError("a nonempty DiscreteFading is required")
    if not total_power > 0:
        raise ValidationError("total power must be positive")
    if not b > 0:
        raise ValidationError("bandwidth ratio b must be positive")
    P = float(total_power)
    tails = _Alloc1(fading, P, b).solve()
    T = np.array((P,) + tuple(tails), dtype=float)
    # enforce the chain exactly; clipping only removes rounding residue
    T = np.minimum.accumulate(np.clip(T, 0.0, P))
    return _result(fading, Allocation.from_cumulative(T), b)


def brute_force_min(
    fading: DiscreteFading,
    total_power: float,
    b: float,
    grid_steps: int = 1000,
    method: str = "dp",
) -> Tuple[Allocation, float]:
    """Minimize ``E[D]`` over cumulative powers restricted to a uniform grid.

    The grid is ``{0, P/n, ..., P}`` with ``n = grid_steps`` for each of
    ``T_2..T_M`` subject to ``P >= T_2 >= ... >= T_M >= 0``.

    ``method="exhaustive"`` enumerates every chain on the grid and evaluates
    the product-form expected distortion.  ``method="dp"`` returns the same
    grid minimum by dynamic programming over the layers: the distortion of
    layers ``i`` and above factors as
    ``(1 + g_i T_i)**-b * (1 + g_i T_{i+1})**b * (p_i + D_{i+1}(T_{i+1}))``,
    so a running minimum over ``T_{i+1} <= T_i`` suffices.
    """
    M = fading.num_states
    if M > 5:
        raise ValidationError("brute-force search is limited to M <= 5 layers")
    if not total_power > 0 or not b > 0:
        raise ValidationError("total power and b must be positive")
    n = int(grid_steps)
    if n < 1:
        raise ValidationError("grid_steps must be >= 1")
    P = float(total_power)
    grid = np.linspace(0.0, P, n + 1)
    if M == 1:
        alloc = Allocation.from_per_layer([P])
        return alloc, expected_distortion(fading, alloc, b)
    if method == "exhaustive":
        return _exhaustive(fading, P, b, grid)
    if method != "dp":
        raise ValidationError(f"unknown method {method!r}")
    g, p = fading.gammas, fading.probs
    # cum[i][k]: min distortion of layers i+1..M (0-based i) given T_{i+1} = grid[k]
    choice = []
    Dnext = p[M - 1] * (1.0 + g[M - 1] * grid) ** (-b)  # layer M alone with T_M
    for i in range(M - 2, -1, -1):
        inner = (1.0 + g[i] * grid) ** b * (p[i] + Dnext)
        # running minimum over T_{i+1} <= T_i, first index on ties
        best_idx = np.zeros(grid.size, dtype=int)
        best_val = np.empty(grid.size)
        cur, cur_k = inner[0], 0
        for k in range(grid.size):
            if inner[k] < cur:
                cur, cur_k = inner[k], k
            best_val[k] = cur
            best_idx[k] = cur_k
        choice.append(best_idx)
        Dnext = (1.0 + g[i] * grid) ** (-b) * best_val
    # Dnext now indexed by T_1; T_1 = P is the last grid point
    k = n
    T = [P]
    for idx in reversed(choice):
        k = int(idx[k])
        T.append(grid[k])
    alloc = Allocation.from_cumulative(T)
    return alloc, expected_distortion(fading, alloc, b)


def _exhaustive(fading, P, b, grid):
    M = fading.num_states
    n = grid.size - 1
    best = (math.inf, None)
    probs = fading.all_probs
    for chain in itertools.combinations_with_replacement(range(n, -1, -1), M - 1):
        T = [P] + [grid[k] for k in chain]
        alloc = Allocation.from_cumulative(T)
        d = realized_distortions(fading, alloc, b)
        val = float(np.dot(probs, d))
        if val < best[0]:
            best = (val, alloc)
    return best[1], expected_distortion(fading, best[1], b)


def snr_sweep(
    fading: DiscreteFading,
    b: float,
    snr_db: Sequence[float],
    threads: int = 1,
) -> List[DiscreteResult]:
    """One :func:`minimize_expected_distortion` result per SNR (dB).

    Entries are independent; with ``threads > 1`` they are computed
    concurrently and returned in input order.
    """
    snrs = [float(s) for s in snr_db]
    if not snrs:
        raise ValidationError("SNR sweep is empty")
    powers = [float(db_to_linear(s)) for s in snrs]

    def run(P):
        return minimize_expected_distortion(fading, P, b)

    if threads > 1 and len(powers) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, powers))
    return [run(P) for P in powers]
