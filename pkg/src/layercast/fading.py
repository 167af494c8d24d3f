"""Fading-gain distributions: discrete pmfs and continuous pdfs.

A :class:`DiscreteFading` holds the ordered channel power gains
``gamma_1 < ... < gamma_M`` with their probabilities plus the mass ``p_0`` at
zero gain (outage).  Continuous laws implement :class:`ContinuousFading`;
Rayleigh fading is the one-path special case of :class:`Erlang`.

All objects are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammainc, gammaincc, gammainccinv, gammaln, xlogy

from .errors import ValidationError

__all__ = [
    "PROB_SUM_TOL",
    "DiscreteFading",
    "ContinuousFading",
    "Erlang",
    "Rayleigh",
    "Tabulated",
    "discretize_rayleigh",
    "erlang_pdf",
    "outage_probability",
    "discrete_view",
    "fading_from_dict",
    "fading_to_dict",
]

#: Tolerance on ``p_0 + sum(p_i) == 1``.
PROB_SUM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteFading:
    """Channel pmf with ``M`` nonzero gain states and an outage mass.

    Use :meth:`from_states` to build one; it drops states whose expected
    gain ``p_i * gamma_i`` is zero (gamma = 0 states are folded into the
    outage mass) and records them in ``dropped``.
    """

    gammas: np.ndarray
    probs: np.ndarray
    outage_prob: float
    dropped: Tuple[Tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        g, p = self.gammas, self.probs
        if g.ndim != 1 or g.shape != p.shape:
            raise ValidationError("gammas and probs must be 1-D of equal length")
        if g.size == 0:
            raise ValidationError("fading pmf has no nonzero-gain state")
        if np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValidationError("gammas must be positive and strictly increasing")
        if np.any(p <= 0):
            raise ValidationError("every stored state needs prob * gamma > 0")
        if self.outage_prob < 0:
            raise ValidationError("outage probability must be nonnegative")
        total = self.outage_prob + math.fsum(p)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_states(
        cls,
        gammas: Sequence[float],
        probs: Sequence[float],
        outage_prob: Optional[float] = None,
    ) -> "DiscreteFading":
        """Build a pmf from gain states, sorting them and dropping null layers.

        If ``outage_prob`` is omitted it is set to ``1 - sum(probs)``.
        """
        g = np.asarray(gammas, dtype=float).ravel()
        p = np.asarray(probs, dtype=float).ravel()
        if g.shape != p.shape:
            raise ValidationError("gammas and probs must have equal length")
        if np.any(g < 0) or np.any(p < 0) or not np.all(np.isfinite(g)):
            raise ValidationError("gains and probabilities must be nonnegative")
        order = np.argsort(g, kind="stable")
        g, p = g[order], p[order]
        if np.any(np.diff(g[g > 0]) == 0):
            raise ValidationError("duplicate gain values")
        keep = (g > 0) & (p > 0)
        dropped = tuple((float(a), float(b)) for a, b in zip(g[~keep], p[~keep]))
        # zero-gain mass is outage
        zero_mass = math.fsum(p[(g == 0)])
        if outage_prob is None:
            outage_prob = 1.0 - math.fsum(p)
        outage_prob = float(outage_prob) + zero_mass
        return cls(_frozen(g[keep]), _frozen(p[keep]), outage_prob, dropped)

    @property
    def num_states(self) -> int:
        return int(self.gammas.size)

    @property
    def all_probs(self) -> np.ndarray:
        """Probabilities ``p_0, p_1, ..., p_M`` (outage first)."""
        return np.concatenate(([self.outage_prob], self.probs))

    @property
    def all_gammas(self) -> np.ndarray:
        """Gains ``0, gamma_1, ..., gamma_M``."""
        return np.concatenate(([0.0], self.gammas))

    @property
    def mean(self) -> float:
        return float(np.dot(self.probs, self.gammas))


def outage_probability(fading: DiscreteFading) -> float:
    """Probability that the zero-gain state is realized."""
    return float(fading.outage_prob)


def discretize_rayleigh(mean_gain: float, truncation: float, levels: int) -> DiscreteFading:
    """Quantize Rayleigh fading onto ``levels`` evenly spaced gains.

    The pdf is truncated at ``truncation``: level ``i`` sits at
    ``i * truncation / levels`` and collects the probability of
    ``[gamma_i, gamma_{i+1})``; the top level also takes the tail above the
    truncation point, and ``[0, gamma_1)`` becomes outage.
    """
    if not (mean_gain > 0 and truncation > 0):
        raise ValidationError("mean_gain and truncation must be positive")
    if int(levels) != levels or levels < 1:
        raise ValidationError("levels must be a positive integer")
    levels = int(levels)
    step = truncation / levels
    idx = np.arange(1, levels + 1, dtype=float)
    gammas = idx * step
    cell = -math.expm1(-step / mean_gain)
    probs = np.exp(-gammas / mean_gain) * cell
    probs[-1] = math.exp(-truncation / mean_gain)
    return DiscreteFading.from_states(gammas, probs, outage_prob=cell)


def erlang_pdf(L: int, mean_gain: float, gamma) -> Any:
    """Density of the average of ``L`` iid exponential gains with mean ``mean_gain``."""
    if int(L) != L or L < 1:
        raise ValidationError("diversity order L must be a positive integer")
    if not mean_gain > 0:
        raise ValidationError("mean_gain must be positive")
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0):
        raise ValidationError("gamma must be nonnegative")
    rate = L / mean_gain
    logf = L * math.log(rate) + xlogy(L - 1, g) - rate * g - gammaln(L)
    out = np.exp(logf)
    return float(out) if out.ndim == 0 else out


class ContinuousFading:
    """Interface for continuous channel-gain laws.

    Subclasses provide ``pdf``, ``cdf``, ``log_pdf``, ``mean``, sampling and
    a tail quantile.  ``dlog_pdf`` returns ``f'(gamma)/f(gamma)`` when it is
    available analytically and ``None`` otherwise.
    """

    kind = "continuous"
    mean: float

    def pdf(self, gamma):
        raise NotImplementedError

    def cdf(self, gamma):
        raise NotImplementedError

    def log_pdf(self, gamma):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(gamma))

    def dlog_pdf(self, gamma):
        return None

    @property
    def has_dlog_pdf(self) -> bool:
        return False

    def survival(self, gamma):
        return 1.0 - self.cdf(gamma)

    def tail_quantile(self, tail_mass: float) -> float:
        """Smallest gain above which the remaining mass is ``tail_mass``."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Erlang(ContinuousFading):
    """Erlang(L) gain: the mean of ``L`` iid Rayleigh-faded power gains."""

    L: int
    mean: float

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValidationError("diversity order L must be a positive integer")
        if not self.mean > 0:
            raise ValidationError("mean gain must be positive")

    @property
    def kind(self) -> str:
        return "erlang"

    @property
    def rate(self) -> float:
        return self.L / self.mean

    def pdf(self, gamma):
        return erlang_pdf(self.L, self.mean, gamma)

    def log_pdf(self, gamma):
        g = np.asarray(gamma, dtype=float)
        out = self.L * math.log(self.rate) + xlogy(self.L - 1, g) - self.rate * g - gammaln(self.L)
        return float(out) if np.ndim(out) == 0 else out

    def dlog_pdf(self, gamma):
        g = np.asarray(gamma, dtype=float)
        out = (self.L - 1) / g - self.rate
        return float(out) if np.ndim(out) == 0 else out

    @property
    def has_dlog_pdf(self) -> bool:
        return True

    def cdf(self, gamma):
        g = np.maximum(np.asarray(gamma, dtype=float), 0.0)
        out = gammainc(self.L, self.rate * g)
        return float(out) if np.ndim(out) == 0 else out

    def survival(self, gamma):
        g = np.maximum(np.asarray(gamma, dtype=float), 0.0)
        out = gammaincc(self.L, self.rate * g)
        return float(out) if np.ndim(out) == 0 else out

    def tail_quantile(self, tail_mass: float) -> float:
        return float(gammainccinv(self.L, tail_mass) / self.rate)

    def sample(self, rng, size):
        # sum of L exponentials, each with mean mean/L
        e = rng.standard_exponential((int(size), self.L))
        return e.sum(axis=1) * (self.mean / self.L)

    def to_dict(self) -> dict:
        return {"kind": "erlang", "L": int(self.L), "mean": float(self.mean)}


class Rayleigh(Erlang):
    """Exponentially distributed power gain (Rayleigh amplitude)."""

    def __init__(self, mean: float = 1.0):
        super().__init__(1, mean)

    def __repr__(self):
        return f"Rayleigh(mean={self.mean!r})"

    @property
    def kind(self) -> str:
        return "rayleigh"

    def sample(self, rng, size):
        u = rng.random(int(size))
        return -self.mean * np.log1p(-u)

    def to_dict(self) -> dict:
        return {"kind": "rayleigh", "mean": float(self.mean)}


@dataclass(frozen=True, eq=False)
class Tabulated(ContinuousFading):
    """Pdf given by samples on a grid.

    The pdf is the linear interpolant of the samples, rescaled to unit mass,
    and zero outside the grid.  The cdf is its exact (piecewise-quadratic)
    integral.  ``f'/f`` is not available.
    """

    gammas: np.ndarray
    pdf_values: np.ndarray
    _cdf_nodes: np.ndarray = field(init=False, repr=False)
    _tail_nodes: np.ndarray = field(init=False, repr=False)
    _f: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=float).ravel()
        f = np.asarray(self.pdf_values, dtype=float).ravel()
        if g.size < 2 or g.shape != f.shape:
            raise ValidationError("need at least two matching gamma/pdf samples")
        if g[0] < 0 or np.any(np.diff(g) <= 0):
            raise ValidationError("tabulated gammas must be nonnegative and increasing")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ValidationError("pdf samples must be finite and nonnegative")
        cells = 0.5 * (f[1:] + f[:-1]) * np.diff(g)
        total = cells.sum()
        if not total > 0:
            raise ValidationError("tabulated pdf has zero mass")
        nodes = np.concatenate(([0.0], np.cumsum(cells) / total))
        nodes[-1] = 1.0
        # mass above each node, summed from the top so the tail keeps its digits
        tail = np.append(np.cumsum(cells[::-1])[::-1], 0.0) / total
        object.__setattr__(self, "_tail_nodes", _frozen(tail))
        object.__setattr__(self, "gammas", _frozen(g))
        object.__setattr__(self, "pdf_values", _frozen(f))
        object.__setattr__(self, "_cdf_nodes", _frozen(nodes))
        object.__setattr__(self, "_f", _frozen(f / total))

    @property
    def kind(self) -> str:
        return "tabulated"

    @property
    def mean(self) -> float:
        g, f = self.gammas, self._f
        h = np.diff(g)
        return float(np.sum(h * (f[:-1] * (2 * g[:-1] + g[1:]) + f[1:] * (g[:-1] + 2 * g[1:])) / 6.0))

    def _cell(self, g):
        k = np.searchsorted(self.gammas, g, side="right") - 1
        return np.clip(k, 0, self.gammas.size - 2)

    def pdf(self, gamma):
        g = np.asarray(gamma, dtype=float)
        out = np.interp(g, self.gammas, self._f, left=0.0, right=0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, gamma):
        g = np.asarray(gamma, dtype=float)
        k = self._cell(g)
        x = np.clip(g, self.gammas[0], self.gammas[-1]) - self.gammas[k]
        h = self.gammas[k + 1] - self.gammas[k]
        slope = (self._f[k + 1] - self._f[k]) / h
        out = np.minimum(self._cdf_nodes[k] + self._f[k] * x + 0.5 * slope * x * x, 1.0)
        out = np.where(g >= self.gammas[-1], 1.0, out)
        return float(out) if out.ndim == 0 else out

    def survival(self, gamma):
        g = np.asarray(gamma, dtype=float)
        k = self._cell(g)
        x = np.clip(g, self.gammas[0], self.gammas[-1]) - self.gammas[k]
        h = self.gammas[k + 1] - self.gammas[k]
        slope = (self._f[k + 1] - self._f[k]) / h
        # mass of [x, h] within the cell
        rest = (h - x) * (self._f[k] + 0.5 * slope * (h + x))
        out = np.clip(self._tail_nodes[k + 1] + rest, 0.0, 1.0)
        out = np.where(g >= self.gammas[-1], 0.0, np.where(g <= self.gammas[0], 1.0, out))
        return float(out) if out.ndim == 0 else out

    def tail_quantile(self, tail_mass: float) -> float:
        return float(self.gammas[-1])

    def sample(self, rng, size):
        """Exact inverse-cdf sampling (a quadratic solve inside each cell)."""
        u = rng.random(int(size))
        k = np.clip(np.searchsorted(self._cdf_nodes, u, side="left") - 1, 0, self.gammas.size - 2)
        h = self.gammas[k + 1] - self.gammas[k]
        f0 = self._f[k]
        slope = (self._f[k + 1] - f0) / h
        r = u - self._cdf_nodes[k]
        # root of 0.5*slope*x^2 + f0*x = r, written to avoid cancellation
        x = 2.0 * r / (f0 + np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * r, 0.0)))
        return self.gammas[k] + np.clip(np.nan_to_num(x), 0.0, h)

    def to_dict(self) -> dict:
        return {
            "kind": "tabulated",
            "gammas": [float(x) for x in self.gammas],
            "pdf": [float(x) for x in self.pdf_values],
        }


def fading_from_dict(desc: Mapping[str, Any]):
    """Build a fading model from its JSON descriptor.

    Recognised kinds are ``discrete``, ``rayleigh``, ``erlang`` and
    ``tabulated``.  Discrete descriptors list ``states`` as ``[gamma, prob]``
    pairs or ``{"gamma": g, "prob": p}`` objects, with optional
    ``outage_prob``.  Extra keys such as ``truncation``/``levels`` on a
    continuous descriptor are ignored here (see :func:`discrete_view`).
    """
    if not isinstance(desc, Mapping) or "kind" not in desc:
        raise ValidationError("fading descriptor must be an object with a 'kind'")
    kind = desc["kind"]
    try:
        if kind == "discrete":
            states = desc["states"]
            pairs = [(s["gamma"], s["prob"]) if isinstance(s, Mapping) else tuple(s) for s in states]
            if not pairs:
                raise ValidationError("discrete fading needs at least one state")
            g, p = zip(*pairs)
            return DiscreteFading.from_states(g, p, desc.get("outage_prob"))
        if kind == "rayleigh":
            return Rayleigh(float(desc.get("mean", 1.0)))
        if kind == "erlang":
            return Erlang(int(desc["L"]), float(desc.get("mean", 1.0)))
        if kind == "tabulated":
            return Tabulated(np.asarray(desc["gammas"], float), np.asarray(desc["pdf"], float))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed {kind!r} fading descriptor: {exc}") from exc
    raise ValidationError(f"unknown fading kind {kind!r}")


def discrete_view(desc: Mapping[str, Any]) -> DiscreteFading:
    """Discrete pmf for a descriptor.

    ``discrete`` descriptors map directly; a ``rayleigh`` descriptor must carry
    ``truncation`` and ``levels`` and is quantized with
    :func:`discretize_rayleigh`.
    """
    kind = desc.get("kind")
    if kind == "discrete":
        return fading_from_dict(desc)
    if kind == "rayleigh" and "truncation" in desc and "levels" in desc:
        return discretize_rayleigh(float(desc.get("mean", 1.0)), float(desc["truncation"]), int(desc["levels"]))
    raise ValidationError(
        "a discrete pmf is required: use kind 'discrete' or a rayleigh descriptor "
        "with 'truncation' and 'levels'"
    )


def fading_to_dict(fading) -> dict:
    if isinstance(fading, DiscreteFading):
        return {
            "kind": "discrete",
            "states": [[float(g), float(p)] for g, p in zip(fading.gammas, fading.probs)],
            "outage_prob": float(fading.outage_prob),
        }
    return fading.to_dict()
