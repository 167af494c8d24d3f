"""Monte Carlo estimates of expected distortion and its variance.

Samples are drawn in fixed-size chunks.  Chunk ``k`` always uses its own
Philox stream spawned from ``(seed, k)``, and chunk statistics are merged in
chunk order, so the result is bit-identical for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .continuous_alloc import ContinuousSolution
from .discrete_alloc import Allocation, realized_distortions
from .errors import ValidationError
from .fading import ContinuousFading, DiscreteFading

__all__ = ["SimEstimate", "simulate", "CHUNK"]

CHUNK = 1 << 16


@dataclass(frozen=True)
class SimEstimate:
    """Sample mean and spread of the realized distortion.

    ``std_error`` is the sample standard deviation over ``sqrt(samples)``;
    ``var_estimate`` is the unbiased sample variance.
    """

    mean: float
    std_error: float
    var_estimate: float
    samples: int
    seed: int


@dataclass(frozen=True)
class _Moments:
    n: int
    mean: float
    m2: float

    @classmethod
    def of(cls, x: np.ndarray) -> "_Moments":
        if np.all(x == x[0]):
            return cls(x.size, float(x[0]), 0.0)
        mu = float(np.mean(x))
        return cls(x.size, mu, float(np.sum((x - mu) ** 2)))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta * delta * (self.n * other.n / n)
        return _Moments(n, mean, m2)


def _stream(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(k,))))


def _discrete_sampler(fading: DiscreteFading, alloc: Allocation, b: float):
    if alloc.num_layers != fading.num_states:
        raise ValidationError(
            f"allocation has {alloc.num_layers} layers, fading has {fading.num_states} states"
        )
    table = realized_distortions(fading, alloc, b)  # index 0 is outage
    cdf = np.cumsum(fading.all_probs)
    cdf[-1] = 1.0

    def draw(rng, n):
        state = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), table.size - 1)
        return table[state]

    return draw


def _layered_sampler(fading: ContinuousFading, alloc: Allocation, b: float, layers: DiscreteFading):
    if alloc.num_layers != layers.num_states:
        raise ValidationError(
            f"allocation has {alloc.num_layers} layers, layer grid has {layers.num_states} gains"
        )
    table = realized_distortions(layers, alloc, b)

    def draw(rng, n):
        g = fading.sample(rng, n)
        # decodable layers: those whose design gain is at most the realized gain
        return table[np.searchsorted(layers.gammas, g, side="right")]

    return draw


def _continuous_sampler(fading: ContinuousFading, solution: ContinuousSolution):
    def draw(rng, n):
        return solution.realized_distortion(fading.sample(rng, n))

    return draw


def simulate(
    fading: Union[DiscreteFading, ContinuousFading],
    alloc: Union[Allocation, ContinuousSolution],
    b: float,
    samples: int,
    seed: int,
    layers: Optional[DiscreteFading] = None,
    threads: int = 1,
) -> SimEstimate:
    """Estimate ``E[D]`` and ``VAR[D]`` by sampling channel gains.

    Parameters
    ----------
    fading : DiscreteFading or ContinuousFading
        Law the gains are drawn from.
    alloc : Allocation or ContinuousSolution
        A discrete allocation is decoded against the state gains of
        ``fading`` if it is discrete, otherwise against ``layers``.
    b : float
        Bandwidth ratio.
    samples, seed : int
    layers : DiscreteFading, optional
        Design gains of the layers when a discrete allocation is run over a
        continuous law.
    threads : int
        Worker threads; the estimate does not depend on it.
    """
    if int(samples) < 1:
        raise ValidationError("samples must be at least 1")
    if not b > 0:
        raise ValidationError("bandwidth ratio b must be positive")
    samples, seed = int(samples), int(seed)
    if isinstance(alloc, ContinuousSolution):
        if not isinstance(fading, ContinuousFading):
            raise ValidationError("a continuous solution needs continuous fading")
        draw = _continuous_sampler(fading, alloc)
    elif isinstance(fading, DiscreteFading):
        draw = _discrete_sampler(fading, alloc, b)
    else:
        if layers is None:
            raise ValidationError("a discrete allocation over continuous fading needs layer gains")
        draw = _layered_sampler(fading, alloc, b, layers)

    sizes = [CHUNK] * (samples // CHUNK)
    if samples % CHUNK:
        sizes.append(samples % CHUNK)

    def run(k):
        return _Moments.of(np.asarray(draw(_stream(seed, k), sizes[k]), dtype=float))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]

    total = parts[0]
    for part in parts[1:]:
        total = total.merge(part)
    var = total.m2 / (total.n - 1) if total.n > 1 else 0.0
    return SimEstimate(
        mean=total.mean,
        std_error=math.sqrt(var / total.n),
        var_estimate=var,
        samples=total.n,
        seed=seed,
    )
