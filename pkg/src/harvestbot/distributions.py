"""Frequency histograms for per-tray picker parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DistributionError(ValueError):
    """Malformed histogram."""


@dataclass(frozen=True)
class Histogram:
    """Piecewise-uniform density: pick a bin by weight, then a uniform point inside it."""

    edges: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        edges = tuple(float(e) for e in self.edges)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        if not weights:
            raise DistributionError("histogram has no bins")
        if len(edges) != len(weights) + 1:
            raise DistributionError("need exactly one more edge than weights")
        if any(b < a for a, b in zip(edges, edges[1:])):
            raise DistributionError("edges must be non-decreasing")
        if any(w < 0 for w in weights):
            raise DistributionError("weights must be non-negative")
        if abs(sum(weights) - 1.0) > 1e-6:
            raise DistributionError(f"weights sum to {sum(weights)}, expected 1")

    @classmethod
    def point(cls, value: float) -> Histogram:
        return cls((value, value), (1.0,))

    @property
    def mean(self) -> float:
        return sum(w * 0.5 * (a + b) for w, a, b in zip(self.weights, self.edges, self.edges[1:]))

    @property
    def low(self) -> float:
        return self.edges[0]

    def sample(self, rng: np.random.Generator) -> float:
        if len(self.weights) == 1:
            i = 0
        else:
            i = int(rng.choice(len(self.weights), p=np.asarray(self.weights) / sum(self.weights)))
        a, b = self.edges[i], self.edges[i + 1]
        if a == b:
            return a
        return float(rng.uniform(a, b))

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "weights": list(self.weights)}


@dataclass(frozen=True)
class TrayDraw:
    v_pick: float
    v_walk: float
    pick_time: float

    def __post_init__(self) -> None:
        if min(self.v_pick, self.v_walk, self.pick_time) <= 0:
            raise DistributionError(f"tray parameters must be positive: {self}")

    def rate(self, capacity: float) -> float:
        return capacity / self.pick_time


@dataclass(frozen=True)
class ParamDistributions:
    v_pick: Histogram
    v_walk: Histogram
    pick_time: Histogram

    def __post_init__(self) -> None:
        for name in ("v_pick", "v_walk", "pick_time"):
            if getattr(self, name).low <= 0:
                raise DistributionError(f"{name} histogram must be strictly positive")

    @classmethod
    def degenerate(cls, v_pick: float, v_walk: float, pick_time: float) -> ParamDistributions:
        return cls(Histogram.point(v_pick), Histogram.point(v_walk), Histogram.point(pick_time))


def sample_tray_params(dists: ParamDistributions, rng: np.random.Generator) -> TrayDraw:
    return TrayDraw(
        v_pick=dists.v_pick.sample(rng),
        v_walk=dists.v_walk.sample(rng),
        pick_time=dists.pick_time.sample(rng),
    )


def symmetric_histogram(centre: float, bin_width: float, weights: Sequence[float]) -> Histogram:
    """Histogram whose bins are laid out symmetrically around ``centre``."""
    n = len(weights)
    lo = centre - 0.5 * n * bin_width
    edges = tuple(lo + i * bin_width for i in range(n + 1))
    return Histogram(edges, tuple(weights))


_BELL = (0.05, 0.15, 0.30, 0.30, 0.15, 0.05)


def synthetic_distributions() -> ParamDistributions:
    """Bell-shaped stand-ins for measured picker histograms (mean pick time 275.5 s)."""
    return ParamDistributions(
        v_pick=symmetric_histogram(0.095, 0.015, _BELL),
        v_walk=symmetric_histogram(1.0, 0.1, _BELL),
        pick_time=symmetric_histogram(275.5, 25.0, _BELL),
    )
