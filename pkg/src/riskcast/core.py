"""Trajectory algebra: distance measures, prototype-ball set predictors, and
per-step interval geometry with Lebesgue measure.

All values are immutable after construction and every operation is a pure
function of its inputs, so they are safe to evaluate from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AVG_L1",
    "MAX_WINDOW_AVG_L1",
    "WEIGHTED_MAX",
    "BallUnionPredictor",
    "DistanceSpec",
    "Domain",
    "IntervalUnion",
    "PrototypeSet",
    "SeriesSample",
    "UnsupportedDistance",
    "as_trajectory",
    "contains",
    "distance",
    "interval_union_measure",
    "min_distance_to_prototypes",
    "per_step_set",
    "predictor_inefficiency",
]

WEIGHTED_MAX = "weighted_max"
AVG_L1 = "avg_l1"
MAX_WINDOW_AVG_L1 = "max_window_avg_l1"


class UnsupportedDistance(Exception):
    """The requested operation has no closed form under this distance kind."""


def as_trajectory(values, name: str = "trajectory") -> np.ndarray:
    """Coerce to a finite, non-empty 1-D float array."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Domain:
    """Closed value range [lo, hi] that every sample of a series lives in."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError("domain bounds must be finite")
        if self.lo >= self.hi:
            raise ValueError(f"domain requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def clip(self, values):
        return np.clip(values, self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class SeriesSample:
    """One trajectory split into a memory window (past) and a horizon (future)."""

    past: np.ndarray
    future: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "past", as_trajectory(self.past, "past"))
        object.__setattr__(self, "future", as_trajectory(self.future, "future"))

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.past, self.future])


@dataclass(frozen=True)
class DistanceSpec:
    """A trajectory distance: weighted max, average L1, or max windowed-average L1.

    ``weighted_max`` takes strictly positive per-step weights (a single weight
    broadcasts over the horizon).  ``max_window_avg_l1`` averages absolute
    deviations over every run of ``window`` consecutive steps and takes the max.
    """

    kind: str
    weights: tuple = ()
    window: int = 0

    def __post_init__(self):
        if self.kind == WEIGHTED_MAX:
            if len(self.weights) < 1:
                raise ValueError("weighted_max requires at least one weight")
            if any((not math.isfinite(w)) or w <= 0 for w in self.weights):
                raise ValueError("weighted_max weights must be strictly positive")
        elif self.kind == AVG_L1:
            pass
        elif self.kind == MAX_WINDOW_AVG_L1:
            if self.window < 1:
                raise ValueError("max_window_avg_l1 requires window >= 1")
        else:
            raise ValueError(f"unknown distance kind: {self.kind!r}")

    @classmethod
    def weighted_max(cls, weights) -> "DistanceSpec":
        if np.isscalar(weights):
            weights = (float(weights),)
        return cls(kind=WEIGHTED_MAX, weights=tuple(float(w) for w in weights))

    @classmethod
    def avg_l1(cls) -> "DistanceSpec":
        return cls(kind=AVG_L1)

    @classmethod
    def max_window_avg_l1(cls, window: int) -> "DistanceSpec":
        return cls(kind=MAX_WINDOW_AVG_L1, window=int(window))

    def weight_array(self, horizon: int) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        if w.size == 1:
            return np.full(horizon, w[0])
        if w.size != horizon:
            raise ValueError(
                f"weighted_max has {w.size} weights but trajectories have length {horizon}"
            )
        return w

    def diameter(self, domain: Domain) -> float:
        """Largest possible distance between two trajectories inside the domain."""
        if self.kind == WEIGHTED_MAX:
            return domain.width * max(self.weights)
        return domain.width


def _pairwise_abs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"trajectory length mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )
    return np.abs(a - b)


def _window_means(diff: np.ndarray, k: int) -> np.ndarray:
    """Means of |diff| over each run of k consecutive steps (last axis)."""
    n = diff.shape[-1]
    if k > n:
        raise ValueError(f"window {k} exceeds trajectory length {n}")
    csum = np.cumsum(diff, axis=-1)
    lead = np.concatenate([np.zeros(diff.shape[:-1] + (1,)), csum], axis=-1)
    return (lead[..., k:] - lead[..., :-k]) / k


def distance(spec: DistanceSpec, a, b) -> float:
    """Evaluate the distance between two equal-length trajectories."""
    a = as_trajectory(a, "a")
    b = as_trajectory(b, "b")
    diff = _pairwise_abs(a, b)
    if spec.kind == WEIGHTED_MAX:
        return float(np.max(spec.weight_array(diff.size) * diff))
    if spec.kind == AVG_L1:
        return float(np.mean(diff))
    return float(np.max(_window_means(diff, spec.window)))


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """A bundle of m sampled future trajectories, stacked as an (m, horizon) array."""

    trajectories: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.trajectories, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("prototypes must form a non-empty (m, horizon) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("prototypes contain non-finite entries")
        object.__setattr__(self, "trajectories", arr)

    @classmethod
    def from_trajectories(cls, trajs: Iterable[Sequence[float]]) -> "PrototypeSet":
        rows = [as_trajectory(t, "prototype") for t in trajs]
        if not rows:
            raise ValueError("prototype set must contain at least one trajectory")
        return cls(np.stack(rows))

    @property
    def size(self) -> int:
        return self.trajectories.shape[0]

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]


def min_distance_to_prototypes(y, prototypes: PrototypeSet, spec: DistanceSpec) -> float:
    """Distance from y to its nearest prototype."""
    y = as_trajectory(y, "y")
    diff = _pairwise_abs(prototypes.trajectories, y)
    if spec.kind == WEIGHTED_MAX:
        per = np.max(spec.weight_array(diff.shape[1]) * diff, axis=1)
    elif spec.kind == AVG_L1:
        per = np.mean(diff, axis=1)
    else:
        per = np.max(_window_means(diff, spec.window), axis=1)
    return float(np.min(per))


@dataclass(frozen=True, eq=False)
class BallUnionPredictor:
    """The set of all trajectories within ``radius`` of some prototype."""

    prototypes: PrototypeSet
    distance: DistanceSpec
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")
        if self.distance.kind == WEIGHTED_MAX and len(self.distance.weights) > 1:
            if len(self.distance.weights) != self.prototypes.horizon:
                raise ValueError("weight count does not match prototype horizon")
        if self.distance.kind == MAX_WINDOW_AVG_L1:
            if self.distance.window > self.prototypes.horizon:
                raise ValueError("window exceeds prototype horizon")

    @property
    def horizon(self) -> int:
        return self.prototypes.horizon


def contains(pred: BallUnionPredictor, y) -> bool:
    """Membership test: is y within ``radius`` of some prototype?"""
    return min_distance_to_prototypes(y, pred.prototypes, pred.distance) <= pred.radius


@dataclass(frozen=True)
class IntervalUnion:
    """A normalized union of closed intervals: sorted, disjoint, a <= b."""

    intervals: tuple

    @classmethod
    def normalize(cls, pairs: Iterable[Sequence[float]]) -> "IntervalUnion":
        cleaned = []
        for lo, hi in pairs:
            lo, hi = float(lo), float(hi)
            if lo > hi:
                raise ValueError(f"interval [{lo}, {hi}] has lo > hi")
            cleaned.append((lo, hi))
        cleaned.sort()
        merged: list = []
        for lo, hi in cleaned:
            # Closed intervals: merge when touching at an endpoint.
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(tuple(merged))

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls(())


def interval_union_measure(union: IntervalUnion) -> float:
    """Total length (Lebesgue measure) of the union."""
    return float(sum(hi - lo for lo, hi in union.intervals))


def per_step_set(pred: BallUnionPredictor, t: int) -> IntervalUnion:
    """Projection of the prototype-ball union onto time step t.

    Only the weighted-max distance has an exact per-step projection (a union
    of symmetric intervals of radius ``radius / w_t``); other kinds raise.
    """
    if pred.distance.kind != WEIGHTED_MAX:
        raise UnsupportedDistance(
            "per-step sets are only defined for the weighted_max distance"
        )
    if not 0 <= t < pred.horizon:
        raise ValueError(f"time index {t} outside horizon {pred.horizon}")
    w_t = pred.distance.weight_array(pred.horizon)[t]
    r = pred.radius / w_t
    centers = pred.prototypes.trajectories[:, t]
    return IntervalUnion.normalize((c - r, c + r) for c in centers)


def predictor_inefficiency(pred: BallUnionPredictor) -> float:
    """Time-averaged per-step measure of the predicted set."""
    total = 0.0
    for t in range(pred.horizon):
        total += interval_union_measure(per_step_set(pred, t))
    return total / pred.horizon
