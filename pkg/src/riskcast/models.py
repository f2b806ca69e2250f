"""Probabilistic forecasters (implicit and explicit) and the filtering
strategies that reshape prototype sampling.

A forecaster is a conditional sampler over future trajectories.  Explicit
models can additionally score a trajectory with its log-density; only those
support likelihood-based filtering.  Models are immutable after construction
and take an explicit RNG argument, so each worker can own its own stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Domain, PrototypeSet, SeriesSample, as_trajectory

__all__ = [
    "CapabilityMismatch",
    "FilterSpec",
    "Forecaster",
    "ForkingMixture",
    "GaussianAR",
    "KnnBootstrap",
    "MeanForecaster",
    "TabularMarkovChain",
    "draw_prototypes",
    "top_k_constrained_sample",
]

_LOG_2PI = math.log(2.0 * math.pi)


class CapabilityMismatch(Exception):
    """A filter or operation requires a model capability that is absent."""


def _normal_logpdf(residual: np.ndarray, sigma: float) -> float:
    r = np.asarray(residual, dtype=float)
    return float(np.sum(-0.5 * _LOG_2PI - math.log(sigma) - r * r / (2.0 * sigma * sigma)))


class Forecaster:
    """Base contract: sample future trajectories conditioned on the past.

    ``sample(past, rng, horizon=None)`` must return conditionally independent
    draws for repeated calls on the same past.  ``horizon`` defaults to the
    model's native horizon; shorter horizons support receding-horizon reuse.
    """

    # Annotation only: concrete models provide the value (field or property).
    horizon: int

    is_explicit = False

    def sample(self, past, rng: np.random.Generator, horizon: Optional[int] = None) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, past, future) -> float:
        raise CapabilityMismatch(f"{type(self).__name__} is generative-only")

    def predictive_mean(self, past, horizon: Optional[int] = None) -> np.ndarray:
        raise CapabilityMismatch(f"{type(self).__name__} has no predictive mean")


def _resolve_horizon(model: Forecaster, horizon: Optional[int]) -> int:
    h = model.horizon if horizon is None else int(horizon)
    if h < 1:
        raise ValueError(f"horizon must be >= 1, got {h}")
    return h


@dataclass(frozen=True, eq=False)
class GaussianAR(Forecaster):
    """Autoregressive Gaussian rollout: mean c + sum_i a_i * y[t-i], noise sigma.

    Explicit; densities are evaluated on the unclipped recursion, so with
    bounds at least a few sigma away from the operating range the clipping
    error is negligible.
    """

    coeffs: tuple
    intercept: float
    noise_std: float
    horizon: int
    domain: Domain

    def __post_init__(self):
        if len(self.coeffs) < 1:
            raise ValueError("lag order must be >= 1")
        if any(not math.isfinite(c) for c in self.coeffs):
            raise ValueError("coefficients must be finite")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def is_explicit(self) -> bool:  # type: ignore[override]
        return True

    def _check_past(self, past) -> np.ndarray:
        past = as_trajectory(past, "past")
        if past.size < len(self.coeffs):
            raise ValueError(
                f"past length {past.size} is shorter than lag order {len(self.coeffs)}"
            )
        return past

    def _step_mean(self, window: Sequence[float]) -> float:
        mean = self.intercept
        for i, a in enumerate(self.coeffs):
            mean += a * window[-1 - i]
        return mean

    def sample(self, past, rng, horizon=None) -> np.ndarray:
        past = self._check_past(past)
        h = _resolve_horizon(self, horizon)
        window = list(past[-len(self.coeffs):])
        out = np.empty(h)
        for t in range(h):
            value = self._step_mean(window)
            if self.noise_std > 0:
                value += self.noise_std * rng.standard_normal()
            value = float(self.domain.clip(value))
            out[t] = value
            window.append(value)
        return out

    def predictive_mean(self, past, horizon=None) -> np.ndarray:
        past = self._check_past(past)
        h = _resolve_horizon(self, horizon)
        window = list(past[-len(self.coeffs):])
        out = np.empty(h)
        for t in range(h):
            value = float(self.domain.clip(self._step_mean(window)))
            out[t] = value
            window.append(value)
        return out

    def log_density(self, past, future) -> float:
        if self.noise_std == 0:
            raise CapabilityMismatch("degenerate density: noise_std is zero")
        past = self._check_past(past)
        future = as_trajectory(future, "future")
        window = list(past[-len(self.coeffs):])
        total = 0.0
        for t in range(future.size):
            mean = self._step_mean(window)
            total += _normal_logpdf(future[t] - mean, self.noise_std)
            window.append(float(future[t]))
        return total


@dataclass(frozen=True, eq=False)
class ForkingMixture(Forecaster):
    """Finite mixture of branch templates with i.i.d. Gaussian jitter.

    Drawing picks a branch by its probability, jitters the template, and clips
    to the domain.  ``horizon`` shorter than the template length returns the
    template prefix; branch probabilities are not posterior-updated.
    """

    templates: np.ndarray
    probs: np.ndarray
    noise_std: float
    domain: Domain

    def __post_init__(self):
        templates = np.asarray(self.templates, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if templates.ndim != 2 or templates.shape[0] < 1:
            raise ValueError("templates must form a (branches, horizon) array")
        if probs.shape != (templates.shape[0],):
            raise ValueError("one probability per branch is required")
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError("branch probabilities must be nonnegative and sum to 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        object.__setattr__(self, "templates", templates)
        object.__setattr__(self, "probs", probs)

    @property
    def horizon(self) -> int:  # type: ignore[override]
        return self.templates.shape[1]

    @property
    def is_explicit(self) -> bool:  # type: ignore[override]
        return True

    def sample(self, past, rng, horizon=None) -> np.ndarray:
        h = _resolve_horizon(self, horizon)
        if h > self.horizon:
            raise ValueError(f"horizon {h} exceeds template length {self.horizon}")
        branch = int(rng.choice(self.templates.shape[0], p=self.probs))
        out = self.templates[branch, :h].copy()
        if self.noise_std > 0:
            out = out + self.noise_std * rng.standard_normal(h)
        return np.asarray(self.domain.clip(out))

    def predictive_mean(self, past, horizon=None) -> np.ndarray:
        h = _resolve_horizon(self, horizon)
        mean = self.probs @ self.templates[:, :h]
        return np.asarray(self.domain.clip(mean))

    def log_density(self, past, future) -> float:
        if self.noise_std == 0:
            raise CapabilityMismatch("degenerate density: noise_std is zero")
        future = as_trajectory(future, "future")
        if future.size > self.horizon:
            raise ValueError("trajectory longer than templates")
        terms = np.empty(self.templates.shape[0])
        for b in range(self.templates.shape[0]):
            p = self.probs[b]
            if p == 0:
                terms[b] = -np.inf
                continue
            resid = future - self.templates[b, : future.size]
            terms[b] = math.log(p) + _normal_logpdf(resid, self.noise_std)
        peak = float(np.max(terms))
        if peak == -np.inf:
            return -np.inf
        return peak + math.log(float(np.sum(np.exp(terms - peak))))


@dataclass(frozen=True, eq=False)
class KnnBootstrap(Forecaster):
    """Implicit forecaster: resample the stored future of a near neighbor.

    Matching uses average-L1 distance between the query (last ``memory`` values
    of the supplied past) and the corpus pasts; one of the k nearest neighbors
    is drawn uniformly.  A past longer than ``memory`` shifts the returned
    future forward, which supports receding-horizon conditioning.
    """

    pasts: np.ndarray
    futures: np.ndarray
    k: int

    def __post_init__(self):
        pasts = np.asarray(self.pasts, dtype=float)
        futures = np.asarray(self.futures, dtype=float)
        if pasts.ndim != 2 or futures.ndim != 2 or pasts.shape[0] != futures.shape[0]:
            raise ValueError("corpus pasts/futures must be aligned 2-D arrays")
        if pasts.shape[0] < 1:
            raise ValueError("corpus must be nonempty")
        if not 1 <= self.k <= pasts.shape[0]:
            raise ValueError(f"k must be in [1, {pasts.shape[0]}], got {self.k}")
        object.__setattr__(self, "pasts", pasts)
        object.__setattr__(self, "futures", futures)
        object.__setattr__(self, "_neighbor_cache", {})

    @classmethod
    def from_corpus(cls, corpus: Sequence[SeriesSample], k: int) -> "KnnBootstrap":
        if not corpus:
            raise ValueError("corpus must be nonempty")
        return cls(
            pasts=np.stack([s.past for s in corpus]),
            futures=np.stack([s.future for s in corpus]),
            k=int(k),
        )

    @property
    def memory(self) -> int:
        return self.pasts.shape[1]

    @property
    def horizon(self) -> int:  # type: ignore[override]
        return self.futures.shape[1]

    def _window(self, past, horizon: Optional[int]):
        past = as_trajectory(past, "past")
        if past.size < self.memory:
            raise ValueError(f"past must supply at least {self.memory} values")
        offset = past.size - self.memory
        h = self.horizon - offset if horizon is None else int(horizon)
        if h < 1 or offset + h > self.horizon:
            raise ValueError("requested horizon extends beyond stored futures")
        return past[-self.memory:], offset, h

    def _neighbors(self, query: np.ndarray) -> np.ndarray:
        key = query.tobytes()
        cached = self._neighbor_cache.get(key)
        if cached is None:
            dists = np.mean(np.abs(self.pasts - query), axis=1)
            cached = np.argsort(dists, kind="stable")[: self.k]
            if len(self._neighbor_cache) > 128:
                self._neighbor_cache.clear()
            self._neighbor_cache[key] = cached
        return cached

    def sample(self, past, rng, horizon=None) -> np.ndarray:
        query, offset, h = self._window(past, horizon)
        nearest = self._neighbors(query)
        pick = nearest[int(rng.integers(self.k))]
        return self.futures[pick, offset : offset + h].copy()

    def predictive_mean(self, past, horizon=None) -> np.ndarray:
        query, offset, h = self._window(past, horizon)
        nearest = self._neighbors(query)
        return np.mean(self.futures[nearest, offset : offset + h], axis=0)


@dataclass(frozen=True, eq=False)
class TabularMarkovChain(Forecaster):
    """Discrete explicit model: per-step pmfs from a transition table.

    The state is the previous emitted symbol; the first step conditions on the
    last value of the past, which must be one of the alphabet values.
    """

    alphabet: np.ndarray
    transition: np.ndarray
    horizon: int

    def __post_init__(self):
        alphabet = np.asarray(self.alphabet, dtype=float)
        transition = np.asarray(self.transition, dtype=float)
        a = alphabet.size
        if a < 1 or transition.shape != (a, a):
            raise ValueError("transition must be (alphabet, alphabet)")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition rows must be pmfs")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "transition", transition)

    @property
    def is_explicit(self) -> bool:  # type: ignore[override]
        return True

    @property
    def alphabet_size(self) -> int:
        return self.alphabet.size

    def _symbol_index(self, value: float) -> int:
        idx = np.nonzero(np.isclose(self.alphabet, value, rtol=0.0, atol=1e-9))[0]
        if idx.size == 0:
            raise ValueError(f"value {value} is not an alphabet symbol")
        return int(idx[0])

    def step_pmf(self, prev_value: float) -> np.ndarray:
        return self.transition[self._symbol_index(prev_value)].copy()

    def sample(self, past, rng, horizon=None) -> np.ndarray:
        past = as_trajectory(past, "past")
        h = _resolve_horizon(self, horizon)
        state = self._symbol_index(past[-1])
        out = np.empty(h)
        for t in range(h):
            state = int(rng.choice(self.alphabet_size, p=self.transition[state]))
            out[t] = self.alphabet[state]
        return out

    def log_density(self, past, future) -> float:
        past = as_trajectory(past, "past")
        future = as_trajectory(future, "future")
        state = self._symbol_index(past[-1])
        total = 0.0
        for value in future:
            nxt = self._symbol_index(value)
            p = self.transition[state, nxt]
            if p == 0:
                return -np.inf
            total += math.log(p)
            state = nxt
        return total


@dataclass(frozen=True, eq=False)
class MeanForecaster(Forecaster):
    """Deterministic adapter: every draw is the base model's predictive mean.

    Turns a probabilistic model into the single-trajectory baseline so the
    same calibration machinery covers point-forecast set predictors.
    """

    base: Forecaster

    @property
    def horizon(self) -> int:  # type: ignore[override]
        return self.base.horizon

    def sample(self, past, rng, horizon=None) -> np.ndarray:
        return self.base.predictive_mean(past, horizon)

    def predictive_mean(self, past, horizon=None) -> np.ndarray:
        return self.base.predictive_mean(past, horizon)


FILTER_NONE = "none"
FILTER_SEQUENCE_LEVEL = "sequence_level"
FILTER_TOP_K = "top_k"


@dataclass(frozen=True)
class FilterSpec:
    """How prototype sampling is reshaped: none, likelihood, or per-step top-k."""

    kind: str
    kappa: float = 0.0
    k: int = 0

    def __post_init__(self):
        if self.kind == FILTER_SEQUENCE_LEVEL:
            # kappa == 0 keeps the candidate pool at size m (identity filter).
            if self.kappa < 0:
                raise ValueError("sequence_level requires kappa >= 0")
        elif self.kind == FILTER_TOP_K:
            if self.k < 1:
                raise ValueError("top_k requires k >= 1")
        elif self.kind != FILTER_NONE:
            raise ValueError(f"unknown filter kind: {self.kind!r}")

    @classmethod
    def none(cls) -> "FilterSpec":
        return cls(kind=FILTER_NONE)

    @classmethod
    def sequence_level(cls, kappa: float) -> "FilterSpec":
        return cls(kind=FILTER_SEQUENCE_LEVEL, kappa=float(kappa))

    @classmethod
    def top_k(cls, k: int) -> "FilterSpec":
        return cls(kind=FILTER_TOP_K, k=int(k))


def top_k_constrained_sample(
    model: Forecaster, k: int, past, rng: np.random.Generator, horizon: Optional[int] = None
) -> np.ndarray:
    """Autoregressive draw restricted at each step to the k most likely symbols.

    Ties in the pmf break toward the smallest symbol index; the truncated pmf
    is renormalized before sampling.  Requires a discrete model exposing
    per-step pmfs (``alphabet`` and ``step_pmf``).
    """
    if not hasattr(model, "step_pmf") or not hasattr(model, "alphabet"):
        raise CapabilityMismatch("top-k sampling needs a discrete model with per-step pmfs")
    alphabet = np.asarray(model.alphabet, dtype=float)
    if not 1 <= k <= alphabet.size:
        raise ValueError(f"k must be in [1, {alphabet.size}], got {k}")
    past = as_trajectory(past, "past")
    h = _resolve_horizon(model, horizon)
    prev = float(past[-1])
    out = np.empty(h)
    for t in range(h):
        pmf = np.asarray(model.step_pmf(prev), dtype=float)
        keep = np.argsort(-pmf, kind="stable")[:k]
        trunc = pmf[keep]
        trunc = trunc / trunc.sum()
        prev = float(alphabet[keep[int(rng.choice(keep.size, p=trunc))]])
        out[t] = prev
    return out


def draw_prototypes(
    model: Forecaster,
    past,
    m: int,
    filter_spec: FilterSpec,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
) -> PrototypeSet:
    """Sample m prototype trajectories, optionally reshaped by a filter.

    ``sequence_level`` draws ceil(m * (1 + kappa)) i.i.d. candidates and keeps
    the m with the largest log-density (ties broken by earliest draw index).
    ``top_k`` routes every draw through the truncated per-step sampler.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if filter_spec.kind == FILTER_NONE:
        trajs = [model.sample(past, rng, horizon) for _ in range(m)]
    elif filter_spec.kind == FILTER_SEQUENCE_LEVEL:
        if not model.is_explicit:
            raise CapabilityMismatch("sequence_level filtering needs an explicit model")
        pool_size = math.ceil(m * (1.0 + filter_spec.kappa))
        pool = [model.sample(past, rng, horizon) for _ in range(pool_size)]
        scores = np.array([model.log_density(past, t) for t in pool])
        keep = np.argsort(-scores, kind="stable")[:m]
        keep.sort()
        trajs = [pool[i] for i in keep]
    else:
        trajs = [
            top_k_constrained_sample(model, filter_spec.k, past, rng, horizon)
            for _ in range(m)
        ]
    return PrototypeSet(np.stack(trajs))
