"""Synthetic ground-truth environments with forking dynamics.

Two environments ship with the package: an angle process for a vehicle that
may leave a roundabout at one of several exits (discrete branch choice plus
observation noise), and a channel-gain process where line-of-sight blockage
events randomly attenuate a smooth path profile.  Both replace field data
with parameterized profiles published in the repo configs, so experiments
are exactly reproducible at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .core import Domain, SeriesSample
from .streams import STAGE_DATASET, stream

__all__ = [
    "BlockageChannelConfig",
    "Obstacle",
    "RoundaboutConfig",
    "default_blockage_channel",
    "default_roundabout",
    "gen_blockage_channel_series",
    "gen_dataset",
    "gen_roundabout_series",
    "roundabout_branch_templates",
]


@dataclass(frozen=True)
class RoundaboutConfig:
    """Angle process: linear advance until a randomly chosen exit, then a branch slope.

    ``exit_times`` and ``exit_slopes`` give, per exit, the step index at which
    the trajectory leaves the circular segment and the angular rate it follows
    afterwards.  A single exit makes the dynamics deterministic up to noise.
    """

    exit_probs: tuple
    exit_times: tuple
    exit_slopes: tuple
    angular_speed: float
    noise_std: float
    past_len: int
    horizon: int
    domain: Domain
    start_angle: float = 0.0

    def __post_init__(self):
        e = len(self.exit_probs)
        if e < 1:
            raise ValueError("at least one exit is required")
        if len(self.exit_times) != e or len(self.exit_slopes) != e:
            raise ValueError("exit_times and exit_slopes must match exit_probs")
        probs = np.asarray(self.exit_probs, dtype=float)
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-12:
            raise ValueError("exit probabilities must be nonnegative and sum to 1")
        total = self.past_len + self.horizon
        if any(not 0 <= t < total for t in self.exit_times):
            raise ValueError("exit times must lie inside the trajectory")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.past_len < 1 or self.horizon < 1:
            raise ValueError("past_len and horizon must be >= 1")

    @property
    def n_exits(self) -> int:
        return len(self.exit_probs)


def _roundabout_base(cfg: RoundaboutConfig, exit_idx: int) -> np.ndarray:
    total = cfg.past_len + cfg.horizon
    t_exit = cfg.exit_times[exit_idx]
    slope = cfg.exit_slopes[exit_idx]
    idx = np.arange(total, dtype=float)
    angle_at_exit = cfg.start_angle + cfg.angular_speed * t_exit
    base = np.where(
        idx < t_exit,
        cfg.start_angle + cfg.angular_speed * idx,
        angle_at_exit + slope * (idx - t_exit),
    )
    return base


def gen_roundabout_series(cfg: RoundaboutConfig, rng: np.random.Generator) -> SeriesSample:
    """Draw one angle trajectory: pick an exit, follow its branch, add noise, clip."""
    exit_idx = int(rng.choice(cfg.n_exits, p=np.asarray(cfg.exit_probs, dtype=float)))
    y = _roundabout_base(cfg, exit_idx)
    if cfg.noise_std > 0:
        y = y + cfg.noise_std * rng.standard_normal(y.size)
    y = cfg.domain.clip(y)
    return SeriesSample(past=y[: cfg.past_len], future=y[cfg.past_len :])


def roundabout_branch_templates(cfg: RoundaboutConfig) -> np.ndarray:
    """Noise-free future trajectory of every exit branch, stacked (exits, horizon)."""
    rows = [
        cfg.domain.clip(_roundabout_base(cfg, e)[cfg.past_len :])
        for e in range(cfg.n_exits)
    ]
    return np.stack(rows)


@dataclass(frozen=True)
class Obstacle:
    """A potential blockage: a window of steps attenuated with probability p_block."""

    start: int
    length: int
    attenuation: float
    p_block: float

    def __post_init__(self):
        if self.start < 0 or self.length < 1:
            raise ValueError("obstacle window must be nonempty and start at >= 0")
        if not 0.0 < self.attenuation < 1.0:
            raise ValueError("attenuation must lie in (0, 1)")
        if not 0.0 <= self.p_block <= 1.0:
            raise ValueError("p_block must lie in [0, 1]")


@dataclass(frozen=True)
class BlockageChannelConfig:
    """Channel gains: a random path profile, random blockages, multiplicative fading."""

    profiles: tuple
    obstacles: tuple
    noise_log_std: float
    past_len: int
    horizon: int
    g_max: float

    def __post_init__(self):
        total = self.past_len + self.horizon
        profiles = tuple(tuple(float(v) for v in p) for p in self.profiles)
        if len(profiles) < 1:
            raise ValueError("at least one path profile is required")
        for p in profiles:
            if len(p) != total:
                raise ValueError(f"profiles must have length {total}")
            if any(v <= 0 for v in p):
                raise ValueError("profiles must be strictly positive")
        for obs in self.obstacles:
            if obs.start + obs.length > total:
                raise ValueError("obstacle window extends past the trajectory")
        if self.noise_log_std < 0:
            raise ValueError("noise_log_std must be >= 0")
        if self.g_max <= 0:
            raise ValueError("g_max must be positive")
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def domain(self) -> Domain:
        return Domain(0.0, self.g_max)


def gen_blockage_channel_series(
    cfg: BlockageChannelConfig, rng: np.random.Generator
) -> SeriesSample:
    """Draw one gain trajectory: uniform path, per-obstacle blockage, log-normal fading."""
    path = int(rng.integers(len(cfg.profiles)))
    g = np.asarray(cfg.profiles[path], dtype=float).copy()
    for obs in cfg.obstacles:
        if rng.random() < obs.p_block:
            g[obs.start : obs.start + obs.length] *= obs.attenuation
    if cfg.noise_log_std > 0:
        g = g * np.exp(cfg.noise_log_std * rng.standard_normal(g.size))
    g = np.clip(g, 0.0, cfg.g_max)
    return SeriesSample(past=g[: cfg.past_len], future=g[cfg.past_len :])


def gen_dataset(
    generator: Callable[[np.random.Generator], SeriesSample],
    n: int,
    seed: int,
    stage: int = STAGE_DATASET,
) -> List[SeriesSample]:
    """n independent draws, one documented RNG stream per item.

    Item i always uses ``stream(seed, stage, i)``, so generation order (and
    any parallel fan-out over items) cannot change the result.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [generator(stream(seed, stage, i)) for i in range(n)]


def default_roundabout(noise_std: float = 0.02) -> RoundaboutConfig:
    """Bimodal forking analogue used throughout the shipped experiments."""
    return RoundaboutConfig(
        exit_probs=(0.5, 0.5),
        exit_times=(31, 31),
        exit_slopes=(0.25, -0.2),
        angular_speed=0.05,
        noise_std=noise_std,
        past_len=30,
        horizon=6,
        domain=Domain(-2.0, 4.0),
        start_angle=0.0,
    )


def _smooth_profile(total: int, base: float, amp: float, period: float, phase: float) -> tuple:
    t = np.arange(total, dtype=float)
    return tuple(base + amp * np.sin(2.0 * math.pi * (t + phase) / period))


def default_blockage_channel(
    p_block: float = 0.5, noise_log_std: float = 0.02
) -> BlockageChannelConfig:
    """Three smooth gain paths around 1e-9 with one past and one future-window obstacle.

    The future-window obstacle forks every trajectory at the forecast boundary,
    so the conditional future-gain distribution is strongly bimodal.
    """
    total = 36
    scale = 1e-9
    profiles = (
        _smooth_profile(total, 1.6 * scale, 0.5 * scale, 40.0, 0.0),
        _smooth_profile(total, 1.2 * scale, 0.4 * scale, 28.0, 9.0),
        _smooth_profile(total, 2.0 * scale, 0.6 * scale, 50.0, 21.0),
    )
    obstacles = (
        Obstacle(start=8, length=10, attenuation=0.4, p_block=p_block),
        Obstacle(start=30, length=6, attenuation=0.5, p_block=p_block),
    )
    return BlockageChannelConfig(
        profiles=profiles,
        obstacles=obstacles,
        noise_log_std=noise_log_std,
        past_len=30,
        horizon=6,
        g_max=4e-9,
    )
