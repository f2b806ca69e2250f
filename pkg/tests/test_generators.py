import math

import numpy as np
import pytest

import riskcast as rc
from riskcast.core import Domain
from riskcast.generators import (
    BlockageChannelConfig,
    Obstacle,
    RoundaboutConfig,
    gen_blockage_channel_series,
    gen_dataset,
    gen_roundabout_series,
    roundabout_branch_templates,
)
from riskcast.serialize import write_series_csv
from riskcast.streams import stream


def _single_exit_cfg():
    return RoundaboutConfig(
        exit_probs=(1.0,),
        exit_times=(4,),
        exit_slopes=(-0.5,),
        angular_speed=0.2,
        noise_std=0.0,
        past_len=4,
        horizon=4,
        domain=Domain(-10.0, 10.0),
    )


def test_roundabout_deterministic_piecewise_linear():
    cfg = _single_exit_cfg()
    s = gen_roundabout_series(cfg, stream(0, 1, 0))
    # hand computation: linear at 0.2/step to index 4, then slope -0.5
    expected = [0.0, 0.2, 0.4, 0.6, 0.8, 0.3, -0.2, -0.7]
    np.testing.assert_allclose(np.concatenate([s.past, s.future]), expected, atol=1e-12)


def test_roundabout_branch_frequency():
    cfg = rc.default_roundabout()
    rng = stream(2, 1, 0)
    n = 10**4
    # final-step value identifies the branch (well separated by 6+ sigma)
    templates = roundabout_branch_templates(cfg)
    ups = 0
    for _ in range(n):
        s = gen_roundabout_series(cfg, rng)
        ups += abs(s.future[-1] - templates[0, -1]) < abs(s.future[-1] - templates[1, -1])
    p = ups / n
    assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_roundabout_same_stream_same_series():
    cfg = rc.default_roundabout()
    a = gen_roundabout_series(cfg, stream(5, 1, 9))
    b = gen_roundabout_series(cfg, stream(5, 1, 9))
    np.testing.assert_array_equal(a.full, b.full)


def test_roundabout_respects_domain():
    cfg = rc.default_roundabout()
    for i in range(50):
        s = gen_roundabout_series(cfg, stream(1, 1, i))
        assert s.full.min() >= cfg.domain.lo and s.full.max() <= cfg.domain.hi


def test_roundabout_config_validation():
    with pytest.raises(ValueError):
        RoundaboutConfig(
            exit_probs=(0.5, 0.6), exit_times=(1, 1), exit_slopes=(0.1, -0.1),
            angular_speed=0.1, noise_std=0.0, past_len=4, horizon=2,
            domain=Domain(-1, 1),
        )
    with pytest.raises(ValueError):
        RoundaboutConfig(
            exit_probs=(1.0,), exit_times=(99,), exit_slopes=(0.1,),
            angular_speed=0.1, noise_std=0.0, past_len=4, horizon=2,
            domain=Domain(-1, 1),
        )


def test_roundabout_multimodal_final_step():
    # default env: future support at the last step splits into well-separated
    # clusters, one per exit, with gaps above 6x the noise level
    cfg = rc.default_roundabout()
    finals = np.sort(
        [gen_roundabout_series(cfg, stream(3, 1, i)).future[-1] for i in range(400)]
    )
    gaps = np.diff(finals)
    big = np.nonzero(gaps > 6 * cfg.noise_std)[0]
    assert big.size == cfg.n_exits - 1


# ------------------------------------------------------------------ channel


def _channel_cfg(p_block, noise=0.0, attenuation=0.1, start=2, length=4):
    profile = tuple(1.0e-9 + 0.1e-9 * i for i in range(8))
    return BlockageChannelConfig(
        profiles=(profile,),
        obstacles=(Obstacle(start=start, length=length, attenuation=attenuation, p_block=p_block),),
        noise_log_std=noise,
        past_len=4,
        horizon=4,
        g_max=1e-8,
    )


def test_channel_no_blockage_is_exact_profile():
    cfg = _channel_cfg(p_block=0.0)
    s = gen_blockage_channel_series(cfg, stream(0, 1, 0))
    np.testing.assert_allclose(s.full, cfg.profiles[0])


def test_channel_certain_blockage_scales_window():
    cfg = _channel_cfg(p_block=1.0, attenuation=0.1, start=0, length=8)
    s = gen_blockage_channel_series(cfg, stream(0, 1, 0))
    np.testing.assert_allclose(s.full, np.asarray(cfg.profiles[0]) * 0.1)


def test_channel_blockage_frequency_half():
    cfg = _channel_cfg(p_block=0.5, attenuation=0.1, start=0, length=8)
    rng = stream(4, 1, 0)
    n = 10**4
    blocked = 0
    profile0 = cfg.profiles[0][0]
    for _ in range(n):
        s = gen_blockage_channel_series(cfg, rng)
        blocked += s.past[0] < 0.5 * profile0
    p = blocked / n
    assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_channel_nonnegative_and_bounded(channel_cfg):
    for i in range(50):
        s = gen_blockage_channel_series(channel_cfg, stream(6, 1, i))
        assert s.full.min() >= 0.0 and s.full.max() <= channel_cfg.g_max


def test_channel_future_fork_disconnected(channel_cfg):
    # future-window obstacle: last-step support splits into groups per
    # (path, blocked) combination; verify a gap far exceeding the noise scale
    finals = np.sort(
        [gen_blockage_channel_series(channel_cfg, stream(8, 1, i)).future[-1] for i in range(400)]
    )
    rel_gaps = np.diff(finals) / finals[:-1]
    # multiplicative noise ~2%: demand at least one >12% relative gap
    assert rel_gaps.max() > 0.12


# ------------------------------------------------------------------ dataset


def test_gen_dataset_matches_single_draws(roundabout_env):
    data = gen_dataset(roundabout_env, 3, seed=11)
    for i, s in enumerate(data):
        direct = roundabout_env(stream(11, 1, i))
        np.testing.assert_array_equal(s.full, direct.full)


def test_gen_dataset_seeds_disjoint(roundabout_env):
    a = gen_dataset(roundabout_env, 20, seed=1)
    b = gen_dataset(roundabout_env, 20, seed=2)
    assert any(not np.array_equal(x.full, y.full) for x, y in zip(a, b))


def test_gen_dataset_csv_bytes_reproducible(tmp_path, roundabout_env):
    a = gen_dataset(roundabout_env, 10, seed=3)
    b = gen_dataset(roundabout_env, 10, seed=3)
    write_series_csv(tmp_path / "a.csv", a)
    write_series_csv(tmp_path / "b.csv", b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_items_pass_exchangeability_sanity(roundabout_env):
    # summary statistic should not correlate with item index
    data = gen_dataset(roundabout_env, 400, seed=9)
    stats = np.array([s.future.mean() for s in data])
    idx = np.arange(stats.size)
    r = np.corrcoef(idx, stats)[0, 1]
    # permutation null: sd of correlation ~ 1/sqrt(n)
    assert abs(r) <= 3.0 / math.sqrt(stats.size)
