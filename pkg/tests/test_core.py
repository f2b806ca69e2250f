import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskcast.core import (
    BallUnionPredictor,
    DistanceSpec,
    Domain,
    IntervalUnion,
    PrototypeSet,
    SeriesSample,
    UnsupportedDistance,
    contains,
    distance,
    interval_union_measure,
    min_distance_to_prototypes,
    per_step_set,
    predictor_inefficiency,
)

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)


def traj_pairs(min_len=1, max_len=8):
    return st.integers(min_value=min_len, max_value=max_len).flatmap(
        lambda n: st.tuples(
            st.lists(finite_floats, min_size=n, max_size=n),
            st.lists(finite_floats, min_size=n, max_size=n),
        )
    )


# ---------------------------------------------------------------- distances


def test_weighted_max_example():
    spec = DistanceSpec.weighted_max((1.0, 0.5))
    assert distance(spec, (1, 2), (2, 4)) == 1.0


def test_avg_l1_identity():
    spec = DistanceSpec.avg_l1()
    assert distance(spec, (3, -1, 2), (3, -1, 2)) == 0.0


def test_max_window_avg_example():
    # oracle: enumerate all k-windows of |a-b| by hand
    a, b, k = (0, 0, 0, 0), (2, 0, 0, 4), 2
    diffs = [abs(x - y) for x, y in zip(a, b)]
    oracle = max(sum(diffs[i : i + k]) / k for i in range(len(a) - k + 1))
    assert oracle == 2.0
    assert distance(DistanceSpec.max_window_avg_l1(k), a, b) == oracle


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        distance(DistanceSpec.avg_l1(), (1, 2), (1, 2, 3))


def test_weight_count_mismatch_raises():
    spec = DistanceSpec.weighted_max((1.0, 2.0, 0.5))
    with pytest.raises(ValueError):
        distance(spec, (1, 2), (3, 4))


def test_nonpositive_weights_rejected():
    with pytest.raises(ValueError):
        DistanceSpec.weighted_max((1.0, 0.0))


@pytest.mark.parametrize(
    "spec",
    [
        DistanceSpec.weighted_max(1.3),
        DistanceSpec.avg_l1(),
        DistanceSpec.max_window_avg_l1(2),
    ],
)
@given(pair=traj_pairs(min_len=2, max_len=8))
def test_distance_axioms(spec, pair):
    a, b = pair
    d_ab = distance(spec, a, b)
    assert d_ab >= 0
    assert distance(spec, b, a) == pytest.approx(d_ab)
    assert distance(spec, a, a) == 0.0
    if d_ab == 0.0:
        assert np.allclose(a, b)


def test_diameter_under_each_kind():
    dom = Domain(-2.0, 4.0)
    assert DistanceSpec.weighted_max((2.0, 0.5)).diameter(dom) == 12.0
    assert DistanceSpec.avg_l1().diameter(dom) == 6.0
    assert DistanceSpec.max_window_avg_l1(3).diameter(dom) == 6.0


# ------------------------------------------------------- prototype geometry


def test_min_distance_examples():
    spec = DistanceSpec.weighted_max(1.0)
    p1 = PrototypeSet.from_trajectories([(0, 0)])
    assert min_distance_to_prototypes((0.5, -0.5), p1, spec) == 0.5
    p2 = PrototypeSet.from_trajectories([(0, 0), (10, 10)])
    assert min_distance_to_prototypes((10, 10), p2, spec) == 0.0
    p3 = PrototypeSet.from_trajectories([(0, 0), (3, 3)])
    assert min_distance_to_prototypes((2, 2), p3, spec) == 1.0


def test_empty_prototype_set_rejected():
    with pytest.raises(ValueError):
        PrototypeSet.from_trajectories([])


def test_contains_examples():
    spec = DistanceSpec.weighted_max(1.0)
    single = BallUnionPredictor(PrototypeSet.from_trajectories([(0, 0)]), spec, 1.0)
    assert contains(single, (0.5, -0.5))
    assert not contains(single, (1.5, 0.0))
    double = BallUnionPredictor(
        PrototypeSet.from_trajectories([(0, 0), (10, 10)]), spec, 1.0
    )
    assert contains(double, (9.5, 10.2))


# ----------------------------------------------------------- interval union


def _merge_oracle(pairs):
    """Brute-force union measure on a fine grid (independent of sweep merge)."""
    if not pairs:
        return 0.0
    lo = min(p[0] for p in pairs)
    hi = max(p[1] for p in pairs)
    if hi == lo:
        return 0.0
    grid = np.linspace(lo, hi, 200001)
    inside = np.zeros(grid.size, dtype=bool)
    for a, b in pairs:
        inside |= (grid >= a) & (grid <= b)
    return float(np.mean(inside) * (hi - lo))


def test_measure_examples():
    assert interval_union_measure(IntervalUnion.normalize([(0, 1), (0.5, 2)])) == 2.0
    assert interval_union_measure(IntervalUnion.normalize([(0, 1), (2, 3)])) == 2.0
    assert interval_union_measure(IntervalUnion.empty()) == 0.0


def test_touching_intervals_merge():
    u = IntervalUnion.normalize([(0, 1), (1, 2)])
    assert u.intervals == ((0.0, 2.0),)


def test_reversed_interval_rejected():
    with pytest.raises(ValueError):
        IntervalUnion.normalize([(2, 1)])


@given(
    pairs=st.lists(
        st.tuples(finite_floats, st.floats(min_value=0, max_value=10)).map(
            lambda t: (t[0], t[0] + t[1])
        ),
        min_size=0,
        max_size=6,
    )
)
def test_measure_matches_grid_oracle(pairs):
    u = IntervalUnion.normalize(pairs)
    measured = interval_union_measure(u)
    oracle = _merge_oracle(pairs)
    span = max((b - a for a, b in pairs), default=1.0)
    assert measured == pytest.approx(oracle, abs=max(1e-3 * max(span, 1.0), 1e-6))


def test_measure_matches_monte_carlo_hit_rate():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = rng.integers(1, 6)
        starts = rng.uniform(-5, 5, n)
        widths = rng.uniform(0, 3, n)
        pairs = list(zip(starts, starts + widths))
        u = IntervalUnion.normalize(pairs)
        lo, hi = -6.0, 9.0
        n_mc = 40000
        pts = rng.uniform(lo, hi, n_mc)
        hit = np.zeros(n_mc, dtype=bool)
        for a, b in pairs:
            hit |= (pts >= a) & (pts <= b)
        p = hit.mean()
        estimate = p * (hi - lo)
        se = (hi - lo) * math.sqrt(max(p * (1 - p), 1e-9) / n_mc)
        assert abs(interval_union_measure(u) - estimate) <= 3 * se + 1e-9


# ------------------------------------------------------------ per-step sets


def test_per_step_set_examples():
    spec = DistanceSpec.weighted_max(1.0)
    pred = BallUnionPredictor(PrototypeSet.from_trajectories([(0, 5), (3, 5)]), spec, 1.0)
    assert per_step_set(pred, 0).intervals == ((-1.0, 1.0), (2.0, 4.0))
    pred2 = BallUnionPredictor(
        PrototypeSet.from_trajectories([(0, 5), (1.5, 5)]), spec, 1.0
    )
    assert per_step_set(pred2, 0).intervals == ((-1.0, 2.5),)
    point = BallUnionPredictor(PrototypeSet.from_trajectories([(2, 3)]), spec, 0.0)
    assert interval_union_measure(per_step_set(point, 0)) == 0.0


def test_per_step_set_requires_weighted_max():
    pred = BallUnionPredictor(
        PrototypeSet.from_trajectories([(0, 0)]), DistanceSpec.avg_l1(), 1.0
    )
    with pytest.raises(UnsupportedDistance):
        per_step_set(pred, 0)


def test_per_step_set_time_bounds():
    pred = BallUnionPredictor(
        PrototypeSet.from_trajectories([(0, 0)]), DistanceSpec.weighted_max(1.0), 1.0
    )
    with pytest.raises(ValueError):
        per_step_set(pred, 2)


def test_inefficiency_examples():
    spec = DistanceSpec.weighted_max(1.0)
    single = BallUnionPredictor(PrototypeSet.from_trajectories([(0, 1, 2)]), spec, 1.0)
    assert predictor_inefficiency(single) == pytest.approx(2.0)
    twin = BallUnionPredictor(
        PrototypeSet.from_trajectories([(0, 0), (10, 10)]), spec, 1.0
    )
    assert predictor_inefficiency(twin) == pytest.approx(4.0)
    zero = BallUnionPredictor(PrototypeSet.from_trajectories([(0, 0)]), spec, 0.0)
    assert predictor_inefficiency(zero) == 0.0


# ----------------------------------------------------------- set properties


@given(data=st.data())
def test_membership_implies_per_step_membership(data):
    horizon = data.draw(st.integers(2, 5))
    m = data.draw(st.integers(1, 4))
    protos = np.array(
        data.draw(
            st.lists(
                st.lists(finite_floats, min_size=horizon, max_size=horizon),
                min_size=m,
                max_size=m,
            )
        )
    )
    radius = data.draw(st.floats(min_value=0, max_value=5))
    y = np.array(data.draw(st.lists(finite_floats, min_size=horizon, max_size=horizon)))
    pred = BallUnionPredictor(
        PrototypeSet(protos), DistanceSpec.weighted_max(1.0), radius
    )
    if contains(pred, y):
        for t in range(horizon):
            union = per_step_set(pred, t)
            assert any(lo - 1e-12 <= y[t] <= hi + 1e-12 for lo, hi in union.intervals)


@given(data=st.data())
def test_monotone_in_radius(data):
    horizon = data.draw(st.integers(1, 5))
    protos = np.array(
        data.draw(
            st.lists(
                st.lists(finite_floats, min_size=horizon, max_size=horizon),
                min_size=1,
                max_size=3,
            )
        )
    )
    r_small = data.draw(st.floats(min_value=0, max_value=3))
    r_big = r_small + data.draw(st.floats(min_value=0, max_value=3))
    y = np.array(data.draw(st.lists(finite_floats, min_size=horizon, max_size=horizon)))
    spec = DistanceSpec.weighted_max(1.0)
    small = BallUnionPredictor(PrototypeSet(protos), spec, r_small)
    big = BallUnionPredictor(PrototypeSet(protos), spec, r_big)
    if contains(small, y):
        assert contains(big, y)
    assert predictor_inefficiency(big) >= predictor_inefficiency(small) - 1e-12


def test_series_sample_validation():
    with pytest.raises(ValueError):
        SeriesSample(past=[], future=[1.0])
    with pytest.raises(ValueError):
        SeriesSample(past=[1.0], future=[np.nan])
    s = SeriesSample(past=[1.0, 2.0], future=[3.0])
    np.testing.assert_array_equal(s.full, [1.0, 2.0, 3.0])


def test_domain_clip_and_width():
    dom = Domain(-1.0, 2.0)
    assert dom.width == 3.0
    np.testing.assert_array_equal(dom.clip(np.array([-5.0, 0.5, 7.0])), [-1.0, 0.5, 2.0])
    with pytest.raises(ValueError):
        Domain(1.0, 1.0)
