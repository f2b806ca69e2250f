"""Threshold calibration for prototype-ball set predictors.

Two calibration routes are provided: the classical split-quantile route for a
deterministic point forecast (single prototype, miscoverage only), and the
risk-controlled route that tunes the ball radius so that the empirical mean of
any bounded, set-monotone loss -- corrected by a fictitious worst-case
calibration point -- stays below the target level.  Evaluation reports
empirical risk, sequence coverage, and set-size (inefficiency) with normal
confidence half-widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    WEIGHTED_MAX,
    BallUnionPredictor,
    DistanceSpec,
    Domain,
    PrototypeSet,
    SeriesSample,
    contains,
    min_distance_to_prototypes,
    predictor_inefficiency,
)
from .models import FilterSpec, Forecaster, draw_prototypes
from .streams import STAGE_CALIBRATION, STAGE_TEST, stream

__all__ = [
    "MISCOVERAGE",
    "MIN_DISTANCE",
    "PER_SAMPLE_RATE",
    "CalibratedPredictorSpec",
    "CalibrationInfeasible",
    "LossCurves",
    "LossSpec",
    "RiskReport",
    "conformal_quantile",
    "crc_threshold",
    "evaluate",
    "loss",
    "make_test_predictor",
    "pts_crc_calibrate",
    "ts_cp_calibrate",
]

MISCOVERAGE = "miscoverage"
PER_SAMPLE_RATE = "per_sample_rate"
MIN_DISTANCE = "min_distance"

# 99% two-sided normal quantile, used for evaluation half-widths.
_Z99 = 2.5758293035489004


class CalibrationInfeasible(Exception):
    """No radius can satisfy the risk bound at this calibration size."""

    def __init__(self, message: str, min_achievable_risk: float):
        super().__init__(message)
        self.min_achievable_risk = min_achievable_risk


@dataclass(frozen=True)
class LossSpec:
    """A bounded, set-monotone loss: miscoverage, per-sample rate, or min-distance.

    The bound is 1 for the two indicator-style losses and the domain diameter
    under the metric for the min-distance loss (finite because series live in
    a declared bounded domain).
    """

    kind: str
    bound: float
    metric: Optional[DistanceSpec] = None

    def __post_init__(self):
        if self.kind not in (MISCOVERAGE, PER_SAMPLE_RATE, MIN_DISTANCE):
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if self.bound <= 0 or not math.isfinite(self.bound):
            raise ValueError("loss bound must be positive and finite")
        if self.kind == MIN_DISTANCE and self.metric is None:
            raise ValueError("min_distance loss requires a metric")

    @classmethod
    def miscoverage(cls) -> "LossSpec":
        return cls(kind=MISCOVERAGE, bound=1.0)

    @classmethod
    def per_sample_rate(cls) -> "LossSpec":
        return cls(kind=PER_SAMPLE_RATE, bound=1.0)

    @classmethod
    def min_distance(cls, metric: DistanceSpec, domain: Domain) -> "LossSpec":
        return cls(kind=MIN_DISTANCE, bound=metric.diameter(domain), metric=metric)


def loss(spec: LossSpec, pred: BallUnionPredictor, y_future) -> float:
    """Loss of the predicted set against the realized future trajectory.

    Min-distance is measured to the set itself: distance to a ball of radius r
    around a prototype is (d - r)+, so the loss is max(0, min-prototype-distance
    - radius), clipped at the bound.
    """
    y = np.asarray(y_future, dtype=float)
    if spec.kind == MISCOVERAGE:
        return 0.0 if contains(pred, y) else 1.0
    if spec.kind == PER_SAMPLE_RATE:
        if pred.distance.kind != WEIGHTED_MAX:
            raise ValueError("per_sample_rate needs weighted_max per-step sets")
        w = pred.distance.weight_array(pred.horizon)
        step_scores = np.min(w * np.abs(pred.prototypes.trajectories - y), axis=0)
        return float(np.mean(step_scores > pred.radius))
    metric = spec.metric if spec.metric is not None else pred.distance
    d = min_distance_to_prototypes(y, pred.prototypes, metric)
    return float(min(spec.bound, max(0.0, d - pred.radius)))


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest calibration score.

    When that rank exceeds n the finite-sample correction is unattainable and
    the infinite-threshold sentinel is returned, meaning the predicted set is
    the full trajectory space.
    """
    scores = np.asarray(scores, dtype=float)
    n = scores.size
    if n < 1:
        raise ValueError("at least one calibration score is required")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rank = math.ceil((n + 1) * (1.0 - alpha))
    if rank > n:
        return math.inf
    return float(np.sort(scores)[rank - 1])


@dataclass(frozen=True, eq=False)
class LossCurves:
    """Per-item nonincreasing loss-vs-radius curves, in closed form.

    ``step`` curves are indicators that drop to zero once the radius passes the
    item's score (1-D scores) or the mean of per-step indicators (2-D scores);
    ``linear`` curves are the clipped ramps max(0, score - radius) of the
    min-distance loss.
    """

    kind: str
    scores: np.ndarray
    bound: float

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if self.kind not in ("step", "linear"):
            raise ValueError(f"unknown curve kind: {self.kind!r}")
        if scores.ndim not in (1, 2) or scores.shape[0] < 1:
            raise ValueError("scores must be a non-empty 1-D or 2-D array")
        if self.kind == "linear" and scores.ndim != 1:
            raise ValueError("linear curves take one score per item")
        object.__setattr__(self, "scores", scores)

    @classmethod
    def from_losses(cls, loss_spec: LossSpec, scores) -> "LossCurves":
        kind = "linear" if loss_spec.kind == MIN_DISTANCE else "step"
        return cls(kind=kind, scores=np.asarray(scores, dtype=float), bound=loss_spec.bound)

    @property
    def n_items(self) -> int:
        return self.scores.shape[0]

    @property
    def max_score(self) -> float:
        return float(np.max(self.scores))

    def total_loss(self, radius: float) -> float:
        if self.kind == "step":
            exceeded = self.scores > radius
            if self.scores.ndim == 1:
                return float(np.sum(exceeded))
            return float(np.sum(np.mean(exceeded, axis=1)))
        return float(np.sum(np.clip(self.scores - radius, 0.0, self.bound)))


def crc_threshold(curves: LossCurves, alpha: float) -> float:
    """Smallest radius with (sum of item losses + B) / (n + 1) <= alpha.

    Step curves are solved exactly over their breakpoints; linear curves by
    bisection to an absolute tolerance of 1e-9 * B.  Raises
    CalibrationInfeasible when even the loss-free limit cannot meet the bound,
    reporting the smallest achievable risk (B / (n + 1)).

    The level is in loss units, so it may exceed 1 for losses whose bound
    does (the distance-valued loss on a wide domain).
    """
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise ValueError(f"alpha must be positive and finite, got {alpha}")
    n = curves.n_items
    budget = alpha * (n + 1) - curves.bound

    def ok(radius: float) -> bool:
        return curves.total_loss(radius) <= budget

    if budget < 0:
        raise CalibrationInfeasible(
            f"(n+1) * alpha = {alpha * (n + 1):.6g} is below the loss bound "
            f"{curves.bound:.6g}; smallest achievable risk is "
            f"{curves.bound / (n + 1):.6g}",
            min_achievable_risk=curves.bound / (n + 1),
        )
    if ok(0.0):
        return 0.0
    if curves.kind == "step":
        candidates = np.unique(curves.scores)
        # Aggregate loss is a right-continuous nonincreasing step function, so
        # the infimum is attained at a breakpoint; binary-search the smallest.
        lo, hi = 0, candidates.size - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if ok(float(candidates[mid])):
                hi = mid
            else:
                lo = mid + 1
        return float(candidates[lo])
    lo, hi = 0.0, curves.max_score
    tol = 1e-9 * curves.bound
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class CalibratedPredictorSpec:
    """Everything needed to rebuild the calibrated set predictor at test time."""

    model: Forecaster
    m: int
    filter_spec: FilterSpec
    distance: DistanceSpec
    loss_spec: LossSpec
    alpha: float
    radius: float
    n_cal: int
    seed: int
    domain: Domain
    use_mean: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.m < 1 or self.n_cal < 1:
            raise ValueError("m and n_cal must be >= 1")


def _item_scores(
    loss_spec: LossSpec,
    distance: DistanceSpec,
    prototypes: PrototypeSet,
    future: np.ndarray,
):
    """Breakpoint scores of one item's loss-vs-radius curve."""
    if loss_spec.kind == PER_SAMPLE_RATE:
        if distance.kind != WEIGHTED_MAX:
            raise ValueError("per_sample_rate needs the weighted_max distance")
        w = distance.weight_array(prototypes.horizon)
        return np.min(w * np.abs(prototypes.trajectories - future), axis=0)
    metric = loss_spec.metric if loss_spec.kind == MIN_DISTANCE else distance
    assert metric is not None
    return min_distance_to_prototypes(future, prototypes, metric)


def pts_crc_calibrate(
    model: Forecaster,
    calibration: Sequence[SeriesSample],
    alpha: float,
    m: int,
    filter_spec: FilterSpec,
    distance: DistanceSpec,
    loss_spec: LossSpec,
    seed: int,
    domain: Domain,
) -> CalibratedPredictorSpec:
    """Calibrate the ball radius by risk control over sampled prototype sets.

    Each calibration item draws its prototypes from its own stream
    ``(seed, calibration-stage, i)``, so calibration is order-independent and
    parallelizable.
    """
    if not calibration:
        raise ValueError("calibration set must be nonempty")
    if loss_spec.kind == MIN_DISTANCE and loss_spec.metric is not None:
        if loss_spec.metric != distance:
            raise ValueError("min_distance metric must equal the predictor distance")
    per_item = []
    for i, sample in enumerate(calibration):
        rng = stream(seed, STAGE_CALIBRATION, i)
        protos = draw_prototypes(model, sample.past, m, filter_spec, rng)
        per_item.append(_item_scores(loss_spec, distance, protos, sample.future))
    curves = LossCurves.from_losses(loss_spec, np.asarray(per_item))
    radius = crc_threshold(curves, alpha)
    return CalibratedPredictorSpec(
        model=model,
        m=m,
        filter_spec=filter_spec,
        distance=distance,
        loss_spec=loss_spec,
        alpha=alpha,
        radius=radius,
        n_cal=len(calibration),
        seed=seed,
        domain=domain,
    )


def ts_cp_calibrate(
    model: Forecaster,
    calibration: Sequence[SeriesSample],
    alpha: float,
    weights,
    seed: int,
    domain: Domain,
) -> CalibratedPredictorSpec:
    """Split-quantile calibration of the point forecast (single prototype).

    The score of each item is the weighted-max distance between the model's
    predictive mean and the realized future; the radius is the conformal
    quantile of those scores.
    """
    if not calibration:
        raise ValueError("calibration set must be nonempty")
    spec = DistanceSpec.weighted_max(weights)
    scores = [_weighted_max_score(model, sample, spec) for sample in calibration]
    radius = conformal_quantile(scores, alpha)
    return CalibratedPredictorSpec(
        model=model,
        m=1,
        filter_spec=FilterSpec.none(),
        distance=spec,
        loss_spec=LossSpec.miscoverage(),
        alpha=alpha,
        radius=radius,
        n_cal=len(calibration),
        seed=seed,
        domain=domain,
        use_mean=True,
    )


def _weighted_max_score(model: Forecaster, sample: SeriesSample, spec: DistanceSpec) -> float:
    mean = model.predictive_mean(sample.past)
    w = spec.weight_array(mean.size)
    return float(np.max(w * np.abs(mean - sample.future)))


def make_test_predictor(
    spec: CalibratedPredictorSpec, past, rng: np.random.Generator
) -> BallUnionPredictor:
    """Fresh prototypes for a test past, paired with the calibrated radius."""
    if spec.use_mean:
        protos = PrototypeSet(spec.model.predictive_mean(past)[None, :])
    else:
        protos = draw_prototypes(spec.model, past, spec.m, spec.filter_spec, rng)
    radius = spec.radius
    if not math.isfinite(radius):
        # Infinite-threshold sentinel: the set is the whole space.  Keep the
        # predictor structurally valid; membership is then vacuously true.
        radius = math.inf
    return BallUnionPredictor(prototypes=protos, distance=spec.distance, radius=radius)


@dataclass(frozen=True)
class RiskReport:
    """Empirical risk / coverage / inefficiency of a calibrated predictor."""

    risk: float
    risk_half_width: float
    coverage: float
    coverage_half_width: float
    mean_inefficiency: float
    n_test: int


def _half_width(values: np.ndarray) -> float:
    if values.size < 2:
        return math.inf
    return float(_Z99 * np.std(values, ddof=1) / math.sqrt(values.size))


def evaluate(
    spec: CalibratedPredictorSpec,
    test_set: Sequence[SeriesSample],
    loss_spec: Optional[LossSpec] = None,
    seed: Optional[int] = None,
) -> RiskReport:
    """Mean loss, sequence coverage, and mean inefficiency on a held-out set.

    Test item i draws its prototypes from stream ``(seed, test-stage, i)``.
    Inefficiency is reported only for the weighted-max distance; the sentinel
    (infinite-radius) predictor counts the full domain width per step.
    """
    if not test_set:
        raise ValueError("test set must be nonempty")
    loss_spec = spec.loss_spec if loss_spec is None else loss_spec
    seed = spec.seed if seed is None else seed
    losses = np.empty(len(test_set))
    covered = np.empty(len(test_set))
    ineff: List[float] = []
    for i, sample in enumerate(test_set):
        rng = stream(seed, STAGE_TEST, i)
        pred = make_test_predictor(spec, sample.past, rng)
        losses[i] = loss(loss_spec, pred, sample.future)
        covered[i] = 1.0 if contains(pred, sample.future) else 0.0
        if spec.distance.kind == WEIGHTED_MAX:
            if math.isfinite(pred.radius):
                ineff.append(predictor_inefficiency(pred))
            else:
                ineff.append(spec.domain.width)
    mean_ineff = float(np.mean(ineff)) if ineff else math.nan
    return RiskReport(
        risk=float(np.mean(losses)),
        risk_half_width=_half_width(losses),
        coverage=float(np.mean(covered)),
        coverage_half_width=_half_width(covered),
        mean_inefficiency=mean_ineff,
        n_test=len(test_set),
    )
