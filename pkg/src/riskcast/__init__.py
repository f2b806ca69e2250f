"""riskcast: calibrated prototype-set forecasting and risk-aware predictive control.

The package wraps any probabilistic time-series forecaster into a set
predictor built from sampled prototype trajectories, calibrates the ball
radius so that a chosen bounded loss is controlled in expectation on held-out
data, and uses the calibrated sets to solve open-loop and closed-loop power
control problems with average reliability constraints.
"""

from .calibrate import (
    CalibratedPredictorSpec,
    CalibrationInfeasible,
    LossCurves,
    LossSpec,
    RiskReport,
    conformal_quantile,
    crc_threshold,
    evaluate,
    loss,
    make_test_predictor,
    pts_crc_calibrate,
    ts_cp_calibrate,
)
from .core import (
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
from .generators import (
    BlockageChannelConfig,
    Obstacle,
    RoundaboutConfig,
    default_blockage_channel,
    default_roundabout,
    gen_blockage_channel_series,
    gen_dataset,
    gen_roundabout_series,
)
from .models import (
    CapabilityMismatch,
    FilterSpec,
    Forecaster,
    ForkingMixture,
    GaussianAR,
    KnnBootstrap,
    MeanForecaster,
    TabularMarkovChain,
    draw_prototypes,
    top_k_constrained_sample,
)
from .mpc import (
    ControlSolution,
    HarqEpisode,
    HarqProblem,
    InfeasibleProblem,
    PowerControlProblem,
    achieved_rate,
    harq_target_rate,
    interference_threshold,
    lipschitz_interference,
    lipschitz_rate,
    max_k_window_interference,
    robust_interference_constraints,
    run_closed_loop_harq,
    solve_harq_step,
    solve_open_loop_power,
)
from .streams import stream

__version__ = "0.1.0"
