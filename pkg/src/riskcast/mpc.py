"""Robust predictive control on calibrated trajectory sets.

Two wireless instantiations ship here.  Open loop: allocate transmit powers
over a horizon to maximize a forecast sum-rate while a windowed interference
constraint holds for every gain trajectory in the calibrated set, tightened
by the Lipschitz margin that converts the calibrated expected-distance bound
into a guarantee on the true average constraint.  Closed loop: a receding
horizon minimum-energy retransmission policy (HARQ with incremental
redundancy) that re-solves an inverse water-filling problem each slot against
a conservative lower gain envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .calibrate import MIN_DISTANCE, CalibratedPredictorSpec, make_test_predictor
from .core import (
    AVG_L1,
    MAX_WINDOW_AVG_L1,
    BallUnionPredictor,
    as_trajectory,
)
from .models import draw_prototypes
from .streams import STAGE_EPISODE, STAGE_TEST, stream

__all__ = [
    "ControlSolution",
    "HarqEpisode",
    "HarqProblem",
    "InfeasibleProblem",
    "LinearConstraints",
    "PowerControlEpisode",
    "PowerControlProblem",
    "achieved_rate",
    "harq_target_rate",
    "interference_threshold",
    "lipschitz_interference",
    "lipschitz_rate",
    "max_k_window_interference",
    "pick_alpha_for_delta",
    "robust_interference_constraints",
    "run_closed_loop_harq",
    "simulate_harq_episodes",
    "simulate_power_control",
    "solve_harq_step",
    "solve_open_loop_power",
]

_LN2 = math.log(2.0)


class InfeasibleProblem(Exception):
    """The tightened constraint family admits no feasible action."""


def lipschitz_interference(p_max: float) -> float:
    """Sensitivity of windowed interference to gains under the matching metric."""
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    return float(p_max)


def lipschitz_rate(p_max: float, bandwidth: float, noise_density: float) -> float:
    """Per-slot sensitivity of the log2 rate to gains: p_max / (B * N0 * ln 2)."""
    if p_max <= 0 or bandwidth <= 0 or noise_density <= 0:
        raise ValueError("p_max, bandwidth, and noise_density must be positive")
    return float(p_max / (bandwidth * noise_density * _LN2))


def _window_sums(values: np.ndarray, k: int) -> np.ndarray:
    csum = np.concatenate([[0.0], np.cumsum(values)])
    return csum[k:] - csum[:-k]


def max_k_window_interference(gains, powers, k: int) -> float:
    """Max over k-slot windows of the average per-slot interference g_t * P_t."""
    g = as_trajectory(gains, "gains")
    p = as_trajectory(powers, "powers")
    if g.size != p.size:
        raise ValueError("gains and powers must have equal length")
    if not 1 <= k <= g.size:
        raise ValueError(f"window must lie in [1, {g.size}], got {k}")
    return float(np.max(_window_sums(g * p, k)) / k)


def interference_threshold(past_gains, p_max: float, k: int, beta: float) -> float:
    """Safety threshold: beta times the past max-window interference at full power."""
    past = as_trajectory(past_gains, "past_gains")
    if past.size < k:
        raise ValueError("past must span at least one window")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return float(beta * p_max * np.max(_window_sums(past, k)) / k)


@dataclass(frozen=True, eq=False)
class LinearConstraints:
    """A family of half-spaces A @ P <= b over the power vector."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if a.shape[0] != b.size:
            raise ValueError("one bound per constraint row is required")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    def slacks(self, powers: np.ndarray) -> np.ndarray:
        return self.b - self.a @ powers


def robust_interference_constraints(
    pred: BallUnionPredictor, gamma: float, margin: float
) -> LinearConstraints:
    """Linear family whose satisfaction bounds interference over the whole set.

    For each prototype, window, and slot s in the window the row reads
    (1/k) sum_window ghat_t P_t + radius * P_s <= gamma - margin.  The
    supremum of window interference over a max-window-average-L1 ball is
    attained by spending the full window budget (k * radius) on the slot with
    the largest power, and that perturbed gain vector stays inside the ball,
    so the family is exact rather than an outer bound.
    """
    if pred.distance.kind != MAX_WINDOW_AVG_L1:
        raise ValueError("interference robustness needs the max_window_avg_l1 distance")
    bound = gamma - margin
    if bound < 0:
        raise InfeasibleProblem(
            f"threshold {gamma:.6g} is below the robustness margin {margin:.6g}"
        )
    k = pred.distance.window
    horizon = pred.horizon
    rows = []
    for proto in pred.prototypes.trajectories:
        for start in range(horizon - k + 1):
            window = slice(start, start + k)
            base = np.zeros(horizon)
            base[window] = proto[window] / k
            for s in range(start, start + k):
                row = base.copy()
                row[s] += pred.radius
                rows.append(row)
    a = np.stack(rows)
    return LinearConstraints(a=a, b=np.full(a.shape[0], bound))


def _dykstra(
    y: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    lo: float,
    hi: float,
    tol: float,
    max_sweeps: int = 3000,
) -> np.ndarray:
    """Cyclic Dykstra projection of y onto box ∩ half-spaces.

    Rows must be unit-norm.  Each sweep projects onto every half-space and the
    box in turn, carrying Dykstra's per-set correction terms, which converges
    to the exact Euclidean projection onto the intersection.
    """
    n_rows = a.shape[0]
    x = np.clip(y, lo, hi)
    inc = np.zeros((n_rows + 1, y.size))
    for _ in range(max_sweeps):
        x_prev = x
        for i in range(n_rows):
            z = x + inc[i]
            viol = float(a[i] @ z) - b[i]
            x = z - viol * a[i] if viol > 0.0 else z
            inc[i] = z - x
        z = x + inc[n_rows]
        x = np.clip(z, lo, hi)
        inc[n_rows] = z - x
        if float(np.max(np.abs(x - x_prev))) < tol:
            feas = float(np.max(a @ x - b, initial=0.0))
            if feas <= 10.0 * tol:
                break
    return x


def _project_box_polyhedron(
    y: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    lo: float,
    hi: float,
    tol: float = 1e-12,
    max_sweeps: int = 3000,
) -> np.ndarray:
    """Projection via Dykstra restricted to the working set of rows.

    A projection onto a subset of the half-spaces that happens to satisfy all
    of them equals the full projection, so rows are pulled in lazily: start
    from those violated at the box-clipped point, re-project until clean.
    """
    x = np.clip(y, lo, hi)
    if a.shape[0] == 0:
        return x
    active = np.nonzero(a @ x - b > -1e-9)[0]
    if active.size == 0:
        return x
    for _ in range(20):
        x = _dykstra(y, a[active], b[active], lo, hi, tol, max_sweeps)
        newly = np.nonzero(a @ x - b > max(10.0 * tol, 1e-9))[0]
        if newly.size == 0:
            return x
        active = np.union1d(active, newly)
    return _dykstra(y, a, b, lo, hi, tol, max_sweeps)


def _nnls(design: np.ndarray, target: np.ndarray, max_iter: int = 200) -> np.ndarray:
    """Lawson-Hanson nonnegative least squares: argmin ||design @ w - target||, w >= 0."""
    n_cols = design.shape[1]
    w = np.zeros(n_cols)
    passive = np.zeros(n_cols, dtype=bool)
    resid = target - design @ w
    for _ in range(max_iter):
        grad = design.T @ resid
        grad[passive] = -np.inf
        j = int(np.argmax(grad))
        if grad[j] <= 1e-14:
            break
        passive[j] = True
        while True:
            sub = design[:, passive]
            sol, *_ = np.linalg.lstsq(sub, target, rcond=None)
            if np.all(sol > 0):
                w = np.zeros(n_cols)
                w[passive] = sol
                break
            current = w[passive]
            step_mask = sol <= 0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(step_mask, current / (current - sol), np.inf)
            alpha = float(np.min(ratios))
            current = current + alpha * (sol - current)
            w = np.zeros(n_cols)
            w[passive] = current
            passive = w > 1e-15
            if not np.any(passive):
                break
        resid = target - design @ w
    return w


def _optimality_certificate(
    x: np.ndarray,
    snr: np.ndarray,
    tau: int,
    a: np.ndarray,
    b: np.ndarray,
    tol: float = 1e-9,
) -> Optional[float]:
    """KKT residual of x for max f over box ∩ half-spaces, or None if not optimal.

    Concavity makes the KKT conditions sufficient, so a point passing this
    test is a true optimum.  Stationarity asks for nonnegative multipliers on
    active rows and bound normals reproducing the gradient; the multipliers
    are fitted by nonnegative least squares.
    """
    if np.any(x < -1e-12) or np.any(x > 1.0 + 1e-12):
        return None
    feas_viol = float(np.max(a @ x - b, initial=0.0)) if a.shape[0] else 0.0
    if feas_viol > 1e-11:
        return None
    g = (snr / _LN2) / (1.0 + snr * x) / tau
    act_rows = np.nonzero(b - a @ x <= 1e-10)[0] if a.shape[0] else np.array([], dtype=int)
    at_hi = x >= 1.0 - 1e-12
    at_lo = x <= 1e-12
    columns = []
    if act_rows.size:
        columns.append(a[act_rows].T)
    n = x.size
    if np.any(at_hi):
        eye = np.zeros((n, int(np.count_nonzero(at_hi))))
        eye[np.nonzero(at_hi)[0], np.arange(eye.shape[1])] = 1.0
        columns.append(eye)
    if np.any(at_lo):
        eye = np.zeros((n, int(np.count_nonzero(at_lo))))
        eye[np.nonzero(at_lo)[0], np.arange(eye.shape[1])] = -1.0
        columns.append(eye)
    if not columns:
        resid = float(np.max(np.abs(g)))
        return resid if resid <= tol else None
    design = np.concatenate(columns, axis=1)
    w = _nnls(design, g)
    resid = float(np.max(np.abs(design @ w - g)))
    return max(resid, feas_viol) if resid <= tol else None


def _independent_rows(mat: np.ndarray, order: np.ndarray, cap: int) -> list:
    """Greedy selection of row indices with linearly independent normals."""
    basis: list = []
    chosen: list = []
    for idx in order:
        if len(chosen) >= cap:
            break
        v = mat[idx].astype(float)
        for u in basis:
            v = v - np.dot(v, u) * u
        norm = float(np.linalg.norm(v))
        if norm > 1e-8:
            basis.append(v / norm)
            chosen.append(int(idx))
    return chosen


def _solve_face(
    x: np.ndarray,
    snr: np.ndarray,
    tau: int,
    a: np.ndarray,
    b: np.ndarray,
    rows: list,
    at_lo: np.ndarray,
    at_hi: np.ndarray,
) -> Optional[tuple]:
    """Newton on the equality-constrained program of one face; (x, mu) or None."""
    free = ~(at_lo | at_hi)
    n_free = int(np.count_nonzero(free))
    if n_free == 0:
        cand = np.where(at_hi, 1.0, 0.0)
        return cand, np.zeros(len(rows))
    a_sub = a[rows][:, free] if rows else np.zeros((0, n_free))
    rhs = b[rows] - a[rows][:, at_hi].sum(axis=1) if rows else np.zeros(0)
    n_rows = len(rows)
    xf = x[free].copy()
    mu = np.zeros(n_rows)
    for _ in range(60):
        g = (snr[free] / _LN2) / (1.0 + snr[free] * xf) / tau
        res_stat = g - (a_sub.T @ mu if n_rows else 0.0)
        res_feas = a_sub @ xf - rhs if n_rows else np.zeros(0)
        resid = max(
            float(np.max(np.abs(res_stat), initial=0.0)),
            float(np.max(np.abs(res_feas), initial=0.0)),
        )
        if resid < 1e-13:
            cand = np.where(at_hi, 1.0, 0.0)
            cand[free] = xf
            return cand, mu
        h = -(snr[free] ** 2 / _LN2) / (1.0 + snr[free] * xf) ** 2 / tau
        if n_rows:
            jac = np.block([
                [np.diag(h), -a_sub.T],
                [a_sub, np.zeros((n_rows, n_rows))],
            ])
            full_res = np.concatenate([res_stat, res_feas])
        else:
            jac = np.diag(h)
            full_res = res_stat
        try:
            delta = np.linalg.solve(jac, -full_res)
        except np.linalg.LinAlgError:
            return None
        xf = xf + delta[:n_free]
        if n_rows:
            mu = mu + delta[n_free:]
        # divergence guard only: a face optimum may lie well outside the box
        # (the caller pins such coordinates and re-solves)
        if not np.all(np.isfinite(xf)) or np.any(np.abs(xf) > 10.0):
            return None
    return None


def _face_candidate(
    x: np.ndarray,
    snr: np.ndarray,
    tau: int,
    a: np.ndarray,
    b: np.ndarray,
    rows: list,
    at_lo: np.ndarray,
    at_hi: np.ndarray,
) -> Optional[np.ndarray]:
    """Solve one face, dropping negative-multiplier rows and pinning coords
    that drift past their bounds, until the candidate is clean or hopeless."""
    cand = None
    for _round in range(4):
        for _ in range(3):
            solved = _solve_face(x, snr, tau, a, b, rows, at_lo, at_hi)
            if solved is None:
                return None
            cand, mu = solved
            negative = [rows[i] for i in range(len(rows)) if mu[i] < -1e-10]
            if not negative:
                break
            rows = [r for r in rows if r not in negative]
        else:
            return None
        # A coordinate drifting past its bound usually means that bound is
        # active at the optimum; pin it and re-solve the face.
        outside_hi = cand > 1.0 + 1e-10
        outside_lo = cand < -1e-10
        if not (np.any(outside_hi) or np.any(outside_lo)):
            break
        at_hi = at_hi | outside_hi
        at_lo = at_lo | outside_lo
    if cand is None or np.any(cand < -1e-10) or np.any(cand > 1.0 + 1e-10):
        return None
    cand = np.clip(cand, 0.0, 1.0)
    if a.shape[0] and float(np.max(a @ cand - b, initial=0.0)) > 1e-10:
        return None
    return cand


def _face_newton(
    x: np.ndarray,
    snr: np.ndarray,
    tau: int,
    a: np.ndarray,
    b: np.ndarray,
) -> Optional[np.ndarray]:
    """Exact-optimum candidate from the face identified at x.

    The active face is guessed from the support of a nonnegative
    least-squares fit of the gradient on the near-active row normals, which
    survives the degenerate near-parallel-row geometry where slack ordering
    picks the wrong subset; that subset is the greedy fallback.  Used purely
    as a termination accelerator: callers must certify any candidate before
    accepting it.
    """
    slack = b - a @ x if a.shape[0] else np.zeros(0)
    at_lo = x <= 1e-7
    at_hi = x >= 1.0 - 1e-7
    free = ~(at_lo | at_hi)
    g = (snr / _LN2) / (1.0 + snr * x) / tau
    for act_tol in (1e-3, 1e-5):
        near = np.nonzero(slack <= act_tol)[0]
        if near.size:
            w = _nnls(a[near].T, g)
            support = [int(r) for r in near[w > 1e-9]]
        else:
            support = []
        cand = _face_candidate(x, snr, tau, a, b, support, at_lo.copy(), at_hi.copy())
        if cand is not None:
            return cand
    near = np.nonzero(slack <= 1e-5)[0]
    order = near[np.argsort(slack[near], kind="stable")]
    rows = _independent_rows(a, order, cap=int(np.count_nonzero(free)))
    return _face_candidate(x, snr, tau, a, b, rows, at_lo.copy(), at_hi.copy())


def _feasibility_polish(powers: np.ndarray, a: np.ndarray, b: np.ndarray, lo: float, hi: float):
    """Scale the solution into exact feasibility (rows are nonnegative in P)."""
    p = np.clip(powers, lo, hi)
    if a.shape[0] == 0:
        return p
    values = a @ p
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(values > b, b / values, 1.0)
    rho = float(np.min(ratios, initial=1.0))
    return p * min(1.0, rho)


@dataclass(frozen=True)
class PowerControlProblem:
    """Open-loop sum-rate maximization under a windowed interference cap."""

    horizon: int
    p_max: float
    bandwidth: float
    noise_density: float
    window: int
    beta: float
    past_lu_gains: np.ndarray
    uu_forecast: np.ndarray

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if min(self.p_max, self.bandwidth, self.noise_density) <= 0:
            raise ValueError("physical quantities must be positive")
        if not 1 <= self.window <= self.horizon - 1:
            raise ValueError(f"window must lie in [1, {self.horizon - 1}]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        past = as_trajectory(self.past_lu_gains, "past_lu_gains")
        forecast = as_trajectory(self.uu_forecast, "uu_forecast")
        if forecast.size != self.horizon:
            raise ValueError("uu_forecast must have one entry per slot")
        if past.size < self.window:
            raise ValueError("past must span at least one window")
        object.__setattr__(self, "past_lu_gains", past)
        object.__setattr__(self, "uu_forecast", forecast)


@dataclass(frozen=True, eq=False)
class ControlSolution:
    """Solver output: powers, objective, slacks, and audit diagnostics."""

    powers: np.ndarray
    objective: float
    sum_rate: float
    feasible: bool
    slacks: np.ndarray
    iterations: int
    kkt_residual: float

    @property
    def slack_min(self) -> float:
        return float(np.min(self.slacks)) if self.slacks.size else math.inf


def _mean_log2_rate(powers: np.ndarray, snr_per_watt: np.ndarray) -> float:
    return float(np.mean(np.log2(1.0 + snr_per_watt * powers)))


def solve_open_loop_power(
    problem: PowerControlProblem,
    cal_spec: CalibratedPredictorSpec,
    rng: np.random.Generator,
    kkt_tol: float = 1e-8,
    max_iter: int = 100000,
) -> ControlSolution:
    """Projected gradient ascent on the concave sum-rate over the robust family.

    The calibrated predictor must carry the min-distance loss under the
    max-window-average-L1 metric at the problem's window, so the Lipschitz
    margin argument applies.  On infeasibility the fallback is to transmit
    nothing.
    """
    if cal_spec.loss_spec.kind != MIN_DISTANCE:
        raise ValueError("power control needs a min-distance-calibrated predictor")
    if (
        cal_spec.distance.kind != MAX_WINDOW_AVG_L1
        or cal_spec.distance.window != problem.window
    ):
        raise ValueError("predictor metric must be max_window_avg_l1 at the problem window")
    pred = make_test_predictor(cal_spec, problem.past_lu_gains, rng)
    gamma = interference_threshold(
        problem.past_lu_gains, problem.p_max, problem.window, problem.beta
    )
    margin = lipschitz_interference(problem.p_max) * cal_spec.alpha
    snr_per_watt = problem.uu_forecast / (problem.bandwidth * problem.noise_density)
    try:
        cons = robust_interference_constraints(pred, gamma, margin)
    except InfeasibleProblem:
        zeros = np.zeros(problem.horizon)
        return ControlSolution(
            powers=zeros,
            objective=0.0,
            sum_rate=0.0,
            feasible=False,
            slacks=np.array([]),
            iterations=0,
            kkt_residual=0.0,
        )
    tau = problem.horizon
    # Work in x = P / p_max with unit-norm constraint rows so every tolerance
    # is relative to the box scale.
    a_scaled = cons.a * problem.p_max
    norms = np.sqrt(np.einsum("ij,ij->i", a_scaled, a_scaled))
    keep = norms > 0
    a_unit = a_scaled[keep] / norms[keep, None]
    b_unit = cons.b[keep] / norms[keep]
    # Duplicate prototypes produce duplicate rows, and rows slack at the box
    # corner (all coefficients are nonnegative) can never bind; both stall the
    # projection without changing the feasible set.
    stacked = np.unique(np.column_stack([a_unit, b_unit]), axis=0)
    a_unit, b_unit = stacked[:, :-1], stacked[:, -1]
    can_bind = a_unit.sum(axis=1) > b_unit
    a_unit, b_unit = a_unit[can_bind], b_unit[can_bind]
    snr = snr_per_watt * problem.p_max

    def grad(x: np.ndarray) -> np.ndarray:
        return (snr / _LN2) / (1.0 + snr * x) / tau

    grad_lipschitz = float(np.max(snr) ** 2 / (_LN2 * tau))
    step = 1.0 / grad_lipschitz if grad_lipschitz > 0 else 1.0
    # Scaling the box corner onto the feasible set gives an interior start
    # without an (expensive) exact projection.
    if a_unit.shape[0]:
        corner = a_unit @ np.ones(tau)
        with np.errstate(divide="ignore"):
            rho = float(np.min(np.where(corner > 0, b_unit / corner, np.inf)))
        x = np.clip(min(1.0, rho), 0.0, 1.0) * np.ones(tau)
    else:
        x = np.ones(tau)
    z = x.copy()
    momentum = 1.0
    kkt = math.inf
    iterations = 0
    # Accelerated projected ascent with gradient-mapping restarts; the loop
    # KKT measure is the prox-gradient mapping norm.  Once the iterate
    # settles, a Newton solve on the identified face proposes the exact
    # optimum; candidates (and the iterate itself) are accepted only when the
    # full KKT certificate holds, which is sufficient by concavity.  Early
    # iterations use budgeted (inexact) projections; the pure prox-gradient
    # exit only counts when taken with a tight projection.
    tight = False
    for iterations in range(1, max_iter + 1):
        if tight:
            x_new = _project_box_polyhedron(z + step * grad(z), a_unit, b_unit, 0.0, 1.0)
        else:
            x_new = _project_box_polyhedron(
                z + step * grad(z), a_unit, b_unit, 0.0, 1.0, tol=1e-9, max_sweeps=200
            )
        kkt = float(np.max(np.abs(x_new - z))) / step
        if kkt < kkt_tol and tight:
            x = x_new
            break
        tight = kkt < 100.0 * kkt_tol
        cert = _optimality_certificate(x_new, snr, tau, a_unit, b_unit)
        if cert is not None:
            x = x_new
            kkt = cert
            break
        if iterations >= 2:
            cand = _face_newton(x_new, snr, tau, a_unit, b_unit)
            if cand is not None:
                cert = _optimality_certificate(cand, snr, tau, a_unit, b_unit)
                if cert is not None:
                    x = cand
                    kkt = cert
                    break
        if float(np.dot(z - x_new, x_new - x)) > 0.0:
            momentum = 1.0
            z = x_new
        else:
            momentum_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
            z = x_new + ((momentum - 1.0) / momentum_new) * (x_new - x)
            momentum = momentum_new
        x = x_new
    x = _feasibility_polish(x, a_unit, b_unit, 0.0, 1.0)
    powers = x * problem.p_max
    objective = _mean_log2_rate(powers, snr_per_watt)
    return ControlSolution(
        powers=powers,
        objective=objective,
        sum_rate=problem.bandwidth * objective,
        feasible=True,
        slacks=cons.slacks(powers),
        iterations=iterations,
        kkt_residual=kkt,
    )


def achieved_rate(gains, powers, bandwidth: float, noise_density: float) -> float:
    """Aggregate decodable rate sum_t log2(1 + P_t g_t / (B N0)), in bits/s/Hz."""
    g = as_trajectory(gains, "gains")
    p = np.asarray(powers, dtype=float)
    if g.size != p.size:
        raise ValueError("gains and powers must have equal length")
    return float(np.sum(np.log2(1.0 + p * g / (bandwidth * noise_density))))


def harq_target_rate(
    past_gains, beta: float, p_max: float, bandwidth: float, noise_density: float, horizon: int
) -> float:
    """Message rate: what the last ``horizon`` past slots carried at power beta * p_max."""
    past = as_trajectory(past_gains, "past_gains")
    if past.size < horizon:
        raise ValueError(f"past must span at least {horizon} slots")
    tail = past[-horizon:]
    return float(np.sum(np.log2(1.0 + beta * p_max * tail / (bandwidth * noise_density))))


def solve_harq_step(
    residual_rate: float,
    pred: BallUnionPredictor,
    margin: float,
    p_max: float,
    bandwidth: float,
    noise_density: float,
) -> Optional[np.ndarray]:
    """Minimum-power allocation decoding the residual rate against the set.

    The average-L1 ball around each prototype is relaxed to its outer box,
    whose lower corner is (ghat_t - horizon * radius)+; the binding envelope
    is the pointwise minimum over prototypes.  Because both the metric and the
    calibrated loss are per-slot averages, the Lipschitz margin enters the
    aggregate-rate constraint scaled by the remaining horizon.  Solved by
    inverse water-filling with a bisected water level; returns None when the
    target is unreachable even at full power (the no-transmit decision).
    """
    if pred.distance.kind != AVG_L1:
        raise ValueError("the retransmission policy needs the avg_l1 distance")
    horizon = pred.horizon
    target = residual_rate + margin * horizon
    if target <= 0:
        return np.zeros(horizon)
    g_low = np.min(
        np.maximum(pred.prototypes.trajectories - horizon * pred.radius, 0.0), axis=0
    )
    active = g_low > 0
    if not np.any(active):
        return None
    snr_per_watt = np.zeros(horizon)
    snr_per_watt[active] = g_low[active] / (bandwidth * noise_density)

    def powers_at(level: float) -> np.ndarray:
        p = np.zeros(horizon)
        p[active] = np.clip(level - 1.0 / snr_per_watt[active], 0.0, p_max)
        return p

    def rate_at(p: np.ndarray) -> float:
        return float(np.sum(np.log2(1.0 + p * snr_per_watt)))

    level_hi = p_max + 1.0 / float(np.min(snr_per_watt[active]))
    p_hi = powers_at(level_hi)
    if rate_at(p_hi) < target:
        return None
    lo, hi = 0.0, level_hi
    rate_hi = rate_at(p_hi)
    for _ in range(200):
        if rate_hi - target <= 1e-10:
            break
        mid = 0.5 * (lo + hi)
        p_mid = powers_at(mid)
        if rate_at(p_mid) >= target:
            hi = mid
            rate_hi = rate_at(p_mid)
        else:
            lo = mid
    return powers_at(hi)


@dataclass(frozen=True)
class HarqProblem:
    """Closed-loop retransmission setup: horizon, power cap, physics, rate knob."""

    horizon: int
    p_max: float
    bandwidth: float
    noise_density: float
    beta: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.p_max, self.bandwidth, self.noise_density) <= 0:
            raise ValueError("physical quantities must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class HarqEpisode:
    """Per-episode outcome of the closed-loop retransmission policy."""

    decoded: bool
    delay: int
    target_rate: float
    accumulated_rate: float
    energy: float
    powers: tuple
    throughput: float
    energy_per_bit: float


def run_closed_loop_harq(
    env: Callable[[np.random.Generator], "SeriesSample"],
    problem: HarqProblem,
    cal_spec: CalibratedPredictorSpec,
    seed: int,
    episode_index: int = 0,
) -> HarqEpisode:
    """One receding-horizon episode: re-predict, re-solve, transmit, observe.

    Each slot re-forms the predictor on everything observed so far (fresh
    prototypes over the remaining horizon, calibrated radius reused), solves
    the minimum-energy step, applies only the first power, then folds the
    realized gain into the accumulated decodable rate.  Decoding succeeds once
    the accumulated rate reaches the target; a slot with no feasible action
    transmits nothing but still elapses.
    """
    if cal_spec.distance.kind != AVG_L1 or cal_spec.loss_spec.kind != MIN_DISTANCE:
        raise ValueError("HARQ control needs a min-distance avg_l1 calibrated predictor")
    rng_env = stream(seed, STAGE_EPISODE, episode_index)
    rng_proto = stream(seed, STAGE_TEST, episode_index)
    sample = env(rng_env)
    tau = problem.horizon
    if sample.future.size < tau:
        raise ValueError("environment horizon shorter than the problem horizon")
    b_n0 = problem.bandwidth * problem.noise_density
    target = harq_target_rate(
        sample.past, problem.beta, problem.p_max, problem.bandwidth,
        problem.noise_density, tau,
    )
    margin = lipschitz_rate(problem.p_max, problem.bandwidth, problem.noise_density) * cal_spec.alpha
    observed = list(sample.past)
    accumulated = 0.0
    energy = 0.0
    slots = 0
    decoded = False
    powers: List[float] = []
    for t in range(tau):
        if target - accumulated <= 0:
            decoded = True
            break
        remaining = tau - t
        protos = draw_prototypes(
            cal_spec.model, np.asarray(observed), cal_spec.m, cal_spec.filter_spec,
            rng_proto, horizon=remaining,
        )
        pred = BallUnionPredictor(
            prototypes=protos, distance=cal_spec.distance, radius=cal_spec.radius
        )
        plan = solve_harq_step(
            target - accumulated, pred, margin, problem.p_max,
            problem.bandwidth, problem.noise_density,
        )
        p_t = 0.0 if plan is None else float(plan[0])
        g_t = float(sample.future[t])
        accumulated += math.log2(1.0 + p_t * g_t / b_n0)
        observed.append(g_t)
        energy += p_t
        slots += 1
        powers.append(p_t)
    if not decoded and target - accumulated <= 0:
        decoded = True
    delivered = target if decoded else 0.0
    throughput = delivered / max(slots, 1)
    if decoded and target > 0 and energy > 0:
        energy_per_bit = energy / (target * problem.bandwidth)
    elif decoded and energy == 0.0:
        energy_per_bit = 0.0
    else:
        energy_per_bit = math.inf
    return HarqEpisode(
        decoded=decoded,
        delay=slots,
        target_rate=target,
        accumulated_rate=accumulated,
        energy=energy,
        powers=tuple(powers),
        throughput=throughput,
        energy_per_bit=energy_per_bit,
    )


def simulate_harq_episodes(
    env,
    problem: HarqProblem,
    cal_spec: CalibratedPredictorSpec,
    n_episodes: int,
    seed: int,
) -> List[HarqEpisode]:
    """Independent episodes on documented per-episode streams."""
    return [
        run_closed_loop_harq(env, problem, cal_spec, seed, episode_index=i)
        for i in range(n_episodes)
    ]


def pick_alpha_for_delta(
    calibrate_fn: Callable[[float], CalibratedPredictorSpec],
    env,
    problem: HarqProblem,
    alpha_grid: Sequence[float],
    delta: float,
    n_episodes: int,
    seed: int,
):
    """Choose the risk level meeting a decode-probability target at least cost.

    There is no analytic mapping from the decode-probability target to the
    expected-distance level, and decoding probability is not monotone in the
    level (a smaller level inflates the ball radius and collapses the gain
    envelope; a larger one inflates the Lipschitz margin).  This sweeps the
    grid on held-out episodes and returns the level with the lowest mean
    energy among those whose empirical decoding probability reaches ``delta``
    (falling back to the highest decoding probability when none does).
    Returns (alpha, decode_probability).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    grid = sorted(float(a) for a in alpha_grid)
    meeting = []
    fallback = None
    for alpha in grid:
        spec = calibrate_fn(alpha)
        episodes = simulate_harq_episodes(env, problem, spec, n_episodes, seed)
        p_dec = sum(e.decoded for e in episodes) / n_episodes
        energy = sum(e.energy for e in episodes)
        if p_dec >= delta:
            meeting.append((energy, alpha, p_dec))
        if fallback is None or p_dec > fallback[0]:
            fallback = (p_dec, alpha)
    if meeting:
        _, alpha, p_dec = min(meeting)
        return alpha, p_dec
    assert fallback is not None
    return fallback[1], fallback[0]


@dataclass(frozen=True)
class PowerControlEpisode:
    """Per-episode outcome of the open-loop interference-constrained allocator."""

    feasible: bool
    objective: float
    realized_uu_rate: float
    interference: float
    threshold: float
    slack_min: float


def simulate_power_control(
    env,
    cal_spec: CalibratedPredictorSpec,
    horizon: int,
    p_max: float,
    bandwidth: float,
    noise_density: float,
    window: int,
    beta: float,
    n_episodes: int,
    seed: int,
    uu_forecast_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    first_episode: int = 0,
) -> List[PowerControlEpisode]:
    """Fresh LU/UU draws per episode; solve, then score against the true future.

    Episode i draws the licensed and unlicensed series from streams
    (seed, episode-stage, 2i) and (seed, episode-stage, 2i+1); prototypes use
    (seed, test-stage, i).  The default unlicensed forecast is last-value
    persistence (the objective side only; safety does not depend on it).
    ``first_episode`` shifts the episode indices so workers can split a batch.
    """
    if uu_forecast_fn is None:
        def uu_forecast_fn(past):
            return np.full(horizon, past[-1])

    episodes = []
    for i in range(first_episode, first_episode + n_episodes):
        lu = env(stream(seed, STAGE_EPISODE, 2 * i))
        uu = env(stream(seed, STAGE_EPISODE, 2 * i + 1))
        problem = PowerControlProblem(
            horizon=horizon,
            p_max=p_max,
            bandwidth=bandwidth,
            noise_density=noise_density,
            window=window,
            beta=beta,
            past_lu_gains=lu.past,
            uu_forecast=uu_forecast_fn(uu.past),
        )
        solution = solve_open_loop_power(problem, cal_spec, stream(seed, STAGE_TEST, i))
        gamma = interference_threshold(lu.past, p_max, window, beta)
        phi = max_k_window_interference(lu.future, solution.powers, window)
        realized = achieved_rate(uu.future, solution.powers, bandwidth, noise_density)
        episodes.append(
            PowerControlEpisode(
                feasible=solution.feasible,
                objective=solution.objective,
                realized_uu_rate=realized,
                interference=phi,
                threshold=gamma,
                slack_min=solution.slack_min,
            )
        )
    return episodes
