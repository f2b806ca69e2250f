"""Config-driven experiment runner.

Subcommands: generate, calibrate, evaluate, mpc-power, mpc-harq,
reproduce-figure, summarize.  Every run writes its artifacts plus a manifest
(config hash, tool version, seed, stream identifiers, timestamps) into the
output directory.  All per-item work is keyed by (seed, stage, index), so a
``--workers`` fan-out returns byte-identical artifacts to a serial run.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import __version__
from .calibrate import (
    MIN_DISTANCE,
    CalibratedPredictorSpec,
    CalibrationInfeasible,
    LossSpec,
    evaluate,
    pts_crc_calibrate,
    ts_cp_calibrate,
)
from .core import DistanceSpec, Domain, SeriesSample
from .generators import (
    BlockageChannelConfig,
    Obstacle,
    RoundaboutConfig,
    default_blockage_channel,
    default_roundabout,
    gen_blockage_channel_series,
    gen_roundabout_series,
    roundabout_branch_templates,
)
from .models import FilterSpec, Forecaster, ForkingMixture, GaussianAR, KnnBootstrap, TabularMarkovChain
from .mpc import (
    HarqProblem,
    pick_alpha_for_delta,
    run_closed_loop_harq,
    simulate_power_control,
)
from .serialize import (
    canonical_json,
    config_hash,
    fmt,
    load_series_csv,
    spec_to_dict,
    write_series_csv,
)
from .streams import STAGE_CORPUS, STAGE_DATASET, STAGE_TEST, stream

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2


class ConfigError(Exception):
    """Config validation failure naming the offending field."""


def _require(cfg: dict, field: str, context: str):
    if field not in cfg:
        raise ConfigError(f"missing field {context}.{field}")
    return cfg[field]


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


# ----------------------------------------------------------------------
# builders


def build_env(env_cfg: dict):
    """Return (generator_fn, domain, resolved config dataclass)."""
    kind = _require(env_cfg, "kind", "env")
    if kind == "roundabout":
        base = default_roundabout()
        cfg = RoundaboutConfig(
            exit_probs=tuple(env_cfg.get("exit_probs", base.exit_probs)),
            exit_times=tuple(env_cfg.get("exit_times", base.exit_times)),
            exit_slopes=tuple(env_cfg.get("exit_slopes", base.exit_slopes)),
            angular_speed=float(env_cfg.get("angular_speed", base.angular_speed)),
            noise_std=float(env_cfg.get("noise_std", base.noise_std)),
            past_len=int(env_cfg.get("past_len", base.past_len)),
            horizon=int(env_cfg.get("horizon", base.horizon)),
            domain=Domain(*env_cfg.get("domain", [base.domain.lo, base.domain.hi])),
            start_angle=float(env_cfg.get("start_angle", base.start_angle)),
        )
        return (lambda rng: gen_roundabout_series(cfg, rng)), cfg.domain, cfg
    if kind == "blockage_channel":
        base = default_blockage_channel(
            p_block=float(env_cfg.get("p_block", 0.5)),
            noise_log_std=float(env_cfg.get("noise_log_std", 0.02)),
        )
        if "profiles" in env_cfg:
            obstacles = tuple(
                Obstacle(int(o["start"]), int(o["length"]), float(o["attenuation"]), float(o["p_block"]))
                for o in env_cfg.get("obstacles", [])
            )
            cfg = BlockageChannelConfig(
                profiles=tuple(tuple(p) for p in env_cfg["profiles"]),
                obstacles=obstacles,
                noise_log_std=float(env_cfg.get("noise_log_std", 0.02)),
                past_len=int(env_cfg.get("past_len", 30)),
                horizon=int(env_cfg.get("horizon", 6)),
                g_max=float(env_cfg.get("g_max", 4e-9)),
            )
        else:
            cfg = base
        return (lambda rng: gen_blockage_channel_series(cfg, rng)), cfg.domain, cfg
    raise ConfigError(f"unknown env.kind: {kind!r}")


def build_model(model_cfg: dict, env_cfg: dict, seed: int, base_dir: Path) -> Forecaster:
    kind = _require(model_cfg, "kind", "model")
    gen, domain, env = build_env(env_cfg)
    if kind == "matched_mixture":
        if not isinstance(env, RoundaboutConfig):
            raise ConfigError("model.kind matched_mixture requires env.kind roundabout")
        return ForkingMixture(
            templates=roundabout_branch_templates(env),
            probs=np.asarray(env.exit_probs, dtype=float),
            noise_std=float(model_cfg.get("noise_std", env.noise_std)),
            domain=domain,
        )
    if kind == "mixture":
        return ForkingMixture(
            templates=np.asarray(_require(model_cfg, "templates", "model"), dtype=float),
            probs=np.asarray(_require(model_cfg, "probs", "model"), dtype=float),
            noise_std=float(_require(model_cfg, "noise_std", "model")),
            domain=domain,
        )
    if kind == "gaussian_ar":
        return GaussianAR(
            coeffs=tuple(float(c) for c in _require(model_cfg, "coeffs", "model")),
            intercept=float(model_cfg.get("intercept", 0.0)),
            noise_std=float(_require(model_cfg, "noise_std", "model")),
            horizon=int(model_cfg.get("horizon", env.horizon)),
            domain=domain,
        )
    if kind == "knn":
        if "corpus_csv" in model_cfg:
            corpus = load_series_csv(base_dir / model_cfg["corpus_csv"])
        else:
            n = int(model_cfg.get("corpus_n", 400))
            corpus = [gen(stream(seed, STAGE_CORPUS, i)) for i in range(n)]
        return KnnBootstrap.from_corpus(corpus, k=int(_require(model_cfg, "k", "model")))
    if kind == "markov_chain":
        return TabularMarkovChain(
            alphabet=np.asarray(_require(model_cfg, "alphabet", "model"), dtype=float),
            transition=np.asarray(_require(model_cfg, "transition", "model"), dtype=float),
            horizon=int(model_cfg.get("horizon", env.horizon)),
        )
    raise ConfigError(f"unknown model.kind: {kind!r}")


def _distance_from_cfg(d: dict) -> DistanceSpec:
    kind = _require(d, "kind", "calibration.distance")
    if kind == "weighted_max":
        return DistanceSpec.weighted_max(d.get("weights", 1.0))
    if kind == "avg_l1":
        return DistanceSpec.avg_l1()
    if kind == "max_window_avg_l1":
        return DistanceSpec.max_window_avg_l1(int(_require(d, "window", "calibration.distance")))
    raise ConfigError(f"unknown distance kind: {kind!r}")


def _filter_from_cfg(d: Optional[dict]) -> FilterSpec:
    if not d or d.get("kind", "none") == "none":
        return FilterSpec.none()
    if d["kind"] == "sequence_level":
        return FilterSpec.sequence_level(float(_require(d, "kappa", "calibration.filter")))
    if d["kind"] == "top_k":
        return FilterSpec.top_k(int(_require(d, "k", "calibration.filter")))
    raise ConfigError(f"unknown filter kind: {d['kind']!r}")


def _loss_from_cfg(name: str, distance: DistanceSpec, domain: Domain) -> LossSpec:
    if name == "miscoverage":
        return LossSpec.miscoverage()
    if name == "per_sample_rate":
        return LossSpec.per_sample_rate()
    if name == "min_distance":
        return LossSpec.min_distance(distance, domain)
    raise ConfigError(f"unknown loss: {name!r}")


def calibrate_from_config(cfg: dict, seed: int, base_dir: Path) -> CalibratedPredictorSpec:
    env_cfg = _require(cfg, "env", "config")
    cal_cfg = _require(cfg, "calibration", "config")
    gen, domain, _ = build_env(env_cfg)
    model = build_model(_require(cfg, "model", "config"), env_cfg, seed, base_dir)
    n_cal = int(cal_cfg.get("n_cal", 1000))
    data = [gen(stream(seed, STAGE_DATASET, i)) for i in range(n_cal)]
    alpha = float(_require(cal_cfg, "alpha", "calibration"))
    method = cal_cfg.get("method", "pts_crc")
    if method == "ts_cp":
        weights = cal_cfg.get("distance", {}).get("weights", 1.0)
        return ts_cp_calibrate(model, data, alpha, weights, seed, domain)
    distance = _distance_from_cfg(_require(cal_cfg, "distance", "calibration"))
    loss_spec = _loss_from_cfg(cal_cfg.get("loss", "miscoverage"), distance, domain)
    return pts_crc_calibrate(
        model,
        data,
        alpha,
        int(cal_cfg.get("m", 8)),
        _filter_from_cfg(cal_cfg.get("filter")),
        distance,
        loss_spec,
        seed,
        domain,
    )


# ----------------------------------------------------------------------
# worker-spreadable chunks (top level so they pickle)


def _chunk_indices(n: int, workers: int) -> List[range]:
    size = math.ceil(n / max(workers, 1))
    return [range(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _run_chunked(task_fn: Callable, chunks: Sequence, workers: int) -> list:
    if workers <= 1 or len(chunks) <= 1:
        results = [task_fn(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task_fn, chunks))
    out = []
    for part in results:
        out.extend(part)
    out.sort(key=lambda pair: pair[0])
    return [row for _, row in out]


class _GenerateTask:
    def __init__(self, env_cfg: dict, seed: int):
        self.env_cfg = env_cfg
        self.seed = seed

    def __call__(self, indices) -> list:
        gen, _, _ = build_env(self.env_cfg)
        return [(i, gen(stream(self.seed, STAGE_DATASET, i))) for i in indices]


class _EvaluateTask:
    def __init__(self, spec: CalibratedPredictorSpec, samples: List[SeriesSample], seed: int):
        self.spec = spec
        self.samples = samples
        self.seed = seed

    def __call__(self, indices) -> list:
        from .calibrate import loss as loss_fn
        from .calibrate import make_test_predictor
        from .core import WEIGHTED_MAX, contains, predictor_inefficiency

        rows = []
        for i in indices:
            sample = self.samples[i]
            rng = stream(self.seed, STAGE_TEST, i)
            pred = make_test_predictor(self.spec, sample.past, rng)
            l_val = loss_fn(self.spec.loss_spec, pred, sample.future)
            cov = 1.0 if contains(pred, sample.future) else 0.0
            if self.spec.distance.kind == WEIGHTED_MAX:
                ineff = (
                    predictor_inefficiency(pred)
                    if math.isfinite(pred.radius)
                    else self.spec.domain.width
                )
            else:
                ineff = math.nan
            rows.append((i, (l_val, cov, ineff)))
        return rows


class _PowerTask:
    def __init__(self, env_cfg: dict, spec, params: dict, seed: int):
        self.env_cfg = env_cfg
        self.spec = spec
        self.params = params
        self.seed = seed

    def __call__(self, indices) -> list:
        gen, _, _ = build_env(self.env_cfg)
        rows = []
        for i in indices:
            eps = simulate_power_control(
                gen, self.spec, n_episodes=1, seed=self.seed,
                first_episode=i, **self.params,
            )
            rows.append((i, eps[0]))
        return rows


class _HarqTask:
    def __init__(self, env_cfg: dict, problem: HarqProblem, spec, seed: int):
        self.env_cfg = env_cfg
        self.problem = problem
        self.spec = spec
        self.seed = seed

    def __call__(self, indices) -> list:
        gen, _, _ = build_env(self.env_cfg)
        return [
            (i, run_closed_loop_harq(gen, self.problem, self.spec, self.seed, episode_index=i))
            for i in indices
        ]


# ----------------------------------------------------------------------
# manifest & csv helpers


def _write_manifest(out_dir: Path, config: dict, seed: int, started: float, stages: dict):
    manifest = {
        "schema": "riskcast.manifest.v1",
        "tool_version": __version__,
        "config_hash": config_hash(config),
        "seed": seed,
        "streams": stages,
        "config": json.loads(canonical_json(config)),
        "timestamps": {
            "started": datetime.datetime.fromtimestamp(started, datetime.timezone.utc).isoformat(),
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: List[str], rows: List[List]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ----------------------------------------------------------------------
# subcommands


def cmd_generate(cfg: dict, out_dir: Path, seed: int, workers: int) -> int:
    n = int(_require(_require(cfg, "generate", "config"), "n", "generate"))
    task = _GenerateTask(_require(cfg, "env", "config"), seed)
    samples = _run_chunked(task, _chunk_indices(n, workers), workers)
    write_series_csv(out_dir / "dataset.csv", samples)
    return EXIT_OK


def cmd_calibrate(cfg: dict, out_dir: Path, seed: int, base_dir: Path) -> int:
    spec = calibrate_from_config(cfg, seed, base_dir)
    payload = spec_to_dict(spec, model_config=cfg.get("model"))
    (out_dir / "calibration.json").write_text(canonical_json(payload) + "\n")
    return EXIT_OK


def cmd_evaluate(cfg: dict, out_dir: Path, seed: int, workers: int, base_dir: Path) -> int:
    spec = calibrate_from_config(cfg, seed, base_dir)
    payload = spec_to_dict(spec, model_config=cfg.get("model"))
    (out_dir / "calibration.json").write_text(canonical_json(payload) + "\n")
    gen, _, _ = build_env(_require(cfg, "env", "config"))
    n_test = int(cfg["calibration"].get("n_test", 1000))
    eval_seed = seed + 1
    test = [gen(stream(eval_seed, STAGE_DATASET, i)) for i in range(n_test)]
    task = _EvaluateTask(spec, test, eval_seed)
    per_item = _run_chunked(task, _chunk_indices(n_test, workers), workers)
    arr = np.asarray(per_item)
    z99 = 2.5758293035489004
    risk = float(np.mean(arr[:, 0]))
    cov = float(np.mean(arr[:, 1]))
    ineff_vals = arr[:, 2][~np.isnan(arr[:, 2])]
    rows = [[
        cfg["calibration"].get("method", "pts_crc"),
        fmt(spec.alpha),
        spec.m,
        fmt(spec.radius) if math.isfinite(spec.radius) else "inf",
        fmt(risk),
        fmt(float(z99 * np.std(arr[:, 0], ddof=1) / math.sqrt(n_test))),
        fmt(cov),
        fmt(float(np.mean(ineff_vals))) if ineff_vals.size else "nan",
        n_test,
    ]]
    _write_csv(
        out_dir / "report.csv",
        ["method", "alpha", "m", "radius", "risk", "risk_half_width", "coverage", "mean_inefficiency", "n_test"],
        rows,
    )
    return EXIT_OK


def cmd_mpc_power(cfg: dict, out_dir: Path, seed: int, workers: int, base_dir: Path) -> int:
    mpc_cfg = _require(cfg, "mpc", "config")
    spec = calibrate_from_config(cfg, seed, base_dir)
    if spec.loss_spec.kind != MIN_DISTANCE:
        raise ConfigError("mpc-power requires calibration.loss = min_distance")
    env_cfg = _require(cfg, "env", "config")
    _, _, env = build_env(env_cfg)
    params = dict(
        horizon=env.horizon,
        p_max=float(mpc_cfg.get("p_max", 1.0)),
        bandwidth=float(mpc_cfg.get("bandwidth", 120e3)),
        noise_density=float(mpc_cfg.get("noise_density", 1e-15)),
        window=int(_require(mpc_cfg, "window", "mpc")),
        beta=float(_require(mpc_cfg, "beta", "mpc")),
    )
    n_episodes = int(mpc_cfg.get("n_episodes", 200))
    task = _PowerTask(env_cfg, spec, params, seed)
    episodes = _run_chunked(task, _chunk_indices(n_episodes, workers), workers)
    rows = [
        [i, int(e.feasible), e.objective, e.realized_uu_rate, e.interference, e.threshold, e.slack_min]
        for i, e in enumerate(episodes)
    ]
    _write_csv(
        out_dir / "episodes.csv",
        ["episode", "feasible", "objective", "realized_uu_rate", "interference", "threshold", "slack_min"],
        rows,
    )
    return EXIT_OK


def cmd_mpc_harq(cfg: dict, out_dir: Path, seed: int, workers: int, base_dir: Path) -> int:
    mpc_cfg = _require(cfg, "mpc", "config")
    env_cfg = _require(cfg, "env", "config")
    _, domain, env = build_env(env_cfg)
    problem = HarqProblem(
        horizon=env.horizon,
        p_max=float(mpc_cfg.get("p_max", 1.0)),
        bandwidth=float(mpc_cfg.get("bandwidth", 120e3)),
        noise_density=float(mpc_cfg.get("noise_density", 1e-15)),
        beta=float(_require(mpc_cfg, "beta", "mpc")),
    )
    gen, _, _ = build_env(env_cfg)
    chosen_alpha = float(cfg["calibration"]["alpha"])
    sweep_info = None
    if "delta" in mpc_cfg:
        grid = [float(a) for a in _require(mpc_cfg, "alpha_grid", "mpc")]

        def cal_fn(alpha: float) -> CalibratedPredictorSpec:
            sub = dict(cfg)
            sub["calibration"] = dict(cfg["calibration"], alpha=alpha)
            return calibrate_from_config(sub, seed, base_dir)

        chosen_alpha, p_dec = pick_alpha_for_delta(
            cal_fn, gen, problem, grid,
            float(mpc_cfg["delta"]),
            int(mpc_cfg.get("sweep_episodes", 150)),
            seed + 101,
        )
        sweep_info = {"chosen_alpha": chosen_alpha, "sweep_decode_probability": p_dec}
    final_cfg = dict(cfg)
    final_cfg["calibration"] = dict(cfg["calibration"], alpha=chosen_alpha)
    spec = calibrate_from_config(final_cfg, seed, base_dir)
    n_episodes = int(mpc_cfg.get("n_episodes", 200))
    task = _HarqTask(env_cfg, problem, spec, seed)
    episodes = _run_chunked(task, _chunk_indices(n_episodes, workers), workers)
    rows = [
        [i, int(e.decoded), e.delay, e.target_rate, e.accumulated_rate, e.energy, e.throughput,
         (e.energy_per_bit if math.isfinite(e.energy_per_bit) else float("inf"))]
        for i, e in enumerate(episodes)
    ]
    _write_csv(
        out_dir / "episodes.csv",
        ["episode", "decoded", "delay", "target_rate", "accumulated_rate", "energy", "throughput", "energy_per_bit"],
        rows,
    )
    if sweep_info is not None:
        (out_dir / "sweep.json").write_text(canonical_json(sweep_info) + "\n")
    return EXIT_OK


def cmd_reproduce_figure(cfg: dict, out_dir: Path, seed: int, workers: int, base_dir: Path) -> int:
    fig_cfg = _require(cfg, "figure", "config")
    name = _require(fig_cfg, "name", "figure")
    if name == "fig5":
        return _figure_coverage_inefficiency(cfg, fig_cfg, out_dir, seed, base_dir)
    if name == "fig1c":
        return _figure_inefficiency_vs_m(cfg, fig_cfg, out_dir, seed, base_dir)
    if name == "fig8":
        return _figure_rate_cdf(cfg, fig_cfg, out_dir, seed, workers, base_dir)
    if name == "fig9":
        return _figure_harq_panels(cfg, fig_cfg, out_dir, seed, workers, base_dir)
    raise ConfigError(f"unknown figure name: {name!r}")


def _eval_method(cfg, method, alpha, m, seed, base_dir):
    sub = dict(cfg)
    sub["calibration"] = dict(cfg["calibration"], method=method, alpha=alpha, m=m)
    spec = calibrate_from_config(sub, seed, base_dir)
    gen, _, _ = build_env(cfg["env"])
    n_test = int(cfg["calibration"].get("n_test", 1000))
    test = [gen(stream(seed + 1, STAGE_DATASET, i)) for i in range(n_test)]
    return spec, evaluate(spec, test, seed=seed + 1)


def _figure_coverage_inefficiency(cfg, fig_cfg, out_dir, seed, base_dir) -> int:
    alphas = [float(a) for a in fig_cfg.get("alpha_grid", [0.05, 0.1, 0.15, 0.2, 0.25, 0.3])]
    m = int(fig_cfg.get("m", 16))
    rows = []
    for alpha in alphas:
        for method in ("ts_cp", "pts_crc"):
            _, rep = _eval_method(cfg, method, alpha, m, seed, base_dir)
            rows.append([method, alpha, 1.0 - alpha, rep.coverage, rep.coverage_half_width,
                         rep.mean_inefficiency, rep.n_test])
    _write_csv(out_dir / "fig5.csv",
               ["method", "alpha", "target_coverage", "coverage", "coverage_half_width",
                "mean_inefficiency", "n_test"], rows)
    return EXIT_OK


def _figure_inefficiency_vs_m(cfg, fig_cfg, out_dir, seed, base_dir) -> int:
    alpha = float(fig_cfg.get("alpha", 0.1))
    rows = []
    _, rep = _eval_method(cfg, "ts_cp", alpha, 1, seed, base_dir)
    rows.append(["ts_cp", 1, alpha, rep.coverage, rep.mean_inefficiency])
    for m in fig_cfg.get("m_grid", [1, 4, 16]):
        _, rep = _eval_method(cfg, "pts_crc", alpha, int(m), seed, base_dir)
        rows.append(["pts_crc", int(m), alpha, rep.coverage, rep.mean_inefficiency])
    _write_csv(out_dir / "fig1c.csv",
               ["method", "m", "alpha", "coverage", "mean_inefficiency"], rows)
    return EXIT_OK


def _figure_rate_cdf(cfg, fig_cfg, out_dir, seed, workers, base_dir) -> int:
    env_cfg = cfg["env"]
    mpc_cfg = cfg.get("mpc", {})
    rows = []
    for window in fig_cfg.get("window_grid", [1, 3]):
        for beta in fig_cfg.get("beta_grid", [0.25, 1.0]):
            for m in fig_cfg.get("m_grid", [1, 8]):
                sub = dict(cfg)
                sub["calibration"] = dict(
                    cfg["calibration"], m=int(m),
                    distance={"kind": "max_window_avg_l1", "window": int(window)},
                    loss="min_distance",
                )
                spec = calibrate_from_config(sub, seed, base_dir)
                params = dict(
                    horizon=build_env(env_cfg)[2].horizon,
                    p_max=float(mpc_cfg.get("p_max", 1.0)),
                    bandwidth=float(mpc_cfg.get("bandwidth", 120e3)),
                    noise_density=float(mpc_cfg.get("noise_density", 1e-15)),
                    window=int(window),
                    beta=float(beta),
                )
                n_episodes = int(fig_cfg.get("n_episodes", 200))
                task = _PowerTask(env_cfg, spec, params, seed)
                eps = _run_chunked(task, _chunk_indices(n_episodes, workers), workers)
                for pct in fig_cfg.get("percentiles", [10, 50, 90]):
                    rows.append([window, beta, int(m),
                                 pct, float(np.percentile([e.realized_uu_rate for e in eps], pct))])
    _write_csv(out_dir / "fig8.csv", ["window", "beta", "m", "percentile", "rate"], rows)
    return EXIT_OK


def _figure_harq_panels(cfg, fig_cfg, out_dir, seed, workers, base_dir) -> int:
    env_cfg = cfg["env"]
    mpc_cfg = cfg.get("mpc", {})
    gen, _, env = build_env(env_cfg)
    rows = []
    for beta in fig_cfg.get("beta_grid", [0.1, 0.25, 0.5]):
        problem = HarqProblem(
            horizon=env.horizon,
            p_max=float(mpc_cfg.get("p_max", 1.0)),
            bandwidth=float(mpc_cfg.get("bandwidth", 120e3)),
            noise_density=float(mpc_cfg.get("noise_density", 1e-15)),
            beta=float(beta),
        )
        for m in fig_cfg.get("m_grid", [1, 8]):
            sub = dict(cfg)
            sub["calibration"] = dict(cfg["calibration"], m=int(m))
            spec = calibrate_from_config(sub, seed, base_dir)
            n_episodes = int(fig_cfg.get("n_episodes", 200))
            task = _HarqTask(env_cfg, problem, spec, seed)
            eps = _run_chunked(task, _chunk_indices(n_episodes, workers), workers)
            decoded = [e for e in eps if e.decoded]
            total_bits = sum(e.target_rate for e in decoded) * problem.bandwidth
            total_energy = sum(e.energy for e in eps)
            rows.append([
                beta, int(m),
                float(np.mean([e.delay for e in eps])),
                len(decoded) / len(eps),
                float(np.mean([e.throughput for e in eps])),
                (total_bits / total_energy) if total_energy > 0 else float("inf"),
            ])
    _write_csv(out_dir / "fig9.csv",
               ["beta", "m", "mean_delay", "decode_probability", "mean_throughput", "bits_per_joule"],
               rows)
    return EXIT_OK


def cmd_summarize(artifact_dir: Path, out_dir: Path) -> int:
    files = sorted(artifact_dir.glob("*.csv"))
    if not files:
        raise ConfigError(f"no CSV artifacts in {artifact_dir}")
    z99 = 2.5758293035489004
    rows = []
    for f in files:
        with open(f, newline="") as fh:
            header = fh.readline().strip().split(",")
            data = [line.strip().split(",") for line in fh if line.strip()]
        if not data:
            continue
        for col, name in enumerate(header):
            try:
                values = np.array([float(r[col]) for r in data])
            except ValueError:
                continue
            if not np.all(np.isfinite(values)):
                continue
            half = z99 * np.std(values, ddof=1) / math.sqrt(values.size) if values.size > 1 else 0.0
            rows.append([
                f.name, name, values.size, float(np.mean(values)), float(half),
                float(np.percentile(values, 10)), float(np.percentile(values, 50)),
                float(np.percentile(values, 90)),
            ])
    _write_csv(out_dir / "summary.csv",
               ["file", "column", "n", "mean", "ci99_half_width", "p10", "p50", "p90"], rows)
    return EXIT_OK


# ----------------------------------------------------------------------
# entry point


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="riskcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    names = ["generate", "calibrate", "evaluate", "mpc-power", "mpc-harq", "reproduce-figure"]
    for name in names:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("summarize")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        if args.command == "summarize":
            out_dir = Path(args.out or os.environ.get("RISKCAST_OUT", "."))
            out_dir.mkdir(parents=True, exist_ok=True)
            return cmd_summarize(Path(args.artifacts), out_dir)
        cfg = load_config(args.config)
        base_dir = Path(args.config).resolve().parent
        seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        out_dir = Path(args.out or cfg.get("out_dir") or os.environ.get("RISKCAST_OUT", "runs/latest"))
        out_dir.mkdir(parents=True, exist_ok=True)
        started = time.time()
        stages = {
            "dataset": "stream(seed, 1, item)",
            "calibration": "stream(seed, 2, item)",
            "test": "stream(seed, 3, item)",
            "episode": "stream(seed, 4, episode)",
            "corpus": "stream(seed, 5, item)",
        }
        if args.command == "generate":
            code = cmd_generate(cfg, out_dir, seed, args.workers)
        elif args.command == "calibrate":
            code = cmd_calibrate(cfg, out_dir, seed, base_dir)
        elif args.command == "evaluate":
            code = cmd_evaluate(cfg, out_dir, seed, args.workers, base_dir)
        elif args.command == "mpc-power":
            code = cmd_mpc_power(cfg, out_dir, seed, args.workers, base_dir)
        elif args.command == "mpc-harq":
            code = cmd_mpc_harq(cfg, out_dir, seed, args.workers, base_dir)
        else:
            code = cmd_reproduce_figure(cfg, out_dir, seed, args.workers, base_dir)
        _write_manifest(out_dir, cfg, seed, started, stages)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    raise SystemExit(main())
