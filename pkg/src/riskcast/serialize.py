"""File formats: series CSV, calibration-artifact JSON, and canonical hashing.

A series row is ``p0..p{T-1}, f0..f{tau-1}`` (past then future).  Floats print
with 17 significant digits so every artifact round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .calibrate import CalibratedPredictorSpec, LossSpec
from .core import DistanceSpec, Domain, SeriesSample
from .models import FilterSpec, Forecaster

__all__ = [
    "canonical_json",
    "config_hash",
    "fmt",
    "load_series_csv",
    "spec_from_dict",
    "spec_to_dict",
    "write_series_csv",
]


def fmt(value: float) -> str:
    """Round-trip-safe float formatting."""
    return format(float(value), ".17g")


def write_series_csv(path, samples: Sequence[SeriesSample]) -> None:
    if not samples:
        raise ValueError("nothing to write")
    past_len = samples[0].past.size
    horizon = samples[0].future.size
    header = [f"p{i}" for i in range(past_len)] + [f"f{i}" for i in range(horizon)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in samples:
            if s.past.size != past_len or s.future.size != horizon:
                raise ValueError("all series in one file must share (past, future) lengths")
            writer.writerow([fmt(v) for v in s.past] + [fmt(v) for v in s.future])


def load_series_csv(path) -> List[SeriesSample]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        past_len = sum(1 for c in header if c.startswith("p"))
        horizon = len(header) - past_len
        if past_len < 1 or horizon < 1:
            raise ValueError(f"malformed series header in {path}")
        out = []
        for row in reader:
            values = np.array([float(v) for v in row])
            out.append(SeriesSample(past=values[:past_len], future=values[past_len:]))
    if not out:
        raise ValueError(f"no series rows in {path}")
    return out


def canonical_json(obj) -> str:
    """Deterministic serialization: sorted keys, fixed float formatting."""

    def normalize(o):
        if isinstance(o, dict):
            return {str(k): normalize(o[k]) for k in sorted(o, key=str)}
        if isinstance(o, (list, tuple)):
            return [normalize(v) for v in o]
        if isinstance(o, (np.floating, float)):
            return fmt(o)
        if isinstance(o, (np.integer, int, bool)) or o is None:
            return o
        if isinstance(o, np.ndarray):
            return [normalize(v) for v in o.tolist()]
        return str(o)

    return json.dumps(normalize(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _distance_to_dict(spec: DistanceSpec) -> dict:
    return {"kind": spec.kind, "weights": list(spec.weights), "window": spec.window}


def _distance_from_dict(d: dict) -> DistanceSpec:
    return DistanceSpec(kind=d["kind"], weights=tuple(d.get("weights", ())), window=int(d.get("window", 0)))


def _loss_to_dict(spec: LossSpec) -> dict:
    return {
        "kind": spec.kind,
        "bound": spec.bound,
        "metric": None if spec.metric is None else _distance_to_dict(spec.metric),
    }


def _loss_from_dict(d: dict) -> LossSpec:
    metric = d.get("metric")
    return LossSpec(
        kind=d["kind"],
        bound=float(d["bound"]),
        metric=None if metric is None else _distance_from_dict(metric),
    )


def _filter_to_dict(spec: FilterSpec) -> dict:
    return {"kind": spec.kind, "kappa": spec.kappa, "k": spec.k}


def _filter_from_dict(d: dict) -> FilterSpec:
    return FilterSpec(kind=d["kind"], kappa=float(d.get("kappa", 0.0)), k=int(d.get("k", 0)))


def spec_to_dict(spec: CalibratedPredictorSpec, model_config: Optional[dict] = None) -> dict:
    """JSON-ready view of a calibration artifact.

    The forecaster itself is referenced by its build config (when given) so a
    stored artifact can be rebuilt in a later run.
    """
    return {
        "schema": "riskcast.calibrated_predictor.v1",
        "model": model_config,
        "m": spec.m,
        "filter": _filter_to_dict(spec.filter_spec),
        "distance": _distance_to_dict(spec.distance),
        "loss": _loss_to_dict(spec.loss_spec),
        "alpha": spec.alpha,
        "radius": None if math.isinf(spec.radius) else spec.radius,
        "radius_infinite": bool(math.isinf(spec.radius)),
        "n_cal": spec.n_cal,
        "seed": spec.seed,
        "domain": [spec.domain.lo, spec.domain.hi],
        "use_mean": spec.use_mean,
    }


def spec_from_dict(data: dict, model: Forecaster) -> CalibratedPredictorSpec:
    radius = math.inf if data.get("radius_infinite") else float(data["radius"])
    return CalibratedPredictorSpec(
        model=model,
        m=int(data["m"]),
        filter_spec=_filter_from_dict(data["filter"]),
        distance=_distance_from_dict(data["distance"]),
        loss_spec=_loss_from_dict(data["loss"]),
        alpha=float(data["alpha"]),
        radius=radius,
        n_cal=int(data["n_cal"]),
        seed=int(data["seed"]),
        domain=Domain(*[float(v) for v in data["domain"]]),
        use_mean=bool(data.get("use_mean", False)),
    )


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
