"""Scalar demand metrics and the per-run metrics table.

All vector arguments are per-slot demand in kW for one day unless noted;
comparisons are against a benchmark (price-oblivious) demand profile of the
same shape.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DEFAULT_EPSILON = 0.9

METRICS_HEADER = ["day", "pds_pct", "delta_max_kw", "load_factor",
                  "energy_kwh", "qv", "grid_cost", "mps_pct", "amps_pct",
                  "energy_reduction_pct", "variation_reduction_pct"]
SUMMARY_LABEL = "summary"


def _vec(d) -> np.ndarray:
    v = np.asarray(d, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("expected a non-empty demand vector")
    return v


def quadratic_variation(d) -> float:
    """Sum of squared consecutive differences (no wrap-around term)."""
    v = _vec(d)
    if v.size < 2:
        raise ValidationError("quadratic variation needs at least two slots")
    return float(np.sum(np.diff(v) ** 2))


def grid_cost(d, epsilon: float = DEFAULT_EPSILON) -> float:
    """Utility-side objective: epsilon * QV + (1 - epsilon) * ||d||^2."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must be in [0, 1], got {epsilon}")
    v = _vec(d)
    return epsilon * quadratic_variation(v) + (1.0 - epsilon) * float(v @ v)


def pds_percent(d, d0) -> float:
    """Daily peak shaving: percent reduction of the daily maximum."""
    v, v0 = _vec(d), _vec(d0)
    peak0 = float(v0.max())
    if peak0 <= 0:
        raise ValidationError("benchmark peak must be positive")
    return (peak0 - float(v.max())) / peak0 * 100.0


def mps_percent(days, days0) -> float:
    """Worst-case monthly peak shaving: reduction of the window maximum."""
    if len(days) != len(days0) or not days:
        raise ValidationError("need equal, non-empty day lists")
    peak0 = max(float(_vec(d).max()) for d in days0)
    peak = max(float(_vec(d).max()) for d in days)
    if peak0 <= 0:
        raise ValidationError("benchmark window peak must be positive")
    return (peak0 - peak) / peak0 * 100.0


def amps_percent(days, days0) -> float:
    """Aggregate daily peak shaving: summed peak reductions over summed
    benchmark peaks."""
    if len(days) != len(days0) or not days:
        raise ValidationError("need equal, non-empty day lists")
    peaks0 = np.array([float(_vec(d).max()) for d in days0])
    peaks = np.array([float(_vec(d).max()) for d in days])
    total0 = float(peaks0.sum())
    if total0 <= 0:
        raise ValidationError("benchmark peaks must sum to a positive value")
    return float((peaks0 - peaks).sum()) / total0 * 100.0


def max_hourly_variation(d) -> float:
    v = _vec(d)
    if v.size < 2:
        raise ValidationError("hourly variation needs at least two slots")
    return float(np.max(np.abs(np.diff(v))))


def load_factor(d) -> float:
    """Mean-to-peak ratio; 1 means perfectly flat demand."""
    v = _vec(d)
    peak = float(v.max())
    if peak <= 0:
        raise ValidationError("load factor needs a positive peak")
    return float(v.sum()) / (peak * v.size)


def energy_reduction_pct(d, d0) -> float:
    """Percent reduction of total energy; ~0 means shifting, not shedding."""
    v, v0 = _vec(d), _vec(d0)
    total0 = float(v0.sum())
    if total0 <= 0:
        raise ValidationError("benchmark energy must be positive")
    return (total0 - float(v.sum())) / total0 * 100.0


def variation_reduction_pct(days, days0) -> float:
    """Relative reduction of the summed daily max hour-to-hour swing.

    One number per window; this is the declared aggregation behind the
    "variation reduction" column of the result tables.
    """
    if len(days) != len(days0) or not days:
        raise ValidationError("need equal, non-empty day lists")
    total0 = sum(max_hourly_variation(d) for d in days0)
    total = sum(max_hourly_variation(d) for d in days)
    if total0 <= 0:
        raise ValidationError("benchmark variation must be positive")
    return (total0 - total) / total0 * 100.0


@dataclass
class DailyMetrics:
    pds_pct: float
    delta_max_kw: float
    load_factor: float
    energy_kwh: float
    qv: float
    grid_cost: float


def daily_metrics(d, d0, epsilon: float = DEFAULT_EPSILON,
                  slot_hours: float = 1.0) -> DailyMetrics:
    v = _vec(d)
    return DailyMetrics(
        pds_pct=pds_percent(v, d0),
        delta_max_kw=max_hourly_variation(v),
        load_factor=load_factor(v),
        energy_kwh=float(v.sum()) * slot_hours,
        qv=quadratic_variation(v),
        grid_cost=grid_cost(v, epsilon))


def window_summary(days, days0, epsilon: float = DEFAULT_EPSILON,
                   slot_hours: float = 1.0) -> dict:
    """Aggregate one evaluation window: ratio metrics averaged, extensive
    metrics summed, plus the window-level comparisons."""
    per_day = [daily_metrics(d, d0, epsilon, slot_hours)
               for d, d0 in zip(days, days0)]
    return {
        "pds_pct": float(np.mean([m.pds_pct for m in per_day])),
        "delta_max_kw": float(np.mean([m.delta_max_kw for m in per_day])),
        "load_factor": float(np.mean([m.load_factor for m in per_day])),
        "energy_kwh": float(np.sum([m.energy_kwh for m in per_day])),
        "qv": float(np.sum([m.qv for m in per_day])),
        "grid_cost": float(np.sum([m.grid_cost for m in per_day])),
        "mps_pct": mps_percent(days, days0),
        "amps_pct": amps_percent(days, days0),
        "energy_reduction_pct": energy_reduction_pct(
            np.concatenate([_vec(d) for d in days]),
            np.concatenate([_vec(d) for d in days0])),
        "variation_reduction_pct": variation_reduction_pct(days, days0),
    }


def write_metrics_csv(path, days, days0, epsilon: float = DEFAULT_EPSILON,
                      slot_hours: float = 1.0) -> None:
    """One row per day plus one summary row; floats kept at full precision
    so the verifier can match recomputation exactly."""
    fmt = lambda x: f"{x:.17g}"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for i, (d, d0) in enumerate(zip(days, days0)):
            m = daily_metrics(d, d0, epsilon, slot_hours)
            w.writerow([i, fmt(m.pds_pct), fmt(m.delta_max_kw),
                        fmt(m.load_factor), fmt(m.energy_kwh), fmt(m.qv),
                        fmt(m.grid_cost), "", "", "", ""])
        s = window_summary(days, days0, epsilon, slot_hours)
        w.writerow([SUMMARY_LABEL] + [fmt(s[k]) for k in METRICS_HEADER[1:]])


def read_metrics_csv(path):
    """Returns (daily rows, summary dict); inverse of write_metrics_csv."""
    daily = []
    summary = None
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != METRICS_HEADER:
        raise ValidationError(f"{path}: unexpected metrics header")
    for row in rows[1:]:
        if row[0] == SUMMARY_LABEL:
            summary = {k: float(v) for k, v in zip(METRICS_HEADER[1:], row[1:])}
        else:
            daily.append({"day": int(row[0]),
                          **{k: float(v) for k, v in
                             zip(METRICS_HEADER[1:7], row[1:7])}})
    if summary is None:
        raise ValidationError(f"{path}: summary row missing")
    return daily, summary
