"""Device models: thermal HVAC, shiftable load, battery, rooftop PV.

Sign convention: consumption positive, generation negative.  PV power is
therefore always <= 0 and a discharging battery goes negative.

Every model is affine in its power schedule, so device costs are convex
quadratics and the household problem stays a QP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# absolute slack for power / temperature / state-of-charge checks
FEAS_TOL = 1e-6

HVAC = "hvac"
FLEX = "flexible_load"
BATTERY = "battery"
PV = "pv"


def _as_vec(x, horizon: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(horizon, float(arr))
    if arr.shape != (horizon,):
        raise ValidationError(f"{name}: expected length {horizon}, got shape {arr.shape}")
    return arr


@dataclass
class HvacSpec:
    """Thermostatically controlled unit with first-order thermal memory.

    zeta1 is the per-slot leakage toward outdoors, zeta2 the injection gain
    (shared by weather and power terms).  mode_sign -1 means power cools the
    room, +1 means it heats.
    """

    p_max: np.ndarray
    t_prefer: np.ndarray
    t_lower: np.ndarray
    t_upper: np.ndarray
    zeta1: float = 0.9
    zeta2: float = 1.0
    gamma: float = 1.0
    mode_sign: int = -1

    kind = HVAC

    def __post_init__(self):
        h = np.asarray(self.p_max).size
        self.p_max = _as_vec(self.p_max, h, "p_max")
        self.t_prefer = _as_vec(self.t_prefer, h, "t_prefer")
        self.t_lower = _as_vec(self.t_lower, h, "t_lower")
        self.t_upper = _as_vec(self.t_upper, h, "t_upper")
        if np.any(self.p_max < 0):
            raise ValidationError("p_max must be >= 0")
        if not (0.0 < self.zeta1 <= 1.0):
            raise ValidationError(f"zeta1 must lie in (0, 1], got {self.zeta1}")
        if self.zeta2 <= 0.0:
            raise ValidationError(f"zeta2 must be > 0, got {self.zeta2}")
        if self.gamma < 0.0:
            raise ValidationError("gamma must be >= 0")
        if self.mode_sign not in (-1, 1):
            raise ValidationError(f"mode_sign must be -1 or +1, got {self.mode_sign}")
        if np.any(self.t_lower > self.t_prefer) or np.any(self.t_prefer > self.t_upper):
            raise ValidationError("need t_lower <= t_prefer <= t_upper elementwise")

    @property
    def horizon(self) -> int:
        return self.p_max.size


@dataclass
class FlexLoadSpec:
    """Shiftable load: hourly band around a preferred profile plus a fixed
    total-energy requirement."""

    p_prefer: np.ndarray
    p_lower: np.ndarray
    p_upper: np.ndarray
    total_energy: float
    gamma: float = 1.0

    kind = FLEX

    def __post_init__(self):
        h = np.asarray(self.p_prefer).size
        self.p_prefer = _as_vec(self.p_prefer, h, "p_prefer")
        self.p_lower = _as_vec(self.p_lower, h, "p_lower")
        self.p_upper = _as_vec(self.p_upper, h, "p_upper")
        if np.any(self.p_lower > self.p_prefer) or np.any(self.p_prefer > self.p_upper):
            raise ValidationError("need p_lower <= p_prefer <= p_upper elementwise")
        if self.gamma < 0.0:
            raise ValidationError("gamma must be >= 0")

    @property
    def horizon(self) -> int:
        return self.p_prefer.size


def flex_spec_from_profile(p_prefer, band_fraction=0.2, peak_band_fraction=0.1,
                           peak_slots=(), slot_hours=1.0, gamma=1.0) -> FlexLoadSpec:
    """Build a FlexLoadSpec whose energy target matches the preferred profile.

    The band is a fraction of the preferred level at each slot, tightened
    during the listed peak slots.
    """
    p_prefer = np.asarray(p_prefer, dtype=float)
    frac = np.full(p_prefer.size, float(band_fraction))
    for t in peak_slots:
        frac[t] = peak_band_fraction
    return FlexLoadSpec(
        p_prefer=p_prefer,
        p_lower=p_prefer * (1.0 - frac),
        p_upper=p_prefer * (1.0 + frac),
        total_energy=float(np.sum(p_prefer) * slot_hours),
        gamma=gamma,
    )


@dataclass
class BatterySpec:
    """Stationary storage tracked by state of charge as a capacity fraction.

    Round-trip efficiency is unity; p_discharge_max is a magnitude (the
    power lower bound is its negation).
    """

    p_charge_max: float
    p_discharge_max: float
    capacity_kwh: float
    soc_init: float
    soc_prefer: np.ndarray
    soc_lower: float = 0.2
    soc_upper: float = 0.8
    gamma: float = 1.0

    kind = BATTERY

    def __post_init__(self):
        h = np.asarray(self.soc_prefer).size
        self.soc_prefer = _as_vec(self.soc_prefer, h, "soc_prefer")
        if self.p_charge_max < 0 or self.p_discharge_max < 0:
            raise ValidationError("power limits must be >= 0")
        if self.capacity_kwh <= 0:
            raise ValidationError("capacity_kwh must be > 0")
        if not (0.0 <= self.soc_lower <= self.soc_upper <= 1.0):
            raise ValidationError("need 0 <= soc_lower <= soc_upper <= 1")
        if np.any(self.soc_prefer < self.soc_lower - 1e-12) or \
                np.any(self.soc_prefer > self.soc_upper + 1e-12):
            raise ValidationError("soc_prefer must lie inside [soc_lower, soc_upper]")
        if not (self.soc_lower - 1e-12 <= self.soc_init <= self.soc_upper + 1e-12):
            raise ValidationError("soc_init must lie inside [soc_lower, soc_upper]")
        if self.gamma < 0.0:
            raise ValidationError("gamma must be >= 0")

    @property
    def horizon(self) -> int:
        return self.soc_prefer.size


@dataclass
class PvSpec:
    """Rooftop PV with curtailment: power between full availability and zero."""

    panel_rating_kw: float
    gamma: float = 1.0

    kind = PV

    def __post_init__(self):
        if self.panel_rating_kw < 0:
            raise ValidationError("panel_rating_kw must be >= 0")
        if self.gamma < 0.0:
            raise ValidationError("gamma must be >= 0")


@dataclass
class DeviceContext:
    """Per-solve environment a device cost needs: natural temperature for
    HVAC, availability bound for PV, slot length for the battery."""

    slot_hours: float = 1.0
    natural_temp: np.ndarray | None = None
    pv_bound: np.ndarray | None = None


@dataclass
class DevicePlan:
    power_kw: np.ndarray
    aux: np.ndarray  # indoor temp for HVAC, SOC path for battery, empty else
    cost: float


@dataclass
class Violation:
    kind: str
    slot: int  # -1 for whole-horizon violations (energy equality)
    magnitude: float


def decay_accumulate(zeta1: float, zeta2: float, series: np.ndarray) -> np.ndarray:
    """c[i] = (1 - zeta1) * c[i-1] + zeta2 * series[i], c[-1] = 0."""
    out = np.empty(series.size)
    keep = 1.0 - zeta1
    acc = 0.0
    for i, v in enumerate(series):
        acc = keep * acc + zeta2 * v
        out[i] = acc
    return out


def hvac_natural_temperature(spec: HvacSpec, t_in_init: float,
                             t_out: np.ndarray) -> np.ndarray:
    """Indoor trajectory with the unit off.

    The initial temperature decays geometrically while outdoor heat leaks
    in.  With zeta1 = zeta2 the constant-weather fixed point equals the
    outdoor temperature; in general it is (zeta2 / zeta1) * t_out.
    """
    t_out = np.asarray(t_out, dtype=float)
    m = np.arange(1, t_out.size + 1)
    keep = 1.0 - spec.zeta1
    return keep ** m * float(t_in_init) + decay_accumulate(spec.zeta1, spec.zeta2, t_out)


def hvac_indoor_temperature(spec: HvacSpec, natural: np.ndarray,
                            power: np.ndarray) -> np.ndarray:
    """Natural trajectory plus the signed, decaying effect of drawn power."""
    return natural + spec.mode_sign * decay_accumulate(spec.zeta1, spec.zeta2,
                                                       np.asarray(power, dtype=float))


def soc_trajectory(spec: BatterySpec, power: np.ndarray, slot_hours: float,
                   soc_init: float | None = None) -> np.ndarray:
    """State of charge after each slot, as a capacity fraction."""
    start = spec.soc_init if soc_init is None else soc_init
    return start + np.cumsum(np.asarray(power, dtype=float)) * slot_hours / spec.capacity_kwh


def pv_availability(spec: PvSpec, irradiance_w_m2: np.ndarray,
                    irradiance_ref: float = 1000.0) -> np.ndarray:
    """Most-negative feasible PV power for the given irradiance."""
    irr = np.asarray(irradiance_w_m2, dtype=float)
    if np.any(irr < 0):
        raise ValidationError("irradiance must be >= 0")
    return -spec.panel_rating_kw * np.minimum(1.0, irr / irradiance_ref)


def device_cost(spec, power: np.ndarray, ctx: DeviceContext) -> float:
    """Quadratic discomfort of a power schedule (price terms excluded)."""
    power = np.asarray(power, dtype=float)
    if spec.kind == HVAC:
        t_in = hvac_indoor_temperature(spec, ctx.natural_temp, power)
        dev = t_in - spec.t_prefer
    elif spec.kind == FLEX:
        dev = power - spec.p_prefer
    elif spec.kind == BATTERY:
        dev = soc_trajectory(spec, power, ctx.slot_hours) - spec.soc_prefer
    elif spec.kind == PV:
        dev = power - ctx.pv_bound
    else:
        raise ValidationError(f"unknown device kind {spec.kind!r}")
    return float(spec.gamma * np.dot(dev, dev))


def check_feasible(spec, power: np.ndarray, ctx: DeviceContext,
                   tol: float = FEAS_TOL) -> list[Violation]:
    """All constraint violations of a schedule, empty when feasible.

    Power, temperature and SOC bounds use absolute slack ``tol``; the flex
    energy equality uses relative slack.
    """
    power = np.asarray(power, dtype=float)
    out: list[Violation] = []

    def bound(name, values, lo, hi):
        low = np.asarray(lo) - values
        high = values - np.asarray(hi)
        for t in np.nonzero(low > tol)[0]:
            out.append(Violation(f"{name}_lower", int(t), float(low[t])))
        for t in np.nonzero(high > tol)[0]:
            out.append(Violation(f"{name}_upper", int(t), float(high[t])))

    if spec.kind == HVAC:
        bound("power", power, 0.0, spec.p_max)
        t_in = hvac_indoor_temperature(spec, ctx.natural_temp, power)
        bound("temperature", t_in, spec.t_lower, spec.t_upper)
    elif spec.kind == FLEX:
        bound("power", power, spec.p_lower, spec.p_upper)
        energy = float(np.sum(power) * ctx.slot_hours)
        gap = abs(energy - spec.total_energy)
        if gap > tol * max(1.0, abs(spec.total_energy)):
            out.append(Violation("energy_equality", -1, gap))
    elif spec.kind == BATTERY:
        bound("power", power, -spec.p_discharge_max, spec.p_charge_max)
        soc = soc_trajectory(spec, power, ctx.slot_hours)
        bound("soc", soc, spec.soc_lower, spec.soc_upper)
    elif spec.kind == PV:
        bound("power", power, ctx.pv_bound, 0.0)
    else:
        raise ValidationError(f"unknown device kind {spec.kind!r}")
    return out
