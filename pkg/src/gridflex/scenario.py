"""Scenario construction: time grid, weather series, household population.

Populations are built from per-device average parameter bundles with
multiplicative jitter.  Ordered parameter groups (temperature band, SOC
band, the thermal coefficient pair) share one jitter factor so that the
ordering invariants survive by construction; group widths are scaled
relative to the global jitter fraction because a +-15% swing on an absolute
Fahrenheit setpoint would be physically meaningless.

Determinism: household i draws from an i-keyed child of the population
seed, so the first 50 households of a 500-household population are exactly
the 50-household population built from the same seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .devices import (BatterySpec, FlexLoadSpec, HvacSpec, PvSpec,
                      flex_spec_from_profile)
from .errors import ValidationError, WeatherFormatError

HOURS_PER_DAY = 24.0


def round_half_up(x: float) -> int:
    """0.5 always rounds away from zero toward +inf (no banker's rounding)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class TimeGrid:
    slots_per_day: int = 24
    slot_duration_hours: float = 1.0
    horizon_slots: int = 24

    def __post_init__(self):
        if self.slots_per_day < 1:
            raise ValidationError("slots_per_day must be >= 1")
        if self.slot_duration_hours <= 0:
            raise ValidationError("slot_duration_hours must be > 0")
        if self.slots_per_day * self.slot_duration_hours != HOURS_PER_DAY:
            raise ValidationError(
                f"slots_per_day * slot_duration_hours must equal {HOURS_PER_DAY}")
        if self.horizon_slots < 1 or self.horizon_slots % self.slots_per_day != 0:
            raise ValidationError(
                "horizon_slots must be a positive multiple of slots_per_day")

    @property
    def days_per_step(self) -> int:
        return self.horizon_slots // self.slots_per_day


@dataclass
class WeatherDay:
    date_index: int
    temperature_f: np.ndarray
    irradiance_w_m2: np.ndarray
    is_forecast: bool = False

    def __post_init__(self):
        self.temperature_f = np.asarray(self.temperature_f, dtype=float)
        self.irradiance_w_m2 = np.asarray(self.irradiance_w_m2, dtype=float)
        if self.temperature_f.shape != self.irradiance_w_m2.shape:
            raise ValidationError("temperature and irradiance lengths differ")
        if self.temperature_f.ndim != 1 or self.temperature_f.size < 1:
            raise ValidationError("weather series must be 1-D and non-empty")
        if not np.all(np.isfinite(self.temperature_f)):
            raise ValidationError(f"day {self.date_index}: non-finite temperature")
        if np.any(self.irradiance_w_m2 < 0):
            raise ValidationError(f"day {self.date_index}: negative irradiance")


# ---------------------------------------------------------------------------
# synthetic weather


@dataclass(frozen=True)
class WeatherArchetype:
    """Constants for the sinusoid-plus-noise generator; all tunable."""

    temp_mean_f: float
    temp_diurnal_amp_f: float
    temp_peak_hour: float = 15.0
    temp_seasonal_amp_f: float = 1.2
    temp_seasonal_period_days: float = 184.0
    temp_day_jitter_f: float = 0.8
    temp_noise_f: float = 0.35
    ghi_clear_peak_wm2: float = 900.0
    sunrise_hour: float = 6.0
    sunset_hour: float = 20.0
    cloud_max: float = 0.35

    def worst_case_temp_range(self) -> tuple[float, float]:
        swing = (self.temp_diurnal_amp_f + self.temp_seasonal_amp_f
                 + self.temp_day_jitter_f + self.temp_noise_f)
        return self.temp_mean_f - swing, self.temp_mean_f + swing


ARCHETYPES: dict[str, WeatherArchetype] = {
    "denver": WeatherArchetype(temp_mean_f=73.5, temp_diurnal_amp_f=5.5,
                               ghi_clear_peak_wm2=900.0, cloud_max=0.35),
    "los_angeles": WeatherArchetype(temp_mean_f=71.0, temp_diurnal_amp_f=4.0,
                                    temp_seasonal_amp_f=0.8,
                                    temp_day_jitter_f=0.6, temp_noise_f=0.3,
                                    ghi_clear_peak_wm2=850.0, cloud_max=0.45),
    "phoenix": WeatherArchetype(temp_mean_f=76.0, temp_diurnal_amp_f=4.5,
                                temp_seasonal_amp_f=0.8,
                                temp_day_jitter_f=0.6, temp_noise_f=0.3,
                                ghi_clear_peak_wm2=980.0, cloud_max=0.15),
}


def _resolve_archetype(archetype) -> WeatherArchetype:
    if isinstance(archetype, WeatherArchetype):
        return archetype
    try:
        return ARCHETYPES[archetype]
    except KeyError:
        raise ValidationError(
            f"unknown weather archetype {archetype!r}; "
            f"known: {sorted(ARCHETYPES)}") from None


def synthesize_weather(archetype, n_days: int, seed: int,
                       grid: TimeGrid) -> list[WeatherDay]:
    """Seeded synthetic summer weather.

    Hourly temperature = mean + seasonal sinusoid + diurnal sinusoid peaking
    at temp_peak_hour + a per-day offset + bounded uniform hourly noise, so
    worst_case_temp_range() is a hard envelope.  Irradiance is a clear-sky
    half-sine scaled by a per-day cloud factor.
    """
    arch = _resolve_archetype(archetype)
    if n_days < 1:
        raise ValidationError("n_days must be >= 1")
    rng = np.random.default_rng(seed)
    t = grid.slots_per_day
    hours = (np.arange(t) + 0.5) * grid.slot_duration_hours

    diurnal = arch.temp_diurnal_amp_f * np.sin(
        2.0 * np.pi * (hours - arch.temp_peak_hour) / HOURS_PER_DAY + 0.5 * np.pi)
    up = hours - arch.sunrise_hour
    span = arch.sunset_hour - arch.sunrise_hour
    clear = arch.ghi_clear_peak_wm2 * np.where(
        (up > 0) & (up < span), np.sin(np.pi * np.clip(up, 0, span) / span), 0.0)

    days = []
    for d in range(n_days):
        seasonal = arch.temp_seasonal_amp_f * math.sin(
            2.0 * math.pi * d / arch.temp_seasonal_period_days)
        offset = rng.uniform(-arch.temp_day_jitter_f, arch.temp_day_jitter_f)
        noise = rng.uniform(-arch.temp_noise_f, arch.temp_noise_f, t)
        temp = arch.temp_mean_f + seasonal + diurnal + offset + noise
        cloud = rng.uniform(0.0, arch.cloud_max)
        ghi = clear * (1.0 - cloud)
        days.append(WeatherDay(d, temp, ghi))
    return days


def perturb_to_forecast(day: WeatherDay, temp_sd_f: float, ghi_sd_frac: float,
                        rng: np.random.Generator) -> WeatherDay:
    """Forecast = realized series plus seeded noise; zero scales return the
    realized values unchanged (still flagged as forecast)."""
    temp = day.temperature_f + (rng.normal(0.0, temp_sd_f, day.temperature_f.size)
                                if temp_sd_f > 0 else 0.0)
    ghi = day.irradiance_w_m2.copy()
    if ghi_sd_frac > 0:
        ghi = np.maximum(0.0, ghi * (1.0 + rng.normal(0.0, ghi_sd_frac, ghi.size)))
    return WeatherDay(day.date_index, temp, ghi, is_forecast=True)


# ---------------------------------------------------------------------------
# weather CSV

WEATHER_HEADER = ["day", "hour", "temp_f", "ghi_wm2"]


def write_weather_csv(path, days: list[WeatherDay]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEATHER_HEADER)
        for day in days:
            for h in range(day.temperature_f.size):
                w.writerow([day.date_index, h,
                            f"{day.temperature_f[h]:.12g}",
                            f"{day.irradiance_w_m2[h]:.12g}"])


def load_weather_csv(path, grid: TimeGrid) -> list[WeatherDay]:
    """Parse and validate a day-major weather table.

    Every day must supply exactly slots_per_day rows with hours 0..T-1 in
    order; malformed rows raise WeatherFormatError with the line number and
    invalid values raise ValidationError naming the day.
    """
    t = grid.slots_per_day
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WEATHER_HEADER:
            raise WeatherFormatError(f"line 1: expected header {','.join(WEATHER_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise WeatherFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                rows.append((int(row[0]), int(row[1]), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise WeatherFormatError(f"line {lineno}: {exc}") from None

    if not rows:
        raise WeatherFormatError("no data rows")
    days = []
    for start in range(0, len(rows), t):
        chunk = rows[start:start + t]
        lineno = start + 2
        d = chunk[0][0]
        if len(chunk) != t or any(r[0] != d for r in chunk):
            raise WeatherFormatError(
                f"line {lineno}: day {d} does not have exactly {t} rows")
        if [r[1] for r in chunk] != list(range(t)):
            raise WeatherFormatError(
                f"line {lineno}: day {d} hours must run 0..{t - 1} in order")
        if days and d != days[-1].date_index + 1:
            raise WeatherFormatError(f"line {lineno}: day indices must increase by 1")
        days.append(WeatherDay(d, [r[2] for r in chunk], [r[3] for r in chunk]))
    return days


# ---------------------------------------------------------------------------
# population

def default_flex_shape(slots_per_day: int) -> np.ndarray:
    """Double-peak residential profile, normalized to mean 1."""
    h = np.arange(slots_per_day) * (HOURS_PER_DAY / slots_per_day)
    shape = (0.45
             + 0.50 * np.exp(-((h - 7.5) / 1.8) ** 2)
             + 1.05 * np.exp(-((h - 19.0) / 2.2) ** 2))
    return shape / shape.mean()


@dataclass
class HvacAverages:
    p_max_kw: float = 3.0
    t_prefer_f: float = 75.0
    t_lower_f: float = 72.0
    t_upper_f: float = 78.0
    zeta1: float = 0.9
    zeta2: float = 1.0
    gamma: float = 1.0
    mode_sign: int = -1
    # relative widths of the shared jitter factors, as fractions of the
    # population jitter_fraction
    temp_jitter_scale: float = 0.15
    zeta_jitter_scale: float = 1.0 / 3.0


@dataclass
class FlexAverages:
    mean_kw: float = 1.0
    band_fraction: float = 0.2
    peak_band_fraction: float = 0.1
    peak_hours: tuple[int, int] = (17, 21)  # [start, end) in hours
    gamma: float = 1.0


@dataclass
class BatteryAverages:
    p_charge_max_kw: float = 5.0
    p_discharge_max_kw: float = 5.0
    capacity_hours: float = 4.0  # capacity = charge rating * this, exactly
    soc_lower: float = 0.2
    soc_prefer: float = 0.5
    soc_upper: float = 0.8
    gamma: float = 1.0
    soc_jitter_scale: float = 1.0 / 3.0


@dataclass
class PvAverages:
    panel_rating_kw: float = 5.0
    gamma: float = 1.0


@dataclass
class DeviceAverages:
    hvac: HvacAverages = field(default_factory=HvacAverages)
    flex: FlexAverages = field(default_factory=FlexAverages)
    battery: BatteryAverages = field(default_factory=BatteryAverages)
    pv: PvAverages = field(default_factory=PvAverages)


@dataclass
class PopulationParams:
    n_households: int
    pv_battery_penetration: float = 0.2
    jitter_fraction: float = 0.15
    device_averages: DeviceAverages = field(default_factory=DeviceAverages)
    seed: int = 0

    def __post_init__(self):
        if self.n_households < 0:
            raise ValidationError("n_households must be >= 0")
        if not (0.0 <= self.pv_battery_penetration <= 1.0):
            raise ValidationError("pv_battery_penetration must lie in [0, 1]")
        if not (0.0 <= self.jitter_fraction < 1.0):
            raise ValidationError("jitter_fraction must lie in [0, 1)")


@dataclass
class Household:
    household_id: int
    node_label: str
    devices: list
    participating: bool = False

    def device(self, kind: str):
        for d in self.devices:
            if d.kind == kind:
                return d
        return None


def _jit(rng: np.random.Generator, width: float) -> float:
    """One shared multiplicative factor, uniform in [1-width, 1+width]."""
    if width <= 0:
        return 1.0
    return rng.uniform(1.0 - width, 1.0 + width)


def _build_household(i: int, ss: np.random.SeedSequence, avg: DeviceAverages,
                     jitter: float, grid: TimeGrid, with_pv_battery: bool) -> Household:
    rng = np.random.default_rng(ss)
    h = grid.horizon_slots
    slots_day = grid.slots_per_day
    devices = []

    a = avg.hvac
    u_t = _jit(rng, jitter * a.temp_jitter_scale)
    u_z = _jit(rng, jitter * a.zeta_jitter_scale)
    # keep zeta1 inside (0, 1]: trim the draw interval, never clamp mass onto 1
    zeta1 = min(a.zeta1 * u_z, 1.0)
    devices.append(HvacSpec(
        p_max=np.full(h, a.p_max_kw * _jit(rng, jitter)),
        t_prefer=np.full(h, a.t_prefer_f * u_t),
        t_lower=np.full(h, a.t_lower_f * u_t),
        t_upper=np.full(h, a.t_upper_f * u_t),
        zeta1=zeta1, zeta2=a.zeta2 * u_z,
        gamma=a.gamma * _jit(rng, jitter), mode_sign=a.mode_sign))

    f = avg.flex
    shape = np.tile(default_flex_shape(slots_day), grid.days_per_step)
    peak_slots = [t for t in range(h)
                  if f.peak_hours[0] <= (t % slots_day) * grid.slot_duration_hours
                  < f.peak_hours[1]]
    devices.append(flex_spec_from_profile(
        shape * f.mean_kw * _jit(rng, jitter),
        band_fraction=f.band_fraction, peak_band_fraction=f.peak_band_fraction,
        peak_slots=peak_slots, slot_hours=grid.slot_duration_hours,
        gamma=f.gamma * _jit(rng, jitter)))

    if with_pv_battery:
        b = avg.battery
        u_p = _jit(rng, jitter)
        u_s = _jit(rng, jitter * b.soc_jitter_scale)
        charge = b.p_charge_max_kw * u_p
        devices.append(BatterySpec(
            p_charge_max=charge,
            p_discharge_max=b.p_discharge_max_kw * u_p,
            capacity_kwh=charge * b.capacity_hours,
            soc_init=b.soc_prefer * u_s,
            soc_prefer=np.full(h, b.soc_prefer * u_s),
            soc_lower=b.soc_lower * u_s, soc_upper=min(b.soc_upper * u_s, 1.0),
            gamma=b.gamma * _jit(rng, jitter)))
        p = avg.pv
        devices.append(PvSpec(panel_rating_kw=p.panel_rating_kw * _jit(rng, jitter),
                              gamma=p.gamma * _jit(rng, jitter)))

    return Household(household_id=i, node_label=f"node-{i:04d}", devices=devices)


def generate_population(params: PopulationParams, grid: TimeGrid) -> list[Household]:
    """Jittered households; PV+battery go to a seeded subset of exact size
    round_half_up(n * penetration), and the two always appear together."""
    n = params.n_households
    root = np.random.SeedSequence(params.seed)
    assign_ss, house_root = root.spawn(2)
    perm = np.random.default_rng(assign_ss).permutation(n)
    k = round_half_up(n * params.pv_battery_penetration)
    with_storage = set(int(j) for j in perm[:k])
    children = house_root.spawn(n)
    return [_build_household(i, children[i], params.device_averages,
                             params.jitter_fraction, grid, i in with_storage)
            for i in range(n)]


def assign_participation(population: list[Household], rate: float,
                         seed: int) -> list[Household]:
    """Flag a uniform subset of exact size round_half_up(rate * n)."""
    if not (0.0 <= rate <= 1.0):
        raise ValidationError("participation rate must lie in [0, 1]")
    n = len(population)
    k = round_half_up(rate * n)
    rng = np.random.default_rng(seed)
    chosen = set(int(j) for j in rng.choice(n, size=k, replace=False)) if k else set()
    return [replace(hh, participating=(i in chosen))
            for i, hh in enumerate(population)]
