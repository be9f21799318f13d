"""YAML run configuration: strict schema, canonical fingerprint, builders.

Every knob a run depends on lives here; unknown keys are rejected with their
full path so typos cannot silently fall back to defaults.  The fingerprint is
the sha256 of the fully-resolved configuration and is stamped on every
artifact a run emits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .hems import SolverOptions
from .pricing import Hyperparams, TouSchedule, TouTier
from .scenario import (ARCHETYPES, BatteryAverages, DeviceAverages,
                       FlexAverages, HvacAverages, PopulationParams,
                       PvAverages, TimeGrid, assign_participation,
                       generate_population, load_weather_csv,
                       synthesize_weather)
from .simulation import MODE_CLUSTERED, MODE_TOU, MODE_VARIANTS, RunSetup, SimulationMode


@dataclass(frozen=True)
class Seeds:
    population: int = 101
    participation: int = 202
    weather: int = 303
    learner: int = 404


@dataclass(frozen=True)
class WeatherSource:
    """Exactly one of: a CSV path, or a synthetic archetype + day count."""

    csv_path: str | None = None
    archetype: str | None = None
    days: int = 0

    def __post_init__(self):
        if (self.csv_path is None) == (self.archetype is None):
            raise ConfigError(
                "weather source must set exactly one of csv / synthetic")
        if self.archetype is not None:
            if self.archetype not in ARCHETYPES:
                raise ConfigError(
                    f"unknown weather archetype {self.archetype!r}; expected "
                    f"one of {', '.join(sorted(ARCHETYPES))}")
            if self.days < 1:
                raise ConfigError("synthetic weather needs days >= 1")


@dataclass(frozen=True)
class ForecastSpec:
    temp_sd_f: float = 0.0
    ghi_sd_frac: float = 0.0

    def __post_init__(self):
        if self.temp_sd_f < 0 or self.ghi_sd_frac < 0:
            raise ConfigError("forecast noise scales must be >= 0")


@dataclass(frozen=True)
class ModeSpec:
    variant: str = "benchmark"
    tou_tiers: tuple | None = None      # ((start, end, rate), ...)
    max_rounds: int = 100
    round_tol: float = 1e-3
    gamma_scale: float | None = None
    checkpoint: str | None = None       # classifier file for dynamic_clustered

    def __post_init__(self):
        if self.variant not in MODE_VARIANTS:
            raise ConfigError(f"unknown mode variant {self.variant!r}")
        if self.tou_tiers is not None and self.variant != MODE_TOU:
            raise ConfigError("tou_tiers only apply to the tou mode")
        if self.checkpoint is not None and self.variant != MODE_CLUSTERED:
            raise ConfigError("checkpoint only applies to dynamic_clustered")

    def schedule(self) -> TouSchedule | None:
        if self.tou_tiers is None:
            return None
        return TouSchedule(tiers=tuple(TouTier(*t) for t in self.tou_tiers))

    def to_simulation_mode(self, classifier=None, bank=None) -> SimulationMode:
        return SimulationMode(
            variant=self.variant,
            tou=self.schedule() if self.variant == MODE_TOU else None,
            classifier=classifier,
            initial_bank=bank,
            max_rounds=self.max_rounds,
            round_tol=self.round_tol,
            gamma_scale=self.gamma_scale)


@dataclass
class ScenarioConfig:
    population: PopulationParams
    participation_rate: float
    grid: TimeGrid
    weather: WeatherSource
    mode: ModeSpec
    hyper: Hyperparams
    epsilon: float = 0.9
    seeds: Seeds = field(default_factory=Seeds)
    forecast: ForecastSpec = field(default_factory=ForecastSpec)
    solver: SolverOptions = field(default_factory=SolverOptions)
    output_dir: str = "out"

    def __post_init__(self):
        if not 0.0 <= self.participation_rate <= 1.0:
            raise ConfigError("participation_rate must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")

    # -- builders ---------------------------------------------------------

    def build_population(self):
        params = dataclasses.replace(self.population, seed=self.seeds.population)
        pop = generate_population(params, self.grid)
        return assign_participation(pop, self.participation_rate,
                                    self.seeds.participation)

    def load_weather(self, base_dir: Path | None = None):
        if self.weather.csv_path is not None:
            path = Path(self.weather.csv_path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return load_weather_csv(path, self.grid)
        return synthesize_weather(self.weather.archetype, self.weather.days,
                                  self.seeds.weather, self.grid)

    def to_setup(self, population=None) -> RunSetup:
        return RunSetup(
            population=self.build_population() if population is None
            else population,
            grid=self.grid,
            hyper=self.hyper,
            solver=self.solver,
            forecast_temp_sd=self.forecast.temp_sd_f,
            forecast_ghi_frac=self.forecast.ghi_sd_frac,
            forecast_seed=self.seeds.weather,
            fingerprint=self.fingerprint())

    # -- identity ---------------------------------------------------------

    def canonical_dict(self) -> dict:
        avg = self.population.device_averages
        return {
            "population": {
                "n_households": self.population.n_households,
                "pv_battery_penetration": self.population.pv_battery_penetration,
                "jitter_fraction": self.population.jitter_fraction,
                "averages": {
                    "hvac": dataclasses.asdict(avg.hvac),
                    "flex": dataclasses.asdict(avg.flex),
                    "battery": dataclasses.asdict(avg.battery),
                    "pv": dataclasses.asdict(avg.pv),
                },
            },
            "participation_rate": self.participation_rate,
            "grid": dataclasses.asdict(self.grid),
            "weather": dataclasses.asdict(self.weather),
            "mode": dataclasses.asdict(self.mode),
            "hyper": dataclasses.asdict(self.hyper),
            "epsilon": self.epsilon,
            "seeds": dataclasses.asdict(self.seeds),
            "forecast": dataclasses.asdict(self.forecast),
            "solver": dataclasses.asdict(self.solver),
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# YAML ingestion


class _Section:
    """One mapping level of the config; tracks consumed keys so leftovers
    can be reported as errors with their full path."""

    def __init__(self, data, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        self.data = dict(data)
        self.path = path

    def _label(self, key):
        return f"{self.path}.{key}" if self.path else key

    def take(self, key, default=None, required=False):
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required key {self._label(key)}")
            return default
        return self.data.pop(key)

    def sub(self, key):
        return _Section(self.take(key), self._label(key))

    def done(self):
        if self.data:
            bad = ", ".join(sorted(self._label(k) for k in self.data))
            raise ConfigError(f"unknown config key(s): {bad}")


def _number(value, label, lo=None, hi=None):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{label} must be a number, got {value!r}")
    v = float(value)
    if lo is not None and v < lo:
        raise ConfigError(f"{label} must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{label} must be <= {hi}, got {v}")
    return v


def _integer(value, label, lo=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{label} must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{label} must be >= {lo}, got {value}")
    return value


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _averages(sec: _Section) -> DeviceAverages:
    out = {}
    for name, cls in (("hvac", HvacAverages), ("flex", FlexAverages),
                      ("battery", BatteryAverages), ("pv", PvAverages)):
        sub = sec.sub(name)
        kwargs = {}
        for fname in _fields(cls):
            val = sub.take(fname)
            if val is not None:
                if fname == "peak_hours":
                    val = tuple(val)
                kwargs[fname] = val
        sub.done()
        try:
            out[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad {name} averages: {exc}") from exc
    sec.done()
    return DeviceAverages(**out)


def parse_config(data: dict, source: str = "config") -> ScenarioConfig:
    root = _Section(data, "")

    psec = root.sub("population")
    pop = PopulationParams(
        n_households=_integer(psec.take("n_households", required=True),
                              "population.n_households", lo=0),
        pv_battery_penetration=_number(
            psec.take("pv_battery_penetration", 0.2),
            "population.pv_battery_penetration", 0.0, 1.0),
        jitter_fraction=_number(psec.take("jitter_fraction", 0.15),
                                "population.jitter_fraction", 0.0),
        device_averages=_averages(psec.sub("averages")))
    psec.done()

    gsec = root.sub("grid")
    grid = TimeGrid(
        slots_per_day=_integer(gsec.take("slots_per_day", 24),
                               "grid.slots_per_day", lo=1),
        slot_duration_hours=_number(gsec.take("slot_duration_hours", 1.0),
                                    "grid.slot_duration_hours", 0.0),
        horizon_slots=_integer(gsec.take("horizon_slots", 24),
                               "grid.horizon_slots", lo=1))
    gsec.done()

    wsec = root.sub("weather")
    csv_path = wsec.take("csv")
    synth = wsec.sub("synthetic") if csv_path is None else None
    if synth is not None:
        weather = WeatherSource(
            archetype=synth.take("archetype", required=True),
            days=_integer(synth.take("days", required=True),
                          "weather.synthetic.days", lo=1))
        synth.done()
    else:
        weather = WeatherSource(csv_path=str(csv_path))
    wsec.done()

    msec = root.sub("mode")
    tou_tiers = msec.take("tou_tiers")
    if tou_tiers is not None:
        tou_tiers = tuple(
            (float(t[0]), float(t[1]), float(t[2])) for t in tou_tiers)
    gscale = msec.take("gamma_scale")
    mode = ModeSpec(
        variant=msec.take("variant", "benchmark"),
        tou_tiers=tou_tiers,
        max_rounds=_integer(msec.take("max_rounds", 100),
                            "mode.max_rounds", lo=1),
        round_tol=_number(msec.take("round_tol", 1e-3), "mode.round_tol", 0.0),
        gamma_scale=None if gscale is None
        else _number(gscale, "mode.gamma_scale", 0.0),
        checkpoint=msec.take("checkpoint"))
    msec.done()

    hsec = root.sub("hyper")
    hkwargs = {}
    for fname in _fields(Hyperparams):
        val = hsec.take(fname)
        if val is not None:
            hkwargs[fname] = val
    hsec.done()
    hyper = Hyperparams(**hkwargs)

    ssec = root.sub("seeds")
    seeds = Seeds(
        population=_integer(ssec.take("population", 101), "seeds.population"),
        participation=_integer(ssec.take("participation", 202),
                               "seeds.participation"),
        weather=_integer(ssec.take("weather", 303), "seeds.weather"),
        learner=_integer(ssec.take("learner", 404), "seeds.learner"))
    ssec.done()

    fsec = root.sub("forecast")
    forecast = ForecastSpec(
        temp_sd_f=_number(fsec.take("temp_sd_f", 0.0),
                          "forecast.temp_sd_f", 0.0),
        ghi_sd_frac=_number(fsec.take("ghi_sd_frac", 0.0),
                            "forecast.ghi_sd_frac", 0.0))
    fsec.done()

    osec = root.sub("solver")
    solver = SolverOptions(
        tol=_number(osec.take("tol", 1e-6), "solver.tol", 0.0),
        max_iter=_integer(osec.take("max_iter", 100), "solver.max_iter", lo=1),
        target_tol=_number(osec.take("target_tol", 1e-7),
                           "solver.target_tol", 0.0),
        workers=_integer(osec.take("workers", 0), "solver.workers", lo=0))
    osec.done()

    cfg = ScenarioConfig(
        population=pop,
        participation_rate=_number(root.take("participation_rate", 0.0),
                                   "participation_rate", 0.0, 1.0),
        grid=grid,
        weather=weather,
        mode=mode,
        hyper=hyper,
        epsilon=_number(root.take("epsilon", 0.9), "epsilon", 0.0, 1.0),
        seeds=seeds,
        forecast=forecast,
        solver=solver,
        output_dir=str(root.take("output_dir", "out")))
    root.done()
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data, source=str(path))


def apply_seed_overrides(cfg: ScenarioConfig, overrides: dict) -> ScenarioConfig:
    """--seed-override name=int support; unknown names rejected."""
    known = _fields(Seeds)
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown seed name(s): {', '.join(sorted(bad))}; "
                          f"expected {', '.join(sorted(known))}")
    return dataclasses.replace(
        cfg, seeds=dataclasses.replace(cfg.seeds, **overrides))
