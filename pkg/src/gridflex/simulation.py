"""Day-by-day closed loop: price, plan, realize, learn.

Five operating modes share one orchestration path: a price-oblivious
benchmark, a static time-of-use tariff, the one-way dynamic learners
(context-agnostic or soft-clustered), and the two-way negotiation /
direct-control upper bounds.  Day t's dynamic prices depend only on
information available before day t begins.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import devices as dv
from .errors import (ConfigError, PopulationSolveError, SimulationError,
                     ValidationError)
from .hems import HouseholdProblem, SolverOptions, solve_population
from .pricing import (ClassifierParams, ClusterBank, Hyperparams, PriceSignal,
                      TouSchedule, classifier_forward, cluster_price,
                      cluster_update, context_raw, default_tou_schedule,
                      feedback_update, normalize_context, tou_signal,
                      zero_bank)
from .scenario import Household, TimeGrid, WeatherDay, perturb_to_forecast

log = logging.getLogger(__name__)

MODE_BENCHMARK = "benchmark"
MODE_TOU = "tou"
MODE_DYNAMIC = "dynamic_context_agnostic"
MODE_CLUSTERED = "dynamic_clustered"
MODE_TWO_WAY = "two_way"
MODE_DIRECT = "direct_control"
MODE_VARIANTS = (MODE_BENCHMARK, MODE_TOU, MODE_DYNAMIC, MODE_CLUSTERED,
                 MODE_TWO_WAY, MODE_DIRECT)

# discomfort weight under direct control: small enough that price terms
# dominate every dispatch decision (response saturates below 1e-2), large
# enough to keep the household QPs strongly convex
DIRECT_CONTROL_GAMMA = 1e-3


@dataclass
class SimulationMode:
    variant: str
    tou: TouSchedule | None = None
    classifier: ClassifierParams | None = None
    initial_bank: ClusterBank | None = None
    max_rounds: int = 100
    round_tol: float = 1e-3
    gamma_scale: float | None = None

    def __post_init__(self):
        if self.variant not in MODE_VARIANTS:
            raise ConfigError(f"unknown simulation mode {self.variant!r}; "
                              f"expected one of {', '.join(MODE_VARIANTS)}")
        if self.tou is not None and self.variant != MODE_TOU:
            raise ConfigError("a TOU schedule only applies to the tou mode")
        if self.variant == MODE_TOU and self.tou is None:
            self.tou = default_tou_schedule()
        if self.classifier is not None and self.variant != MODE_CLUSTERED:
            raise ConfigError("a classifier only applies to dynamic_clustered")
        if self.variant == MODE_CLUSTERED and self.classifier is None:
            raise ConfigError("dynamic_clustered needs a trained classifier")
        if self.initial_bank is not None and self.variant != MODE_CLUSTERED:
            raise ConfigError("a cluster bank only applies to dynamic_clustered")
        if self.gamma_scale is not None and self.variant != MODE_DIRECT:
            raise ConfigError("gamma_scale override only applies to direct_control")
        if self.variant == MODE_DIRECT and self.gamma_scale is None:
            self.gamma_scale = DIRECT_CONTROL_GAMMA
        if self.max_rounds < 1 or self.round_tol <= 0:
            raise ConfigError("negotiation needs max_rounds >= 1 and tol > 0")


@dataclass
class DayOptions:
    """Per-day solve context shared by every household problem."""

    solver: SolverOptions = field(default_factory=SolverOptions)
    slot_hours: float = 1.0
    t_in_init: dict[int, float] = field(default_factory=dict)
    soc_init: dict[int, float] = field(default_factory=dict)
    gamma_scale: float = 1.0
    price_device_kinds: frozenset | None = None
    freeze_flex: bool = False
    freeze_battery: bool = False


@dataclass
class DayRecord:
    date_index: int
    prices: np.ndarray | None
    aggregate_demand_kw: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    snapshot_ref: str = ""


@dataclass
class SimulationTrace:
    days: list[DayRecord]
    config_fingerprint: str = ""
    mode_variant: str = ""

    def __post_init__(self):
        for j in range(1, len(self.days)):
            if self.days[j].date_index != self.days[j - 1].date_index + 1:
                raise ValidationError(
                    f"trace day records must be consecutive; gap after "
                    f"index {self.days[j - 1].date_index}")

    def aggregate_matrix(self) -> np.ndarray:
        return np.stack([d.aggregate_demand_kw for d in self.days])


def _problems(pop: list[Household], prices: PriceSignal | None,
              weather: WeatherDay, opts: DayOptions) -> list[HouseholdProblem]:
    probs = []
    for hh in pop:
        responsive = prices is not None and hh.participating
        if hh.participating != responsive:
            hh = dataclasses.replace(hh, participating=responsive)
        probs.append(HouseholdProblem(
            household=hh,
            prices=prices.values if responsive else None,
            t_out=weather.temperature_f,
            irradiance=weather.irradiance_w_m2,
            slot_hours=opts.slot_hours,
            t_in_init=opts.t_in_init.get(hh.household_id),
            battery_soc_init=opts.soc_init.get(hh.household_id),
            gamma_scale=opts.gamma_scale if responsive else 1.0,
            price_device_kinds=opts.price_device_kinds,
            freeze_flex=opts.freeze_flex,
            freeze_battery=opts.freeze_battery))
    return probs


def run_day(pop: list[Household], prices: PriceSignal | None,
            weather: WeatherDay, opts: DayOptions | None = None):
    """Solve every household for one day; returns (aggregate kW, plans).

    With prices=None the whole population plans price-obliviously.
    """
    opts = opts or DayOptions()
    if not pop:
        return np.zeros(weather.temperature_f.size), []
    plans = solve_population(_problems(pop, prices, weather, opts), opts.solver)
    aggregate = np.sum([p.net_power_kw for p in plans], axis=0)
    return aggregate, plans


def _carry_over(opts: DayOptions, plans) -> None:
    # battery and indoor temperature persist across the day boundary
    for plan in plans:
        t_in = plan.final_indoor_f
        if t_in is not None:
            opts.t_in_init[plan.household_id] = t_in
        soc = plan.final_soc
        if soc is not None:
            opts.soc_init[plan.household_id] = soc


@dataclass
class RunSetup:
    """Everything run_horizon needs besides the mode and the weather."""

    population: list[Household]
    grid: TimeGrid
    hyper: Hyperparams = field(default_factory=Hyperparams)
    solver: SolverOptions = field(default_factory=SolverOptions)
    forecast_temp_sd: float = 0.0
    forecast_ghi_frac: float = 0.0
    forecast_seed: int = 0
    gamma_scale: float = 1.0           # elasticity scaling on participants
    price_device_kinds: frozenset | None = None
    freeze_flex: bool = False
    freeze_battery: bool = False
    fingerprint: str = ""


def _forecast_day(setup: RunSetup, day: WeatherDay) -> WeatherDay:
    if setup.forecast_temp_sd == 0.0 and setup.forecast_ghi_frac == 0.0:
        return day
    rng = np.random.default_rng(
        np.random.SeedSequence((setup.forecast_seed, day.date_index)))
    return perturb_to_forecast(day, setup.forecast_temp_sd,
                               setup.forecast_ghi_frac, rng)


def _day_options(setup: RunSetup, gamma_scale: float = 1.0) -> DayOptions:
    return DayOptions(solver=setup.solver,
                      slot_hours=setup.grid.slot_duration_hours,
                      gamma_scale=gamma_scale,
                      price_device_kinds=setup.price_device_kinds,
                      freeze_flex=setup.freeze_flex,
                      freeze_battery=setup.freeze_battery)


def two_way_negotiate(pop: list[Household], weather: WeatherDay,
                      alpha_init: PriceSignal, metric, eta_base: float,
                      opts: DayOptions, max_rounds: int = 100,
                      tol: float = 1e-3):
    """Within-day price/demand exchange until the signal stops moving.

    Non-participants cannot react, so they are solved once; each round
    re-plans the participants and pushes the signal one feedback step.
    Returns (signal, aggregate, plans, diagnostics); on non-convergence the
    least-moving iterate wins and the diagnostics say so.
    """
    part = [hh for hh in pop if hh.participating]
    rest = [hh for hh in pop if not hh.participating]
    base_agg, base_plans = run_day(rest, None, weather, opts)

    def respond(sig: PriceSignal):
        agg_p, plans_p = run_day(part, sig, weather, opts)
        return base_agg + agg_p, plans_p

    alpha = alpha_init
    best = None
    rounds = 0
    eta = eta_base
    prev_delta = None
    for rounds in range(1, max_rounds + 1):
        aggregate, plans_p = respond(alpha)
        nxt = feedback_update(alpha, aggregate / max(len(pop), 1),
                              eta, metric)
        delta = nxt.values - alpha.values
        # a constant step orbits the fixed point; damp it each time the
        # push direction reverses, keep it while the signal is in transport
        if prev_delta is not None and float(delta @ prev_delta) < 0.0:
            eta *= 0.5
        prev_delta = delta
        change = float(np.linalg.norm(delta))
        rel = change / max(float(np.linalg.norm(alpha.values)), 1e-12)
        if best is None or rel < best[0]:
            best = (rel, alpha, aggregate, plans_p)
        if rel <= tol:
            diags = {"rounds": rounds, "converged": 1, "final_change_rel": rel}
            return alpha, aggregate, _merge_plans(pop, base_plans, plans_p), diags
        alpha = nxt
    rel, alpha, aggregate, plans_p = best
    log.warning("negotiation hit %d rounds without converging "
                "(best relative change %.3e)", max_rounds, rel)
    diags = {"rounds": rounds, "converged": 0, "final_change_rel": rel}
    return alpha, aggregate, _merge_plans(pop, base_plans, plans_p), diags


def _merge_plans(pop, base_plans, part_plans):
    by_id = {p.household_id: p for p in base_plans}
    by_id.update({p.household_id: p for p in part_plans})
    return [by_id[hh.household_id] for hh in pop]


def run_horizon(setup: RunSetup, mode: SimulationMode,
                weather: list[WeatherDay]) -> SimulationTrace:
    """Simulate the full horizon under one mode; one learner update per day."""
    if not weather:
        raise ValidationError("run_horizon needs at least one weather day")
    pop = setup.population
    h = setup.grid.slots_per_day
    metric = setup.hyper.metric_for(h)
    eta = setup.hyper.eta_base
    n = max(len(pop), 1)

    gamma = mode.gamma_scale if mode.variant == MODE_DIRECT else setup.gamma_scale
    opts = _day_options(setup, gamma_scale=gamma)

    alpha = PriceSignal(values=np.zeros(h), day_index=0)
    bank = None
    if mode.variant == MODE_CLUSTERED:
        bank = mode.initial_bank or zero_bank(metric, mode.classifier.n_clusters)
    tou = tou_signal(mode.tou, setup.grid) if mode.variant == MODE_TOU else None

    records: list[DayRecord] = []
    for i, day in enumerate(weather):
        forecast = _forecast_day(setup, day)
        diags: dict = {}
        psi = None
        try:
            if mode.variant == MODE_BENCHMARK:
                prices = None
                aggregate, plans = run_day(pop, None, forecast, opts)
            elif mode.variant == MODE_TOU:
                prices = dataclasses.replace(tou, day_index=i)
                aggregate, plans = run_day(pop, prices, forecast, opts)
            elif mode.variant == MODE_DYNAMIC:
                prices = alpha
                aggregate, plans = run_day(pop, prices, forecast, opts)
            elif mode.variant == MODE_CLUSTERED:
                ctx = normalize_context(
                    mode.classifier,
                    context_raw(forecast.temperature_f, forecast.irradiance_w_m2))
                psi = classifier_forward(mode.classifier, ctx)
                prices = cluster_price(bank, psi, day_index=i)
                aggregate, plans = run_day(pop, prices, forecast, opts)
                diags["max_weight"] = float(psi.max())
            else:   # two_way and direct_control
                prices, aggregate, plans, diags = two_way_negotiate(
                    pop, forecast, dataclasses.replace(alpha, day_index=i),
                    metric, eta, opts, mode.max_rounds, mode.round_tol)
        except PopulationSolveError as exc:
            partial = SimulationTrace(days=records,
                                      config_fingerprint=setup.fingerprint,
                                      mode_variant=mode.variant)
            raise SimulationError(i, exc, partial) from exc

        records.append(DayRecord(
            date_index=i,
            prices=None if prices is None else prices.values.copy(),
            aggregate_demand_kw=aggregate,
            diagnostics=diags))
        _carry_over(opts, plans)

        # learning happens strictly after the day realizes
        if mode.variant == MODE_DYNAMIC:
            alpha = feedback_update(alpha, aggregate / n, eta, metric)
        elif mode.variant == MODE_CLUSTERED:
            bank = cluster_update(bank, psi, aggregate / n, eta)
        elif mode.variant in (MODE_TWO_WAY, MODE_DIRECT):
            alpha = prices   # warm start tomorrow's negotiation

    return SimulationTrace(days=records, config_fingerprint=setup.fingerprint,
                           mode_variant=mode.variant)


def direct_control_run(setup: RunSetup, weather: list[WeatherDay],
                       gamma_scale: float = DIRECT_CONTROL_GAMMA,
                       max_rounds: int = 100,
                       round_tol: float = 1e-3) -> SimulationTrace:
    """Two-way negotiation with preference elasticity scaled to nearly zero:
    comfort terms stop mattering, hard device limits still bind."""
    mode = SimulationMode(variant=MODE_DIRECT, gamma_scale=gamma_scale,
                          max_rounds=max_rounds, round_tol=round_tol)
    return run_horizon(setup, mode, weather)


# ---------------------------------------------------------------------------
# trace persistence: one JSON object per day, keys sorted for stable bytes


def write_trace(path, trace: SimulationTrace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace.days:
            row = {
                "date_index": rec.date_index,
                "prices": None if rec.prices is None else list(rec.prices),
                "aggregate_demand_kw": list(rec.aggregate_demand_kw),
                "diagnostics": rec.diagnostics,
                "snapshot_ref": rec.snapshot_ref,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_trace(path, config_fingerprint: str = "",
               mode_variant: str = "") -> SimulationTrace:
    days = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(
                    f"{path}: line {line_no} is not valid JSON: {exc}") from exc
            days.append(DayRecord(
                date_index=int(row["date_index"]),
                prices=None if row["prices"] is None
                else np.asarray(row["prices"], dtype=float),
                aggregate_demand_kw=np.asarray(row["aggregate_demand_kw"],
                                               dtype=float),
                diagnostics=row.get("diagnostics", {}),
                snapshot_ref=row.get("snapshot_ref", "")))
    return SimulationTrace(days=days, config_fingerprint=config_fingerprint,
                           mode_variant=mode_variant)
