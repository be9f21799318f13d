"""Closed-loop demand flexibility simulator.

Households solve device-level scheduling problems against a posted price
signal; the operator updates that signal from realized aggregate demand.
The package bundles the population generator, the household solver, the
price-update algorithms, the surrounding simulation loop and a CLI.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, GridflexError, InfeasibleHousehold,
                     NumericalError, PopulationSolveError, SimulationError,
                     SolverError, ValidationError, VerificationMismatch,
                     WeatherFormatError)
from .projection import (SmoothnessMetric, circular_difference,
                         project_cluster_bank, project_ellipsoid,
                         project_l1_ball)
from .devices import (BatterySpec, FlexLoadSpec, HvacSpec, PvSpec,
                      flex_spec_from_profile, hvac_natural_temperature,
                      pv_availability, soc_trajectory)
from .scenario import (ARCHETYPES, DeviceAverages, Household, PopulationParams,
                       TimeGrid, WeatherDay, assign_participation,
                       generate_population, load_weather_csv,
                       perturb_to_forecast, synthesize_weather,
                       write_weather_csv)
from .qp import QpResult, kkt_residual, solve_qp
from .hems import (HouseholdPlan, HouseholdProblem, SolverOptions,
                   solve_household, solve_population)
from .pricing import (ClassifierParams, ClusterBank, Hyperparams, PriceSignal,
                      TouSchedule, TouTier, classifier_forward, cluster_price,
                      cluster_update, default_tou_schedule, feedback_update,
                      load_checkpoint, offline_train, save_checkpoint,
                      tou_signal, zero_bank)
from .simulation import (DayRecord, RunSetup, SimulationMode, SimulationTrace,
                         direct_control_run, load_trace, run_day, run_horizon,
                         two_way_negotiate, write_trace)
from .metrics import (DailyMetrics, daily_metrics, grid_cost, load_factor,
                      max_hourly_variation, pds_percent, quadratic_variation,
                      read_metrics_csv, window_summary, write_metrics_csv)
from .config import ScenarioConfig, Seeds, load_config, parse_config

__all__ = [name for name in dir() if not name.startswith("_")]
