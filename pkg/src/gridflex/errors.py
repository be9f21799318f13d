"""Exception hierarchy shared across the package.

Exit-code mapping lives in the CLI: ConfigError -> 2, solver/runtime
failures -> 3, verification mismatches -> 4.
"""


class GridflexError(Exception):
    """Base class for all package errors."""


class ConfigError(GridflexError):
    """Bad scenario configuration: unknown key, wrong type, invalid value."""


class ValidationError(GridflexError):
    """A value violates a documented invariant (weights off the simplex,
    malformed weather day, inconsistent device spec)."""


class WeatherFormatError(GridflexError):
    """Malformed weather CSV; carries the offending line number in args."""


class NumericalError(GridflexError):
    """An iterative routine failed to reach its contract tolerance."""


class SolverError(GridflexError):
    """Household solve failed (non-convergence with diagnostics attached)."""


class InfeasibleHousehold(SolverError):
    """The household constraint set is empty.

    ``report`` names the binding device constraints so a scenario author can
    see which spec/weather combination caused the conflict.
    """

    def __init__(self, household_id, report):
        self.household_id = household_id
        self.report = report
        super().__init__(f"household {household_id!r} infeasible: {report}")


class PopulationSolveError(SolverError):
    """One or more households in a batch failed; carries all failures.

    ``failures`` is a list of (household_id, exception); ``plans`` holds the
    partial results (None at failed positions) for diagnostics.
    """

    def __init__(self, failures, plans):
        self.failures = failures
        self.plans = plans
        ids = ", ".join(repr(h) for h, _ in failures)
        super().__init__(f"{len(failures)} household solve(s) failed: {ids}")


class SimulationError(GridflexError):
    """A day failed mid-horizon; ``partial_trace`` keeps every completed day."""

    def __init__(self, day_index, cause, partial_trace):
        self.day_index = day_index
        self.cause = cause
        self.partial_trace = partial_trace
        super().__init__(f"simulation failed at day {day_index}: {cause}")


class VerificationMismatch(GridflexError):
    """Recomputed summaries disagree with stored outputs."""
