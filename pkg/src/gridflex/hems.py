"""Household energy management: one convex schedule per household per day.

Each household minimizes

    gamma_scale * sum_d discomfort_d(p_d)  +  prices . net_power

(the price term only for participating households) over its devices'
feasible sets, plus the no-sell coupling net_power >= 0 in every slot.
Discomfort terms are the quadratic deviations from devices.py, so the whole
thing is assembled into one QP and handed to qp.solve_qp.

A tiny proximal pull toward the preference point keeps the minimizer unique
when gamma_scale approaches zero (the externally-steered limit).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import devices as dv
from .errors import InfeasibleHousehold, PopulationSolveError, SolverError
from .qp import solve_qp
from .scenario import Household

# uniqueness regularizer toward the preference schedule
PROX = 1e-9
NET_TOL = 1e-6  # no-sell slack


@dataclass
class SolverOptions:
    tol: float = 1e-6          # KKT residual contract
    max_iter: int = 100
    target_tol: float = 1e-7   # interior-point goal; the active-set polish
    workers: int = 0           # typically lands near 1e-9 from there


@dataclass
class HouseholdProblem:
    household: Household
    prices: np.ndarray | None
    t_out: np.ndarray
    irradiance: np.ndarray
    slot_hours: float = 1.0
    t_in_init: float | None = None       # defaults to the HVAC setpoint
    battery_soc_init: float | None = None
    no_sell: bool = True
    gamma_scale: float = 1.0
    price_device_kinds: frozenset | None = None  # None: all devices priced
    freeze_flex: bool = False
    freeze_battery: bool = False

    def __post_init__(self):
        self.t_out = np.asarray(self.t_out, dtype=float)
        self.irradiance = np.asarray(self.irradiance, dtype=float)
        if (self.prices is not None) != self.household.participating:
            raise ValueError(
                f"household {self.household.household_id}: prices must be "
                "supplied exactly when the household participates")
        if self.prices is not None:
            self.prices = np.asarray(self.prices, dtype=float)


@dataclass
class HouseholdPlan:
    household_id: int
    device_plans: dict[str, dv.DevicePlan]
    net_power_kw: np.ndarray
    objective_value: float
    kkt_residual: float
    iterations: int
    status: str
    violations: list = field(default_factory=list)

    @property
    def final_indoor_f(self) -> float | None:
        p = self.device_plans.get(dv.HVAC)
        return float(p.aux[-1]) if p is not None else None

    @property
    def final_soc(self) -> float | None:
        p = self.device_plans.get(dv.BATTERY)
        return float(p.aux[-1]) if p is not None else None


def _decay_matrix(zeta1: float, zeta2: float, h: int) -> np.ndarray:
    """Lower-triangular map from a power schedule to its accumulated thermal
    effect: entry (i, j) = (1 - zeta1)^(i-j) * zeta2 for j <= i."""
    idx = np.arange(h)
    expo = idx[:, None] - idx[None, :]
    return np.tril((1.0 - zeta1) ** np.maximum(expo, 0) * zeta2)


def _hvac_precheck(spec, natural, hid):
    """Forward interval reachability of the accumulated thermal effect.

    The effect c obeys c_i = (1 - zeta1) c_{i-1} + zeta2 p_i with p_i in
    [0, p_max], and the comfort band pins c_i to an interval each slot.
    Intersecting reachable and required intervals slot by slot is exact for
    this monotone scalar recursion; an empty intersection names the slot.
    """
    sign = spec.mode_sign
    lo_c = np.zeros(natural.size)
    hi_c = np.full(natural.size, np.inf)
    if sign < 0:
        need_lo = np.maximum(0.0, natural - spec.t_upper)
        need_hi = natural - spec.t_lower
    else:
        need_lo = np.maximum(0.0, spec.t_lower - natural)
        need_hi = spec.t_upper - natural
    keep = 1.0 - spec.zeta1
    a, b = 0.0, 0.0
    for i in range(natural.size):
        a, b = keep * a, keep * b + spec.zeta2 * spec.p_max[i]
        a = max(a, need_lo[i])
        b = min(b, need_hi[i])
        if a > b + 1e-12:
            raise InfeasibleHousehold(hid, (
                f"hvac comfort band unreachable at slot {i}: needs thermal "
                f"effect in [{need_lo[i]:.3f}, {need_hi[i]:.3f}] F, reachable "
                f"up to {keep * b + spec.zeta2 * spec.p_max[i]:.3f} F"))
        lo_c[i], hi_c[i] = a, b


class _Assembly:
    """Stacked QP for one household plus the unpacking metadata."""

    def __init__(self, prob: HouseholdProblem):
        hh = prob.household
        self.prob = prob
        self.specs = list(hh.devices)
        h = prob.t_out.size
        self.h = h
        n = h * len(self.specs)
        gs = prob.gamma_scale

        P = np.zeros((n, n))
        q = np.zeros(n)
        G_rows, h_rows = [], []
        A = np.zeros((0, n))
        b = np.zeros(0)
        self.natural = None
        self.pv_bound = None
        refs = np.zeros(n)

        priced = prob.price_device_kinds

        for d, spec in enumerate(self.specs):
            sl = slice(d * h, (d + 1) * h)
            box_lo = np.full(h, -np.inf)
            box_hi = np.full(h, np.inf)

            if spec.kind == dv.HVAC:
                t0 = prob.t_in_init if prob.t_in_init is not None else float(spec.t_prefer[0])
                natural = dv.hvac_natural_temperature(spec, t0, prob.t_out)
                self.natural = natural
                _hvac_precheck(spec, natural, hh.household_id)
                B = spec.mode_sign * _decay_matrix(spec.zeta1, spec.zeta2, h)
                g = gs * spec.gamma
                P[sl, sl] += 2.0 * g * (B.T @ B)
                q[sl] += 2.0 * g * (B.T @ (natural - spec.t_prefer))
                box_lo[:] = 0.0
                box_hi[:] = spec.p_max
                row = np.zeros((h, n))
                row[:, sl] = B
                G_rows += [row, -row]
                h_rows += [spec.t_upper - natural, natural - spec.t_lower]
                # power tracking the setpoint, clipped into the box
                want = np.linalg.solve(B, spec.t_prefer - natural)
                refs[sl] = np.clip(want, 0.0, spec.p_max)

            elif spec.kind == dv.FLEX:
                g = gs * spec.gamma
                P[sl, sl] += 2.0 * g * np.eye(h)
                q[sl] += -2.0 * g * spec.p_prefer
                if prob.freeze_flex:
                    box_lo[:] = spec.p_prefer
                    box_hi[:] = spec.p_prefer
                else:
                    box_lo[:] = spec.p_lower
                    box_hi[:] = spec.p_upper
                row = np.zeros((1, n))
                row[0, sl] = prob.slot_hours
                A = np.vstack([A, row])
                b = np.append(b, spec.total_energy)
                refs[sl] = spec.p_prefer

            elif spec.kind == dv.BATTERY:
                soc0 = (prob.battery_soc_init if prob.battery_soc_init is not None
                        else spec.soc_init)
                soc0 = float(np.clip(soc0, spec.soc_lower, spec.soc_upper))
                self.battery_soc0 = soc0
                B = np.tril(np.ones((h, h))) * (prob.slot_hours / spec.capacity_kwh)
                g = gs * spec.gamma
                P[sl, sl] += 2.0 * g * (B.T @ B)
                q[sl] += 2.0 * g * (B.T @ (soc0 - spec.soc_prefer))
                if prob.freeze_battery:
                    box_lo[:] = 0.0
                    box_hi[:] = 0.0
                else:
                    box_lo[:] = -spec.p_discharge_max
                    box_hi[:] = spec.p_charge_max
                row = np.zeros((h, n))
                row[:, sl] = B
                G_rows += [row, -row]
                h_rows += [np.full(h, spec.soc_upper - soc0),
                           np.full(h, soc0 - spec.soc_lower)]
                refs[sl] = 0.0

            elif spec.kind == dv.PV:
                avail = dv.pv_availability(spec, prob.irradiance)
                self.pv_bound = avail
                g = gs * spec.gamma
                P[sl, sl] += 2.0 * g * np.eye(h)
                q[sl] += -2.0 * g * avail
                box_lo[:] = avail
                box_hi[:] = 0.0
                refs[sl] = avail

            else:
                raise SolverError(f"unknown device kind {spec.kind!r}")

            if hh.participating and (priced is None or spec.kind in priced):
                q[sl] += prob.prices

            eye = np.zeros((h, n))
            eye[:, sl] = np.eye(h)
            G_rows += [eye, -eye]
            h_rows += [box_hi, -box_lo]

        if prob.no_sell and self.specs:
            row = np.zeros((h, n))
            for d in range(len(self.specs)):
                row[:, d * h:(d + 1) * h] -= np.eye(h)
            G_rows.append(row)
            h_rows.append(np.zeros(h))

        P[np.diag_indices_from(P)] += 2.0 * PROX
        q += -2.0 * PROX * refs

        self.P, self.q = P, q
        self.G = np.vstack(G_rows)
        self.hvec = np.concatenate(h_rows)
        self.A = A if A.size else None
        self.b = b if A.size else None

    def unpack(self, x: np.ndarray, res) -> HouseholdPlan:
        prob = self.prob
        h = self.h
        plans = {}
        net = np.zeros(h)
        objective = 0.0
        violations = []
        ctx = dv.DeviceContext(slot_hours=prob.slot_hours,
                               natural_temp=self.natural, pv_bound=self.pv_bound)
        for d, spec in enumerate(self.specs):
            power = x[d * h:(d + 1) * h].copy()
            if spec.kind == dv.HVAC:
                aux = dv.hvac_indoor_temperature(spec, self.natural, power)
            elif spec.kind == dv.BATTERY:
                aux = dv.soc_trajectory(spec, power, prob.slot_hours,
                                        soc_init=self.battery_soc0)
            else:
                aux = np.zeros(0)
            cost = dv.device_cost(spec, power, ctx)
            plans[spec.kind] = dv.DevicePlan(power_kw=power, aux=aux, cost=cost)
            net += power
            objective += prob.gamma_scale * cost
            violations.extend(dv.check_feasible(spec, power, ctx))
        if prob.household.participating:
            objective += float(prob.prices @ net)
        if prob.no_sell:
            for t in np.nonzero(net < -NET_TOL)[0]:
                violations.append(dv.Violation("no_sell", int(t), float(-net[t])))
        return HouseholdPlan(
            household_id=prob.household.household_id,
            device_plans=plans, net_power_kw=net,
            objective_value=float(objective),
            kkt_residual=res.kkt_residual, iterations=res.iterations,
            status=res.status, violations=violations)


def solve_household(prob: HouseholdProblem,
                    opts: SolverOptions | None = None) -> HouseholdPlan:
    """Optimal device schedules for one household.

    Raises InfeasibleHousehold when the constraint set is provably or
    apparently empty, SolverError when the KKT contract cannot be met.
    """
    opts = opts or SolverOptions()
    asm = _Assembly(prob)
    res = solve_qp(asm.P, asm.q, asm.G, asm.hvec, asm.A, asm.b,
                   tol=opts.target_tol, max_iter=opts.max_iter)
    if res.status == "infeasible_suspected":
        raise InfeasibleHousehold(
            prob.household.household_id,
            "constraint set appears empty (interior-point iterates diverged)")
    # the residual contract tracks the objective scaling: an elasticity
    # sweep multiplying discomfort weights by 1e4 scales every KKT term too
    accept = opts.tol * max(1.0, prob.gamma_scale)
    if res.kkt_residual > accept:
        raise SolverError(
            f"household {prob.household.household_id}: KKT residual "
            f"{res.kkt_residual:.3e} above tolerance {accept:.1e} "
            f"after {res.iterations} iterations")
    return asm.unpack(res.x, res)


def solve_population(problems: list[HouseholdProblem],
                     opts: SolverOptions | None = None) -> list[HouseholdPlan]:
    """Solve a batch; collects all failures before raising so one bad
    household does not hide the others."""
    opts = opts or SolverOptions()
    plans: list[HouseholdPlan | None] = []
    failures = []
    for prob in problems:
        try:
            plans.append(solve_household(prob, opts))
        except SolverError as exc:
            failures.append((prob.household.household_id, exc))
            plans.append(None)
    if failures:
        raise PopulationSolveError(failures, plans)
    return plans
