"""Whole-system acceptance gate.

Thirteen criteria, one test method each, run against the desk rig scenario
(50 households, 92 synthetic summer days).  Expensive shared artifacts --
the benchmark trace and the one-way dynamic traces at three participation
rates -- are computed once and cached at module level, so the file is meant
to be run as a unit:

    python3 -m pytest tests/test_acceptance.py -v

Criterion 12 (10x population) is heavy and off by default; opt in with
GRIDFLEX_SCALE_TEST=1.  Each test prints a [PASS]/[FAIL] line with the
measured numbers next to the thresholds.
"""

import contextlib
import dataclasses
import io
import math
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
import yaml

from conftest import (
    household_of,
    make_battery,
    make_flex,
    make_hvac,
    make_pv,
)
from oracles import (
    HouseholdOracle,
    circular_k,
    ellipsoid_kkt,
    fd_block_gradient,
    l1_projection_reference,
    _battery_eval,
    _flex_eval,
    _hvac_eval,
)

from gridflex.cli import main as cli_main
from gridflex.config import load_config
from gridflex.hems import HouseholdProblem, solve_household
from gridflex.metrics import (
    energy_reduction_pct,
    pds_percent,
    variation_reduction_pct,
)
from gridflex.pricing import (
    ClassifierParams,
    Hyperparams,
    offline_loss_and_grad,
    offline_train,
)
from gridflex.projection import SmoothnessMetric, project_ellipsoid, project_l1_ball
from gridflex.simulation import (
    MODE_BENCHMARK,
    MODE_CLUSTERED,
    MODE_DYNAMIC,
    MODE_TOU,
    MODE_TWO_WAY,
    SimulationMode,
    direct_control_run,
    run_horizon,
)

RIG = Path(__file__).resolve().parent.parent / "configs" / "desk_rig.yaml"

_cache: dict = {}


def _rig():
    if "cfg" not in _cache:
        _cache["cfg"] = load_config(RIG)
    return _cache["cfg"]


def _weather():
    if "weather" not in _cache:
        _cache["weather"] = _rig().load_weather(RIG.parent)
    return _cache["weather"]


def _setup_at(participation):
    cfg = dataclasses.replace(_rig(), participation_rate=participation)
    return cfg.to_setup()


def _bench():
    if "bench" not in _cache:
        _cache["bench"] = run_horizon(_setup_at(2 / 3),
                                      SimulationMode(MODE_BENCHMARK), _weather())
    return _cache["bench"]


def _dyn(participation):
    key = ("dyn", round(participation, 6))
    if key not in _cache:
        _cache[key] = run_horizon(_setup_at(participation),
                                  SimulationMode(MODE_DYNAMIC), _weather())
    return _cache[key]


def _daily_pds(trace, bench):
    return [pds_percent(d.aggregate_demand_kw, b.aggregate_demand_kw)
            for d, b in zip(trace.days, bench.days)]


def _mean_profile(days):
    return np.mean([d.aggregate_demand_kw for d in days], axis=0)


def _first_crossing(prices, thresh=0.05):
    """First day whose price vector moved < thresh relative to the day before."""
    for t in range(1, len(prices)):
        prev = float(np.linalg.norm(prices[t - 1]))
        if prev <= 1e-9:
            continue
        if float(np.linalg.norm(prices[t] - prices[t - 1])) / prev < thresh:
            return t
    return None


# ---------------------------------------------------------------------------
# random single/two-device households whose optimum touches only variable
# boxes and the flexible-load energy equality; every state path is certified
# to sit strictly inside its band so the grid-search reference is quadratic-
# accurate at the final step size

T_MARGIN = 2e-2     # degF clearance required of the indoor path
SOC_MARGIN = 5e-3   # state-of-charge clearance
FLEX_MARGIN = 5e-3  # kW clearance of the equality-forced slot


def _certified(oracle, x_free):
    cols = oracle._expand(np.asarray(x_free, float)[None, :])
    for kind, spec, ctx, _, _ in oracle.blocks:
        p = cols[kind]
        if kind == "hvac":
            tight = dataclasses.replace(spec, t_lower=spec.t_lower + T_MARGIN,
                                        t_upper=spec.t_upper - T_MARGIN)
            _, ok = _hvac_eval(tight, ctx, p)
        elif kind == "battery":
            tight = dataclasses.replace(spec, soc_lower=spec.soc_lower + SOC_MARGIN,
                                        soc_upper=spec.soc_upper - SOC_MARGIN)
            _, ok = _battery_eval(tight, oracle.slot_hours, p)
        elif kind == "flex":
            tight = dataclasses.replace(spec, p_lower=spec.p_lower + FLEX_MARGIN,
                                        p_upper=spec.p_upper - FLEX_MARGIN)
            _, ok = _flex_eval(tight, oracle.slot_hours, p)
        else:
            continue
        if not bool(ok[0]):
            return False
    return True


def _draw_hvac(rng, h):
    return make_hvac(h, p_max=float(rng.uniform(2.0, 4.0)), prefer=75.0,
                     lower=70.0, upper=80.0, zeta1=0.9,
                     zeta2=float(rng.uniform(0.85, 0.95)),
                     gamma=float(rng.uniform(0.7, 1.5)))


def _draw_flex(rng, h):
    return make_flex(h, prefer=float(rng.uniform(0.8, 1.5)),
                     band=float(rng.uniform(0.3, 0.5)),
                     gamma=float(rng.uniform(0.7, 1.5)))


def _draw_battery(rng, h):
    return make_battery(h, p_charge=float(rng.uniform(4.0, 6.0)),
                        p_discharge=float(rng.uniform(4.0, 6.0)),
                        capacity=float(rng.uniform(8.0, 14.0)),
                        soc_init=float(rng.uniform(0.4, 0.6)),
                        prefer=0.5, lower=0.1, upper=0.9,
                        gamma=float(rng.uniform(1.5, 3.0)))


def _c1_families():
    """(count, horizon, device-draw list, participant share, price cap, no_sell)."""
    return [
        (25, 2, ["hvac"], 0.7, 0.30, True),
        (18, 3, ["hvac"], 0.7, 0.30, True),
        (20, 2, ["flex"], 0.7, 0.30, True),
        (14, 3, ["flex"], 0.7, 0.30, True),
        (15, 2, ["battery"], 0.7, 0.06, False),
        (10, 3, ["battery"], 0.7, 0.06, False),
        (10, 2, ["pv"], 0.6, 0.20, False),
        (8, 3, ["pv"], 0.6, 0.20, False),
        (30, 2, ["hvac", "flex"], 0.7, 0.30, True),
        (12, 3, ["hvac", "flex"], 0.7, 0.30, True),
        (15, 2, ["battery", "flex"], 0.7, 0.06, False),
        (8, 3, ["battery", "flex"], 0.7, 0.06, False),
        (15, 2, ["hvac", "battery"], 0.7, 0.06, False),
    ]


def _c1_instances():
    """200 certified households, each paired with its solved grid reference."""
    rng = np.random.default_rng(20260823)
    out = []
    for count, h, kinds, share, cap, no_sell in _c1_families():
        made = attempts = 0
        while made < count:
            attempts += 1
            if attempts > 40 * count:
                raise RuntimeError(f"family {kinds} at h={h} keeps failing "
                                   "its interior certificate")
            devices = []
            for kind in kinds:
                if kind == "hvac":
                    devices.append(_draw_hvac(rng, h))
                elif kind == "flex":
                    devices.append(_draw_flex(rng, h))
                elif kind == "battery":
                    devices.append(_draw_battery(rng, h))
                else:
                    devices.append(make_pv(rating=float(rng.uniform(3.0, 6.0))))
            participating = (made % 10) < share * 10
            prices = rng.uniform(0.0, cap, size=h) if participating else None
            t_out = 75.0 + rng.uniform(1.0, 4.0, size=h)
            irr = rng.uniform(100.0, 1000.0, size=h)
            hh = household_of(devices, participating=participating, hid=made)
            oracle = HouseholdOracle(hh, prices, t_out, irr,
                                     no_sell=no_sell)
            ref_obj, ref_x = oracle.solve()
            if not math.isfinite(ref_obj) or not _certified(oracle, ref_x):
                continue
            out.append((hh, prices, t_out, irr, no_sell, ref_obj))
            made += 1
    return out


class TestAcceptance(unittest.TestCase):
    maxDiff = None

    def _report(self, num, ok, detail):
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num:02d}: {detail}")
        self.assertTrue(ok, f"criterion {num:02d}: {detail}")

    # -- component-level -------------------------------------------------

    def test_c01_household_solver_matches_grid_reference(self):
        """200 random 1-2 device households: objective within 1e-5 of an
        independent grid search, stationarity residual at most 1e-6."""
        worst_obj = worst_kkt = 0.0
        for hh, prices, t_out, irr, no_sell, ref_obj in _c1_instances():
            prob = HouseholdProblem(household=hh, prices=prices, t_out=t_out,
                                    irradiance=irr, no_sell=no_sell)
            plan = solve_household(prob)
            worst_obj = max(worst_obj, abs(plan.objective_value - ref_obj))
            worst_kkt = max(worst_kkt, plan.kkt_residual)
        ok = worst_obj <= 1e-5 and worst_kkt <= 1e-6
        self._report(1, ok, f"max |objective gap| {worst_obj:.3g} (<= 1e-5), "
                            f"max KKT residual {worst_kkt:.3g} (<= 1e-6) "
                            "over 200 households")

    def test_c02_projections_match_references(self):
        """L1-ball projection against a penalty-method reference; smoothness-
        ellipsoid projection lands on the boundary with a clean KKT point."""
        rng = np.random.default_rng(31)
        worst_l1 = 0.0
        for i in range(500):
            scale = (0.3, 1.0, 3.0)[i % 3]
            z = rng.standard_normal(5) * scale
            radius = float(rng.uniform(0.2, 2.5))
            got = project_l1_ball(z, radius)
            ref = l1_projection_reference(z, radius)
            worst_l1 = max(worst_l1, float(np.max(np.abs(got - ref))))

        worst_gap = worst_res = 0.0
        min_mu = np.inf
        for dim in (4, 24, 48):
            metric = SmoothnessMetric(dim=dim, lam=9.0)
            kmat = circular_k(dim, 9.0)
            for _ in range(500):
                z = rng.standard_normal(dim)
                qf = float(z @ np.linalg.solve(kmat, z))
                z *= float(rng.uniform(1.05, 4.0)) / math.sqrt(max(qf, 1e-12))
                x = project_ellipsoid(z, metric)
                gap, res, mu = ellipsoid_kkt(z, x, kmat)
                worst_gap = max(worst_gap, abs(gap))
                worst_res = max(worst_res, res)
                min_mu = min(min_mu, mu)
        ok = worst_l1 <= 1e-8 and worst_gap <= 1e-8 and worst_res <= 1e-6 \
            and min_mu >= -1e-9
        self._report(2, ok, f"l1 max err {worst_l1:.3g} (<= 1e-8); ellipsoid "
                            f"max boundary gap {worst_gap:.3g} (<= 1e-8), "
                            f"max stationarity {worst_res:.3g} (<= 1e-6)")

    def test_c03_classifier_gradients_match_finite_differences(self):
        """Analytic offline-loss gradients agree with central differences in
        every parameter block on 20 random draws."""
        rng = np.random.default_rng(47)
        hyper = Hyperparams(k=3, hidden=4, d_in=6)
        worst = 0.0
        for _ in range(20):
            p = ClassifierParams(
                w1=rng.standard_normal((4, 6)) * 0.3,
                b1=rng.standard_normal(4) * 0.1,
                w2=rng.standard_normal((3, 4)) * 0.3,
                b2=rng.standard_normal(3) * 0.1,
                mu_temp=rng.standard_normal((3, 3)) * 0.5,
                mu_solar=rng.standard_normal((3, 3)) * 0.5,
                feature_mean=np.zeros(6), feature_scale=np.ones(6))
            batch = [(rng.standard_normal(6), rng.standard_normal(3),
                      rng.standard_normal(3)) for _ in range(3)]
            _, grads = offline_loss_and_grad(p, batch, hyper)

            def loss_of(params):
                return offline_loss_and_grad(params, batch, hyper)[0]

            for block in ("w1", "b1", "w2", "b2", "mu_temp", "mu_solar"):
                fd = fd_block_gradient(loss_of, p, block, step=1e-5)
                denom = max(float(np.linalg.norm(fd)), 1e-12)
                rel = float(np.linalg.norm(grads[block] - fd)) / denom
                worst = max(worst, rel)
        ok = worst <= 1e-4
        self._report(3, ok, f"max relative gradient error {worst:.3g} "
                            "(<= 1e-4) over 20 draws x 6 blocks")

    # -- behavioral ------------------------------------------------------

    def test_c04_single_cluster_collapses_to_flat_learner(self):
        """The clustered learner with k=1 reproduces the context-agnostic
        price trajectory bit for bit across 30 simulated days."""
        weather = _weather()[:30]
        clf = offline_train(weather[:6], Hyperparams(k=1, hidden=6, d_in=48,
                                                     offline_epochs=25),
                            seed=_rig().seeds.learner)
        setup = _setup_at(2 / 3)
        clustered = run_horizon(setup, SimulationMode(MODE_CLUSTERED,
                                                      classifier=clf), weather)
        flat_days = _dyn(2 / 3).days[:30]
        same_prices = all(np.array_equal(a.prices, b.prices)
                          for a, b in zip(clustered.days, flat_days))
        same_agg = all(np.array_equal(a.aggregate_demand_kw,
                                      b.aggregate_demand_kw)
                       for a, b in zip(clustered.days, flat_days))
        ok = same_prices and same_agg and len(clustered.days) == 30
        self._report(4, ok, "k=1 clustered run bit-identical to the flat "
                            f"learner over 30 days (prices {same_prices}, "
                            f"aggregates {same_agg})")

    def test_c05_tou_shifts_demand_to_offpeak_boundary(self):
        """Full participation under the default 3-tier TOU: the largest
        hourly jump of the mean day lands at the 22:00 off-peak boundary and
        the peak is not materially below the benchmark's."""
        tou = run_horizon(_setup_at(1.0), SimulationMode(MODE_TOU),
                          _weather()[:21])
        prof = _mean_profile(tou.days)
        prof0 = _mean_profile(_bench().days[:21])
        jumps = prof[1:] - prof[:-1]
        at_boundary = int(np.argmax(jumps)) == 21      # into the 22:00 slot
        ratio = float(prof.max() / prof0.max())
        ok = at_boundary and ratio >= 0.95
        self._report(5, ok, f"largest jump into slot {int(np.argmax(jumps)) + 1} "
                            f"(want 22), TOU/benchmark peak ratio {ratio:.4f} "
                            "(>= 0.95)")

    def test_c06_nominal_rig_shaves_peaks(self):
        """One-way dynamic pricing at 20% storage / 2-in-3 participation:
        daily peak shaving positive on at least 90% of days, its window mean
        between 5 and 30 points, and hour-to-hour variation reduced."""
        daily = _daily_pds(_dyn(2 / 3), _bench())
        positive = sum(1 for v in daily if v > 0)
        need = math.ceil(0.9 * len(daily))
        mean_pds = float(np.mean(daily))
        vr = variation_reduction_pct(
            [d.aggregate_demand_kw for d in _dyn(2 / 3).days],
            [d.aggregate_demand_kw for d in _bench().days])
        ok = positive >= need and 5.0 <= mean_pds <= 30.0 and vr > 0.0
        self._report(6, ok, f"PDS>0 on {positive}/{len(daily)} days "
                            f"(need {need}), window mean {mean_pds:.2f} in "
                            f"[5, 30], variation reduction {vr:.2f} > 0")

    def test_c07_shaving_shifts_rather_than_sheds(self):
        """Total energy barely moves: the consumed-energy change stays below
        a third of the window-mean peak shaving."""
        mean_pds = float(np.mean(_daily_pds(_dyn(2 / 3), _bench())))
        d = np.concatenate([x.aggregate_demand_kw for x in _dyn(2 / 3).days])
        d0 = np.concatenate([x.aggregate_demand_kw for x in _bench().days])
        er = energy_reduction_pct(d, d0)
        ok = abs(er) <= mean_pds / 3.0
        self._report(7, ok, f"|energy reduction| {abs(er):.3f} <= "
                            f"{mean_pds / 3.0:.3f} (PDS/3)")

    def test_c08_shaving_grows_with_participation(self):
        """Window-mean peak shaving is monotone in the participation rate,
        anchored at exactly zero when nobody participates."""
        m = {p: float(np.mean(_daily_pds(_dyn(p), _bench())))
             for p in (1 / 3, 2 / 3, 1.0)}
        zero_run = run_horizon(_setup_at(0.0), SimulationMode(MODE_DYNAMIC),
                               _weather()[:8])
        zero = [pds_percent(d.aggregate_demand_kw, b.aggregate_demand_kw)
                for d, b in zip(zero_run.days, _bench().days[:8])]
        anchored = all(v == 0.0 for v in zero)
        tol = 0.5
        ok = (anchored and m[1.0] >= m[2 / 3] - tol
              and m[2 / 3] >= m[1 / 3] - tol and m[1 / 3] >= -tol)
        self._report(8, ok, f"PDS {m[1.0]:.2f} >= {m[2 / 3]:.2f} >= "
                            f"{m[1 / 3]:.2f} >= 0.00 (slack 0.5pp), "
                            f"zero-participation anchor exact: {anchored}")

    def test_c09_elasticity_scaling_controls_response(self):
        """Scaling all comfort weights from 1e4 down to 1e-4: settled daily
        peaks fall monotonically, the stiff end matches the benchmark within
        1%, and the price-dominated end saturates within 1%."""
        scales = (1e4, 1e2, 1.0, 1e-2, 1e-4)
        peaks = []
        for s in scales:
            st = dataclasses.replace(_setup_at(2 / 3), gamma_scale=float(s))
            trace = run_horizon(st, SimulationMode(MODE_DYNAMIC),
                                _weather()[:15])
            peaks.append(float(np.mean([d.aggregate_demand_kw.max()
                                        for d in trace.days[10:15]])))
        bench_peak = float(np.mean([d.aggregate_demand_kw.max()
                                    for d in _bench().days[10:15]]))
        monotone = all(peaks[i + 1] <= peaks[i] + 1e-6
                       for i in range(len(peaks) - 1))
        stiff = abs(peaks[0] - bench_peak) / bench_peak <= 0.01
        saturated = abs(peaks[3] - peaks[4]) / peaks[4] < 0.01
        ok = monotone and stiff and saturated
        self._report(9, ok, "settled peaks " +
                     " >= ".join(f"{p:.2f}" for p in peaks) +
                     f"; stiff end vs benchmark {bench_peak:.2f} within 1%: "
                     f"{stiff}; saturation within 1%: {saturated}")

    def test_c10_coordination_ladder(self):
        """More coordination never hurts: direct control >= two-way
        negotiation >= one-way dynamic pricing (1pp slack), same 14 days."""
        setup = _setup_at(2 / 3)
        weather = _weather()[:14]
        bench14 = _bench().days[:14]

        def mean_pds(days):
            return float(np.mean([pds_percent(d.aggregate_demand_kw,
                                              b.aggregate_demand_kw)
                                  for d, b in zip(days, bench14)]))

        one_way = mean_pds(_dyn(2 / 3).days[:14])
        two_way = mean_pds(run_horizon(setup, SimulationMode(
            MODE_TWO_WAY, max_rounds=200), weather).days)
        direct = mean_pds(direct_control_run(setup, weather,
                                             max_rounds=200).days)
        ok = direct >= two_way - 1e-6 and two_way >= one_way - 1.0
        self._report(10, ok, f"direct {direct:.2f} >= two-way {two_way:.2f} "
                             f">= one-way {one_way:.2f} - 1pp")

    def test_c11_prices_settle_quickly(self):
        """Day-over-day price movement drops below 5% within 12 days for the
        flat learner and within 15 days for the clustered one."""
        flat_prices = [d.prices for d in _dyn(2 / 3).days]
        flat_day = _first_crossing(flat_prices)

        clf = offline_train(_weather(), _rig().hyper, seed=_rig().seeds.learner)
        clustered = run_horizon(_setup_at(2 / 3),
                                SimulationMode(MODE_CLUSTERED, classifier=clf),
                                _weather()[:20])
        clus_day = _first_crossing([d.prices for d in clustered.days])
        ok = (flat_day is not None and flat_day <= 12
              and clus_day is not None and clus_day <= 15)
        self._report(11, ok, f"flat learner settles on day {flat_day} "
                             f"(<= 12), clustered on day {clus_day} (<= 15)")

    @unittest.skipUnless(os.environ.get("GRIDFLEX_SCALE_TEST") == "1",
                         "heavy 10x-population tier; set GRIDFLEX_SCALE_TEST=1")
    def test_c12_shaving_survives_population_scaling(self):
        """500 households instead of 50, same per-household distributions:
        window-mean peak shaving moves by at most 2 points."""
        cfg = _rig()
        big = dataclasses.replace(
            cfg, participation_rate=2 / 3,
            population=dataclasses.replace(cfg.population, n_households=500))
        setup = big.to_setup()
        weather = _weather()
        bench = run_horizon(setup, SimulationMode(MODE_BENCHMARK), weather)
        dyn = run_horizon(setup, SimulationMode(MODE_DYNAMIC), weather)
        big_pds = float(np.mean(_daily_pds(dyn, bench)))
        small_pds = float(np.mean(_daily_pds(_dyn(2 / 3), _bench())))
        ok = abs(big_pds - small_pds) <= 2.0
        self._report(12, ok, f"window-mean PDS at 500 households "
                             f"{big_pds:.2f} vs 50 households "
                             f"{small_pds:.2f} (|gap| <= 2pp)")

    def test_c13_emitted_metrics_are_recomputable(self):
        """A simulate run immediately verifies: every emitted metric is
        reproduced from the raw traces to 1e-9 (verify exits 0)."""
        data = yaml.safe_load(RIG.read_text())
        data["population"]["n_households"] = 6
        data["population"]["pv_battery_penetration"] = 0.34
        data["participation_rate"] = 0.5
        data["weather"]["synthetic"]["days"] = 4
        data["hyper"] = {"k": 1, "hidden": 6, "offline_epochs": 25}
        with tempfile.TemporaryDirectory() as td:
            tmp = Path(td)
            cfg_path = tmp / "scenario.yaml"
            cfg_path.write_text(yaml.safe_dump(data), encoding="utf-8")
            out = tmp / "run"
            with contextlib.redirect_stdout(io.StringIO()), \
                    contextlib.redirect_stderr(io.StringIO()):
                sim = cli_main(["simulate", "--config", str(cfg_path),
                                "--out", str(out)])
                ver = cli_main(["verify", "--out", str(out)])
        ok = sim == 0 and ver == 0
        self._report(13, ok, f"simulate exit {sim}, verify exit {ver} "
                             "(all metrics recomputed within 1e-9)")


if __name__ == "__main__":
    unittest.main()
