import unittest

import numpy as np
from numpy.testing import assert_allclose

from conftest import (
    arr,
    household_of,
    make_battery,
    make_flex,
    make_hvac,
    make_pv,
)
from oracles import HouseholdOracle

from gridflex.errors import InfeasibleHousehold, PopulationSolveError
from gridflex.hems import (
    HouseholdProblem,
    SolverOptions,
    solve_household,
    solve_population,
)

H = 4
T_OUT = arr(H, 78.0)
IRR = arr(H, 600.0)
PRICES = np.array([0.05, 0.20, 0.10, 0.02])


def flex_problem(prices=PRICES, participating=True, **kw):
    hh = household_of([make_flex(H)], participating=participating)
    return HouseholdProblem(hh, prices, T_OUT, IRR, **kw)


class TestClosedFormCases(unittest.TestCase):
    def test_non_participant_flex_runs_preferred_profile(self):
        plan = solve_household(flex_problem(prices=None, participating=False))
        assert_allclose(plan.net_power_kw, arr(H, 1.0), atol=1e-7)
        self.assertLessEqual(abs(plan.objective_value), 1e-10)
        self.assertEqual(plan.status, "optimal")

    def test_pv_only_participant_cannot_export(self):
        hh = household_of([make_pv(5.0)], participating=True)
        plan = solve_household(HouseholdProblem(hh, PRICES, T_OUT, IRR,
                                                no_sell=True))
        assert_allclose(plan.net_power_kw, np.zeros(H), atol=1e-6)

    def test_pv_only_exports_when_selling_allowed(self):
        hh = household_of([make_pv(5.0)], participating=True)
        plan = solve_household(HouseholdProblem(hh, PRICES, T_OUT, IRR,
                                                no_sell=False))
        self.assertLess(plan.net_power_kw.min(), -1.0)

    def test_battery_at_preferred_soc_stays_idle(self):
        hh = household_of([make_battery(H, soc_init=0.5, prefer=0.5)],
                          participating=False)
        plan = solve_household(HouseholdProblem(hh, None, T_OUT, IRR))
        assert_allclose(plan.net_power_kw, np.zeros(H), atol=1e-6)

    def test_kkt_residual_within_tolerance(self):
        for prob in (flex_problem(),
                     HouseholdProblem(household_of([make_hvac(H)], True),
                                      PRICES, T_OUT, IRR)):
            plan = solve_household(prob)
            self.assertLessEqual(plan.kkt_residual, 1e-6)
            self.assertEqual(plan.violations, [])


class TestProblemValidation(unittest.TestCase):
    def test_participant_requires_prices(self):
        with self.assertRaises(ValueError):
            flex_problem(prices=None, participating=True)

    def test_non_participant_rejects_prices(self):
        with self.assertRaises(ValueError):
            flex_problem(prices=PRICES, participating=False)

    def test_unreachable_temperature_band_names_slot(self):
        spec = make_hvac(H, p_max=0.5, upper=76.0)
        hh = household_of([spec], participating=False)
        hot = arr(H, 105.0)
        with self.assertRaises(InfeasibleHousehold) as cm:
            solve_household(HouseholdProblem(hh, None, hot, IRR))
        self.assertIn("slot", str(cm.exception).lower())


class TestPriceCoupling(unittest.TestCase):
    def test_raising_one_price_never_raises_that_slot(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            base = rng.uniform(0.0, 0.3, H)
            slot = int(rng.integers(0, H))
            lo = solve_household(flex_problem(prices=base))
            hi_p = base.copy()
            hi_p[slot] += rng.uniform(0.05, 0.3)
            hi = solve_household(flex_problem(prices=hi_p))
            self.assertLessEqual(hi.net_power_kw[slot],
                                 lo.net_power_kw[slot] + 1e-7)

    def test_non_participants_ignore_prices(self):
        hh = household_of([make_hvac(H), make_flex(H)], participating=False)
        a = solve_household(HouseholdProblem(hh, None, T_OUT, IRR))
        b = solve_household(HouseholdProblem(hh, None, T_OUT, IRR))
        assert_allclose(a.net_power_kw, b.net_power_kw, atol=0)

    def test_huge_discomfort_weight_recovers_benchmark_plan(self):
        hh = household_of([make_hvac(H), make_flex(H)], participating=True)
        priced = solve_household(HouseholdProblem(hh, PRICES, T_OUT, IRR,
                                                  gamma_scale=1e4))
        bench_hh = household_of([make_hvac(H), make_flex(H)],
                                participating=False)
        bench = solve_household(HouseholdProblem(bench_hh, None, T_OUT, IRR))
        assert_allclose(priced.net_power_kw, bench.net_power_kw, atol=1e-3)


class TestDeviceScoping(unittest.TestCase):
    spiky = np.array([0.0, 0.45, 0.0, 0.0])

    def test_priced_subset_leaves_others_at_comfort(self):
        hh = household_of([make_hvac(H), make_flex(H), make_battery(H)],
                          participating=True)
        plan = solve_household(HouseholdProblem(
            hh, self.spiky, T_OUT, IRR,
            price_device_kinds=frozenset({"hvac"})))
        assert_allclose(plan.device_plans["flexible_load"].power_kw,
                        arr(H, 1.0), atol=1e-6)
        assert_allclose(plan.device_plans["battery"].power_kw, np.zeros(H),
                        atol=1e-6)
        full = solve_household(HouseholdProblem(hh, self.spiky, T_OUT, IRR))
        self.assertGreater(np.abs(
            full.device_plans["flexible_load"].power_kw - arr(H, 1.0)).max(),
            1e-3)

    def test_freeze_flags_pin_devices(self):
        hh = household_of([make_flex(H), make_battery(H)], participating=True)
        plan = solve_household(HouseholdProblem(hh, self.spiky, T_OUT, IRR,
                                                freeze_flex=True,
                                                freeze_battery=True))
        assert_allclose(plan.device_plans["flexible_load"].power_kw,
                        arr(H, 1.0), atol=1e-8)
        assert_allclose(plan.device_plans["battery"].power_kw, np.zeros(H),
                        atol=1e-8)


class TestConvexityCertificate(unittest.TestCase):
    def test_feasible_perturbations_never_improve(self):
        # interior random steps of 1e-4 around the returned optimum
        rng = np.random.default_rng(23)
        prob = flex_problem()
        plan = solve_household(prob)
        oracle = HouseholdOracle(prob.household, PRICES, T_OUT, IRR)
        base_free = plan.device_plans["flexible_load"].power_kw[:-1]
        obj0, _ = oracle.evaluate(base_free[None, :])
        for _ in range(50):
            d = rng.standard_normal(H - 1)
            d /= np.linalg.norm(d)
            cand = base_free + 1e-4 * d
            obj, feas = oracle.evaluate(cand[None, :])
            if feas[0]:
                self.assertGreaterEqual(obj[0], obj0[0] - 1e-8)


class TestAgainstBruteForce(unittest.TestCase):
    def test_two_slot_hvac_household(self):
        spec = make_hvac(2, p_max=3.0, prefer=75.0, lower=66.0, upper=84.0)
        hh = household_of([spec], participating=True)
        t_out = np.array([77.0, 78.5])
        prices = np.array([0.12, 0.05])
        plan = solve_household(HouseholdProblem(hh, prices, t_out, IRR[:2]))
        obj_ref, x_ref = HouseholdOracle(hh, prices, t_out, IRR[:2]).solve()
        self.assertLessEqual(abs(plan.objective_value - obj_ref), 1e-5)

    def test_three_slot_two_device_household(self):
        hh = household_of([make_hvac(3, prefer=75.0), make_flex(3)],
                          participating=True)
        t_out = np.array([76.5, 78.0, 77.0])
        prices = np.array([0.02, 0.25, 0.08])
        plan = solve_household(HouseholdProblem(hh, prices, t_out, IRR[:3]))
        obj_ref, x_ref = HouseholdOracle(hh, prices, t_out, IRR[:3]).solve()
        self.assertLessEqual(abs(plan.objective_value - obj_ref), 1e-5)

    def test_battery_pair_against_grid(self):
        hh = household_of([make_battery(2, capacity=12.0),
                           make_flex(2, prefer=1.2, band=0.4)],
                          participating=True)
        prices = np.array([0.30, 0.01])
        plan = solve_household(HouseholdProblem(hh, prices, T_OUT[:2],
                                                IRR[:2], no_sell=False))
        obj_ref, x_ref = HouseholdOracle(hh, prices, T_OUT[:2], IRR[:2],
                                         no_sell=False).solve()
        self.assertLessEqual(abs(plan.objective_value - obj_ref), 1e-5)


class TestBatchBehaviour(unittest.TestCase):
    def test_identical_households_identical_plans(self):
        probs = [flex_problem() for _ in range(3)]
        plans = solve_population(probs)
        for p in plans[1:]:
            assert_allclose(p.net_power_kw, plans[0].net_power_kw, atol=0)

    def test_batch_equals_sequential(self):
        rng = np.random.default_rng(29)
        probs = []
        for i in range(6):
            hh = household_of([make_hvac(H), make_flex(H)],
                              participating=bool(i % 2), hid=i)
            probs.append(HouseholdProblem(
                hh, rng.uniform(0.0, 0.3, H) if i % 2 else None, T_OUT, IRR))
        together = solve_population(probs)
        alone = [solve_household(p) for p in probs]
        for a, b in zip(together, alone):
            self.assertEqual(a.household_id, b.household_id)
            assert_allclose(a.net_power_kw, b.net_power_kw, atol=0)

    def test_failures_collected_not_fatal_midway(self):
        good = flex_problem()
        bad_spec = make_hvac(H, p_max=0.5, upper=76.0)
        bad = HouseholdProblem(household_of([bad_spec], False, hid=1),
                               None, arr(H, 105.0), IRR)
        with self.assertRaises(PopulationSolveError) as cm:
            solve_population([good, bad, flex_problem()])
        err = cm.exception
        self.assertEqual(len(err.failures), 1)
        self.assertEqual(err.plans[1], None)
        self.assertIsNotNone(err.plans[0])
        self.assertIsNotNone(err.plans[2])


if __name__ == "__main__":
    unittest.main()
