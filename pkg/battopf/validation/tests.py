import dataclasses

import numpy as np
from django.test import SimpleTestCase, override_settings

from battopf.exceptions import PlanRejectedError
from battopf.grid.tests import load_fixture_case
from battopf.planning.control import ControlPolicy, battery_energy
from battopf.planning.driver import SolverOptions, run_cutting_plane
from battopf.planning.master import build_master
from battopf.storage.curves import simulate_trajectory
from battopf.uncertainty.concentration import ConcentrationModel
from .services import monte_carlo_validate, plan_from_results


def case9():
    return load_fixture_case('case9.m', 'case9_scenario.json')


def case9_policy(lambda4, lambda9):
    return ControlPolicy(np.array([[[lambda4, lambda4], [lambda9, lambda9]]]), ((0, 1), (0, 1)))


class BatteryDrainTests(SimpleTestCase):

    def test_bus9_drain_under_worst_deviation(self):
        case = case9()
        battery = case.batteries[1]
        energy = battery_energy(case9_policy(0.36, 0.64), 1, 0, np.array([[0.0], [-100.0]]))
        trajectory = simulate_trajectory(battery, [energy])
        self.assertTrue(trajectory.ok)
        self.assertAlmostEqual(trajectory.charges[0] - trajectory.charges[1], 0.64 * 100 / 0.8, delta=1e-6)
        self.assertGreaterEqual(min(trajectory.charges), 0.0)


class MonteCarloValidationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.case = case9()
        cls.solution = run_cutting_plane(cls.case, SolverOptions.from_settings(threads=1))

    def test_robust_optimum_passes(self):
        self.assertEqual(self.solution.status, 'optimal')
        candidate = self.solution.candidate
        report = monte_carlo_validate(self.case, candidate.dispatch, candidate.policy, samples=10000, seed=42)
        self.assertTrue(report.passed, report.to_dict()['violations'][:5])
        self.assertLessEqual(report.worst, 1e-6)
        self.assertEqual(report.violating_samples, 0)

    def test_overloaded_battery_fails(self):
        candidate = self.solution.candidate
        with self.assertLogs('battopf.validation.services', level='WARNING'):
            report = monte_carlo_validate(self.case, candidate.dispatch, case9_policy(0.1, 0.9),
                                          samples=2000, seed=42)
        self.assertFalse(report.passed)
        self.assertIn('range', report.families())
        # 0.9 * 100 MWh electrical against 64 extractable, in chemical MWh at slope 0.8
        self.assertLessEqual(report.max_violation['range'], (90.0 - 64.0) / 0.8 + 1e-6)
        self.assertTrue(all(record.sample >= 1 for record in report.records if record.family == 'range'))

    def test_seeded_runs_agree(self):
        candidate = self.solution.candidate
        first = monte_carlo_validate(self.case, candidate.dispatch, case9_policy(0.1, 0.9), samples=500, seed=7)
        second = monte_carlo_validate(self.case, candidate.dispatch, case9_policy(0.1, 0.9), samples=500, seed=7)
        self.assertEqual(first.to_dict(), second.to_dict())

    def test_accepts_a_lambda_array(self):
        candidate = self.solution.candidate
        report = monte_carlo_validate(self.case, candidate.dispatch, candidate.lambdas, samples=200, seed=1)
        self.assertTrue(report.passed)

    def test_sample_count(self):
        candidate = self.solution.candidate
        with self.assertRaises(ValueError):
            monte_carlo_validate(self.case, candidate.dispatch, candidate.policy, samples=0)

    def test_unbalanced_policy_is_rejected(self):
        candidate = self.solution.candidate
        with self.assertRaises(PlanRejectedError):
            monte_carlo_validate(self.case, candidate.dispatch, case9_policy(0.36, 0.65), samples=10)

    def test_wrong_shape_is_rejected(self):
        with self.assertRaises(PlanRejectedError):
            monte_carlo_validate(self.case, np.zeros((2, 1)), case9_policy(0.36, 0.64), samples=10)
        with self.assertRaises(PlanRejectedError):
            monte_carlo_validate(self.case, np.zeros((3, 1)), np.full((1, 2, 3), 0.5), samples=10)

    @override_settings(BATTOPF_VALIDATION_SAMPLES=50, BATTOPF_SEED=3)
    def test_defaults_from_settings(self):
        candidate = self.solution.candidate
        report = monte_carlo_validate(self.case, candidate.dispatch, candidate.policy)
        self.assertEqual((report.samples, report.seed), (50, 3))


class NominalCheckTests(SimpleTestCase):

    def test_balance_and_generator_limits(self):
        base = case9()
        case = dataclasses.replace(base, uncertainty=ConcentrationModel.zero(2, 1))
        dispatch = build_master(case).solve().dispatch.copy()
        dispatch[0, 0] += 5.0
        with self.assertLogs('battopf.validation.services', level='WARNING'):
            report = monte_carlo_validate(case, dispatch, case9_policy(0.5, 0.5), samples=5)
        self.assertAlmostEqual(report.max_violation['balance'], 5.0, places=6)
        self.assertEqual(report.records[0].sample, 0)

        dispatch = build_master(case).solve().dispatch.copy()
        dispatch[1, 0] = 1000.0
        with self.assertLogs('battopf.validation.services', level='WARNING'):
            report = monte_carlo_validate(case, dispatch, case9_policy(0.5, 0.5), samples=5)
        self.assertIn('generator', report.families())


class EndToEndTests(SimpleTestCase):

    def test_toy3_plan_is_robust(self):
        case = load_fixture_case('toy3.m', 'toy3_scenario.json')
        solution = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        self.assertEqual(solution.status, 'optimal')
        report = monte_carlo_validate(case, solution.candidate.dispatch, solution.candidate.policy,
                                      samples=2000, seed=42)
        self.assertTrue(report.passed)


class ResultsDocumentTests(SimpleTestCase):

    def test_plan_read_back(self):
        case = case9()
        dispatch = np.array([[90.0], [40.0], [35.0]])
        policy = case9_policy(0.36, 0.64)
        results = {'status': 'optimal', 'Pg_mw': dispatch.tolist(), 'lambda': policy.to_list()}
        again_dispatch, again_policy = plan_from_results(case, results)
        np.testing.assert_array_equal(again_dispatch, dispatch)
        np.testing.assert_array_equal(again_policy.lambdas, policy.lambdas)
        self.assertEqual(again_policy.responds_to, ((0, 1), (0, 1)))

    def test_results_without_plan(self):
        with self.assertRaises(PlanRejectedError):
            plan_from_results(case9(), {'status': 'infeasible', 'Pg_mw': None, 'lambda': None})

    def test_misfit_lambda(self):
        results = {'status': 'optimal', 'Pg_mw': [[1.0], [1.0], [1.0]], 'lambda': [{'t': 1, 'entries': [[1.0]]}]}
        with self.assertRaises(PlanRejectedError):
            plan_from_results(case9(), results)
