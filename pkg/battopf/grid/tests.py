import dataclasses
import json
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from battopf.exceptions import (
    CaseParseError,
    CaseValidationError,
    NetworkError,
    UnbalancedInjectionError,
    UncertaintyModelError,
)
from .cases import BranchSpec, Bus, BusType, CostCurve, GeneratorSpec, GridCase, case_from_dict, case_to_dict
from .matpower import parse_matpower_case
from .network import build_dc_network, compute_shift_factors, generation_by_bus, nominal_flows
from .scenario import parse_scenario_spec
from .synthetic import load_profile, synthetic_case, worst_period_deviation

FIXTURES = Path(__file__).resolve().parent / 'fixtures'


def fixture_text(name):
    return (FIXTURES / name).read_text()


def load_fixture_case(case_name, scenario_name=None):
    case = parse_matpower_case(fixture_text(case_name))
    if scenario_name:
        case = parse_scenario_spec(fixture_text(scenario_name), case)
    return case


class MatpowerParserTests(SimpleTestCase):

    def test_case9_counts(self):
        case = load_fixture_case('case9.m')
        self.assertEqual(case.name, 'case9')
        self.assertEqual(case.base_mva, 100.0)
        self.assertEqual(len(case.buses), 9)
        self.assertEqual(len(case.branches), 9)
        self.assertEqual(len(case.generators), 3)
        self.assertAlmostEqual(case.total_load(), 315.0)
        self.assertEqual(case.slack_bus, 1)
        self.assertEqual(case.periods, 1)

    def test_case9_branch_and_generator_data(self):
        case = load_fixture_case('case9.m')
        first = case.branches[0]
        self.assertEqual((first.from_bus, first.to_bus), (1, 4))
        self.assertAlmostEqual(first.susceptance, 1.0 / 0.0576)
        self.assertEqual(first.limit_mw, 250.0)
        gen = case.generators[1]
        self.assertEqual(gen.bus, 2)
        self.assertEqual(gen.pmin_mw, 10.0)
        self.assertEqual(gen.pmax_mw, (300.0,))
        self.assertEqual(gen.cost.coefficients, (0.085, 1.2, 600.0))

    def test_ac_fields_are_reported(self):
        case = load_fixture_case('case9.m')
        self.assertTrue(any('reactive power' in warning for warning in case.warnings))

    def test_two_bus_case(self):
        case = load_fixture_case('two_bus.m')
        self.assertEqual(len(case.branches), 1)
        self.assertEqual(len(case.generators), 1)
        self.assertAlmostEqual(case.branches[0].susceptance, 10.0)

    def test_dangling_branch(self):
        text = fixture_text('case9.m').replace('\t9\t4\t0.01\t', '\t9\t99\t0.01\t')
        with self.assertRaisesMessage(CaseValidationError, 'missing bus 99'):
            parse_matpower_case(text)

    def test_malformed_row_reports_line(self):
        lines = fixture_text('case9.m').splitlines()
        target = next(k for k, line in enumerate(lines) if line.startswith('\t5\t6\t'))
        lines[target] = lines[target].replace('0.17', '0.1x7')
        with self.assertRaises(CaseParseError) as ctx:
            parse_matpower_case('\n'.join(lines))
        self.assertEqual(ctx.exception.line, target + 1)

    def test_missing_slack(self):
        text = fixture_text('case9.m').replace('\t1\t3\t0\t0\t', '\t1\t2\t0\t0\t')
        with self.assertRaisesMessage(CaseValidationError, 'exactly one slack bus'):
            parse_matpower_case(text)

    def test_duplicate_bus(self):
        text = fixture_text('case9.m').replace('\t9\t1\t125\t', '\t8\t1\t125\t')
        with self.assertRaisesMessage(CaseValidationError, 'duplicate bus id 8'):
            parse_matpower_case(text)

    def test_out_of_service_generator_is_dropped(self):
        text = fixture_text('case9.m').replace('\t85\t-10.95\t300\t-300\t1.025\t100\t1\t', '\t85\t-10.95\t300\t-300\t1.025\t100\t0\t')
        case = parse_matpower_case(text)
        self.assertEqual(len(case.generators), 2)
        self.assertTrue(any('out of service' in warning for warning in case.warnings))

    def test_zero_rate_means_unlimited(self):
        text = fixture_text('two_bus.m').replace('0.1\t0\t100\t', '0.1\t0\t0\t')
        case = parse_matpower_case(text)
        self.assertTrue(case.branches[0].unlimited)

    def test_unclosed_matrix(self):
        text = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0;\n"
        with self.assertRaises(CaseParseError):
            parse_matpower_case(text)


class ScenarioTests(SimpleTestCase):

    def test_case9_scenario(self):
        case = load_fixture_case('case9.m', 'case9_scenario.json')
        self.assertEqual(case.periods, 1)
        self.assertEqual([r.bus for r in case.renewables], [4, 8])
        self.assertEqual([r.forecast_mw for r in case.renewables], [(50.0,), (100.0,)])
        self.assertEqual([b.bus for b in case.batteries], [4, 9])
        self.assertEqual(case.batteries[1].responds_to, (0, 1))
        self.assertEqual(case.batteries[1].discharge_speed, (100.0,))
        self.assertEqual(case.cost_pwl_segments, 50)
        limits = {br.label: br.limit_mw for br in case.branches}
        self.assertEqual(limits['4-5'], 50.0)
        self.assertEqual(limits['9-4'], 70.0)
        self.assertEqual(limits['1-4'], 250.0)
        self.assertEqual(case.uncertainty.dimension, 2)

    def test_dispatch_floor_is_zero_unless_pmin_is_requested(self):
        case = load_fixture_case('case9.m', 'case9_scenario.json')
        self.assertFalse(case.respect_pmin)
        self.assertEqual([case.dispatch_floor(gen) for gen in case.generators], [0.0, 0.0, 0.0])
        data = json.loads(fixture_text('case9_scenario.json'))
        data['respect_pmin'] = True
        strict = parse_scenario_spec(json.dumps(data), parse_matpower_case(fixture_text('case9.m')))
        self.assertEqual([strict.dispatch_floor(gen) for gen in strict.generators], [10.0, 10.0, 10.0])
        self.assertEqual(case_from_dict(case_to_dict(strict)), strict)

    def test_case9_budget_row(self):
        case = load_fixture_case('case9.m', 'case9_scenario.json')
        self.assertTrue(case.uncertainty.membership(np.array([0.0, -100.0])).inside)
        self.assertFalse(case.uncertainty.membership(np.array([-50.0, -100.0])).inside)

    def test_plain_multi_period_case(self):
        case = parse_scenario_spec('{"T": 3, "load_scale": [1.0, 0.9, 1.1]}', load_fixture_case('case9.m'))
        self.assertEqual(case.periods, 3)
        self.assertEqual(case.generators[0].pmax_mw, (250.0, 250.0, 250.0))
        self.assertEqual(case.renewables, ())
        self.assertEqual(case.batteries, ())
        self.assertEqual(case.uncertainty.dimension, 0)
        np.testing.assert_allclose(case.load_matrix().sum(axis=0), [315.0, 283.5, 346.5])

    def test_negative_concentration_entry(self):
        data = json.loads(fixture_text('case9_scenario.json'))
        data['uncertainty']['K_minus'][2][0] = -1.0
        with self.assertRaisesMessage(UncertaintyModelError, 'concentration model requires nonnegative matrices'):
            parse_scenario_spec(json.dumps(data), load_fixture_case('case9.m'))

    def test_battery_at_missing_bus(self):
        data = json.loads(fixture_text('case9_scenario.json'))
        data['batteries'][0]['bus'] = 42
        with self.assertRaisesMessage(CaseValidationError, 'missing bus 42'):
            parse_scenario_spec(json.dumps(data), load_fixture_case('case9.m'))

    def test_curve_breakpoints_must_increase(self):
        data = json.loads(fixture_text('case9_scenario.json'))
        data['batteries'][0]['charge_curve'] = {'x': [0.0, 60.0, 50.0], 'y': [0.0, 50.0, 100.0]}
        with self.assertRaisesMessage(CaseValidationError, 'strictly increasing'):
            parse_scenario_spec(json.dumps(data), load_fixture_case('case9.m'))

    def test_forecast_length_must_match_horizon(self):
        data = json.loads(fixture_text('case9_scenario.json'))
        data['T'] = 2
        data['load_scale'] = [1.0, 1.0]
        data.pop('uncertainty')
        with self.assertRaisesMessage(CaseValidationError, 'forecast has 1 entries for T=2'):
            parse_scenario_spec(json.dumps(data), load_fixture_case('case9.m'))

    def test_efficiency_shorthand(self):
        data = {
            'T': 1,
            'renewables': [{'bus': 4, 'forecast_mw': [10.0]}],
            'batteries': [{'bus': 4, 'e_min_mwh': 10.0, 'e_max_mwh': 90.0, 'initial_mwh': 50.0,
                           'charge_efficiency': 0.9, 'discharge_efficiency': 0.8, 'responds_to': [1]}],
        }
        case = parse_scenario_spec(json.dumps(data), load_fixture_case('case9.m'))
        battery = case.batteries[0]
        self.assertAlmostEqual(battery.charge_curve.x[-1], 80.0 / 0.9)
        self.assertAlmostEqual(battery.discharge_curve.y[-1], 64.0)
        self.assertEqual(battery.responds_to, (0,))
        self.assertAlmostEqual(battery.charge_speed[0], 80.0 / 0.9)

    def test_invalid_json_reports_line(self):
        with self.assertRaises(CaseParseError) as ctx:
            parse_scenario_spec('{\n"T": 1,\n}', load_fixture_case('case9.m'))
        self.assertEqual(ctx.exception.line, 3)

    def test_budget_uncertainty(self):
        data = {
            'T': 1,
            'renewables': [{'bus': 4, 'forecast_mw': [10.0]}, {'bus': 8, 'forecast_mw': [10.0]}],
            'batteries': [{'bus': 9, 'e_min_mwh': 0.0, 'e_max_mwh': 50.0, 'initial_mwh': 25.0,
                           'responds_to': 'all'}],
            'uncertainty': {'type': 'budgets', 'gamma': [[10.0], [10.0]], 'Gamma': [1.0]},
        }
        case = parse_scenario_spec(json.dumps(data), load_fixture_case('case9.m'))
        self.assertFalse(case.uncertainty.membership([10.0, 10.0]).inside)
        self.assertTrue(case.uncertainty.membership([5.0, -5.0]).inside)


class GridCaseTests(SimpleTestCase):

    def test_round_trip(self):
        case = load_fixture_case('case9.m', 'case9_scenario.json')
        restored = case_from_dict(json.loads(json.dumps(case_to_dict(case))))
        self.assertEqual(restored, case)

    def test_round_trip_multi_period(self):
        case = load_fixture_case('toy3.m', 'toy3_scenario.json')
        restored = case_from_dict(json.loads(json.dumps(case_to_dict(case))))
        self.assertEqual(restored, case)
        self.assertEqual(restored.batteries[0].charge_curve.x, (0.0, 20.0, 60.0))

    def test_per_unit_round_trip(self):
        case = load_fixture_case('case9.m')
        values = np.array([0.0, 1e-3, 72.3, 315.0, -163.0])
        np.testing.assert_allclose(case.to_mw(case.to_pu(values)), values, rtol=1e-12)

    def test_nonconvex_cost_rejected(self):
        with self.assertRaisesMessage(CaseValidationError, 'convexity'):
            CostCurve.polynomial(-0.1, 5.0, 0.0).validate('generator 1')

    def test_secant_pieces_are_exact_at_breakpoints(self):
        cost = CostCurve.polynomial(0.11, 5.0, 150.0)
        pieces = cost.linear_pieces(10.0, 250.0, 4)
        for p in np.linspace(10.0, 250.0, 5):
            upper = max(slope * p + intercept for slope, intercept in pieces)
            self.assertAlmostEqual(upper, cost.evaluate(p), places=8)
        midpoint = 40.0
        upper = max(slope * midpoint + intercept for slope, intercept in pieces)
        self.assertGreaterEqual(upper, cost.evaluate(midpoint))

    def test_piecewise_cost_pieces(self):
        cost = CostCurve(model='piecewise', points=[(0.0, 0.0), (50.0, 500.0), (100.0, 1500.0)])
        cost.validate('g')
        self.assertEqual(cost.linear_pieces(0.0, 100.0, 10), [(10.0, 0.0), (20.0, -500.0)])
        self.assertEqual(cost.evaluate(75.0), 1000.0)


def triangle_case():
    return load_fixture_case('toy3.m')


class DCNetworkTests(SimpleTestCase):

    def test_two_bus_reduced_matrix(self):
        net = build_dc_network(load_fixture_case('two_bus.m'))
        np.testing.assert_allclose(net.reduced, [[10.0]])

    def test_case9_reduced_matrix_is_spd(self):
        net = build_dc_network(load_fixture_case('case9.m'))
        self.assertEqual(net.reduced.shape, (8, 8))
        np.testing.assert_allclose(net.reduced, net.reduced.T)
        np.linalg.cholesky(net.reduced)

    def test_disconnected_network(self):
        case = GridCase(
            base_mva=100.0,
            buses=[Bus(1, BusType.SLACK), Bus(2, BusType.PQ), Bus(3, BusType.PQ), Bus(4, BusType.PQ)],
            branches=[BranchSpec(1, 2, 10.0), BranchSpec(3, 4, 10.0)],
            generators=[GeneratorSpec(1, 0.0, (10.0,), CostCurve.polynomial(1.0, 0.0))],
        ).validate()
        with self.assertRaises(NetworkError) as ctx:
            build_dc_network(case)
        self.assertEqual(ctx.exception.bus, 3)
        self.assertIn('bus 3', str(ctx.exception))

    def test_triangle_shift_factors(self):
        nu = compute_shift_factors(build_dc_network(triangle_case()))
        flows = nu.flows([1.0, -1.0, 0.0])
        np.testing.assert_allclose(flows, [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], atol=1e-12)
        np.testing.assert_allclose(nu.matrix[:, nu.slack_index], 0.0)

    def test_two_bus_shift_factors(self):
        nu = compute_shift_factors(build_dc_network(load_fixture_case('two_bus.m')))
        np.testing.assert_allclose(nu.flows([1.0, -1.0]), [1.0])

    def test_case9_shift_factors_match_angle_solve(self):
        case = load_fixture_case('case9.m')
        net = build_dc_network(case)
        nu = compute_shift_factors(net)
        rng = np.random.default_rng(7)
        for _ in range(5):
            injection = rng.normal(0.0, 50.0, 9)
            injection -= injection.mean()
            theta = net.solve_angles(case.to_pu(injection))
            from_angles = case.to_mw(net.branch_flows(theta))
            np.testing.assert_allclose(nu.flows(injection), from_angles, atol=1e-9)
            # conservation at every bus
            np.testing.assert_allclose(net.incidence.T @ from_angles, injection, atol=1e-9)

    def test_slack_choice_does_not_change_flows(self):
        case = load_fixture_case('case9.m')
        moved = dataclasses.replace(case, buses=[
            dataclasses.replace(bus, type=BusType.SLACK if bus.id == 5 else
                                (BusType.PV if bus.type == BusType.SLACK else bus.type))
            for bus in case.buses
        ])
        first = compute_shift_factors(build_dc_network(case))
        second = compute_shift_factors(build_dc_network(moved))
        injection = np.array([80.0, -20.0, 30.0, 0.0, -90.0, 10.0, -40.0, 25.0, 5.0])
        np.testing.assert_allclose(first.flows(injection), second.flows(injection), atol=1e-9)

    def test_superposition(self):
        nu = compute_shift_factors(build_dc_network(load_fixture_case('case9.m')))
        injection = np.array([80.0, -20.0, 30.0, 0.0, -90.0, 10.0, -40.0, 25.0, 5.0])
        np.testing.assert_allclose(nu.flows(2.5 * injection), 2.5 * nu.flows(injection), rtol=1e-12)


class NominalFlowTests(SimpleTestCase):

    def test_triangle_hand_solution(self):
        case = triangle_case()
        net = build_dc_network(case)
        result = nominal_flows(net, case, [100.0, 0.0, 0.0])
        np.testing.assert_allclose(result.flows_mw, [200.0 / 3.0, 100.0 / 3.0, 100.0 / 3.0], atol=1e-9)
        self.assertEqual(result.overloaded, [])

    def test_triangle_overload_is_flagged(self):
        case = dataclasses.replace(triangle_case(), buses=[
            dataclasses.replace(bus, pd_mw=150.0 if bus.id == 2 else bus.pd_mw) for bus in triangle_case().buses
        ])
        result = nominal_flows(build_dc_network(case), case, [150.0, 0.0, 0.0])
        self.assertEqual(result.overloaded, [0, 1, 2])

    def test_zero_injection(self):
        case = dataclasses.replace(triangle_case(), buses=[
            dataclasses.replace(bus, pd_mw=0.0) for bus in triangle_case().buses
        ])
        result = nominal_flows(build_dc_network(case), case, np.zeros(3))
        np.testing.assert_allclose(result.flows_mw, 0.0)

    def test_unbalanced_injection(self):
        case = triangle_case()
        with self.assertRaises(UnbalancedInjectionError):
            nominal_flows(build_dc_network(case), case, [90.0, 0.0, 0.0])

    def test_forecasts_enter_the_balance(self):
        case = load_fixture_case('case9.m', 'case9_scenario.json')
        generation = generation_by_bus(case, [[60.0], [60.0], [45.0]])
        result = nominal_flows(build_dc_network(case), case, generation[:, 0])
        self.assertEqual(result.flows_mw.shape, (9,))


def small_synthetic(periods=3, seed=7):
    return synthetic_case(
        periods, seed=seed, buses=40, branches=55, generators=6, wind_farms=4, batteries=3,
        load_mw=800.0, wind_mw=200.0, budget=2.0, storage_mwh=60.0,
    )


class SyntheticCaseTests(SimpleTestCase):

    def test_counts(self):
        case = small_synthetic()
        self.assertEqual(len(case.buses), 40)
        self.assertEqual(len(case.branches), 55)
        self.assertEqual(len(case.generators), 6)
        self.assertEqual(len(case.renewables), 4)
        self.assertEqual(len(case.batteries), 3)
        self.assertEqual(case.uncertainty.dimension, 4 * 3)
        self.assertAlmostEqual(case.load_matrix()[:, 0].sum(), 800.0)
        self.assertAlmostEqual(case.forecast_matrix()[:, 0].sum(), 200.0)

    def test_same_seed_same_case(self):
        self.assertEqual(small_synthetic(seed=3), small_synthetic(seed=3))
        self.assertNotEqual(small_synthetic(seed=3).branches, small_synthetic(seed=4).branches)

    def test_network_is_connected(self):
        case = small_synthetic()
        net = build_dc_network(case)
        self.assertEqual(net.num_buses, 40)
        self.assertTrue(all(not br.unlimited for br in case.branches))

    def test_proportional_dispatch_fits_the_limits(self):
        case = small_synthetic()
        net = build_dc_network(case)
        pmax = np.array([gen.pmax_mw[0] for gen in case.generators])
        for t in range(case.periods):
            net_load = case.total_load(t) - case.forecast_matrix()[:, t].sum()
            generation = generation_by_bus(case, pmax * net_load / pmax.sum())[:, 0]
            self.assertEqual(nominal_flows(net, case, generation, period=t).overloaded, [])

    def test_batteries_hold_the_worst_cumulative_deviation(self):
        case = small_synthetic(periods=5)
        gamma = 0.089 * np.array([r.forecast_mw[0] for r in case.renewables])
        worst = worst_period_deviation(gamma, 2.0)
        share = 5 * worst / len(case.batteries)
        for battery in case.batteries:
            self.assertGreaterEqual(battery.initial - battery.e_min, share)
            self.assertGreaterEqual(battery.e_max - battery.initial, share)
            self.assertEqual(battery.responds_to, (0, 1, 2, 3))

    def test_worst_period_deviation_takes_a_fraction_of_the_next_bound(self):
        self.assertAlmostEqual(worst_period_deviation([5.0, 10.0, 2.0], 1.5), 12.5)
        self.assertAlmostEqual(worst_period_deviation([5.0, 10.0], 4.0), 15.0)

    def test_load_ramps_over_six_periods_then_holds(self):
        profile = load_profile(8)
        self.assertEqual(profile[0], 1.0)
        self.assertAlmostEqual(profile[5], 1.1)
        self.assertEqual(profile[5], profile[7])

    def test_too_few_branches(self):
        with self.assertRaises(CaseValidationError):
            synthetic_case(2, buses=10, branches=8, generators=2, wind_farms=1, batteries=1)
