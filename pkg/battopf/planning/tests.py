import dataclasses
import itertools
import os
from unittest import skipUnless

import numpy as np
from django.test import SimpleTestCase, override_settings
from scipy.spatial import ConvexHull

from battopf.exceptions import ControlPolicyError, DuplicateCutError
from battopf.grid.cases import BranchSpec, Bus, BusType, CostCurve, GeneratorSpec, GridCase, Renewable
from battopf.grid.network import build_dc_network, compute_shift_factors, generation_by_bus
from battopf.grid.scenario import build_scenario
from battopf.grid.synthetic import synthetic_case
from battopf.grid.tests import load_fixture_case
from battopf.storage.curves import (
    BatterySpec,
    ChargeCurve,
    DischargeCurve,
    segment_and_speed,
    simulate_trajectory,
    step_state,
)
from battopf.uncertainty.concentration import ConcentrationModel, from_budgets
from battopf.uncertainty.sampling import sample_deviation
from battopf.validation.services import monte_carlo_validate
from .control import ControlPolicy, ControlStructure, battery_energy
from .disjunctive import Disjunct, build_disjunctive_cut
from .driver import SolverOptions, run_cutting_plane
from .master import CandidateSolution, Cut, build_master
from .separation import (
    SeparationContext,
    battery_worst_case,
    line_worst_case,
    prefix_window,
    separate_all,
    separate_battery_speed,
    separate_charge_bounds,
    separate_line_limits,
)


CASE9_ROBUST_COST = 2726.40


def case9():
    return load_fixture_case('case9.m', 'case9_scenario.json')


def toy3():
    return load_fixture_case('toy3.m', 'toy3_scenario.json')


def toy3_with_spare_battery():
    """toy3 with a small two-segment battery next to a large one-segment battery."""
    base = toy3()
    tight = BatterySpec(
        bus=3,
        charge_curve=ChargeCurve(x=(0.0, 10.0, 16.0), y=(0.0, 9.0, 14.0)),
        discharge_curve=DischargeCurve.one_segment(0.0, 14.0, 0.9),
        e_min=0.0,
        e_max=14.0,
        initial=13.0,
        charge_speed=(15.0, 15.0),
        discharge_speed=(20.0,),
        responds_to=(0,),
        name='tight',
    )
    spare = BatterySpec(
        bus=1,
        charge_curve=ChargeCurve.one_segment(0.0, 100.0),
        discharge_curve=DischargeCurve.one_segment(0.0, 100.0),
        e_min=0.0,
        e_max=100.0,
        initial=50.0,
        charge_speed=(30.0,),
        discharge_speed=(30.0,),
        responds_to=(0,),
        name='spare',
    )
    return dataclasses.replace(base, batteries=(tight, spare))


def box_polygon(coefficients, bound):
    """Vertices of {g in [0, 1]^2 : coefficients . g <= bound}."""
    matrix = np.vstack([coefficients, -np.eye(2), np.eye(2)])
    rhs = np.array([bound, 0.0, 0.0, 1.0, 1.0])
    vertices = []
    for a, b in itertools.combinations(range(len(rhs)), 2):
        sub = matrix[[a, b]]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        g = np.linalg.solve(sub, rhs[[a, b]])
        if np.all(matrix @ g <= rhs + 1e-9):
            vertices.append(g)
    return vertices


def candidate_for(case, lambdas, dispatch=None):
    if dispatch is None:
        dispatch = build_master(case).solve().dispatch
    policy = ControlPolicy(np.asarray(lambdas, dtype=float), tuple(b.responds_to for b in case.batteries))
    return CandidateSolution(dispatch=np.asarray(dispatch, dtype=float), policy=policy, objective=0.0)


def case9_lambdas(lambda4, lambda9):
    return np.array([[[lambda4, lambda4], [lambda9, lambda9]]])


def orthant_vertices(model, signs, extra_matrix=None, extra_rhs=None):
    """Signed vertices of W within one orthant of a two-coordinate model."""
    matrix = np.vstack([model.orthant_matrix(signs), -np.eye(2)])
    rhs = np.concatenate([model.b, np.zeros(2)])
    if extra_matrix is not None:
        matrix = np.vstack([matrix, extra_matrix])
        rhs = np.concatenate([rhs, extra_rhs])
    vertices = []
    for a, b in itertools.combinations(range(len(rhs)), 2):
        sub = matrix[[a, b]]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        m = np.linalg.solve(sub, rhs[[a, b]])
        if np.all(matrix @ m <= rhs + 1e-9):
            vertices.append(np.asarray(signs, dtype=float) * m)
    return vertices


def all_vertices(model):
    points = []
    for signs in itertools.product((1.0, -1.0), repeat=2):
        points += orthant_vertices(model, np.array(signs))
    return points


def flows_at(case, net, dispatch, lambdas, w, period):
    """Branch flows (MW) from an angle solve with deviations and battery responses applied."""
    index = case.bus_index
    injection = (generation_by_bus(case, dispatch)[:, period]
                 + case.forecast_matrix()[:, period] - case.load_matrix()[:, period])
    for j, renewable in enumerate(case.renewables):
        injection[index[renewable.bus]] += w[j, period]
    for i, battery in enumerate(case.batteries):
        injection[index[battery.bus]] -= lambdas[period, i] @ w[:, period]
    return case.to_mw(net.branch_flows(net.solve_angles(case.to_pu(injection))))


def two_bus_battery_case():
    """Renewable at the slack bus, battery at the load bus, 60 MW line."""
    battery = BatterySpec(
        bus=2,
        charge_curve=ChargeCurve.one_segment(0.0, 40.0),
        discharge_curve=DischargeCurve.one_segment(0.0, 40.0),
        e_min=0.0,
        e_max=40.0,
        initial=20.0,
        charge_speed=(25.0,),
        discharge_speed=(25.0,),
        responds_to=(0,),
    )
    return GridCase(
        base_mva=100.0,
        buses=(Bus(1, BusType.SLACK, 0.0), Bus(2, BusType.PQ, 100.0)),
        branches=(BranchSpec(1, 2, 10.0, 60.0),),
        generators=(
            GeneratorSpec(1, 0.0, (150.0,), CostCurve.polynomial(10.0, 0.0)),
            GeneratorSpec(2, 0.0, (150.0,), CostCurve.polynomial(30.0, 0.0)),
        ),
        renewables=(Renewable(1, (0.0,)),),
        batteries=(battery,),
        uncertainty=from_budgets([[30.0]], [1.0]),
        name='two-bus-battery',
    ).validate()


class ControlTests(SimpleTestCase):

    def test_zero_deviation(self):
        policy = ControlPolicy(case9_lambdas(0.36, 0.64))
        self.assertEqual(battery_energy(policy, 1, 0, np.zeros((2, 1))), 0.0)

    def test_case9_drain(self):
        policy = ControlPolicy(case9_lambdas(0.36, 0.64))
        self.assertAlmostEqual(battery_energy(policy, 1, 0, np.array([[0.0], [-100.0]])), -64.0)

    def test_aggregated_energy_uses_the_sum(self):
        policy = ControlPolicy(np.array([[[0.5, 0.5, 0.5]]]), responds_to=((0, 1, 2),))
        w = np.array([[3.0], [-1.0], [4.0]])
        self.assertAlmostEqual(battery_energy(policy, 0, 0, w, delta_hours=0.5), 0.5 * 0.5 * 6.0)

    def test_balance_property(self):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.0, 1.0, (3, 4, 2))
        policy = ControlPolicy(raw / raw.sum(axis=1, keepdims=True))
        for _ in range(100):
            w = rng.normal(0.0, 20.0, (2, 3))
            for t in range(3):
                total = sum(battery_energy(policy, i, t, w) for i in range(4))
                self.assertAlmostEqual(total, w[:, t].sum(), places=9)

    def test_orthant_sign(self):
        rng = np.random.default_rng(8)
        policy = ControlPolicy(rng.uniform(0.0, 1.0, (1, 3, 2)))
        for _ in range(50):
            w = -np.abs(rng.normal(size=(2, 1)))
            self.assertTrue(all(battery_energy(policy, i, 0, w) <= 0 for i in range(3)))

    def test_case9_structure(self):
        structure = ControlStructure(case9())
        self.assertEqual(len(structure), 2)
        self.assertEqual(structure.balanced_pairs(case9().uncertainty), [(0, 0), (0, 1)])
        self.assertEqual(structure.fixed_gains([(0, 0), (0, 1)]), set())
        np.testing.assert_allclose(structure.expand([0.36, 0.64]), case9_lambdas(0.36, 0.64))

    def test_general_scheme(self):
        base = case9()
        batteries = tuple(dataclasses.replace(b, responds_to=None) for b in base.batteries)
        structure = ControlStructure(dataclasses.replace(base, batteries=batteries))
        self.assertEqual(len(structure), 4)
        self.assertEqual(structure.covering(0, 1), [1, 3])

    def test_uncovered_deviation_is_rejected(self):
        base = toy3()
        batteries = (dataclasses.replace(base.batteries[0], responds_to=()),)
        structure = ControlStructure(dataclasses.replace(base, batteries=batteries))
        with self.assertRaises(ControlPolicyError):
            structure.balanced_pairs(base.uncertainty)

    def test_check(self):
        ControlPolicy(case9_lambdas(0.36, 0.64), ((0, 1), (0, 1))).check()
        with self.assertRaises(ControlPolicyError):
            ControlPolicy(case9_lambdas(0.36, 0.74)).check()
        with self.assertRaises(ControlPolicyError):
            ControlPolicy(case9_lambdas(-0.1, 1.1)).check()
        with self.assertRaises(ControlPolicyError):
            ControlPolicy(np.array([[[0.3, 0.4], [0.7, 0.6]]]), ((0, 1), (0, 1))).check()

    def test_list_round_trip(self):
        policy = ControlPolicy(np.arange(12, dtype=float).reshape(2, 3, 2))
        again = ControlPolicy.from_list(policy.to_list())
        np.testing.assert_array_equal(again.lambdas, policy.lambdas)
        self.assertEqual(policy.to_list()[1]['t'], 2)


class DisjunctiveCutTests(SimpleTestCase):

    def test_hull_covers_the_point(self):
        disjuncts = [Disjunct.halfspace([1.0], 0.3), Disjunct.halfspace([-1.0], -0.7)]
        self.assertIsNone(build_disjunctive_cut([0.5], disjuncts, [0.0], [1.0]))

    def test_single_disjunct(self):
        cut = build_disjunctive_cut([0.8, 0.8], [Disjunct.halfspace([1.0, 1.0], 1.0)], [0.0, 0.0], [1.0, 1.0])
        self.assertIsNotNone(cut)
        np.testing.assert_allclose(cut.pi / cut.pi[0], [1.0, 1.0], atol=1e-7)
        self.assertAlmostEqual(cut.pi0 / cut.pi[0], 1.0, places=7)
        self.assertAlmostEqual(cut.violation, 0.6 / 3.0, places=7)

    def test_matches_hull_facet(self):
        # hull of {g1 + g2 <= 0.5} and {g1 >= 0.8} in the unit box has the
        # facet through (0, 0.5) and (0.8, 1)
        disjuncts = [Disjunct.halfspace([1.0, 1.0], 0.5), Disjunct.halfspace([-1.0, 0.0], -0.8)]
        cut = build_disjunctive_cut([0.2, 0.9], disjuncts, [0.0, 0.0], [1.0, 1.0])
        np.testing.assert_allclose(cut.pi / cut.pi[1], [-0.625, 1.0], atol=1e-7)
        self.assertAlmostEqual(cut.pi0 / cut.pi[1], 0.5, places=7)
        for vertex in ([0, 0], [0.5, 0], [0, 0.5], [0.8, 0], [1, 0], [1, 1], [0.8, 1]):
            self.assertLessEqual(cut.pi @ vertex, cut.pi0 + 1e-9)

    def test_toy3_speed_disjunction_matches_hull_facet(self):
        # second charging segment of toy3's battery, 4 MWh per period, after a
        # discharging first period; gains (lambda^1, lambda^2), witness w = (-10, 5)
        battery = dataclasses.replace(toy3().batteries[0], charge_speed=(15.0, 4.0))
        low, high = prefix_window(battery, -1, (battery.charge_curve.y[1], battery.charge_curve.y[2]))
        self.assertAlmostEqual(low, -6.3)
        self.assertAlmostEqual(high, 22.5)
        halfspaces = [
            ([-10.0, 0.0], low),
            ([10.0, 0.0], -high),
            ([0.0, 5.0], battery.charge_speed[1]),
        ]
        point = np.array([0.2, 0.95])
        cut = build_disjunctive_cut(
            point, [Disjunct.halfspace(a, c) for a, c in halfspaces], [0.0, 0.0], [1.0, 1.0],
        )
        self.assertIsNotNone(cut)

        vertices = np.array([v for a, c in halfspaces for v in box_polygon(a, c)])
        hull = ConvexHull(vertices)
        facets = [(eq[:2], -eq[2]) for eq in hull.equations]
        scores = [(pi @ point - pi0) / (np.abs(pi).sum() + abs(pi0)) for pi, pi0 in facets]
        best_pi, best_pi0 = facets[int(np.argmax(scores))]

        # facet through (0, 0.8) and (0.63, 1)
        np.testing.assert_allclose(best_pi / best_pi[1], [-0.2 / 0.63, 1.0], atol=1e-9)
        np.testing.assert_allclose(cut.pi / cut.pi[1], best_pi / best_pi[1], atol=1e-6)
        self.assertAlmostEqual(cut.pi0 / cut.pi[1], 0.8, places=6)
        self.assertAlmostEqual(cut.violation, max(scores), places=6)
        for vertex in vertices:
            self.assertLessEqual(cut.pi @ vertex, cut.pi0 + 1e-9)

    def test_empty_disjuncts(self):
        disjuncts = [Disjunct.halfspace([1.0], -0.5), Disjunct.halfspace([-1.0], -2.0)]
        cut = build_disjunctive_cut([0.5], disjuncts, [0.0], [1.0])
        self.assertTrue(cut.infeasible)

    def test_point_inside_a_disjunct(self):
        disjuncts = [Disjunct.halfspace([1.0, 0.0], 0.6), Disjunct.halfspace([0.0, 1.0], 0.1)]
        self.assertIsNone(build_disjunctive_cut([0.5, 0.9], disjuncts, [0.0, 0.0], [1.0, 1.0]))


class MasterTests(SimpleTestCase):

    def test_case9_nominal_cost(self):
        master = build_master(case9())
        candidate = master.solve()
        self.assertAlmostEqual(candidate.objective, 2384.75, delta=0.01 * 2384.75)
        self.assertAlmostEqual(candidate.lambdas[0, :, 0].sum(), 1.0, places=9)
        self.assertAlmostEqual(candidate.dispatch.sum(), 315.0 - 150.0, places=6)

    def test_plain_case9_cost(self):
        candidate = build_master(load_fixture_case('case9.m'), segments=50).solve()
        self.assertAlmostEqual(candidate.objective, 5216.0, delta=0.01 * 5216.0)
        self.assertEqual(candidate.lambdas.shape, (1, 0, 0))

    def test_case9_master_size(self):
        master = build_master(case9())
        self.assertEqual(len(master.gain), 2)
        self.assertEqual(master.num_variables, 3 + 3 + 2)

    def test_dispatch_covers_load_minus_forecast(self):
        base = load_fixture_case('two_bus.m')
        with self.assertLogs('battopf.planning.control', level='WARNING'):
            case = build_scenario({'T': 1, 'renewables': [{'bus': 2, 'forecast_mw': [20.0]}]}, base)
            candidate = build_master(case).solve()
        self.assertAlmostEqual(candidate.dispatch[0, 0], 40.0, places=6)
        self.assertAlmostEqual(candidate.objective, 800.0, places=6)

    def test_multi_period_dispatch(self):
        base = load_fixture_case('two_bus.m')
        case = build_scenario({'T': 3, 'load_scale': [1.0, 0.5, 1.5]}, base)
        candidate = build_master(case).solve()
        np.testing.assert_allclose(candidate.dispatch[0], [60.0, 30.0, 90.0], atol=1e-6)

    def _speed_cut(self, case, rhs=-80.0):
        structure = ControlStructure(case)
        beta = np.zeros(structure.shape)
        beta[0, 1, 1] = -100.0
        alpha = np.zeros((len(case.generators), 1))
        return Cut(alpha, beta, rhs, 'speed', 1, 'battery 2', np.array([[0.0], [-100.0]]), 20.0)

    def test_cut_tightens_master(self):
        case = case9()
        master = build_master(case)
        first = master.solve()
        self.assertTrue(master.add_cut(self._speed_cut(case, rhs=-30.0)))
        second = master.solve()
        self.assertGreaterEqual(second.objective, first.objective - 1e-9)
        self.assertLessEqual(second.lambdas[0, 1, 0], 0.3 + 1e-9)
        self.assertEqual(len(master.cuts), 1)

    def test_duplicate_cut(self):
        case = case9()
        master = build_master(case)
        master.add_cut(self._speed_cut(case))
        with self.assertLogs('battopf.planning.master', level='WARNING'):
            with self.assertRaises(DuplicateCutError):
                master.add_cut(self._speed_cut(case))
        self.assertEqual(len(master.cuts), 1)

    def test_cut_that_does_not_separate_is_dropped(self):
        case = case9()
        master = build_master(case)
        candidate = candidate_for(case, case9_lambdas(0.5, 0.5), master.solve().dispatch)
        with self.assertLogs('battopf.planning.master', level='WARNING'):
            self.assertFalse(master.add_cut(self._speed_cut(case), candidate, 1e-6))
        self.assertEqual(master.cuts, [])


class LineSeparationTests(SimpleTestCase):

    def test_zero_uncertainty_is_feasible(self):
        base = case9()
        case = dataclasses.replace(base, uncertainty=ConcentrationModel.zero(2, 1))
        candidate = build_master(case).solve()
        certificate = separate_all(SeparationContext(case, candidate), threads=1)
        self.assertEqual(certificate.verdict, 'feasible')
        self.assertEqual(certificate.cuts, [])

    def test_witness_keeps_drop_when_a_zero_row_is_grazed(self):
        case = case9()
        ctx = SeparationContext(case, candidate_for(case, case9_lambdas(0.36, 0.64)))
        w = ctx.witness([0, 1], [1.0, -1.0], [1e-12, 100.0])
        np.testing.assert_array_equal(w.reshape(-1), [0.0, -100.0])
        self.assertTrue(case.uncertainty.membership(w.reshape(-1)).inside)

        w = ctx.witness([0, 1], [-1.0, -1.0], [0.0, 100.0 + 1e-7])
        np.testing.assert_allclose(w.reshape(-1), [0.0, -100.0], atol=1e-12)
        self.assertTrue(case.uncertainty.membership(w.reshape(-1)).inside)

    def test_case9_matches_vertex_enumeration(self):
        case = case9()
        net = build_dc_network(case)
        lambdas = case9_lambdas(1.0, 0.0)
        candidate = candidate_for(case, lambdas)
        ctx = SeparationContext(case, candidate)
        vertices = all_vertices(case.uncertainty)
        overloaded = set()
        for branch, spec in enumerate(case.branches):
            flows = [flows_at(case, net, candidate.dispatch, lambdas, w.reshape(2, 1), 0)[branch] for w in vertices]
            for sign in (1, -1):
                worst = line_worst_case(ctx, branch, 0, sign)
                self.assertAlmostEqual(worst.value, max(sign * f for f in flows), delta=1e-6)
                self.assertTrue(case.uncertainty.membership(worst.witness).inside)
                if not spec.unlimited and worst.value > spec.limit_mw + 1e-6:
                    overloaded.add(spec.label)
        found = {finding.element for finding in separate_line_limits(ctx)}
        self.assertEqual(found, overloaded)

    def test_toy3_matches_vertex_enumeration(self):
        case = toy3()
        net = build_dc_network(case)
        lambdas = np.array([[[0.7]], [[0.9]]])
        candidate = candidate_for(case, lambdas)
        ctx = SeparationContext(case, candidate)
        vertices = all_vertices(case.uncertainty)
        for period in range(2):
            for branch in range(len(case.branches)):
                flows = [flows_at(case, net, candidate.dispatch, lambdas, w.reshape(1, 2), period)[branch]
                         for w in vertices]
                for sign in (1, -1):
                    worst = line_worst_case(ctx, branch, period, sign)
                    self.assertAlmostEqual(worst.value, max(sign * f for f in flows), delta=1e-6)

    def test_line_cut_is_tight_at_the_candidate(self):
        case = case9()
        candidate = candidate_for(case, case9_lambdas(1.0, 0.0))
        ctx = SeparationContext(case, candidate)
        for finding in separate_line_limits(ctx):
            cut = finding.cuts[0]
            self.assertAlmostEqual(cut.evaluate(candidate.dispatch, candidate.lambdas), -finding.violation, places=6)


class BatterySeparationTests(SimpleTestCase):

    def test_case9_optimum_has_no_battery_violation(self):
        case = case9()
        ctx = SeparationContext(case, candidate_for(case, case9_lambdas(0.36, 0.64)))
        for battery in range(2):
            self.assertEqual(separate_battery_speed(ctx, battery), [])
            self.assertEqual(separate_charge_bounds(ctx, battery), [])

    def test_speed_cut(self):
        base = case9()
        slow = dataclasses.replace(base.batteries[1], charge_speed=(80.0,), discharge_speed=(80.0,))
        case = dataclasses.replace(base, batteries=(base.batteries[0], slow))
        ctx = SeparationContext(case, candidate_for(case, case9_lambdas(0.0, 1.0)))
        findings = [f for f in separate_battery_speed(ctx, 1) if f.family == 'speed']
        self.assertEqual(len(findings), 1)
        self.assertAlmostEqual(findings[0].violation, 20.0, places=6)
        np.testing.assert_allclose(findings[0].witness, [[0.0], [-100.0]], atol=1e-6)
        cut = findings[0].cuts[0]
        np.testing.assert_allclose(ctx.structure.gain_coefficients(cut.beta), [0.0, -100.0], atol=1e-6)
        self.assertAlmostEqual(cut.rhs, -80.0)

    def test_charge_range_cut(self):
        case = case9()
        ctx = SeparationContext(case, candidate_for(case, case9_lambdas(0.2, 0.8)))
        findings = separate_charge_bounds(ctx, 1)
        self.assertEqual([f.family for f in findings], ['charge-range'])
        # 80 MWh electrical against D(80) = 64 extractable
        self.assertAlmostEqual(findings[0].violation, 16.0, places=6)
        self.assertEqual(separate_charge_bounds(ctx, 0), [])

    def test_idle_battery(self):
        case = case9()
        ctx = SeparationContext(case, candidate_for(case, case9_lambdas(1.0, 0.0)))
        self.assertEqual(separate_battery_speed(ctx, 1), [])
        self.assertEqual(separate_charge_bounds(ctx, 1), [])

    def test_prefix_window(self):
        battery = toy3().batteries[0]
        low, high = prefix_window(battery, 1, (18.0, 50.0))
        self.assertAlmostEqual(low, -8.75)
        self.assertAlmostEqual(high, 31.25)
        low, high = prefix_window(battery, -1, (0.0, 18.0))
        self.assertAlmostEqual(low, -22.5)
        self.assertAlmostEqual(high, 16.2 - 22.5)

    def test_toy3_speed_matches_vertex_enumeration(self):
        case = toy3()
        battery = case.batteries[0]
        lambdas = np.array([[[0.7]], [[0.9]]])
        ctx = SeparationContext(case, candidate_for(case, lambdas))
        model = case.uncertainty

        for side in (1, -1):
            vertices = orthant_vertices(model, np.array([side, side]))
            expected = max(0.7 * side * w[0] for w in vertices)
            self.assertAlmostEqual(battery_worst_case(ctx, 0, [0], side).value, expected, delta=1e-6)

        for side, segments in ((1, battery.charge_curve.segments), (-1, battery.discharge_curve.segments)):
            for segment in range(segments):
                for prefix_sign in (1, -1):
                    if side > 0:
                        bracket = (battery.charge_curve.y[segment], battery.charge_curve.y[segment + 1])
                    else:
                        bracket = (battery.discharge_curve.x[segment], battery.discharge_curve.x[segment + 1])
                    low, high = prefix_window(battery, prefix_sign, bracket)
                    window = np.array([[-prefix_sign * 0.7, 0.0], [prefix_sign * 0.7, 0.0]])
                    vertices = orthant_vertices(model, np.array([prefix_sign, side]), window,
                                                np.array([-low, high]))
                    worst = battery_worst_case(ctx, 0, [1], side, segment, prefix_sign)
                    if not vertices:
                        self.assertIsNone(worst)
                        continue
                    expected = max(0.9 * side * w[1] for w in vertices)
                    self.assertAlmostEqual(worst.value, expected, delta=1e-6)

    def test_orthant_values_dominate_mixed_sign_deviations(self):
        case = toy3()
        battery = case.batteries[0]
        lambdas = np.array([[[0.7]], [[0.9]]])
        ctx = SeparationContext(case, candidate_for(case, lambdas))
        cache = {}
        for w in sample_deviation(case.uncertainty, 17, 2000):
            first = 0.7 * w[0, 0]
            second = 0.9 * w[0, 1]
            if second == 0.0:
                continue
            side = 1 if second > 0 else -1
            y = step_state(battery, battery.initial, first)
            segment = segment_and_speed(battery, y, 'charge' if side > 0 else 'discharge').index
            prefix_sign = 1 if first >= 0 else -1
            key = (side, segment, prefix_sign)
            if key not in cache:
                cache[key] = battery_worst_case(ctx, 0, [1], side, segment, prefix_sign)
            self.assertIsNotNone(cache[key])
            self.assertGreaterEqual(cache[key].value, side * second - 1e-7)

    def test_two_segment_speed_uses_disjunctive_cut(self):
        case = toy3()
        fast_start = dataclasses.replace(case.batteries[0], charge_speed=(15.0, 4.0))
        case = dataclasses.replace(case, batteries=(fast_start,))
        candidate = candidate_for(case, np.ones((2, 1, 1)))
        ctx = SeparationContext(case, candidate)
        findings = [f for f in separate_battery_speed(ctx, 0) if f.family == 'speed']
        self.assertTrue(findings)
        disjunctive = [cut for f in findings for cut in f.cuts if cut.disjunctive]
        self.assertTrue(disjunctive)
        for cut in disjunctive:
            self.assertLess(cut.evaluate(candidate.dispatch, candidate.lambdas), -1e-6)

    def test_run_bound_cut_after_first_period(self):
        # a 10 MW charging run in period 2 from the second segment overflows its 6 MWh room
        case = toy3_with_spare_battery()
        candidate = candidate_for(case, np.array([[[0.5], [0.5]], [[1.0], [0.0]]]))
        ctx = SeparationContext(case, candidate)
        findings = [f for f in separate_charge_bounds(ctx, 0) if f.family == 'run-bound']
        self.assertTrue(findings)
        self.assertTrue(all(f.period == 2 for f in findings))
        self.assertAlmostEqual(max(f.violation for f in findings), 4.0, places=6)
        disjunctive = [cut for f in findings for cut in f.cuts]
        self.assertTrue(disjunctive)
        small = np.array([[[0.1], [0.9]], [[0.1], [0.9]]])
        for cut in disjunctive:
            self.assertTrue(cut.disjunctive)
            self.assertEqual(cut.family, 'run-bound')
            self.assertLess(cut.evaluate(candidate.dispatch, candidate.lambdas), -1e-6)
            self.assertGreaterEqual(cut.evaluate(candidate.dispatch, small), -1e-9)


class CutValidityTests(SimpleTestCase):

    def _feasible(self, case, net, pg1, lam):
        dispatch = np.array([[pg1], [100.0 - pg1]])
        lambdas = np.array([[[lam]]])
        battery = case.batteries[0]
        for value in (-30.0, -15.0, 0.0, 15.0, 30.0):
            w = np.array([[value]])
            if abs(flows_at(case, net, dispatch, lambdas, w, 0)[0]) > 60.0 + 1e-9:
                return False
            if not simulate_trajectory(battery, [lam * value], tol=1e-9).ok:
                return False
        return True

    def test_grid(self):
        case = two_bus_battery_case()
        net = build_dc_network(case)
        shift_factors = compute_shift_factors(net)
        structure = ControlStructure(case)
        pg_grid = np.linspace(0.0, 100.0, 21)
        lambda_grid = np.linspace(0.0, 1.0, 21)

        pool = []
        for pg1 in pg_grid[::2]:
            for lam in lambda_grid[::2]:
                candidate = candidate_for(case, [[[lam]]], [[pg1], [100.0 - pg1]])
                ctx = SeparationContext(case, candidate, shift_factors, structure)
                certificate = separate_all(ctx, max_cuts=50, threads=1)
                pool += certificate.cuts
                if not self._feasible(case, net, pg1, lam):
                    self.assertFalse(certificate.feasible)
        self.assertTrue(pool)
        self.assertTrue({'line', 'charge-range', 'speed'} <= {cut.family for cut in pool})

        feasible_points = 0
        for pg1 in pg_grid:
            for lam in lambda_grid:
                if not self._feasible(case, net, pg1, lam):
                    continue
                feasible_points += 1
                dispatch = np.array([[pg1], [100.0 - pg1]])
                for cut in pool:
                    self.assertGreaterEqual(cut.evaluate(dispatch, np.array([[[lam]]])), -1e-7)
        self.assertGreater(feasible_points, 0)


class DriverTests(SimpleTestCase):

    def test_case9_robust_solution(self):
        case = case9()
        report = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        self.assertEqual(report.status, 'optimal')
        # line 4-5 gains 28.1 MW at w = (0, -100), which forces redispatch away from bus 4
        self.assertAlmostEqual(report.objective, CASE9_ROBUST_COST, delta=0.01 * CASE9_ROBUST_COST)
        lambdas = report.candidate.lambdas
        net = build_dc_network(case)
        for vertex in all_vertices(case.uncertainty):
            flows = flows_at(case, net, report.candidate.dispatch, lambdas, vertex.reshape(2, 1), 0)
            for flow, branch in zip(flows, case.branches):
                self.assertLessEqual(abs(flow), branch.limit_mw + 1e-5)
        self.assertAlmostEqual(lambdas[0, 0, 0], 0.36, delta=0.02)
        self.assertAlmostEqual(lambdas[0, 1, 0], 0.64, delta=0.02)
        self.assertTrue(report.monotone)
        objectives = [row.objective for row in report.log]
        self.assertTrue(all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(objectives, objectives[1:])))
        self.assertAlmostEqual(objectives[0], 2384.75, delta=0.01 * 2384.75)
        self.assertGreater(sum(report.cuts.values()), 0)

    def test_pmin_floor_leaves_no_robust_plan(self):
        case = dataclasses.replace(case9(), respect_pmin=True)
        with self.assertLogs('battopf.planning.driver', level='ERROR'):
            report = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        self.assertEqual(report.status, 'infeasible')

    def test_empty_batteries_are_infeasible(self):
        base = case9()
        batteries = tuple(dataclasses.replace(b, initial=0.0) for b in base.batteries)
        with self.assertLogs('battopf.planning.driver', level='ERROR'):
            report = run_cutting_plane(dataclasses.replace(base, batteries=batteries),
                                       SolverOptions.from_settings(threads=1))
        self.assertEqual(report.status, 'infeasible')
        self.assertIn('robust problem infeasible', report.message)
        self.assertTrue(report.trail)
        self.assertIsNone(report.objective)

    def test_zero_uncertainty_stops_at_first_iteration(self):
        base = case9()
        case = dataclasses.replace(base, uncertainty=ConcentrationModel.zero(2, 1))
        report = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        self.assertEqual(report.status, 'optimal')
        self.assertEqual(report.iterations, 1)
        self.assertAlmostEqual(report.objective, 2384.75, delta=0.01 * 2384.75)

    def test_two_segment_battery_gets_a_valid_share(self):
        case = toy3_with_spare_battery()
        report = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        self.assertEqual(report.status, 'optimal')
        candidate = report.candidate
        # 1.2 MWh of charging room above the initial 13 MWh
        self.assertLessEqual(candidate.lambdas[0, 0, 0] * 10.0, 1.2 + 1e-6)
        validation = monte_carlo_validate(case, candidate.dispatch, candidate.policy, samples=1000, seed=5)
        self.assertTrue(validation.passed, validation.to_dict()['violations'][:5])

    def test_iteration_limit(self):
        report = run_cutting_plane(case9(), SolverOptions.from_settings(max_iter=1, threads=1))
        self.assertEqual(report.status, 'iteration_limit')
        self.assertEqual(report.iterations, 1)

    def test_deterministic(self):
        first = run_cutting_plane(toy3(), SolverOptions.from_settings(threads=4))
        second = run_cutting_plane(toy3(), SolverOptions.from_settings(threads=1))
        self.assertEqual(first.status, second.status)
        self.assertEqual(first.iterations, second.iterations)
        self.assertAlmostEqual(first.objective, second.objective, places=9)
        np.testing.assert_array_equal(first.candidate.dispatch, second.candidate.dispatch)

    @override_settings(BATTOPF_MAX_ITER=7)
    def test_options_from_settings(self):
        options = SolverOptions.from_settings(tolerance=1e-5, backend=None)
        self.assertEqual(options.max_iter, 7)
        self.assertEqual(options.tolerance, 1e-5)
        self.assertEqual(options.backend, 'highs')


class SyntheticCaseSolveTests(SimpleTestCase):

    def test_small_synthetic_case_is_robust(self):
        case = synthetic_case(
            3, seed=11, buses=40, branches=55, generators=6, wind_farms=4, batteries=3,
            load_mw=800.0, wind_mw=200.0, budget=2.0, storage_mwh=60.0,
        )
        report = run_cutting_plane(case, SolverOptions.from_settings(threads=1))
        self.assertEqual(report.status, 'optimal')
        self.assertTrue(report.monotone)
        candidate = report.candidate
        validation = monte_carlo_validate(case, candidate.dispatch, candidate.policy, samples=500, seed=1)
        self.assertTrue(validation.passed, validation.to_dict()['violations'][:5])


@skipUnless(os.environ.get('BATTOPF_SCALABILITY'), 'full-size synthetic grid; set BATTOPF_SCALABILITY=1')
class ScalabilityTests(SimpleTestCase):
    """2746 buses, 32 wind farms and 32 batteries over growing horizons."""

    HORIZONS = (6, 8, 10, 12)
    MAX_ITERATIONS = 40
    TIME_GROWTH = 1.6

    def test_iterations_and_time_grow_slowly(self):
        times = []
        for periods in self.HORIZONS:
            report = run_cutting_plane(synthetic_case(periods, seed=0), SolverOptions.from_settings())
            self.assertEqual(report.status, 'optimal', f"T={periods}: {report.message}")
            self.assertLessEqual(report.iterations, self.MAX_ITERATIONS)
            times.append(report.time_s)
        for shorter, longer in zip(times, times[1:]):
            self.assertLessEqual(longer, self.TIME_GROWTH * shorter)
