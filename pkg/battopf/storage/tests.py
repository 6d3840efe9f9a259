import numpy as np
from django.test import SimpleTestCase

from battopf.exceptions import CaseValidationError, CurveDomainError, RangeViolation
from .curves import (
    BatterySpec,
    ChargeCurve,
    DischargeCurve,
    curve_eval,
    segment_and_speed,
    simulate_trajectory,
    step_state,
)


def case9_battery(initial=80.0):
    """The Case9 battery: 100 MWh, lossless charging, 80% discharge efficiency."""
    return BatterySpec(
        bus=9,
        charge_curve=ChargeCurve(x=(0.0, 100.0), y=(0.0, 100.0)),
        discharge_curve=DischargeCurve(x=(0.0, 100.0), y=(0.0, 80.0)),
        e_min=0.0,
        e_max=100.0,
        initial=initial,
        charge_speed=(100.0,),
        discharge_speed=(100.0,),
        max_power_mw=100.0,
    )


def two_segment_battery(initial=20.0):
    return BatterySpec(
        bus=1,
        charge_curve=ChargeCurve(x=(0.0, 50.0, 100.0), y=(0.0, 45.0, 80.0)),
        discharge_curve=DischargeCurve.one_segment(0.0, 80.0, 0.9),
        e_min=0.0,
        e_max=80.0,
        initial=initial,
        charge_speed=(30.0, 20.0),
        discharge_speed=(40.0,),
    )


def one_segment_battery(initial, eff_in=1.0, eff_out=1.0, speed=30.0, e_max=100.0):
    return BatterySpec(
        bus=1,
        charge_curve=ChargeCurve.one_segment(0.0, e_max, eff_in),
        discharge_curve=DischargeCurve.one_segment(0.0, e_max, eff_out),
        e_min=0.0,
        e_max=e_max,
        initial=initial,
        charge_speed=(speed,),
        discharge_speed=(speed,),
    )


class CurveTests(SimpleTestCase):

    def test_identity_curve(self):
        curve = ChargeCurve(x=(0.0, 100.0), y=(0.0, 100.0))
        self.assertEqual(curve_eval(curve, 40.0), 40.0)

    def test_two_segment_curve(self):
        curve = ChargeCurve(x=(0.0, 50.0, 100.0), y=(0.0, 45.0, 80.0))
        self.assertAlmostEqual(curve_eval(curve, 60.0), 52.0, places=12)
        self.assertAlmostEqual(curve_eval(curve, 52.0, 'inverse'), 60.0, places=12)

    def test_forward_inverse_identity(self):
        curve = ChargeCurve(x=(0.0, 50.0, 100.0), y=(0.0, 45.0, 80.0))
        for x in np.linspace(0.0, 100.0, 41):
            self.assertAlmostEqual(curve.forward(curve.inverse(curve.forward(x))), curve.forward(x), places=12)

    def test_outside_domain(self):
        curve = ChargeCurve(x=(0.0, 100.0), y=(0.0, 100.0))
        with self.assertRaises(CurveDomainError):
            curve_eval(curve, 120.0)
        with self.assertRaises(CurveDomainError):
            curve_eval(curve, -1.0, 'inverse')

    def test_rejects_bad_curves(self):
        with self.assertRaisesMessage(CaseValidationError, 'strictly increasing'):
            ChargeCurve(x=(0.0, 0.0), y=(0.0, 1.0))
        with self.assertRaisesMessage(CaseValidationError, 'slopes'):
            ChargeCurve(x=(0.0, 10.0), y=(0.0, 20.0))

    def test_spec_checks_curve_endpoints(self):
        with self.assertRaisesMessage(CaseValidationError, 'charge curve must run from e_min to e_max'):
            BatterySpec(
                bus=1,
                charge_curve=ChargeCurve(x=(0.0, 90.0), y=(0.0, 90.0)),
                discharge_curve=DischargeCurve.one_segment(0.0, 100.0),
                e_min=0.0, e_max=100.0, initial=10.0,
                charge_speed=(10.0,), discharge_speed=(10.0,),
            )

    def test_spec_round_trip(self):
        battery = two_segment_battery()
        self.assertEqual(BatterySpec.from_dict(battery.to_dict()), battery)


class StepStateTests(SimpleTestCase):

    def test_unit_efficiency_charge(self):
        self.assertEqual(step_state(one_segment_battery(80.0), 80.0, 10.0), 90.0)

    def test_case9_drain(self):
        self.assertAlmostEqual(step_state(case9_battery(), 80.0, -64.0), 0.0, places=12)

    def test_case9_overdraw(self):
        with self.assertRaises(RangeViolation) as ctx:
            step_state(case9_battery(), 80.0, -65.0)
        self.assertAlmostEqual(ctx.exception.overshoot, 1.25, places=9)

    def test_overcharge(self):
        with self.assertRaises(RangeViolation) as ctx:
            step_state(one_segment_battery(95.0, eff_in=0.5), 95.0, 20.0)
        self.assertAlmostEqual(ctx.exception.overshoot, 5.0, places=9)

    def test_zero_input_keeps_charge(self):
        battery = two_segment_battery()
        for y in (0.0, 20.0, 45.0, 61.5, 80.0):
            self.assertAlmostEqual(step_state(battery, y, 0.0), y, places=12)

    def test_monotone_in_input(self):
        battery = two_segment_battery(initial=40.0)
        values = [step_state(battery, 40.0, s) for s in np.linspace(-30.0, 40.0, 71)]
        self.assertTrue(all(b >= a for a, b in zip(values, values[1:])))

    def test_composition(self):
        battery = two_segment_battery()
        rng = np.random.default_rng(3)
        for _ in range(50):
            y = rng.uniform(0.0, 40.0)
            first, second = rng.uniform(0.0, 20.0, 2)
            twice = step_state(battery, step_state(battery, y, first), second)
            self.assertAlmostEqual(twice, step_state(battery, y, first + second), places=9)

    def test_round_trip_with_losses(self):
        battery = one_segment_battery(30.0, eff_in=0.9, eff_out=0.8)
        charged = step_state(battery, 30.0, 20.0)
        self.assertAlmostEqual(step_state(battery, charged, -20.0 * 0.9 * 0.8), 30.0, places=9)

    def test_out_of_range_state(self):
        with self.assertRaises(CurveDomainError):
            step_state(case9_battery(), 101.0, 0.0)


class SegmentTests(SimpleTestCase):

    def test_one_segment(self):
        battery = case9_battery()
        for y in (0.0, 50.0, 100.0):
            self.assertEqual(segment_and_speed(battery, y).index, 0)

    def test_tie_rule(self):
        info = segment_and_speed(two_segment_battery(), 45.0)
        self.assertEqual(info.index, 0)
        self.assertEqual(info.speed, 30.0)
        self.assertEqual(info.bracket, (0.0, 45.0))

    def test_upper_segment(self):
        info = segment_and_speed(two_segment_battery(), 60.0)
        self.assertEqual(info.index, 1)
        self.assertEqual(info.speed, 20.0)
        self.assertEqual(info.bracket, (45.0, 80.0))

    def test_out_of_range(self):
        with self.assertRaises(CurveDomainError):
            segment_and_speed(two_segment_battery(), 81.0)


class TrajectoryTests(SimpleTestCase):

    def test_idle(self):
        result = simulate_trajectory(two_segment_battery(), [0.0, 0.0, 0.0])
        np.testing.assert_allclose(result.charges, [20.0, 20.0, 20.0, 20.0], atol=1e-12)
        self.assertTrue(result.ok)

    def test_case9_worst_case(self):
        result = simulate_trajectory(case9_battery(), [-64.0])
        self.assertEqual(len(result.charges), 2)
        self.assertAlmostEqual(result.charges[0] - result.charges[1], 0.64 * 100 / 0.8, places=6)
        self.assertGreaterEqual(result.charges[1], 0.0)
        self.assertEqual(result.violations, [])

    def test_two_period_overcharge(self):
        result = simulate_trajectory(one_segment_battery(50.0, speed=30.0), [30.0, 30.0], tol=1e-9)
        kinds = {(v.kind, v.period) for v in result.violations}
        self.assertIn(('range', 2), kinds)
        self.assertIn(('run', 2), kinds)
        self.assertNotIn(('range', 1), kinds)

    def test_speed_uses_segment_at_period_start(self):
        # starts in the upper segment (v = 20) and charges 25
        result = simulate_trajectory(two_segment_battery(initial=50.0), [25.0], tol=1e-9)
        speed = [v for v in result.violations if v.kind == 'speed']
        self.assertEqual(len(speed), 1)
        self.assertAlmostEqual(speed[0].magnitude, 5.0)

    def test_power_box(self):
        result = simulate_trajectory(case9_battery(initial=20.0), [60.0], delta_hours=0.5, tol=1e-9)
        power = [v for v in result.violations if v.kind == 'power']
        self.assertAlmostEqual(power[0].magnitude, 10.0)

    def test_run_bound_matches_range_on_one_segment(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            battery = one_segment_battery(rng.uniform(0.0, 100.0), eff_in=rng.uniform(0.5, 1.0), speed=1e3)
            inputs = rng.uniform(0.0, 30.0, size=4)
            result = simulate_trajectory(battery, inputs, tol=1e-9)
            kinds = {v.kind for v in result.violations}
            self.assertEqual('run' in kinds, 'range' in kinds)
