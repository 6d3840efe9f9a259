"""
Piecewise-linear battery model.

A battery holds chemical charge y in [E_min, E_max]. Charging is described
by a charging function C mapping the electrical-energy coordinate x to
chemical charge; discharging by a function D mapping chemical charge to the
electrical energy that can still be extracted above E_min. Both are
monotone piecewise-linear with slopes (efficiencies) in (0, 1].

Charging by electrical energy S >= 0 moves y to C(C^-1(y) + S); withdrawing
S moves y to D^-1(D(y) - S). Nothing here clamps: leaving the range raises
RangeViolation, and simulate_trajectory reports it as data.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from battopf.exceptions import CaseValidationError, CurveDomainError, RangeViolation

logger = logging.getLogger(__name__)

# Absolute slack (MWh) for domain checks; absorbs round-off only.
DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class PiecewiseLinearCurve:
    """Strictly increasing piecewise-linear map given by its breakpoints."""

    x: tuple
    y: tuple

    def __post_init__(self):
        xs = np.asarray(self.x, dtype=float)
        ys = np.asarray(self.y, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or xs.size != ys.size:
            raise CaseValidationError("curve needs at least two (x, y) breakpoints of equal length")
        if np.any(np.diff(xs) <= 0):
            raise CaseValidationError("curve breakpoints must be strictly increasing")
        if np.any(np.diff(ys) < 0):
            raise CaseValidationError("curve values must be nondecreasing")
        slopes = np.diff(ys) / np.diff(xs)
        if np.any(slopes <= 0) or np.any(slopes > 1 + 1e-12):
            raise CaseValidationError("curve slopes (efficiencies) must lie in (0, 1]")
        object.__setattr__(self, 'x', tuple(float(v) for v in xs))
        object.__setattr__(self, 'y', tuple(float(v) for v in ys))

    @cached_property
    def xs(self):
        return np.asarray(self.x)

    @cached_property
    def ys(self):
        return np.asarray(self.y)

    @cached_property
    def slopes(self):
        return np.diff(self.ys) / np.diff(self.xs)

    @property
    def segments(self):
        return len(self.x) - 1

    def forward(self, value):
        if value < self.x[0] - DOMAIN_TOL or value > self.x[-1] + DOMAIN_TOL:
            raise CurveDomainError(f"{value} outside curve domain [{self.x[0]}, {self.x[-1]}]")
        return float(np.interp(value, self.xs, self.ys))

    def inverse(self, value):
        if value < self.y[0] - DOMAIN_TOL or value > self.y[-1] + DOMAIN_TOL:
            raise CurveDomainError(f"{value} outside curve range [{self.y[0]}, {self.y[-1]}]")
        return float(np.interp(value, self.ys, self.xs))

    def to_dict(self):
        return {'x': list(self.x), 'y': list(self.y)}


class ChargeCurve(PiecewiseLinearCurve):
    """Charging function C: electrical coordinate e -> chemical charge."""

    @classmethod
    def one_segment(cls, e_min, e_max, efficiency=1.0):
        span = (e_max - e_min) / efficiency
        return cls(x=(0.0, span), y=(e_min, e_max))


class DischargeCurve(PiecewiseLinearCurve):
    """Discharge function D: chemical charge f -> extractable electrical energy."""

    @classmethod
    def one_segment(cls, e_min, e_max, efficiency=1.0):
        return cls(x=(e_min, e_max), y=(0.0, (e_max - e_min) * efficiency))


def curve_eval(curve, value, direction='forward'):
    """Evaluate a curve or its inverse.

    Args:
        curve: ChargeCurve or DischargeCurve
        value: point to evaluate, MWh
        direction: 'forward' or 'inverse'

    Returns:
        float: interpolated value, MWh

    Raises:
        CurveDomainError: if value lies outside the domain of the evaluation
    """
    if direction == 'forward':
        return curve.forward(value)
    if direction == 'inverse':
        return curve.inverse(value)
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class SegmentInfo:
    index: int
    speed: float
    bracket: tuple


@dataclass(frozen=True)
class BatterySpec:
    """
    A battery placement and its operating model.

    charge_speed holds one limit v_s (MWh per period) per charging segment,
    discharge_speed one limit per discharge segment. responds_to lists the
    renewable ordinals the battery reacts to under the aggregated control
    scheme; None selects the general scheme (one gain per renewable).
    """

    bus: int
    charge_curve: ChargeCurve
    discharge_curve: DischargeCurve
    e_min: float
    e_max: float
    initial: float
    charge_speed: tuple
    discharge_speed: tuple
    max_power_mw: Optional[float] = None
    responds_to: Optional[tuple] = None
    name: str = field(default='', compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'charge_speed', tuple(float(v) for v in self.charge_speed))
        object.__setattr__(self, 'discharge_speed', tuple(float(v) for v in self.discharge_speed))
        if self.responds_to is not None:
            object.__setattr__(self, 'responds_to', tuple(int(j) for j in self.responds_to))
        self.validate()

    def validate(self):
        label = self.name or f"battery at bus {self.bus}"
        if not self.e_min <= self.e_max:
            raise CaseValidationError(f"{label}: e_min exceeds e_max")
        if not self.e_min - DOMAIN_TOL <= self.initial <= self.e_max + DOMAIN_TOL:
            raise CaseValidationError(f"{label}: initial charge {self.initial} outside [{self.e_min}, {self.e_max}]")
        cc, dc = self.charge_curve, self.discharge_curve
        if abs(cc.y[0] - self.e_min) > DOMAIN_TOL or abs(cc.y[-1] - self.e_max) > DOMAIN_TOL:
            raise CaseValidationError(f"{label}: charge curve must run from e_min to e_max")
        if abs(dc.x[0] - self.e_min) > DOMAIN_TOL or abs(dc.x[-1] - self.e_max) > DOMAIN_TOL:
            raise CaseValidationError(f"{label}: discharge curve must run from e_min to e_max")
        if abs(dc.y[0]) > DOMAIN_TOL:
            raise CaseValidationError(f"{label}: discharge curve must start at zero extractable energy")
        if len(self.charge_speed) != cc.segments:
            raise CaseValidationError(f"{label}: need one charging speed per charge segment ({cc.segments})")
        if len(self.discharge_speed) != dc.segments:
            raise CaseValidationError(f"{label}: need one discharge speed per discharge segment ({dc.segments})")
        if min(self.charge_speed + self.discharge_speed) <= 0:
            raise CaseValidationError(f"{label}: speed limits must be positive")
        if self.max_power_mw is not None and self.max_power_mw <= 0:
            raise CaseValidationError(f"{label}: max_power_mw must be positive")

    @property
    def x0(self):
        """Initial charge in the electrical (charging) coordinate."""
        return self.charge_curve.inverse(self.initial)

    @property
    def e_top(self):
        """C^-1(E_max), the top of the charging coordinate."""
        return self.charge_curve.x[-1]

    @property
    def extractable(self):
        """D(E_0): electrical energy that can be withdrawn from the start."""
        return self.discharge_curve.forward(self.initial)

    def to_dict(self):
        return {
            'bus': self.bus,
            'name': self.name,
            'e_min_mwh': self.e_min,
            'e_max_mwh': self.e_max,
            'initial_mwh': self.initial,
            'charge_curve': self.charge_curve.to_dict(),
            'discharge_curve': self.discharge_curve.to_dict(),
            'speed_mwh': list(self.charge_speed),
            'discharge_speed_mwh': list(self.discharge_speed),
            'max_power_mw': self.max_power_mw,
            'responds_to': None if self.responds_to is None else list(self.responds_to),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            bus=int(data['bus']),
            name=data.get('name', ''),
            charge_curve=ChargeCurve(**data['charge_curve']),
            discharge_curve=DischargeCurve(**data['discharge_curve']),
            e_min=float(data['e_min_mwh']),
            e_max=float(data['e_max_mwh']),
            initial=float(data['initial_mwh']),
            charge_speed=data['speed_mwh'],
            discharge_speed=data['discharge_speed_mwh'],
            max_power_mw=data.get('max_power_mw'),
            responds_to=data.get('responds_to'),
        )


def _check_charge(spec, y):
    if y < spec.e_min - DOMAIN_TOL or y > spec.e_max + DOMAIN_TOL:
        raise CurveDomainError(f"charge {y} outside [{spec.e_min}, {spec.e_max}]")


def step_state(spec, y, energy_in):
    """Advance the chemical charge by one signed electrical energy input.

    Args:
        spec: BatterySpec
        y: current chemical charge, MWh
        energy_in: electrical energy into the battery, MWh (negative withdraws)

    Returns:
        float: new chemical charge, MWh

    Raises:
        CurveDomainError: if y is outside [E_min, E_max]
        RangeViolation: if the step leaves the range; overshoot is in MWh chemical
    """
    _check_charge(spec, y)
    if energy_in >= 0:
        curve = spec.charge_curve
        target = curve.inverse(min(max(y, curve.y[0]), curve.y[-1])) + energy_in
        if target > curve.x[-1] + DOMAIN_TOL:
            overshoot = (target - curve.x[-1]) * curve.slopes[-1]
            raise RangeViolation(f"charging overshoots E_max by {overshoot:.6g} MWh", overshoot)
        return curve.forward(min(target, curve.x[-1]))
    curve = spec.discharge_curve
    target = curve.forward(min(max(y, curve.x[0]), curve.x[-1])) + energy_in
    if target < curve.y[0] - DOMAIN_TOL:
        overshoot = (curve.y[0] - target) / curve.slopes[0]
        raise RangeViolation(f"discharging undershoots E_min by {overshoot:.6g} MWh", overshoot)
    return curve.inverse(max(target, curve.y[0]))


def segment_and_speed(spec, y, side='charge'):
    """Locate the segment holding charge y and its speed limit.

    At an interior breakpoint the lower-indexed segment is returned.

    Args:
        spec: BatterySpec
        y: chemical charge, MWh
        side: 'charge' uses the charging segments and v_s, 'discharge'
            the discharge segments and their limits

    Returns:
        SegmentInfo with the segment index, its speed and chemical bracket
    """
    _check_charge(spec, y)
    if side == 'charge':
        edges = spec.charge_curve.ys
        speeds = spec.charge_speed
    else:
        edges = spec.discharge_curve.xs
        speeds = spec.discharge_speed
    index = int(np.searchsorted(edges, y, side='left')) - 1
    index = min(max(index, 0), len(edges) - 2)
    return SegmentInfo(index=index, speed=speeds[index], bracket=(float(edges[index]), float(edges[index + 1])))


def charge_segment_starts(spec):
    """Electrical breakpoints e_s and the matching chemical brackets."""
    curve = spec.charge_curve
    return [(curve.x[s], (curve.y[s], curve.y[s + 1])) for s in range(curve.segments)]


@dataclass(frozen=True)
class Violation:
    kind: str
    period: int
    magnitude: float
    detail: str = ''


@dataclass
class Trajectory:
    charges: list
    violations: list

    @property
    def ok(self):
        return not self.violations


def simulate_trajectory(spec, energies, delta_hours=1.0, tol=0.0):
    """Replay per-period electrical energies through the exact battery model.

    Checks the range (a) at every period boundary, the speed limits (c)
    against the segment at each period start, the power box, and the
    run bounds (b) over every same-sign run. Periods are reported 1-based.

    Args:
        spec: BatterySpec
        energies: electrical energy into the battery per period, MWh
        delta_hours: period length, used for the power box
        tol: violations at or below this magnitude are not reported

    Returns:
        Trajectory with the charge path (length T+1) and all violations
    """
    y = spec.initial
    charges = [y]
    violations = []

    def record(kind, period, magnitude, detail=''):
        if magnitude > tol:
            violations.append(Violation(kind, period, float(magnitude), detail))

    for t, energy in enumerate(energies, start=1):
        if energy > 0:
            seg = segment_and_speed(spec, y, 'charge')
            record('speed', t, energy - seg.speed, f"charge segment {seg.index}")
        elif energy < 0:
            seg = segment_and_speed(spec, y, 'discharge')
            record('speed', t, -energy - seg.speed, f"discharge segment {seg.index}")
        if spec.max_power_mw is not None:
            record('power', t, abs(energy) - spec.max_power_mw * delta_hours)
        try:
            y = step_state(spec, y, energy)
        except RangeViolation as exc:
            record('range', t, exc.overshoot)
            # continue from the violated bound so later periods are still checked
            y = spec.e_max if energy > 0 else spec.e_min
        charges.append(y)

    # (b): every run of periods that never discharges (resp. never charges).
    # A run from period 1 starts at the known coordinate x0; later runs only
    # know the segment they start in.
    energies = list(energies)
    for start in range(len(energies)):
        y_start = charges[start]
        if start == 0:
            charge_room = spec.e_top - spec.x0
            discharge_room = spec.extractable
        else:
            charge_seg = segment_and_speed(spec, y_start, 'charge')
            charge_room = spec.e_top - spec.charge_curve.x[charge_seg.index]
            discharge_seg = segment_and_speed(spec, y_start, 'discharge')
            discharge_room = spec.discharge_curve.y[discharge_seg.index + 1]
        total_in = 0.0
        total_out = 0.0
        charging = discharging = True
        for end in range(start, len(energies)):
            energy = energies[end]
            charging = charging and energy >= 0
            discharging = discharging and energy <= 0
            if not (charging or discharging):
                break
            if charging:
                total_in += energy
                record('run', end + 1, total_in - charge_room, f"charging run from period {start + 1}")
            if discharging:
                total_out -= energy
                record('run', end + 1, total_out - discharge_room, f"discharging run from period {start + 1}")

    return Trajectory(charges=charges, violations=violations)
