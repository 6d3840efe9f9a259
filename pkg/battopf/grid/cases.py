"""
GridCase and the records it is built from.

A case starts life as a single-period network read from a MATPOWER file
(battopf.grid.matpower) and is completed by a scenario document
(battopf.grid.scenario) with the horizon, renewables, batteries and the
uncertainty model. Cases are immutable; scenario attachment returns a new
case through dataclasses.replace.

Powers are held in MW and energies in MWh, the units of both input
formats. The DC network works in p.u. of base_mva (see to_pu / to_mw).
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from battopf.exceptions import CaseValidationError
from battopf.storage.curves import BatterySpec
from battopf.uncertainty.concentration import ConcentrationModel

logger = logging.getLogger(__name__)


class BusType(enum.IntEnum):
    """MATPOWER bus type codes."""

    PQ = 1
    PV = 2
    SLACK = 3
    ISOLATED = 4


@dataclass(frozen=True)
class Bus:
    id: int
    type: BusType
    pd_mw: float = 0.0


@dataclass(frozen=True)
class BranchSpec:
    """
    A series element of the DC model.

    susceptance is 1/x in p.u.; limit_mw None marks an unlimited branch.
    """

    from_bus: int
    to_bus: int
    susceptance: float
    limit_mw: Optional[float] = None

    @property
    def unlimited(self):
        return self.limit_mw is None

    @property
    def label(self):
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class CostCurve:
    """
    Convex generator cost in $/h of dispatch in MW.

    model 'polynomial' holds MATPOWER model-2 coefficients, highest order
    first (degree at most 2). model 'piecewise' holds model-1 points
    ((p0, f0), (p1, f1), ...) with increasing p.
    """

    model: str
    coefficients: tuple = ()
    points: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'coefficients', tuple(float(c) for c in self.coefficients))
        object.__setattr__(self, 'points', tuple((float(p), float(f)) for p, f in self.points))

    @classmethod
    def polynomial(cls, *coefficients):
        return cls(model='polynomial', coefficients=coefficients)

    @property
    def quadratic(self):
        c = self.coefficients
        return c[-3] if len(c) >= 3 else 0.0

    def evaluate(self, p):
        if self.model == 'polynomial':
            return float(np.polyval(self.coefficients, p)) if self.coefficients else 0.0
        xs, fs = zip(*self.points)
        return float(np.interp(p, xs, fs, left=np.nan, right=np.nan))

    def validate(self, label=''):
        if self.model == 'polynomial':
            if len(self.coefficients) > 3 and any(self.coefficients[:-3]):
                raise CaseValidationError(f"{label}: polynomial costs above degree 2 are not supported")
            if self.quadratic < 0:
                raise CaseValidationError(f"{label}: quadratic cost coefficient must be >= 0 (convexity)")
        elif self.model == 'piecewise':
            if len(self.points) < 2:
                raise CaseValidationError(f"{label}: piecewise cost needs at least two points")
            xs = np.array([p for p, _ in self.points])
            fs = np.array([f for _, f in self.points])
            if np.any(np.diff(xs) <= 0):
                raise CaseValidationError(f"{label}: piecewise cost points must have increasing output")
            if np.any(np.diff(np.diff(fs) / np.diff(xs)) < -1e-9):
                raise CaseValidationError(f"{label}: piecewise cost must be convex")
        else:
            raise CaseValidationError(f"{label}: unknown cost model {self.model!r}")

    def linear_pieces(self, lower, upper, segments):
        """Lines (slope, intercept) whose pointwise max approximates the cost on [lower, upper].

        Quadratics are replaced by the secants through segments + 1 evenly
        spaced points, which overestimate between breakpoints and are exact
        at them. Piecewise costs are returned exactly.
        """
        if self.model == 'piecewise':
            pieces = []
            for (p0, f0), (p1, f1) in zip(self.points, self.points[1:]):
                slope = (f1 - f0) / (p1 - p0)
                pieces.append((slope, f0 - slope * p0))
            return pieces
        if upper - lower <= 1e-12 or self.quadratic == 0.0:
            slope = self.coefficients[-2] if len(self.coefficients) >= 2 else 0.0
            if self.quadratic != 0.0:
                slope += 2.0 * self.quadratic * lower
            return [(slope, self.evaluate(lower) - slope * lower)]
        grid = np.linspace(lower, upper, max(int(segments), 1) + 1)
        values = np.polyval(self.coefficients, grid)
        slopes = np.diff(values) / np.diff(grid)
        return [(float(s), float(v - s * p)) for s, v, p in zip(slopes, values[:-1], grid[:-1])]

    def to_dict(self):
        if self.model == 'polynomial':
            return {'model': 'polynomial', 'coefficients': list(self.coefficients)}
        return {'model': 'piecewise', 'points': [list(p) for p in self.points]}

    @classmethod
    def from_dict(cls, data):
        return cls(
            model=data['model'],
            coefficients=data.get('coefficients', ()),
            points=data.get('points', ()),
        )


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    pmin_mw: float
    pmax_mw: tuple
    cost: CostCurve

    def __post_init__(self):
        object.__setattr__(self, 'pmax_mw', tuple(float(v) for v in self.pmax_mw))


@dataclass(frozen=True)
class Renewable:
    bus: int
    forecast_mw: tuple

    def __post_init__(self):
        object.__setattr__(self, 'forecast_mw', tuple(float(v) for v in self.forecast_mw))


@dataclass(frozen=True)
class Horizon:
    periods: int = 1
    delta_hours: float = 1.0


@dataclass(frozen=True)
class GridCase:
    """
    Everything the planner needs about one network and one planning horizon.

    Loads come from the MATPOWER bus table scaled per period by load_scale.
    Renewables and batteries are indexed by their position in the tuple
    (the renewable ordinal j and battery ordinal i used by the control
    policy and by the deviation coordinates of the uncertainty model).
    Generators dispatch down to 0 MW unless respect_pmin is set, in which
    case their MATPOWER Pmin is the floor.
    """

    base_mva: float
    buses: tuple
    branches: tuple
    generators: tuple
    horizon: Horizon = Horizon()
    load_scale: tuple = (1.0,)
    renewables: tuple = ()
    batteries: tuple = ()
    uncertainty: Optional[ConcentrationModel] = None
    cost_pwl_segments: Optional[int] = None
    respect_pmin: bool = False
    name: str = ''
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for name in ('buses', 'branches', 'generators', 'renewables', 'batteries', 'warnings'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, 'load_scale', tuple(float(v) for v in self.load_scale))

    @property
    def periods(self):
        return self.horizon.periods

    @property
    def delta_hours(self):
        return self.horizon.delta_hours

    @property
    def bus_ids(self):
        return [bus.id for bus in self.buses]

    @property
    def bus_index(self):
        return {bus.id: position for position, bus in enumerate(self.buses)}

    @property
    def slack_bus(self):
        slack = [bus.id for bus in self.buses if bus.type == BusType.SLACK]
        return slack[0] if len(slack) == 1 else None

    def load_matrix(self):
        """(buses, T) array of P^d in MW."""
        base = np.array([bus.pd_mw for bus in self.buses])
        return np.outer(base, np.asarray(self.load_scale))

    def forecast_matrix(self):
        """(buses, T) array of forecast renewable injections in MW."""
        injections = np.zeros((len(self.buses), self.periods))
        index = self.bus_index
        for renewable in self.renewables:
            injections[index[renewable.bus]] += renewable.forecast_mw
        return injections

    def dispatch_floor(self, gen):
        """Lower dispatch bound of gen in MW: its Pmin when the scenario asks for it, else 0."""
        return gen.pmin_mw if self.respect_pmin else 0.0

    def total_load(self, period=0):
        return float(self.load_matrix()[:, period].sum())

    def to_pu(self, mw):
        return np.asarray(mw, dtype=float) / self.base_mva

    def to_mw(self, pu):
        return np.asarray(pu, dtype=float) * self.base_mva

    def validate(self):
        """Check every GridCase invariant; raises CaseValidationError on the first failure."""
        if self.base_mva <= 0:
            raise CaseValidationError("baseMVA must be positive")
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            duplicates = sorted({bus_id for bus_id in ids if ids.count(bus_id) > 1})
            raise CaseValidationError(f"duplicate bus id {duplicates[0]}")
        slack = [bus.id for bus in self.buses if bus.type == BusType.SLACK]
        if len(slack) != 1:
            raise CaseValidationError(f"case needs exactly one slack bus, found {len(slack)}")
        known = set(ids)
        for branch in self.branches:
            for end in (branch.from_bus, branch.to_bus):
                if end not in known:
                    raise CaseValidationError(f"branch {branch.label} references missing bus {end}")
            if branch.susceptance <= 0:
                raise CaseValidationError(f"branch {branch.label}: susceptance must be positive")
            if branch.limit_mw is not None and branch.limit_mw <= 0:
                raise CaseValidationError(f"branch {branch.label}: limit must be positive or unlimited")

        periods = self.periods
        if periods < 1:
            raise CaseValidationError("horizon needs T >= 1")
        if self.delta_hours <= 0:
            raise CaseValidationError("period length delta_hours must be positive")
        if len(self.load_scale) != periods:
            raise CaseValidationError(f"load_scale has {len(self.load_scale)} entries for T={periods}")

        for k, gen in enumerate(self.generators, start=1):
            label = f"generator {k} at bus {gen.bus}"
            if gen.bus not in known:
                raise CaseValidationError(f"{label} references missing bus")
            if len(gen.pmax_mw) != periods:
                raise CaseValidationError(f"{label}: need {periods} Pmax values, got {len(gen.pmax_mw)}")
            if min(gen.pmax_mw) < 0:
                raise CaseValidationError(f"{label}: Pmax must be >= 0")
            if gen.pmin_mw > min(gen.pmax_mw) + 1e-9:
                raise CaseValidationError(f"{label}: Pmin {gen.pmin_mw} exceeds Pmax")
            gen.cost.validate(label)

        for j, renewable in enumerate(self.renewables, start=1):
            if renewable.bus not in known:
                raise CaseValidationError(f"renewable {j} at missing bus {renewable.bus}")
            if len(renewable.forecast_mw) != periods:
                raise CaseValidationError(
                    f"renewable {j}: forecast has {len(renewable.forecast_mw)} entries for T={periods}"
                )

        for i, battery in enumerate(self.batteries, start=1):
            if battery.bus not in known:
                raise CaseValidationError(f"battery {i} at missing bus {battery.bus}")
            if battery.responds_to is not None:
                for j in battery.responds_to:
                    if not 0 <= j < len(self.renewables):
                        raise CaseValidationError(f"battery {i} responds to unknown renewable {j + 1}")

        if self.uncertainty is not None:
            if (self.uncertainty.renewables, self.uncertainty.periods) != (len(self.renewables), periods):
                raise CaseValidationError(
                    f"uncertainty model covers {self.uncertainty.renewables} renewables x "
                    f"{self.uncertainty.periods} periods, case has {len(self.renewables)} x {periods}"
                )
        if self.cost_pwl_segments is not None and self.cost_pwl_segments < 1:
            raise CaseValidationError("cost_pwl_segments must be >= 1")
        return self


def case_to_dict(case):
    """Serialize a GridCase to plain JSON types."""
    return {
        'name': case.name,
        'base_mva': case.base_mva,
        'buses': [{'id': bus.id, 'type': int(bus.type), 'pd_mw': bus.pd_mw} for bus in case.buses],
        'branches': [
            {'from': br.from_bus, 'to': br.to_bus, 'susceptance_pu': br.susceptance, 'limit_mw': br.limit_mw}
            for br in case.branches
        ],
        'generators': [
            {'bus': gen.bus, 'pmin_mw': gen.pmin_mw, 'pmax_mw': list(gen.pmax_mw), 'cost': gen.cost.to_dict()}
            for gen in case.generators
        ],
        'horizon': {'T': case.periods, 'delta_hours': case.delta_hours},
        'load_scale': list(case.load_scale),
        'renewables': [{'bus': r.bus, 'forecast_mw': list(r.forecast_mw)} for r in case.renewables],
        'batteries': [battery.to_dict() for battery in case.batteries],
        'uncertainty': None if case.uncertainty is None else case.uncertainty.to_dict(),
        'cost_pwl_segments': case.cost_pwl_segments,
        'respect_pmin': case.respect_pmin,
    }


def case_from_dict(data):
    """Inverse of case_to_dict."""
    horizon = Horizon(periods=int(data['horizon']['T']), delta_hours=float(data['horizon']['delta_hours']))
    renewables = tuple(Renewable(bus=int(r['bus']), forecast_mw=r['forecast_mw']) for r in data['renewables'])
    uncertainty = None
    if data.get('uncertainty') is not None:
        uncertainty = ConcentrationModel.from_dict(data['uncertainty'], len(renewables), horizon.periods)
    case = GridCase(
        name=data.get('name', ''),
        base_mva=float(data['base_mva']),
        buses=tuple(Bus(id=int(b['id']), type=BusType(b['type']), pd_mw=float(b['pd_mw'])) for b in data['buses']),
        branches=tuple(
            BranchSpec(from_bus=int(b['from']), to_bus=int(b['to']),
                       susceptance=float(b['susceptance_pu']), limit_mw=b['limit_mw'])
            for b in data['branches']
        ),
        generators=tuple(
            GeneratorSpec(bus=int(g['bus']), pmin_mw=float(g['pmin_mw']), pmax_mw=g['pmax_mw'],
                          cost=CostCurve.from_dict(g['cost']))
            for g in data['generators']
        ),
        horizon=horizon,
        load_scale=data['load_scale'],
        renewables=renewables,
        batteries=tuple(BatterySpec.from_dict(b) for b in data['batteries']),
        uncertainty=uncertainty,
        cost_pwl_segments=data.get('cost_pwl_segments'),
        respect_pmin=bool(data.get('respect_pmin', False)),
    )
    return case.validate()
