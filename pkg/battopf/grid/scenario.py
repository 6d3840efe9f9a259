"""
Scenario documents: the JSON extension that turns a MATPOWER network into
a complete multi-period planning case.

Schema (keys beyond T are optional unless noted):

    {"T": int, "delta_hours": num, "load_scale": [num],
     "renewables": [{"bus": int, "forecast_mw": [num]}],
     "batteries": [{"bus": int, "e_min_mwh": num, "e_max_mwh": num,
                    "initial_mwh": num,
                    "charge_curve": {"x": [num], "y": [num]},
                    "discharge_curve": {"x": [num], "y": [num]},
                    "speed_mwh": [num], "discharge_speed_mwh": [num],
                    "max_power_mw": num, "responds_to": [int] | "all",
                    "charge_efficiency": num, "discharge_efficiency": num}],
     "uncertainty": {"type": "budgets", "gamma": [[num]], "Gamma": [num]}
                  | {"type": "concentration", "K_plus": [[num]],
                     "K_minus": [[num]], "b": [num]},
     "cost_pwl_segments": int,
     "gen_pmax_mw": [[num]],
     "respect_pmin": bool,
     "branch_limits": [{"from": int, "to": int, "limit_mw": num}]}

responds_to lists renewables by 1-based ordinal (position in "renewables").
Generators dispatch from 0 MW; "respect_pmin": true makes the MATPOWER Pmin
the floor instead.
"""
import dataclasses
import json
import logging

from battopf.exceptions import CaseParseError, CaseValidationError
from battopf.grid.cases import GeneratorSpec, Horizon, Renewable
from battopf.grid.matpower import read_matpower_file
from battopf.storage.curves import BatterySpec, ChargeCurve, DischargeCurve
from battopf.uncertainty.concentration import ConcentrationModel

logger = logging.getLogger(__name__)


def _require(data, key, where='scenario'):
    try:
        return data[key]
    except KeyError:
        raise CaseParseError(f"{where}: missing key {key!r}") from None
    except TypeError:
        raise CaseParseError(f"{where}: expected an object") from None


def _battery(entry, ordinal, renewables, delta_hours):
    where = f"battery {ordinal}"
    e_min = float(_require(entry, 'e_min_mwh', where))
    e_max = float(_require(entry, 'e_max_mwh', where))

    if 'charge_curve' in entry:
        charge_curve = ChargeCurve(**entry['charge_curve'])
    else:
        charge_curve = ChargeCurve.one_segment(e_min, e_max, float(entry.get('charge_efficiency', 1.0)))
    if 'discharge_curve' in entry:
        discharge_curve = DischargeCurve(**entry['discharge_curve'])
    else:
        discharge_curve = DischargeCurve.one_segment(e_min, e_max, float(entry.get('discharge_efficiency', 1.0)))

    max_power = entry.get('max_power_mw')
    if max_power is not None:
        max_power = float(max_power)
    # without explicit limits a speed is bounded by the power box, or by the whole curve
    default_in = max_power * delta_hours if max_power is not None else charge_curve.x[-1] - charge_curve.x[0]
    default_out = max_power * delta_hours if max_power is not None else discharge_curve.y[-1]
    charge_speed = entry.get('speed_mwh', [default_in] * charge_curve.segments)
    discharge_speed = entry.get('discharge_speed_mwh', [default_out] * discharge_curve.segments)

    responds_to = entry.get('responds_to')
    if responds_to == 'all':
        responds_to = tuple(range(renewables))
    elif responds_to is not None:
        if not isinstance(responds_to, list):
            raise CaseParseError(f"{where}: responds_to must be a list of renewable ordinals or \"all\"")
        for j in responds_to:
            if not 1 <= int(j) <= renewables:
                raise CaseValidationError(f"{where}: responds_to names renewable {j}, case has {renewables}")
        responds_to = tuple(int(j) - 1 for j in responds_to)

    return BatterySpec(
        bus=int(_require(entry, 'bus', where)),
        name=entry.get('name', f"battery {ordinal}"),
        charge_curve=charge_curve,
        discharge_curve=discharge_curve,
        e_min=e_min,
        e_max=e_max,
        initial=float(_require(entry, 'initial_mwh', where)),
        charge_speed=charge_speed,
        discharge_speed=discharge_speed,
        max_power_mw=max_power,
        responds_to=responds_to,
    )


def _apply_branch_limits(branches, overrides):
    branches = list(branches)
    for override in overrides:
        f, t = int(_require(override, 'from', 'branch_limits')), int(_require(override, 'to', 'branch_limits'))
        limit = override.get('limit_mw')
        matches = [
            k for k, br in enumerate(branches)
            if (br.from_bus, br.to_bus) in ((f, t), (t, f))
        ]
        if not matches:
            raise CaseValidationError(f"branch_limits names branch {f}-{t}, which is not in the case")
        for k in matches:
            branches[k] = dataclasses.replace(branches[k], limit_mw=float(limit) if limit else None)
    return branches


def build_scenario(data, base):
    """Attach a decoded scenario document to a network-only GridCase."""
    periods = int(_require(data, 'T'))
    if periods < 1:
        raise CaseValidationError("scenario needs T >= 1")
    horizon = Horizon(periods=periods, delta_hours=float(data.get('delta_hours', 1.0)))
    if horizon.delta_hours <= 0:
        raise CaseValidationError("delta_hours must be positive")

    renewables = [
        Renewable(bus=int(_require(r, 'bus', 'renewable')), forecast_mw=_require(r, 'forecast_mw', 'renewable'))
        for r in data.get('renewables', [])
    ]
    batteries = [
        _battery(entry, i, len(renewables), horizon.delta_hours)
        for i, entry in enumerate(data.get('batteries', []), start=1)
    ]

    spec = data.get('uncertainty')
    if spec is None:
        uncertainty = ConcentrationModel.zero(len(renewables), periods)
    else:
        uncertainty = ConcentrationModel.from_dict(spec, len(renewables), periods)

    pmax = data.get('gen_pmax_mw')
    if pmax is None:
        # base-case limit replicated over the horizon
        generators = [dataclasses.replace(g, pmax_mw=(g.pmax_mw[0],) * periods) for g in base.generators]
    else:
        if len(pmax) != len(base.generators):
            raise CaseValidationError(f"gen_pmax_mw has {len(pmax)} rows for {len(base.generators)} generators")
        generators = [
            GeneratorSpec(bus=g.bus, pmin_mw=g.pmin_mw, pmax_mw=row, cost=g.cost)
            for g, row in zip(base.generators, pmax)
        ]

    case = dataclasses.replace(
        base,
        horizon=horizon,
        load_scale=tuple(data.get('load_scale', [1.0] * periods)),
        renewables=tuple(renewables),
        batteries=tuple(batteries),
        uncertainty=uncertainty,
        generators=tuple(generators),
        branches=tuple(_apply_branch_limits(base.branches, data.get('branch_limits', []))),
        cost_pwl_segments=data.get('cost_pwl_segments', base.cost_pwl_segments),
        respect_pmin=bool(data.get('respect_pmin', base.respect_pmin)),
    )
    case.validate()
    if uncertainty.dimension and not uncertainty.is_trivial():
        uncertainty.check_full_dimensional()
    return case


def parse_scenario_spec(text, base):
    """Parse a scenario JSON document and attach it to base.

    Args:
        text: scenario JSON text
        base: GridCase from parse_matpower_case

    Returns:
        complete, validated GridCase

    Raises:
        CaseParseError: invalid JSON or missing keys
        CaseValidationError: a GridCase invariant fails
        UncertaintyModelError: malformed uncertainty model
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"scenario is not valid JSON: {exc.msg}", exc.lineno) from exc
    if not isinstance(data, dict):
        raise CaseParseError("scenario must be a JSON object")
    return build_scenario(data, base)


def load_case(case_path, scenario_path=None):
    """Read a MATPOWER file and, optionally, its scenario file."""
    case = read_matpower_file(case_path)
    if scenario_path is None:
        return case
    with open(scenario_path, encoding='utf-8') as handle:
        return parse_scenario_spec(handle.read(), case)
