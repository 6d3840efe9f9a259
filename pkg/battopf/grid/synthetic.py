"""
Seeded synthetic planning cases for scalability runs.

synthetic_case builds a connected network (random spanning tree plus extra
meshing branches), convex quadratic generators, wind farms under a budget
uncertainty set and single-segment batteries that follow every wind farm.
The defaults match a winter-peak national transmission grid: 2746 buses,
3514 branches, 388 generators, about 24.8 GW of load, 32 wind farms with
4.5 GW of forecast and 32 batteries holding 3.2 GWh.

Line limits carry the flows of a proportional dispatch plus twice the worst
per-period deviation, and every battery can hold its even share of the
worst cumulative deviation, so a robust plan exists for every horizon.
"""
import dataclasses
import logging
import math

import numpy as np

from battopf.exceptions import CaseValidationError
from battopf.grid.cases import (
    BranchSpec,
    Bus,
    BusType,
    CostCurve,
    GeneratorSpec,
    GridCase,
    Horizon,
    Renewable,
)
from battopf.grid.network import build_dc_network, generation_by_bus
from battopf.storage.curves import BatterySpec, ChargeCurve, DischargeCurve
from battopf.uncertainty.concentration import from_budgets

logger = logging.getLogger(__name__)

# load rises by RAMP_STEP per period over the first RAMP_PERIODS periods, then holds
RAMP_PERIODS = 6
RAMP_STEP = 0.02

LOADED_SHARE = 0.7
CAPACITY_MARGIN = 1.6
LIMIT_MARGIN_MW = 50.0
STORAGE_HEADROOM = 1.25


def load_profile(periods):
    steps = np.minimum(np.arange(periods), RAMP_PERIODS - 1)
    return tuple(float(v) for v in 1.0 + RAMP_STEP * steps)


def worst_period_deviation(gamma, big_gamma):
    """Largest sum_j |w_j| with |w_j| <= gamma_j and sum_j |w_j| / gamma_j <= big_gamma."""
    ranked = np.sort(np.asarray(gamma, dtype=float))[::-1]
    whole = min(int(math.floor(big_gamma)), ranked.size)
    total = float(ranked[:whole].sum())
    if whole < ranked.size:
        total += (big_gamma - whole) * float(ranked[whole])
    return total


def _random_edges(rng, buses, branches):
    edges = set()
    for k in range(1, buses):
        parent = int(rng.integers(0, k))
        edges.add((parent, k))
    while len(edges) < branches:
        a, b = sorted(int(v) for v in rng.choice(buses, 2, replace=False))
        edges.add((a, b))
    return sorted(edges)


def synthetic_case(
    periods,
    seed=0,
    buses=2746,
    branches=3514,
    generators=388,
    wind_farms=32,
    batteries=32,
    load_mw=24800.0,
    wind_mw=4500.0,
    error_fraction=0.089,
    budget=8.0,
    storage_mwh=3200.0,
    delta_hours=1.0,
):
    """Build a validated GridCase; equal arguments give equal cases.

    Args:
        periods: horizon length T
        seed: seed of the numpy Generator driving every random choice
        buses, branches, generators, wind_farms, batteries: element counts
        load_mw: base-period total load, scaled up over the first periods
        wind_mw: total wind forecast, split unevenly between the farms
        error_fraction: per-farm deviation bound as a share of its forecast
        budget: per-period budget Gamma, the number of farms that may sit at
            their bound at once
        storage_mwh: total initial charge of the batteries before headroom
        delta_hours: period length

    Raises:
        CaseValidationError: counts that cannot form a connected case
    """
    if periods < 1:
        raise CaseValidationError("horizon needs T >= 1")
    if buses < 2 or not buses - 1 <= branches <= buses * (buses - 1) // 2:
        raise CaseValidationError(f"{branches} branches cannot connect {buses} buses")
    if not 1 <= generators <= buses:
        raise CaseValidationError(f"need between 1 and {buses} generators, got {generators}")
    if not 1 <= wind_farms <= buses or not 1 <= batteries <= buses:
        raise CaseValidationError("wind farms and batteries need between 1 and one per bus")
    if not 0.0 < error_fraction or not 0.0 < budget:
        raise CaseValidationError("error_fraction and budget must be positive")
    if not 0.0 < wind_mw < load_mw:
        raise CaseValidationError("wind forecast must be positive and below the load")

    rng = np.random.default_rng(seed)
    scale = load_profile(periods)

    edges = _random_edges(rng, buses, branches)
    reactance = rng.uniform(0.005, 0.05, len(edges))

    gen_buses = rng.choice(buses, generators, replace=False)
    weights = rng.uniform(0.2, 1.0, buses) * (rng.random(buses) < LOADED_SHARE)
    if weights.sum() == 0.0:
        weights[:] = 1.0
    pd = load_mw * weights / weights.sum()

    farm_buses = rng.choice(buses, wind_farms, replace=False)
    shares = rng.uniform(0.5, 1.5, wind_farms)
    forecast = wind_mw * shares / shares.sum()

    peak_net = load_mw * max(scale) - wind_mw
    capacity_shares = rng.uniform(0.3, 1.7, generators)
    pmax = CAPACITY_MARGIN * max(peak_net, load_mw * 0.1) * capacity_shares / capacity_shares.sum()
    quadratic = rng.uniform(0.002, 0.02, generators)
    linear = rng.uniform(10.0, 40.0, generators)

    storage_buses = rng.choice(buses, batteries, replace=False)

    slack = int(gen_buses[0])
    gen_set = {int(b) for b in gen_buses}
    bus_list = tuple(
        Bus(
            b + 1,
            BusType.SLACK if b == slack else BusType.PV if b in gen_set else BusType.PQ,
            float(pd[b]),
        )
        for b in range(buses)
    )
    generator_list = tuple(
        GeneratorSpec(
            int(b) + 1,
            0.2 * float(cap),
            (float(cap),) * periods,
            CostCurve.polynomial(float(a), float(c), 0.0),
        )
        for b, cap, a, c in zip(gen_buses, pmax, quadratic, linear)
    )
    renewables = tuple(Renewable(int(b) + 1, (float(f),) * periods) for b, f in zip(farm_buses, forecast))

    gamma = np.tile((error_fraction * forecast).reshape(-1, 1), (1, periods))
    big_gamma = min(float(budget), float(wind_farms))
    deviation = worst_period_deviation(gamma[:, 0], big_gamma)

    half_range = max(
        storage_mwh / batteries,
        STORAGE_HEADROOM * periods * deviation * delta_hours / batteries,
    )
    power = 2.0 * deviation / batteries
    battery_list = tuple(
        BatterySpec(
            bus=int(b) + 1,
            charge_curve=ChargeCurve.one_segment(0.0, 2.0 * half_range),
            discharge_curve=DischargeCurve.one_segment(0.0, 2.0 * half_range),
            e_min=0.0,
            e_max=2.0 * half_range,
            initial=half_range,
            charge_speed=(power * delta_hours,),
            discharge_speed=(power * delta_hours,),
            max_power_mw=power,
            responds_to=tuple(range(wind_farms)),
            name=f"storage {i}",
        )
        for i, b in enumerate(storage_buses, start=1)
    )

    case = GridCase(
        base_mva=100.0,
        buses=bus_list,
        branches=tuple(BranchSpec(a + 1, b + 1, 1.0 / x) for (a, b), x in zip(edges, reactance)),
        generators=generator_list,
        horizon=Horizon(periods, delta_hours),
        load_scale=scale,
        renewables=renewables,
        batteries=battery_list,
        uncertainty=from_budgets(gamma, np.full(periods, big_gamma)),
        name=f"synthetic-{buses}-T{periods}-s{seed}",
    )
    case = _with_line_limits(case, pmax, deviation)
    logger.info(
        f"built {case.name}: {buses} buses, {len(edges)} branches, {generators} generators, "
        f"{wind_farms} wind farms, {batteries} batteries, worst deviation {deviation:.1f} MW per period"
    )
    return case.validate()


def _with_line_limits(case, pmax, deviation):
    """Limits from the flows of the dispatch that runs every unit at the same share of Pmax."""
    net = build_dc_network(case)
    load = case.load_matrix()
    forecast = case.forecast_matrix()
    share = (load.sum(axis=0) - forecast.sum(axis=0)) / pmax.sum()
    dispatch = np.outer(pmax, share)
    injection = generation_by_bus(case, dispatch) + forecast - load
    flows = case.to_mw(net.branch_flows(net.solve_angles(case.to_pu(injection))))
    limits = np.abs(flows).max(axis=1) + 2.0 * deviation + LIMIT_MARGIN_MW
    branches = tuple(
        BranchSpec(br.from_bus, br.to_bus, br.susceptance, float(limit))
        for br, limit in zip(case.branches, limits)
    )
    return dataclasses.replace(case, branches=branches)
