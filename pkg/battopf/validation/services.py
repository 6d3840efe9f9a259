"""
Monte Carlo validation of a solved plan.

Deviations are sampled from W and every sample is replayed through the
exact battery model (battopf.storage.curves.simulate_trajectory) and a
fresh DC angle solve. Nothing here reuses the separation LPs or the cut
algebra, so a plan the solver calls robust but that fails here points at a
bug in one of the two paths.
"""
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings

from battopf.exceptions import ControlPolicyError, DimensionError, PlanRejectedError
from battopf.grid.network import build_dc_network, generation_by_bus
from battopf.planning.control import ControlPolicy, ControlStructure, battery_energy
from battopf.storage.curves import simulate_trajectory
from battopf.uncertainty.sampling import sample_deviation

logger = logging.getLogger(__name__)

FAMILIES = ('balance', 'generator', 'line', 'speed', 'power', 'range', 'run')

BALANCE_TOL = 1e-9
VIOLATION_TOL = 1e-6
# records kept in the report; every violation still counts toward the maxima
MAX_RECORDS = 1000


@dataclass
class ValidationRecord:
    """One violated constraint. sample 0 is the nominal check (w = 0)."""

    sample: int
    family: str
    period: int
    element: str
    magnitude: float
    detail: str = ''

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ValidationReport:
    samples: int
    seed: int
    tolerance: float
    records: list = field(default_factory=list)
    max_violation: dict = field(default_factory=lambda: dict.fromkeys(FAMILIES, 0.0))
    violating_samples: int = 0
    total_violations: int = 0

    @property
    def passed(self):
        return self.total_violations == 0

    @property
    def worst(self):
        return max(self.max_violation.values(), default=0.0)

    def add(self, record):
        self.total_violations += 1
        self.max_violation[record.family] = max(self.max_violation[record.family], record.magnitude)
        if len(self.records) < MAX_RECORDS:
            self.records.append(record)

    def families(self):
        """Families with at least one violation."""
        return [family for family in FAMILIES if self.max_violation[family] > 0]

    def to_dict(self):
        return {
            'passed': self.passed,
            'samples': self.samples,
            'seed': self.seed,
            'tolerance': self.tolerance,
            'max_violation': dict(self.max_violation),
            'violating_samples': self.violating_samples,
            'total_violations': self.total_violations,
            'violations': [record.to_dict() for record in self.records],
        }


def _check_plan(case, dispatch, policy):
    periods = case.periods
    expected = (len(case.generators), periods)
    if dispatch.shape != expected:
        raise PlanRejectedError(f"dispatch has shape {dispatch.shape}, case needs {expected}")
    expected = (periods, len(case.batteries), len(case.renewables))
    if policy.lambdas.shape != expected:
        raise PlanRejectedError(f"lambda has shape {policy.lambdas.shape}, case needs {expected}")
    try:
        pairs = ControlStructure(case).balanced_pairs(case.uncertainty)
        policy.check(pairs, BALANCE_TOL)
    except ControlPolicyError as exc:
        raise PlanRejectedError(f"control policy rejected: {exc}") from exc


def _nominal_records(case, dispatch, tol):
    records = []
    load = case.load_matrix()
    forecast = case.forecast_matrix()
    for t in range(case.periods):
        gap = abs(dispatch[:, t].sum() - (load[:, t].sum() - forecast[:, t].sum()))
        if gap > tol:
            records.append(ValidationRecord(0, 'balance', t + 1, 'system', float(gap), 'nominal balance'))
    for k, gen in enumerate(case.generators):
        label = f"generator {k + 1} at bus {gen.bus}"
        for t in range(case.periods):
            below = case.dispatch_floor(gen) - dispatch[k, t]
            above = dispatch[k, t] - gen.pmax_mw[t]
            if below > tol:
                records.append(ValidationRecord(0, 'generator', t + 1, label, float(below), 'below dispatch floor'))
            if above > tol:
                records.append(ValidationRecord(0, 'generator', t + 1, label, float(above), 'above Pmax'))
    return records


def _line_records(case, net, dispatch, policy, deviations, tol):
    """Flow violations for a stack of deviations, one angle solve per period."""
    records = []
    if not deviations:
        return records
    index = case.bus_index
    base = generation_by_bus(case, dispatch) + case.forecast_matrix() - case.load_matrix()
    stack = np.stack(deviations, axis=-1)  # (renewables, T, samples)
    limits = np.array([np.inf if br.unlimited else br.limit_mw for br in case.branches])
    for t in range(case.periods):
        injection = np.repeat(base[:, t][:, None], stack.shape[-1], axis=1)
        for j, renewable in enumerate(case.renewables):
            injection[index[renewable.bus]] += stack[j, t]
        for i, battery in enumerate(case.batteries):
            injection[index[battery.bus]] -= policy.lambdas[t, i] @ stack[:, t]
        flows = case.to_mw(net.branch_flows(net.solve_angles(case.to_pu(injection))))
        excess = np.abs(flows) - limits[:, None]
        for branch, sample in zip(*np.nonzero(excess > tol)):
            records.append(ValidationRecord(
                int(sample) + 1, 'line', t + 1, case.branches[branch].label, float(excess[branch, sample]),
                f"flow {flows[branch, sample]:.4f} MW",
            ))
    return records


def _battery_records(case, policy, sample, w, tol):
    records = []
    for i, battery in enumerate(case.batteries):
        energies = [battery_energy(policy, i, t, w, case.delta_hours) for t in range(case.periods)]
        trajectory = simulate_trajectory(battery, energies, case.delta_hours, tol)
        label = battery.name or f"battery {i + 1}"
        for violation in trajectory.violations:
            records.append(ValidationRecord(
                sample, violation.kind, violation.period, label, violation.magnitude, violation.detail,
            ))
    return records


def monte_carlo_validate(case, dispatch, policy, samples=None, seed=None, tol=VIOLATION_TOL):
    """Check a plan against sampled deviations.

    Args:
        case: GridCase the plan was solved for
        dispatch: (generators, T) dispatch in MW
        policy: ControlPolicy or a (T, batteries, renewables) lambda array
        samples: number of deviations to draw (default settings.BATTOPF_VALIDATION_SAMPLES)
        seed: sampler seed (default settings.BATTOPF_SEED)
        tol: violations at or below this magnitude (MW or MWh) are ignored

    Returns:
        ValidationReport; passed is True when no sample breaks any constraint

    Raises:
        ValueError: samples < 1
        PlanRejectedError: plan dimensions do not match the case, or the
            gains break nonnegativity or sum_i lambda = 1
    """
    samples = int(samples if samples is not None else settings.BATTOPF_VALIDATION_SAMPLES)
    seed = int(seed if seed is not None else settings.BATTOPF_SEED)
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    dispatch = np.asarray(dispatch, dtype=float)
    if not isinstance(policy, ControlPolicy):
        policy = ControlPolicy(policy, tuple(b.responds_to for b in case.batteries))
    _check_plan(case, dispatch, policy)

    report = ValidationReport(samples=samples, seed=seed, tolerance=tol)
    for record in _nominal_records(case, dispatch, tol):
        report.add(record)

    deviations = sample_deviation(case.uncertainty, seed, samples) if case.uncertainty is not None else [
        np.zeros((len(case.renewables), case.periods)) for _ in range(samples)
    ]
    net = build_dc_network(case)
    violating = set()
    for record in _line_records(case, net, dispatch, policy, deviations, tol):
        violating.add(record.sample)
        report.add(record)
    for sample, w in enumerate(deviations, start=1):
        for record in _battery_records(case, policy, sample, w, tol):
            violating.add(sample)
            report.add(record)
    report.records.sort(key=lambda record: (record.sample, record.family, record.period, record.element))
    report.violating_samples = len(violating)

    if report.passed:
        logger.info(f"validation passed: {samples} samples (seed {seed}), no violation above {tol:g}")
    else:
        logger.warning(
            f"validation failed: {report.violating_samples} of {samples} samples violate the plan; "
            f"families {', '.join(report.families())}, worst {report.worst:.6g}"
        )
    return report


def plan_from_results(case, results):
    """Dispatch and ControlPolicy read back from a results document.

    Raises:
        PlanRejectedError: the document carries no plan or its arrays do not fit the case
    """
    if results.get('Pg_mw') is None or results.get('lambda') is None:
        raise PlanRejectedError(f"results with status {results.get('status')!r} carry no plan to validate")
    dispatch = np.asarray(results['Pg_mw'], dtype=float)
    if dispatch.size == 0:
        dispatch = dispatch.reshape(len(case.generators), case.periods)
    entries = sorted(results['lambda'], key=lambda item: item['t'])
    shape = (case.periods, len(case.batteries), len(case.renewables))
    try:
        lambdas = np.array([np.asarray(item['entries'], dtype=float).reshape(shape[1:]) for item in entries])
        lambdas = lambdas.reshape(shape)
    except (ValueError, KeyError, TypeError) as exc:
        raise PlanRejectedError(f"lambda entries do not fit {shape}: {exc}") from exc
    try:
        policy = ControlPolicy(lambdas, tuple(b.responds_to for b in case.batteries))
    except DimensionError as exc:
        raise PlanRejectedError(str(exc)) from exc
    return dispatch, policy
