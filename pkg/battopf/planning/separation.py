"""
Separation oracles.

Each oracle fixes the candidate (P~, lambda~) and looks for a deviation
w in W that breaks one robust constraint. Line limits are linear in w, so
one LP over the split w = p - n finds the worst case. Battery constraints
are searched one sign orthant at a time: with lambda >= 0 a deviation whose
entries share a sign moves every battery monotonically, and shrinking the
entries of the other sign only makes a violation worse, so these orthants
hold the worst cases.

A violation found at witness w^ yields a cut that is linear in (P^g, lambda)
for fixed w^. When the violated limit depends on which curve segment the
battery is in, the cut comes from a disjunction over "the state is not in
that segment, or the limit holds" (see battopf.planning.disjunctive).
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from django.conf import settings

from battopf.exceptions import LPModelError
from battopf.grid.network import build_dc_network, compute_shift_factors, generation_by_bus
from battopf.lp.problem import GE, LE, LPBuilder, LPStatus, default_backend, solve_lp
from battopf.storage.curves import segment_and_speed
from battopf.uncertainty.concentration import ConcentrationModel

from .control import ControlStructure
from .disjunctive import Disjunct, build_disjunctive_cut
from .master import Cut

logger = logging.getLogger(__name__)

CHARGE, DISCHARGE = 1, -1


@dataclass
class WorstCase:
    """Optimal value of a separation LP and the deviation (renewables x T, MW) attaining it."""

    value: float
    witness: np.ndarray


@dataclass
class Finding:
    family: str
    period: int
    element: str
    witness: np.ndarray
    violation: float
    cuts: list = field(default_factory=list)
    key: tuple = ()


@dataclass
class SeparationCertificate:
    findings: list
    cuts: list

    @property
    def verdict(self):
        return 'feasible' if not self.findings else 'violated'

    @property
    def feasible(self):
        return not self.findings

    @property
    def uncut(self):
        """Violations for which no valid cut could be produced."""
        return [finding for finding in self.findings if not finding.cuts]


class SeparationContext:
    """Read-only snapshot of a candidate and the case data every oracle needs."""

    def __init__(self, case, candidate, shift_factors=None, structure=None, pairs=None,
                 tolerance=None, backend=None):
        self.case = case
        self.candidate = candidate
        self.model = case.uncertainty or ConcentrationModel.zero(len(case.renewables), case.periods)
        self.structure = structure or ControlStructure(case)
        if pairs is None:
            pairs = self.structure.balanced_pairs(case.uncertainty)
        self.fixed = self.structure.fixed_gains(pairs)
        self.tolerance = float(tolerance if tolerance is not None else settings.BATTOPF_TOLERANCE)
        self.backend = backend or default_backend()
        self.delta = case.delta_hours
        self.lambdas = np.asarray(candidate.lambdas, dtype=float)

        shift_factors = shift_factors or compute_shift_factors(build_dc_network(case))
        self.nu = shift_factors.matrix
        index = case.bus_index
        self.generator_bus = np.array([index[g.bus] for g in case.generators], dtype=int)
        self.renewable_bus = np.array([index[r.bus] for r in case.renewables], dtype=int)
        self.battery_bus = np.array([index[b.bus] for b in case.batteries], dtype=int)
        self.injection = (
            generation_by_bus(case, candidate.dispatch) + case.forecast_matrix() - case.load_matrix()
        )
        self.upper, self.lower = self.model.coordinate_bounds()

    @property
    def renewables(self):
        return len(self.case.renewables)

    def battery_label(self, battery):
        return self.case.batteries[battery].name or f"battery {battery + 1}"

    def energy_coefficients(self, battery, periods):
        """Columns (j, h) for h in periods and the energy Delta * lambda~^h_ij per unit deviation."""
        columns, coefficients = [], []
        for h in periods:
            for j in range(self.renewables):
                columns.append(self.model.index(j, h))
                coefficients.append(self.delta * self.lambdas[h, battery, j])
        return columns, np.asarray(coefficients, dtype=float)

    def energy_form(self, battery, periods, witness):
        """beta with beta . lambda = Delta * sum_{h in periods} sum_j lambda^h_ij w^_jh."""
        beta = np.zeros(self.lambdas.shape)
        for h in periods:
            beta[h, battery, :] = self.delta * witness[:, h]
        return beta

    def energy(self, battery, periods, witness):
        return float(np.sum(self.energy_form(battery, periods, witness) * self.lambdas))

    def witness(self, columns, signs, magnitudes):
        """Signed deviation from LP magnitudes, pulled back into W if round-off pushed it out."""
        model = self.model
        w = np.zeros(model.dimension)
        w[columns] = np.asarray(signs, dtype=float) * np.maximum(magnitudes, 0.0)
        closed = model.b <= 0.0
        if np.any(closed):
            # a row with b = 0 pins every coordinate it weighs to 0
            pinned = ((model.k_plus[closed] > 0) & (w > 0)).any(axis=0)
            pinned |= ((model.k_minus[closed] > 0) & (w < 0)).any(axis=0)
            w[pinned] = 0.0
        activity = model.k_plus @ np.maximum(w, 0.0) + model.k_minus @ np.maximum(-w, 0.0)
        over = activity > model.b
        if np.any(over):
            w *= float(np.min(model.b[over] / activity[over]))
        return w.reshape(model.renewables, model.periods)


def _solve(ctx, builder, what):
    result = solve_lp(builder.build(sense='max'), ctx.backend)
    if result.status == LPStatus.INFEASIBLE:
        return None
    if result.status == LPStatus.UNBOUNDED:
        raise LPModelError(f"{what}: separation LP is unbounded; the uncertainty set must be bounded")
    if not result.optimal:
        raise LPModelError(f"{what}: separation LP ended {result.status.value}: {result.message}")
    return result


def line_worst_case(ctx, branch, period, sign):
    """Largest sign * flow (MW) on a branch over w in W for the candidate.

    Solves max a . (p - n) s.t. K+ p + K- n <= b, p, n >= 0 over the
    deviations of one period; every other coordinate stays at 0.
    """
    row = ctx.nu[branch]
    base = sign * float(row @ ctx.injection[:, period])
    columns = ctx.model.period_columns(period)
    if not columns:
        return WorstCase(base, np.zeros((0, ctx.case.periods)))
    battery_pull = ctx.lambdas[period].T @ row[ctx.battery_bus] if ctx.battery_bus.size else 0.0
    a = sign * (row[ctx.renewable_bus] - battery_pull)

    builder = LPBuilder()
    p = builder.add_variables(len(columns), cost=a)
    n = builder.add_variables(len(columns), cost=-a)
    k_plus = ctx.model.k_plus[:, columns]
    k_minus = ctx.model.k_minus[:, columns]
    for r in range(ctx.model.rows):
        if np.any(k_plus[r]) or np.any(k_minus[r]):
            builder.add_row(np.concatenate([p, n]), np.concatenate([k_plus[r], k_minus[r]]), LE, ctx.model.b[r])
    result = _solve(ctx, builder, f"branch {ctx.case.branches[branch].label}")
    # p - n is complementary up to equal pairs, which cancel
    deviation = result.x[p] - result.x[n]
    magnitudes = np.abs(deviation)
    signs = np.where(deviation >= 0, 1.0, -1.0)
    witness = ctx.witness(columns, signs, magnitudes)
    return WorstCase(base + float(a @ witness[:, period]), witness)


def _box_bound(ctx, branch, period, sign):
    """Upper bound on line_worst_case from the per-coordinate extent of W."""
    row = ctx.nu[branch]
    base = sign * float(row @ ctx.injection[:, period])
    columns = ctx.model.period_columns(period)
    if not columns:
        return base
    battery_pull = ctx.lambdas[period].T @ row[ctx.battery_bus] if ctx.battery_bus.size else 0.0
    a = sign * (row[ctx.renewable_bus] - battery_pull)
    up = ctx.upper[columns]
    down = ctx.lower[columns]
    with np.errstate(invalid='ignore'):
        gain = np.where(a > 0, a * up, np.where(a < 0, -a * down, 0.0))
    return base + float(np.sum(gain))


def _line_task(ctx, branch, period):
    spec = ctx.case.branches[branch]
    findings = []
    for sign in (1, -1):
        if _box_bound(ctx, branch, period, sign) <= spec.limit_mw + ctx.tolerance:
            continue
        worst = line_worst_case(ctx, branch, period, sign)
        violation = worst.value - spec.limit_mw
        if violation <= ctx.tolerance:
            continue
        case = ctx.case
        row = ctx.nu[branch]
        alpha = np.zeros((len(case.generators), case.periods))
        alpha[:, period] = -sign * row[ctx.generator_bus]
        beta = np.zeros(ctx.lambdas.shape)
        if ctx.battery_bus.size:
            beta[period] = sign * np.outer(row[ctx.battery_bus], worst.witness[:, period])
        nominal = case.forecast_matrix()[:, period] - case.load_matrix()[:, period]
        rhs = (-spec.limit_mw + sign * float(row @ nominal)
               + sign * float(row[ctx.renewable_bus] @ worst.witness[:, period]))
        cut = Cut(alpha, beta, rhs, 'line', period + 1, spec.label, worst.witness, violation)
        findings.append(Finding('line', period + 1, spec.label, worst.witness, violation, [cut],
                                key=('line', branch, period, sign)))
    return findings


def _bracket(spec, side, segment):
    """Chemical charge bracket of a charging (side > 0) or discharge segment."""
    if side > 0:
        curve = spec.charge_curve
        return float(curve.y[segment]), float(curve.y[segment + 1])
    curve = spec.discharge_curve
    return float(curve.x[segment]), float(curve.x[segment + 1])


def prefix_window(spec, prefix_sign, bracket):
    """Range of the signed prefix energy that leaves the charge inside bracket.

    A charging prefix moves the electrical coordinate from x0; a discharging
    prefix draws on the extractable energy D(E_0).
    """
    low, high = bracket
    if prefix_sign > 0:
        x0 = spec.x0
        return spec.charge_curve.inverse(low) - x0, spec.charge_curve.inverse(high) - x0
    start = spec.extractable
    return spec.discharge_curve.forward(low) - start, spec.discharge_curve.forward(high) - start


def battery_worst_case(ctx, battery, periods, side, segment=None, prefix_sign=None):
    """Largest side * (energy over periods) battery takes for w in the side orthant.

    With segment given, the periods before periods[0] form a prefix of sign
    prefix_sign whose energy puts the charge at the start of periods[0]
    inside the segment's bracket (charging segments for side > 0, discharge
    segments otherwise).

    Returns:
        WorstCase, or None when the bracket cannot be reached
    """
    spec = ctx.case.batteries[battery]
    periods = list(periods)
    columns, coefficients = ctx.energy_coefficients(battery, periods)
    signs = [float(side)] * len(columns)
    objective = list(coefficients)
    window = None
    prefix = []
    if segment is not None:
        prefix = list(range(periods[0]))
        low, high = prefix_window(spec, prefix_sign, _bracket(spec, side, segment))
        prefix_columns, prefix_coefficients = ctx.energy_coefficients(battery, prefix)
        columns += prefix_columns
        signs += [float(prefix_sign)] * len(prefix_columns)
        objective += [0.0] * len(prefix_columns)
        window = (np.concatenate([np.zeros(len(objective) - len(prefix_columns)),
                                  prefix_sign * prefix_coefficients]), low, high)
    if not columns:
        if window is not None and not window[1] - ctx.tolerance <= 0.0 <= window[2] + ctx.tolerance:
            return None
        return WorstCase(0.0, np.zeros((0, ctx.case.periods)))

    model = ctx.model
    full_signs = np.ones(model.dimension)
    full_signs[columns] = signs
    matrix = model.orthant_matrix(full_signs)[:, columns]
    builder = LPBuilder()
    m = builder.add_variables(len(columns), cost=objective)
    for r in range(model.rows):
        if np.any(matrix[r]):
            builder.add_row(m, matrix[r], LE, model.b[r])
    if window is not None:
        builder.add_row(m, window[0], GE, window[1])
        builder.add_row(m, window[0], LE, window[2])
    result = _solve(ctx, builder, ctx.battery_label(battery))
    if result is None:
        return None
    witness = ctx.witness(columns, signs, result.x)
    return WorstCase(side * ctx.energy(battery, periods, witness), witness)


def _direct_cut(ctx, battery, periods, side, witness, limit, family, period, violation):
    """side * Delta * sum lambda w^ <= limit, as -side * form . lambda >= -limit."""
    case = ctx.case
    beta = -side * ctx.energy_form(battery, periods, witness)
    alpha = np.zeros((len(case.generators), case.periods))
    return Cut(alpha, beta, -float(limit), family, period + 1, ctx.battery_label(battery), witness, violation)


def _disjunctive_cut(ctx, battery, halfspaces, witness, family, period, violation):
    """Cut from the union of halfspaces beta . lambda <= bound over one battery's gains."""
    structure = ctx.structure
    support = structure.variables_of(battery, set(range(period + 1)))
    if not support:
        return None
    disjuncts = [
        Disjunct.halfspace(structure.gain_coefficients(beta)[support], bound)
        for beta, bound in halfspaces
    ]
    lower = np.array([1.0 if g in ctx.fixed else 0.0 for g in support])
    upper = np.ones(len(support))
    point = structure.collapse(ctx.lambdas)[support]
    found = build_disjunctive_cut(point, disjuncts, lower, upper, ctx.tolerance, ctx.backend)
    label = ctx.battery_label(battery)
    if found is None:
        logger.info(
            f"{family} violation {violation:.4g} at {label}, period {period + 1}: "
            f"no valid disjunctive cut separates the candidate; witness discarded"
        )
        return None
    case = ctx.case
    alpha = np.zeros((len(case.generators), case.periods))
    if found.infeasible:
        beta = np.zeros(ctx.lambdas.shape)
        return Cut(alpha, beta, 1.0, family, period + 1, label, witness, violation, disjunctive=True)
    beta = -structure.spread(dict(zip(support, found.pi)))
    return Cut(alpha, beta, -found.pi0, family, period + 1, label, witness, found.violation, disjunctive=True)


def _segmented(ctx, battery, periods, side, segment, prefix_sign, limit, family):
    """Violation of a segment-conditional limit and its disjunctive cut, if any."""
    spec = ctx.case.batteries[battery]
    worst = battery_worst_case(ctx, battery, periods, side, segment, prefix_sign)
    if worst is None:
        return None
    violation = worst.value - limit
    if violation <= ctx.tolerance:
        return None
    start = periods[0]
    low, high = prefix_window(spec, prefix_sign, _bracket(spec, side, segment))
    prefix = ctx.energy_form(battery, range(start), worst.witness)
    target = side * ctx.energy_form(battery, periods, worst.witness)
    halfspaces = [(prefix, low), (-prefix, -high), (target, limit)]
    cut = _disjunctive_cut(ctx, battery, halfspaces, worst.witness, family, periods[-1], violation)
    label = ctx.battery_label(battery)
    return Finding(family, periods[-1] + 1, label, worst.witness, violation, [cut] if cut else [],
                   key=(family, battery, periods[-1], side, start, segment, prefix_sign))


def _speed_task(ctx, battery, period, side):
    spec = ctx.case.batteries[battery]
    speeds = spec.charge_speed if side > 0 else spec.discharge_speed
    direct = []
    if period == 0:
        info = segment_and_speed(spec, spec.initial, 'charge' if side > 0 else 'discharge')
        direct.append((info.speed, 'speed'))
    elif len(speeds) == 1:
        direct.append((speeds[0], 'speed'))
    if spec.max_power_mw is not None:
        direct.append((spec.max_power_mw * ctx.delta, 'power'))

    findings = []
    if direct:
        limit, family = min(direct)
        worst = battery_worst_case(ctx, battery, [period], side)
        violation = worst.value - limit
        if violation > ctx.tolerance:
            cut = _direct_cut(ctx, battery, [period], side, worst.witness, limit, family, period, violation)
            findings.append(Finding(family, period + 1, ctx.battery_label(battery), worst.witness, violation,
                                    [cut], key=(family, battery, period, side, 0, 0, 0)))
    if period > 0 and len(speeds) > 1:
        for segment, speed in enumerate(speeds):
            for prefix_sign in (1, -1):
                found = _segmented(ctx, battery, [period], side, segment, prefix_sign, speed, 'speed')
                if found is not None:
                    findings.append(found)
    return findings


def _charge_range_task(ctx, battery, end, side):
    """Runs from period 1 through end: the starting coordinate is known exactly."""
    spec = ctx.case.batteries[battery]
    room = spec.e_top - spec.x0 if side > 0 else spec.extractable
    periods = list(range(end + 1))
    worst = battery_worst_case(ctx, battery, periods, side)
    violation = worst.value - room
    if violation <= ctx.tolerance:
        return []
    cut = _direct_cut(ctx, battery, periods, side, worst.witness, room, 'charge-range', end, violation)
    return [Finding('charge-range', end + 1, ctx.battery_label(battery), worst.witness, violation, [cut],
                    key=('charge-range', battery, end, side, 0, 0, 0))]


def _run_bound_task(ctx, battery, start, end, side):
    """Runs starting after period 1, bounded by the room above their starting segment."""
    spec = ctx.case.batteries[battery]
    findings = []
    if side > 0:
        curve = spec.charge_curve
        rooms = [spec.e_top - curve.x[s] for s in range(curve.segments)]
    else:
        curve = spec.discharge_curve
        rooms = [curve.y[s + 1] for s in range(curve.segments)]
    if len(rooms) == 1:
        return findings
    periods = list(range(start, end + 1))
    for segment, room in enumerate(rooms):
        for prefix_sign in (1, -1):
            found = _segmented(ctx, battery, periods, side, segment, prefix_sign, room, 'run-bound')
            if found is not None:
                findings.append(found)
    return findings


def line_tasks(ctx):
    return [
        partial(_line_task, ctx, branch, period)
        for period in range(ctx.case.periods)
        for branch, spec in enumerate(ctx.case.branches)
        if not spec.unlimited
    ]


def speed_tasks(ctx, battery):
    return [
        partial(_speed_task, ctx, battery, period, side)
        for period in range(ctx.case.periods)
        for side in (CHARGE, DISCHARGE)
    ]


def charge_tasks(ctx, battery):
    periods = ctx.case.periods
    tasks = [
        partial(_charge_range_task, ctx, battery, end, side)
        for end in range(periods)
        for side in (CHARGE, DISCHARGE)
    ]
    tasks += [
        partial(_run_bound_task, ctx, battery, start, end, side)
        for start in range(1, periods)
        for end in range(start, periods)
        for side in (CHARGE, DISCHARGE)
    ]
    return tasks


def _run(tasks):
    return [finding for task in tasks for finding in task()]


def separate_line_limits(ctx):
    """Line-limit findings for every limited branch, period and direction."""
    return _run(line_tasks(ctx))


def separate_battery_speed(ctx, battery):
    """Speed and power-box findings for one battery."""
    return _run(speed_tasks(ctx, battery))


def separate_charge_bounds(ctx, battery):
    """Charge-range and run-bound findings for one battery."""
    return _run(charge_tasks(ctx, battery))


def resolve_threads(threads=None):
    if threads is None:
        threads = getattr(settings, 'BATTOPF_THREADS', 0)
    return int(threads) or os.cpu_count() or 1


def separate_all(ctx, max_cuts=None, threads=None):
    """Run every oracle on a candidate.

    Oracles run in a thread pool; findings are ordered by decreasing
    violation, ties broken by their key, so the result does not depend on
    completion order.

    Args:
        ctx: SeparationContext of the candidate
        max_cuts: cap on cuts returned (default settings.BATTOPF_MAX_CUTS_PER_ITER)
        threads: worker count; 0 or None uses settings.BATTOPF_THREADS

    Returns:
        SeparationCertificate
    """
    max_cuts = int(max_cuts if max_cuts is not None else settings.BATTOPF_MAX_CUTS_PER_ITER)
    tasks = line_tasks(ctx)
    for battery in range(len(ctx.case.batteries)):
        tasks += speed_tasks(ctx, battery)
        tasks += charge_tasks(ctx, battery)

    workers = resolve_threads(threads)
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(lambda task: task(), tasks))
    else:
        groups = [task() for task in tasks]

    findings = sorted(
        (finding for group in groups for finding in group),
        key=lambda finding: (-finding.violation, finding.key),
    )
    cuts = []
    for finding in findings:
        for cut in finding.cuts:
            if len(cuts) < max_cuts:
                cuts.append(cut)
    return SeparationCertificate(findings=findings, cuts=cuts)
