"""
Cutting-plane loop: solve the master, separate, add cuts, repeat.
"""
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

from django.conf import settings

from battopf.exceptions import DuplicateCutError, RobustInfeasibleError
from battopf.grid.network import build_dc_network, compute_shift_factors

from .master import build_master
from .separation import SeparationContext, separate_all

logger = logging.getLogger(__name__)

OPTIMAL = 'optimal'
INFEASIBLE = 'infeasible'
ITERATION_LIMIT = 'iteration_limit'
STALLED = 'stalled'

CUT_COUNTERS = ('line', 'speed', 'charge', 'disjunctive')

# relative slack allowed for solver noise when auditing objective monotonicity
MONOTONE_TOL = 1e-9


@dataclass
class SolverOptions:
    max_iter: int = 200
    tolerance: float = 1e-6
    max_cuts_per_iter: int = 20
    cost_pwl_segments: Optional[int] = None
    time_limit: Optional[float] = None
    backend: Optional[str] = None
    threads: int = 0
    seed: int = 42

    @classmethod
    def from_settings(cls, **overrides):
        """Settings values, replaced by every override that is not None."""
        values = {
            'max_iter': settings.BATTOPF_MAX_ITER,
            'tolerance': settings.BATTOPF_TOLERANCE,
            'max_cuts_per_iter': settings.BATTOPF_MAX_CUTS_PER_ITER,
            'time_limit': settings.BATTOPF_TIME_LIMIT,
            'backend': settings.BATTOPF_LP_BACKEND,
            'threads': settings.BATTOPF_THREADS,
            'seed': settings.BATTOPF_SEED,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class IterationRow:
    iteration: int
    num_variables: int
    num_constraints: int
    objective: float
    cuts: dict
    wall_time: float


@dataclass
class RunReport:
    status: str
    iterations: int
    log: list
    candidate: object = None
    cuts: dict = field(default_factory=lambda: dict.fromkeys(CUT_COUNTERS, 0))
    time_s: float = 0.0
    num_variables: int = 0
    num_constraints: int = 0
    message: str = ''
    trail: list = field(default_factory=list)
    monotone: bool = True

    @property
    def objective(self):
        return None if self.candidate is None else self.candidate.objective

    @property
    def robust(self):
        return self.status == OPTIMAL


def run_cutting_plane(case, options=None, on_iteration=None):
    """Solve the robust dispatch problem of a validated case.

    Args:
        case: GridCase
        options: SolverOptions; defaults to SolverOptions.from_settings()
        on_iteration: optional callable receiving each IterationRow

    Returns:
        RunReport. status is 'optimal' when the final candidate passes every
        oracle, 'infeasible' when the master ran dry, 'stalled' when
        violations remain but no new cut could be added, and
        'iteration_limit' when the iteration or time budget ran out (the
        objective is then only a lower bound).
    """
    options = options or SolverOptions.from_settings()
    started = time.monotonic()
    net = build_dc_network(case)
    shift_factors = compute_shift_factors(net)
    master = build_master(case, net, shift_factors, options.cost_pwl_segments, options.backend)

    log = []
    totals = dict.fromkeys(CUT_COUNTERS, 0)
    candidate = None
    previous = None
    monotone = True
    status = ITERATION_LIMIT
    message = f"iteration limit {options.max_iter} reached"
    size = (master.num_variables, master.num_constraints)

    try:
        for iteration in range(1, options.max_iter + 1):
            size = (master.num_variables, master.num_constraints)
            candidate = master.solve()
            if previous is not None and candidate.objective < previous - MONOTONE_TOL * max(1.0, abs(previous)):
                monotone = False
                logger.warning(
                    f"iteration {iteration}: master objective fell from {previous:.6f} to {candidate.objective:.6f}"
                )
            previous = candidate.objective

            context = SeparationContext(
                case, candidate, shift_factors, master.structure, master.balanced_pairs,
                options.tolerance, options.backend,
            )
            certificate = separate_all(context, options.max_cuts_per_iter, options.threads)

            added = dict.fromkeys(CUT_COUNTERS, 0)
            duplicates = 0
            for cut in certificate.cuts:
                try:
                    if master.add_cut(cut, candidate, options.tolerance):
                        added[cut.counter] += 1
                except DuplicateCutError:
                    duplicates += 1
            for key, count in added.items():
                totals[key] += count

            row = IterationRow(iteration, size[0], size[1], candidate.objective, added, time.monotonic() - started)
            log.append(row)
            logger.info(
                f"iteration {iteration}: objective {candidate.objective:.4f}, n={size[0]}, m={size[1]}, "
                f"cuts line={added['line']} speed={added['speed']} charge={added['charge']} "
                f"disjunctive={added['disjunctive']}"
            )
            if on_iteration is not None:
                on_iteration(row)

            if certificate.feasible:
                status = OPTIMAL
                message = f"robust optimum after {iteration} iterations"
                break
            if not any(added.values()):
                status = STALLED
                message = (
                    f"{len(certificate.findings)} violations remain but no new cut was added "
                    f"({duplicates} duplicates, {len(certificate.uncut)} without a valid cut)"
                )
                logger.warning(f"separation stalled at iteration {iteration}: {message}")
                break
            if options.time_limit and time.monotonic() - started > options.time_limit:
                message = f"time limit {options.time_limit:g} s reached"
                break
    except RobustInfeasibleError as exc:
        logger.error(f"{exc} ({len(exc.trail)} cuts in the trail)")
        return RunReport(
            status=INFEASIBLE,
            iterations=len(log) + 1,
            log=log,
            cuts=totals,
            time_s=time.monotonic() - started,
            num_variables=size[0],
            num_constraints=size[1],
            message=str(exc),
            trail=exc.trail,
            monotone=monotone,
        )

    if status == ITERATION_LIMIT:
        logger.warning(f"{message}; objective {previous} is a lower bound, the plan is not certified robust")
    return RunReport(
        status=status,
        iterations=len(log),
        log=log,
        candidate=candidate,
        cuts=totals,
        time_s=time.monotonic() - started,
        num_variables=size[0],
        num_constraints=size[1],
        message=message,
        monotone=monotone,
    )
