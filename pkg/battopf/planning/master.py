"""
Master LP relaxation.

Variables are the dispatch P^g (generators x T, MW), one cost epigraph
variable per generator and period, and the control gains. The static rows
are the cost pieces, the nominal balance and nominal line limits of every
period, and the balance equalities sum_i lambda^t_ij = 1. Cuts of the form
alpha . P^g + beta . lambda >= rhs accumulate on top and are never removed.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from django.conf import settings

from battopf.exceptions import DuplicateCutError, LPModelError, RobustInfeasibleError
from battopf.grid.network import build_dc_network, compute_shift_factors
from battopf.lp.problem import EQ, GE, LE, LPBuilder, LPStatus, default_backend, solve_lp

from .control import ControlStructure

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-9
# coefficients below this are dropped from nominal line rows
COEFFICIENT_FLOOR = 1e-12


@dataclass
class Cut:
    """
    alpha . P^g + beta . lambda >= rhs.

    alpha is (generators, T), beta is (T, batteries, renewables). family is
    one of 'line', 'speed', 'power', 'charge-range' or 'run-bound'; period is
    1-based; element names the branch ("4-5") or battery ("battery 2").
    """

    alpha: np.ndarray
    beta: np.ndarray
    rhs: float
    family: str
    period: int
    element: str
    witness: Optional[np.ndarray] = None
    violation: float = 0.0
    disjunctive: bool = False

    def evaluate(self, dispatch, lambdas):
        """Signed slack at a point; negative means the point violates the cut."""
        return float(np.sum(self.alpha * dispatch) + np.sum(self.beta * lambdas) - self.rhs)

    @property
    def counter(self):
        """Bucket in the results 'cuts' summary."""
        if self.disjunctive:
            return 'disjunctive'
        if self.family == 'line':
            return 'line'
        if self.family in ('speed', 'power'):
            return 'speed'
        return 'charge'

    @property
    def provenance(self):
        return {
            'family': self.family,
            'period': self.period,
            'element': self.element,
            'disjunctive': self.disjunctive,
            'violation': self.violation,
            'witness': None if self.witness is None else np.asarray(self.witness).tolist(),
        }


@dataclass
class CandidateSolution:
    """Master optimum: dispatch (generators x T, MW), policy and objective ($/h summed over periods)."""

    dispatch: np.ndarray
    policy: object
    objective: float
    gains: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def lambdas(self):
        return self.policy.lambdas


class MasterProblem:
    """
    The master relaxation of one case.

    Attributes:
        pg: (generators, T) indices of the dispatch variables
        cost: (generators, T) indices of the epigraph variables
        gain: indices of the gain variables, ordered as structure.variables
        cuts: every accepted Cut, in insertion order
    """

    def __init__(self, case, network, shift_factors, structure, segments, backend=None):
        self.case = case
        self.network = network
        self.shift_factors = shift_factors
        self.structure = structure
        self.segments = int(segments)
        self.backend = backend or default_backend()
        self.cuts = []
        self._signatures = {}
        self.balanced_pairs = structure.balanced_pairs(case.uncertainty)
        self._builder = LPBuilder()
        self._build()

    @property
    def num_variables(self):
        return self._builder.num_variables

    @property
    def num_constraints(self):
        return self._builder.num_constraints

    def _build(self):
        case = self.case
        builder = self._builder
        ng, periods = len(case.generators), case.periods

        self.pg = np.empty((ng, periods), dtype=int)
        for k, gen in enumerate(case.generators):
            self.pg[k] = builder.add_variables(periods, lower=case.dispatch_floor(gen), upper=gen.pmax_mw)
        self.cost = builder.add_variables(ng * periods, lower=-np.inf, cost=1.0).reshape(ng, periods)
        self.gain = builder.add_variables(len(self.structure), lower=0.0, upper=1.0)

        for k, gen in enumerate(case.generators):
            for t in range(periods):
                pieces = gen.cost.linear_pieces(case.dispatch_floor(gen), gen.pmax_mw[t], self.segments)
                for slope, intercept in pieces:
                    # z >= slope * P + intercept
                    builder.add_row([self.cost[k, t], self.pg[k, t]], [1.0, -slope], GE, intercept)

        load = case.load_matrix()
        forecast = case.forecast_matrix()
        index = case.bus_index
        gen_bus = np.array([index[gen.bus] for gen in case.generators], dtype=int)
        nu_gen = self.shift_factors.matrix[:, gen_bus] if ng else np.zeros((len(case.branches), 0))
        for t in range(periods):
            builder.add_row(self.pg[:, t], np.ones(ng), EQ, load[:, t].sum() - forecast[:, t].sum())
            fixed = self.shift_factors.matrix @ (forecast[:, t] - load[:, t])
            for l, branch in enumerate(case.branches):
                if branch.unlimited:
                    continue
                coefficients = np.where(np.abs(nu_gen[l]) > COEFFICIENT_FLOOR, nu_gen[l], 0.0)
                if not np.any(coefficients) and abs(fixed[l]) <= branch.limit_mw:
                    continue
                builder.add_row(self.pg[:, t], coefficients, LE, branch.limit_mw - fixed[l])
                builder.add_row(self.pg[:, t], coefficients, GE, -branch.limit_mw - fixed[l])

        for t, j in self.balanced_pairs:
            cover = self.structure.covering(t, j)
            builder.add_row(self.gain[cover], np.ones(len(cover)), EQ, 1.0)

        logger.debug(
            f"master for {case.name or 'case'}: {self.num_variables} variables, "
            f"{self.num_constraints} rows, {len(self.balanced_pairs)} balance equalities"
        )

    def _row(self, cut):
        """Sparse master row (indices, coefficients) of a cut."""
        gain_coefficients = self.structure.gain_coefficients(cut.beta)
        indices = np.concatenate([self.pg.reshape(-1), self.gain])
        coefficients = np.concatenate([np.asarray(cut.alpha, dtype=float).reshape(-1), gain_coefficients])
        keep = np.abs(coefficients) > 0
        return indices[keep], coefficients[keep]

    def add_cut(self, cut, candidate=None, tolerance=None):
        """Append a cut to the pool.

        Returns:
            bool: False if the cut does not separate candidate (it is then
            dropped with a warning)

        Raises:
            DuplicateCutError: the pool already holds the same row within 1e-9
        """
        indices, coefficients = self._row(cut)
        signature = tuple(indices.tolist())
        for other_coefficients, other_rhs, other in self._signatures.get(signature, []):
            if (np.max(np.abs(other_coefficients - coefficients), initial=0.0) <= DUPLICATE_TOL
                    and abs(other_rhs - cut.rhs) <= DUPLICATE_TOL):
                logger.warning(
                    f"duplicate {cut.family} cut for {cut.element}, period {cut.period} "
                    f"(first added as cut {other + 1}); separation is not making progress"
                )
                raise DuplicateCutError(f"{cut.family} cut for {cut.element} is already in the pool")

        if candidate is not None and tolerance is not None:
            slack = cut.evaluate(candidate.dispatch, candidate.lambdas)
            if slack >= -tolerance:
                logger.warning(
                    f"{cut.family} cut for {cut.element}, period {cut.period} does not separate the "
                    f"candidate (slack {slack:.3g}); dropped"
                )
                return False

        self._builder.add_row(indices, coefficients, GE, cut.rhs)
        self._signatures.setdefault(signature, []).append((coefficients, cut.rhs, len(self.cuts)))
        self.cuts.append(cut)
        return True

    def trail(self):
        return [cut.provenance for cut in self.cuts]

    def solve(self):
        """Solve the relaxation and extract a CandidateSolution.

        A numerical failure is retried once on the other LP backend.

        Raises:
            RobustInfeasibleError: the relaxation has no feasible point
            LPModelError: the LP is unbounded or both backends fail
        """
        lp = self._builder.build(sense='min')
        result = solve_lp(lp, self.backend)
        if result.status == LPStatus.NUMERICAL:
            other = 'simplex' if self.backend == 'highs' else 'highs'
            logger.warning(f"master LP numerical trouble on {self.backend} ({result.message}); retrying on {other}")
            result = solve_lp(lp, other)

        if result.status == LPStatus.INFEASIBLE:
            if not self.cuts:
                message = "robust problem infeasible: no nominal dispatch meets balance and line limits"
            else:
                message = f"robust problem infeasible after {len(self.cuts)} cuts"
            raise RobustInfeasibleError(message, trail=self.trail())
        if not result.optimal:
            raise LPModelError(f"master LP ended {result.status.value}: {result.message}")

        x = result.x
        gains = x[self.gain]
        return CandidateSolution(
            dispatch=x[self.pg],
            policy=self.structure.policy(gains),
            objective=float(result.objective),
            gains=gains,
        )


def pwl_segments(case, override=None):
    if override:
        return int(override)
    if case.cost_pwl_segments:
        return int(case.cost_pwl_segments)
    return int(getattr(settings, 'BATTOPF_COST_PWL_SEGMENTS', 10))


def build_master(case, net=None, shift_factors=None, segments=None, backend=None):
    """Build the master relaxation of a validated case.

    Args:
        case: GridCase
        net: DCNetwork, built from case when omitted
        shift_factors: ShiftFactorMatrix, computed from net when omitted
        segments: cost pieces per quadratic generator; falls back to the
            case's cost_pwl_segments, then settings.BATTOPF_COST_PWL_SEGMENTS
        backend: LP backend name

    Returns:
        MasterProblem with no cuts
    """
    net = net or build_dc_network(case)
    shift_factors = shift_factors or compute_shift_factors(net)
    return MasterProblem(
        case,
        net,
        shift_factors,
        ControlStructure(case),
        pwl_segments(case, segments),
        backend=backend,
    )


def solve_master(master):
    return master.solve()


def add_cut(master, cut, candidate=None, tolerance=None):
    return master.add_cut(cut, candidate=candidate, tolerance=tolerance)

