"""
Solver-neutral linear programs.

Every LP in the planner (master relaxation, separation oracles, cut
generating LPs) is assembled as a LinearProgram and handed to solve_lp,
which dispatches to scipy's HiGHS or to the dense simplex in
battopf.lp.simplex, then re-checks primal feasibility itself.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

logger = logging.getLogger(__name__)

LE, EQ, GE = '<=', '==', '>='
RESIDUAL_TOL = 1e-7


class LPStatus(str, enum.Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    UNBOUNDED = 'unbounded'
    NUMERICAL = 'numerical'


@dataclass
class LinearProgram:
    """
    optimize  objective . x
    s.t.      matrix[r] . x  (relations[r])  rhs[r]
              lower <= x <= upper

    Attributes:
        objective: (n,) cost vector
        sense: 'min' or 'max'
        matrix: (m, n) constraint matrix, dense or scipy.sparse
        relations: m relation strings among '<=', '==', '>='
        rhs: (m,) right-hand sides
        lower, upper: (n,) variable bounds (-inf / inf for none)
    """

    objective: np.ndarray
    sense: str = 'min'
    matrix: object = None
    relations: list = field(default_factory=list)
    rhs: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.size
        if self.matrix is None:
            self.matrix = sp.csr_matrix((0, n))
        elif not sp.issparse(self.matrix):
            self.matrix = sp.csr_matrix(np.asarray(self.matrix, dtype=float).reshape(-1, n))
        else:
            self.matrix = sp.csr_matrix(self.matrix)
        self.rhs = np.zeros(0) if self.rhs is None else np.asarray(self.rhs, dtype=float).reshape(-1)
        self.relations = list(self.relations)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        self.validate()

    def validate(self):
        n = self.objective.size
        m = self.matrix.shape[0]
        if self.sense not in ('min', 'max'):
            raise ValueError(f"unknown objective sense {self.sense!r}")
        if self.matrix.shape[1] != n or self.rhs.size != m or len(self.relations) != m:
            raise ValueError(
                f"inconsistent LP dimensions: {n} variables, matrix {self.matrix.shape}, "
                f"{self.rhs.size} rhs, {len(self.relations)} relations"
            )
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("variable bounds must have one entry per variable")
        if any(rel not in (LE, EQ, GE) for rel in self.relations):
            raise ValueError("relations must be '<=', '==' or '>='")
        if not (np.all(np.isfinite(self.objective)) and np.all(np.isfinite(self.matrix.data))
                and np.all(np.isfinite(self.rhs))):
            raise ValueError("LP coefficients must be finite")

    @property
    def num_variables(self):
        return self.objective.size

    @property
    def num_constraints(self):
        return self.matrix.shape[0]

    def split(self):
        """Return (A_ub, b_ub, A_eq, b_eq) with >= rows negated into <=."""
        rel = np.asarray(self.relations, dtype=object)
        le = rel == LE
        ge = rel == GE
        eq = rel == EQ
        ub_rows = np.flatnonzero(le | ge)
        sign = np.where(ge[ub_rows], -1.0, 1.0)
        a_ub = sp.diags(sign) @ self.matrix[ub_rows] if ub_rows.size else None
        b_ub = sign * self.rhs[ub_rows] if ub_rows.size else None
        eq_rows = np.flatnonzero(eq)
        a_eq = self.matrix[eq_rows] if eq_rows.size else None
        b_eq = self.rhs[eq_rows] if eq_rows.size else None
        return a_ub, b_ub, a_eq, b_eq

    def residual(self, x):
        """Largest scaled violation of any row or bound at x."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.num_constraints:
            activity = self.matrix @ x
            scale = np.maximum(1.0, np.abs(self.rhs))
            rel = np.asarray(self.relations, dtype=object)
            gap = np.where(rel == LE, activity - self.rhs,
                           np.where(rel == GE, self.rhs - activity, np.abs(activity - self.rhs)))
            worst = max(worst, float(np.max(gap / scale)))
        finite_lo = np.isfinite(self.lower)
        finite_hi = np.isfinite(self.upper)
        if np.any(finite_lo):
            worst = max(worst, float(np.max((self.lower[finite_lo] - x[finite_lo]) / np.maximum(1.0, np.abs(self.lower[finite_lo])))))
        if np.any(finite_hi):
            worst = max(worst, float(np.max((x[finite_hi] - self.upper[finite_hi]) / np.maximum(1.0, np.abs(self.upper[finite_hi])))))
        return worst


@dataclass
class LPResult:
    status: LPStatus
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    message: str = ''

    @property
    def optimal(self):
        return self.status == LPStatus.OPTIMAL


class LPBuilder:
    """
    Incremental assembly of a LinearProgram from sparse rows.

    Example:
        >>> builder = LPBuilder()
        >>> x = builder.add_variables(2, cost=[1.0, 1.0])
        >>> builder.add_row([x[0], x[1]], [1.0, 1.0], '<=', 1.0)
        >>> lp = builder.build(sense='max')
    """

    def __init__(self):
        self.costs = []
        self.lower = []
        self.upper = []
        self.rows = []
        self.cols = []
        self.vals = []
        self.relations = []
        self.rhs = []

    @property
    def num_variables(self):
        return len(self.costs)

    @property
    def num_constraints(self):
        return len(self.rhs)

    def add_variables(self, count, lower=0.0, upper=np.inf, cost=0.0):
        start = len(self.costs)
        self.costs.extend(np.broadcast_to(np.asarray(cost, dtype=float), (count,)).tolist())
        self.lower.extend(np.broadcast_to(np.asarray(lower, dtype=float), (count,)).tolist())
        self.upper.extend(np.broadcast_to(np.asarray(upper, dtype=float), (count,)).tolist())
        return np.arange(start, start + count)

    def add_row(self, indices, coefficients, relation, rhs):
        row = len(self.rhs)
        indices = np.asarray(indices, dtype=int).reshape(-1)
        coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
        keep = coefficients != 0
        self.rows.extend([row] * int(keep.sum()))
        self.cols.extend(indices[keep].tolist())
        self.vals.extend(coefficients[keep].tolist())
        self.relations.append(relation)
        self.rhs.append(float(rhs))
        return row

    def build(self, sense='min'):
        n = len(self.costs)
        matrix = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n))
        return LinearProgram(
            objective=np.asarray(self.costs),
            sense=sense,
            matrix=matrix,
            relations=self.relations,
            rhs=np.asarray(self.rhs),
            lower=np.asarray(self.lower),
            upper=np.asarray(self.upper),
        )


def default_backend():
    try:
        return settings.BATTOPF_LP_BACKEND
    except (ImproperlyConfigured, AttributeError):
        return 'highs'


def _solve_highs(lp):
    from scipy.optimize import linprog

    a_ub, b_ub, a_eq, b_eq = lp.split()
    cost = lp.objective if lp.sense == 'min' else -lp.objective
    bounds = [
        (lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None)
        for lo, hi in zip(lp.lower, lp.upper)
    ]
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method='highs')
    if result.status == 0:
        return LPResult(LPStatus.OPTIMAL, np.asarray(result.x), float(lp.objective @ result.x), result.message)
    if result.status == 2:
        return LPResult(LPStatus.INFEASIBLE, message=result.message)
    if result.status == 3:
        return LPResult(LPStatus.UNBOUNDED, message=result.message)
    return LPResult(LPStatus.NUMERICAL, message=result.message)


def _solve_simplex(lp):
    from battopf.lp.simplex import dense_simplex

    a_ub, b_ub, a_eq, b_eq = lp.split()
    cost = lp.objective if lp.sense == 'min' else -lp.objective
    status, x = dense_simplex(
        cost,
        None if a_ub is None else a_ub.toarray(), b_ub,
        None if a_eq is None else a_eq.toarray(), b_eq,
        lp.lower, lp.upper,
    )
    if status == LPStatus.OPTIMAL:
        return LPResult(LPStatus.OPTIMAL, x, float(lp.objective @ x), 'dense simplex optimal')
    return LPResult(status, message=f'dense simplex: {status.value}')


BACKENDS = {
    'highs': _solve_highs,
    'simplex': _solve_simplex,
}


def solve_lp(lp, backend=None):
    """Solve a LinearProgram and verify the primal solution independently.

    Args:
        lp: LinearProgram
        backend: 'highs' or 'simplex'; defaults to settings.BATTOPF_LP_BACKEND

    Returns:
        LPResult; an optimal answer whose scaled primal residual exceeds 1e-7
        is downgraded to NUMERICAL
    """
    backend = backend or default_backend()
    try:
        solver = BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown LP backend {backend!r}; choose from {sorted(BACKENDS)}") from None
    try:
        result = solver(lp)
    except ImportError:
        logger.warning(f"LP backend {backend!r} unavailable, falling back to the dense simplex")
        result = _solve_simplex(lp)

    if result.optimal:
        residual = lp.residual(result.x)
        if residual > RESIDUAL_TOL:
            logger.warning(f"{backend} returned an optimal point with residual {residual:.3g}; marking numerical")
            return LPResult(LPStatus.NUMERICAL, result.x, result.objective, f"primal residual {residual:.3g}")
    return result
