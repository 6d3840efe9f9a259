"""
Disjunctive cuts from a cut-generating LP.

Given disjuncts D_k = {g : A_k g <= c_k, lower <= g <= upper} and a point
g~ in none of them, find pi, pi0 with pi . g <= pi0 on every D_k and
pi . g~ - pi0 as large as possible, subject to |pi|_1 + |pi0| <= 1.

Validity comes from Farkas multipliers: for every nonempty D_k there are
u_k, p_k, q_k >= 0 with pi = A_k^T u_k + p_k - q_k and
pi0 >= c_k . u_k + upper . p_k - lower . q_k.
"""
import logging
from dataclasses import dataclass

import numpy as np

from battopf.exceptions import LPModelError
from battopf.lp.problem import EQ, GE, LE, LPBuilder, LPStatus, solve_lp

logger = logging.getLogger(__name__)

EMPTY_TOL = 1e-9


@dataclass
class Disjunct:
    """{g : matrix @ g <= rhs} intersected with the box."""

    matrix: np.ndarray
    rhs: np.ndarray

    @classmethod
    def halfspace(cls, coefficients, bound):
        return cls(np.atleast_2d(np.asarray(coefficients, dtype=float)), np.atleast_1d(float(bound)))


@dataclass
class DisjunctiveCut:
    """pi . g <= pi0; infeasible is set when every disjunct was empty."""

    pi: np.ndarray
    pi0: float
    violation: float
    infeasible: bool = False


def _is_empty(disjunct, lower, upper, backend):
    if disjunct.matrix.shape[0] == 1:
        a = disjunct.matrix[0]
        lowest = np.sum(np.minimum(a * lower, a * upper))
        return lowest > disjunct.rhs[0] + EMPTY_TOL
    builder = LPBuilder()
    g = builder.add_variables(lower.size, lower=lower, upper=upper)
    for row, bound in zip(disjunct.matrix, disjunct.rhs):
        builder.add_row(g, row, LE, bound)
    result = solve_lp(builder.build(), backend)
    return result.status == LPStatus.INFEASIBLE


def build_disjunctive_cut(point, disjuncts, lower, upper, tolerance=1e-6, backend=None):
    """Most violated valid inequality for the union of disjuncts.

    Args:
        point: (d,) candidate g~
        disjuncts: list of Disjunct over the same d variables
        lower, upper: (d,) finite box bounds
        tolerance: minimum normalized violation for a cut to be returned
        backend: LP backend name

    Returns:
        DisjunctiveCut, or None if no valid inequality cuts point by more
        than tolerance (the hull of the union contains the point)
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    d = point.size
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise LPModelError("disjunctive cuts need a bounded box")

    live = [dj for dj in disjuncts if not _is_empty(dj, lower, upper, backend)]
    if not live:
        logger.info("every disjunct is empty; emitting an infeasibility cut")
        return DisjunctiveCut(pi=np.zeros(d), pi0=-1.0, violation=np.inf, infeasible=True)

    builder = LPBuilder()
    pi_pos = builder.add_variables(d, cost=point)
    pi_neg = builder.add_variables(d, cost=-point)
    pi0_pos = builder.add_variables(1, cost=-1.0)
    pi0_neg = builder.add_variables(1, cost=1.0)
    builder.add_row(
        np.concatenate([pi_pos, pi_neg, pi0_pos, pi0_neg]),
        np.ones(2 * d + 2), LE, 1.0,
    )

    eye = np.eye(d)
    for disjunct in live:
        matrix = np.asarray(disjunct.matrix, dtype=float).reshape(-1, d)
        rhs = np.asarray(disjunct.rhs, dtype=float).reshape(-1)
        u = builder.add_variables(matrix.shape[0])
        p = builder.add_variables(d)
        q = builder.add_variables(d)
        for c in range(d):
            # pi_c - A^T u - p + q = 0
            builder.add_row(
                np.concatenate([[pi_pos[c], pi_neg[c]], u, p, q]),
                np.concatenate([[1.0, -1.0], -matrix[:, c], -eye[c], eye[c]]),
                EQ, 0.0,
            )
        # pi0 - c.u - upper.p + lower.q >= 0
        builder.add_row(
            np.concatenate([pi0_pos, pi0_neg, u, p, q]),
            np.concatenate([[1.0, -1.0], -rhs, -upper, lower]),
            GE, 0.0,
        )

    result = solve_lp(builder.build(sense='max'), backend)
    if not result.optimal:
        raise LPModelError(f"cut generating LP ended {result.status.value}: {result.message}")
    if result.objective <= tolerance:
        logger.debug(f"cut generating LP optimum {result.objective:.3g}: the hull covers the point")
        return None

    x = result.x
    pi = x[pi_pos] - x[pi_neg]
    pi0 = float(x[pi0_pos][0] - x[pi0_neg][0])
    return DisjunctiveCut(pi=pi, pi0=pi0, violation=float(pi @ point - pi0))
