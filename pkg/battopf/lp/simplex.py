"""
Dense two-phase tableau simplex with Bland's rule.

Meant for desk-scale problems and for running the test suite without a
compiled LP backend; the master at grid scale should use HiGHS.
"""
import numpy as np

from battopf.lp.problem import LPStatus

PIVOT_TOL = 1e-9


def _pivot(tableau, row, col):
    tableau[row] /= tableau[row, col]
    for r in range(tableau.shape[0]):
        if r != row and tableau[r, col] != 0.0:
            tableau[r] -= tableau[r, col] * tableau[row]


def _iterate(tableau, basis, allowed, max_iter):
    """Minimize the objective held in the last row over the first `allowed` columns."""
    for _ in range(max_iter):
        reduced = tableau[-1, :allowed]
        entering = np.flatnonzero(reduced < -PIVOT_TOL)
        if entering.size == 0:
            return LPStatus.OPTIMAL
        col = int(entering[0])
        column = tableau[:-1, col]
        candidates = np.flatnonzero(column > PIVOT_TOL)
        if candidates.size == 0:
            return LPStatus.UNBOUNDED
        ratios = tableau[candidates, -1] / column[candidates]
        best = ratios.min()
        tied = candidates[ratios <= best + PIVOT_TOL]
        row = int(min(tied, key=lambda r: basis[r]))
        _pivot(tableau, row, col)
        basis[row] = col
    return LPStatus.NUMERICAL


def _to_nonnegative(lower, upper):
    """Map x = offset + transform @ y with y >= 0; returns finite upper bounds on y."""
    n = lower.size
    columns = []
    offset = np.zeros(n)
    y_upper = []
    for i in range(n):
        lo, hi = lower[i], upper[i]
        if np.isfinite(lo):
            offset[i] = lo
            columns.append((i, 1.0))
            if np.isfinite(hi):
                y_upper.append((len(columns) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[i] = hi
            columns.append((i, -1.0))
        else:
            columns.append((i, 1.0))
            columns.append((i, -1.0))
    transform = np.zeros((n, len(columns)))
    for c, (i, sign) in enumerate(columns):
        transform[i, c] = sign
    return offset, transform, y_upper


def dense_simplex(cost, a_ub, b_ub, a_eq, b_eq, lower, upper, max_iter=50000):
    """Minimize cost . x subject to a_ub x <= b_ub, a_eq x = b_eq, lower <= x <= upper.

    Returns:
        tuple: (LPStatus, x or None)
    """
    cost = np.asarray(cost, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        return LPStatus.INFEASIBLE, None

    offset, transform, y_upper = _to_nonnegative(lower, upper)
    k = transform.shape[1]

    ub_rows, ub_rhs = [], []
    if a_ub is not None and len(b_ub):
        ub_rows.append(np.asarray(a_ub) @ transform)
        ub_rhs.append(np.asarray(b_ub) - np.asarray(a_ub) @ offset)
    if y_upper:
        bound_rows = np.zeros((len(y_upper), k))
        for r, (c, bound) in enumerate(y_upper):
            bound_rows[r, c] = 1.0
        ub_rows.append(bound_rows)
        ub_rhs.append(np.array([bound for _, bound in y_upper]))
    a_le = np.vstack(ub_rows) if ub_rows else np.zeros((0, k))
    b_le = np.concatenate(ub_rhs) if ub_rhs else np.zeros(0)
    if a_eq is not None and len(b_eq):
        a_e = np.asarray(a_eq) @ transform
        b_e = np.asarray(b_eq) - np.asarray(a_eq) @ offset
    else:
        a_e, b_e = np.zeros((0, k)), np.zeros(0)

    m_le, m_e = a_le.shape[0], a_e.shape[0]
    m = m_le + m_e
    width = k + m_le
    a_std = np.zeros((m, width))
    a_std[:m_le, :k] = a_le
    a_std[:m_le, k:] = np.eye(m_le)
    a_std[m_le:, :k] = a_e
    b_std = np.concatenate([b_le, b_e])
    negative = b_std < 0
    a_std[negative] *= -1.0
    b_std[negative] *= -1.0

    # phase 1: artificial basis
    tableau = np.zeros((m + 1, width + m + 1))
    tableau[:m, :width] = a_std
    tableau[:m, width:width + m] = np.eye(m)
    tableau[:m, -1] = b_std
    tableau[-1, width:width + m] = 1.0
    tableau[-1] -= tableau[:m].sum(axis=0)
    basis = list(range(width, width + m))
    status = _iterate(tableau, basis, width + m, max_iter)
    if status != LPStatus.OPTIMAL:
        return LPStatus.NUMERICAL, None
    if -tableau[-1, -1] > 1e-8 * max(1.0, float(np.abs(b_std).max(initial=0.0))):
        return LPStatus.INFEASIBLE, None

    keep = []
    for r in range(m):
        if basis[r] >= width:
            nonzero = np.flatnonzero(np.abs(tableau[r, :width]) > PIVOT_TOL)
            if nonzero.size == 0:
                continue
            _pivot(tableau, r, int(nonzero[0]))
            basis[r] = int(nonzero[0])
        keep.append(r)

    # phase 2 on the original columns
    c_std = np.concatenate([cost @ transform, np.zeros(m_le)])
    phase2 = np.zeros((len(keep) + 1, width + 1))
    phase2[:-1, :width] = tableau[keep, :width]
    phase2[:-1, -1] = tableau[keep, -1]
    basis = [basis[r] for r in keep]
    phase2[-1, :width] = c_std
    for r, b in enumerate(basis):
        phase2[-1] -= c_std[b] * phase2[r]
    status = _iterate(phase2, basis, width, max_iter)
    if status != LPStatus.OPTIMAL:
        return status, None

    z = np.zeros(width)
    for r, b in enumerate(basis):
        z[b] = phase2[r, -1]
    return LPStatus.OPTIMAL, offset + transform @ z[:k]
