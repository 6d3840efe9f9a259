"""
Linear control policies.

Under deviation w every battery i takes Delta * sum_j lambda^t_ij w_jt MWh
(electrical) in period t, so its power output is the negative of sum_j
lambda w. The gains are the decision variables the master LP optimizes;
ControlStructure says which gains exist, ControlPolicy holds their values
as a dense (T, batteries, renewables) array.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from battopf.exceptions import ControlPolicyError, DimensionError

logger = logging.getLogger(__name__)

BALANCE_TOL = 1e-9


@dataclass(frozen=True)
class GainVariable:
    period: int
    battery: int
    renewables: tuple

    @property
    def aggregated(self):
        return len(self.renewables) > 1


class ControlStructure:
    """
    Gain variables of a case.

    A battery with responds_to=None gets one gain per renewable (general
    scheme). A battery with a response set R(i) gets a single gain per
    period shared by every renewable in R(i) (aggregated scheme).
    """

    def __init__(self, case):
        self.periods = case.periods
        self.batteries = len(case.batteries)
        self.renewables = len(case.renewables)
        variables = []
        for t in range(self.periods):
            for i, battery in enumerate(case.batteries):
                if battery.responds_to is None:
                    variables.extend(GainVariable(t, i, (j,)) for j in range(self.renewables))
                elif battery.responds_to:
                    variables.append(GainVariable(t, i, tuple(battery.responds_to)))
        self.variables = tuple(variables)
        self.responds_to = tuple(b.responds_to for b in case.batteries)

        rows, cols = [], []
        for g, var in enumerate(self.variables):
            for j in var.renewables:
                rows.append(self.entry(var.period, var.battery, j))
                cols.append(g)
        self.projection = sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(self.periods * self.batteries * self.renewables, len(self.variables)),
        )

    def __len__(self):
        return len(self.variables)

    @property
    def shape(self):
        return (self.periods, self.batteries, self.renewables)

    def entry(self, period, battery, renewable):
        """Flat position of lambda^t_ij in a (T, batteries, renewables) array."""
        return (period * self.batteries + battery) * self.renewables + renewable

    def covering(self, period, renewable):
        """Gain variables that move when renewable j deviates in period t."""
        return [
            g for g, var in enumerate(self.variables)
            if var.period == period and renewable in var.renewables
        ]

    def variables_of(self, battery, periods=None):
        return [
            g for g, var in enumerate(self.variables)
            if var.battery == battery and (periods is None or var.period in periods)
        ]

    def balanced_pairs(self, model):
        """Pairs (t, j) that carry a balance equality sum_i lambda^t_ij = 1.

        Every pair with a covering battery is balanced. A pair without one
        is only tolerated when the uncertainty model pins that deviation to
        zero.

        Raises:
            ControlPolicyError: some deviation W can move reaches no battery
        """
        if model is not None:
            upper, lower = model.coordinate_bounds()
        pairs = []
        for t in range(self.periods):
            for j in range(self.renewables):
                if self.covering(t, j):
                    pairs.append((t, j))
                    continue
                movable = model is not None and (
                    upper[model.index(j, t)] > 0 or lower[model.index(j, t)] > 0
                )
                if movable:
                    raise ControlPolicyError(
                        f"renewable {j + 1} deviates in period {t + 1} but no battery responds to it"
                    )
                logger.warning(f"renewable {j + 1}, period {t + 1}: no responding battery; deviation is pinned at 0")
        return pairs

    def fixed_gains(self, pairs):
        """Gain variables forced to 1 because they alone cover a balanced pair."""
        fixed = set()
        for t, j in pairs:
            cover = self.covering(t, j)
            if len(cover) == 1:
                fixed.add(cover[0])
        return fixed

    def expand(self, gains):
        """Dense lambda array from a vector of gain values."""
        gains = np.asarray(gains, dtype=float).reshape(-1)
        if gains.size != len(self.variables):
            raise DimensionError(f"{gains.size} gains for {len(self.variables)} gain variables")
        return (self.projection @ gains).reshape(self.shape)

    def collapse(self, lambdas):
        """Gain values read back from a dense lambda array."""
        lambdas = np.asarray(lambdas, dtype=float)
        return np.array([lambdas[v.period, v.battery, v.renewables[0]] for v in self.variables])

    def gain_coefficients(self, beta):
        """Coefficients over gain variables of the linear form beta . lambda."""
        return self.projection.T @ np.asarray(beta, dtype=float).reshape(-1)

    def spread(self, coefficients):
        """A beta over lambda entries whose gain coefficients are the given vector."""
        beta = np.zeros(self.projection.shape[0])
        for g, value in coefficients.items():
            var = self.variables[g]
            for j in var.renewables:
                beta[self.entry(var.period, var.battery, j)] = value / len(var.renewables)
        return beta.reshape(self.shape)

    def policy(self, gains):
        return ControlPolicy(self.expand(gains), self.responds_to)


class ControlPolicy:
    """
    Gains lambda^t_ij >= 0 as a (T, batteries, renewables) array.

    responds_to keeps the response set of every aggregated battery (None
    for general batteries) so the policy can be re-checked after a round
    trip through the results JSON.
    """

    def __init__(self, lambdas, responds_to=None):
        self.lambdas = np.asarray(lambdas, dtype=float)
        if self.lambdas.ndim != 3:
            raise DimensionError(f"lambda must be (T, batteries, renewables), got shape {self.lambdas.shape}")
        self.responds_to = tuple(responds_to) if responds_to is not None else (None,) * self.lambdas.shape[1]

    @property
    def periods(self):
        return self.lambdas.shape[0]

    @property
    def batteries(self):
        return self.lambdas.shape[1]

    @property
    def renewables(self):
        return self.lambdas.shape[2]

    def balance_residual(self, pairs=None):
        """Largest |sum_i lambda^t_ij - 1| over the given (t, j) pairs (all pairs by default)."""
        totals = self.lambdas.sum(axis=1)
        if pairs is None:
            return float(np.max(np.abs(totals - 1.0))) if totals.size else 0.0
        if not pairs:
            return 0.0
        return float(max(abs(totals[t, j] - 1.0) for t, j in pairs))

    def check(self, pairs=None, tol=BALANCE_TOL):
        """Raise ControlPolicyError unless nonnegativity, sparsity and balance hold."""
        if np.any(self.lambdas < -tol):
            raise ControlPolicyError("control gains must be nonnegative")
        for i, response in enumerate(self.responds_to):
            if response is None:
                continue
            outside = [j for j in range(self.renewables) if j not in response]
            if outside and np.any(np.abs(self.lambdas[:, i, outside]) > tol):
                raise ControlPolicyError(f"battery {i + 1} has gains outside its response set")
            inside = self.lambdas[:, i, list(response)]
            if inside.size and np.any(np.ptp(inside, axis=1) > tol):
                raise ControlPolicyError(f"battery {i + 1} uses the aggregated scheme but its gains differ")
        residual = self.balance_residual(pairs)
        if residual > tol:
            raise ControlPolicyError(f"gains violate sum_i lambda = 1 by {residual:.3g}")
        return self

    def to_list(self):
        return [{'t': t + 1, 'entries': self.lambdas[t].tolist()} for t in range(self.periods)]

    @classmethod
    def from_list(cls, entries, responds_to=None):
        ordered = sorted(entries, key=lambda item: item['t'])
        return cls(np.array([item['entries'] for item in ordered], dtype=float), responds_to)

    def __repr__(self):
        return f"ControlPolicy(T={self.periods}, batteries={self.batteries}, renewables={self.renewables})"


def battery_energy(policy, battery, period, w, delta_hours=1.0):
    """Electrical energy (MWh, positive charges) battery i takes in period t under w.

    w is the (renewables, T) deviation array in MW.
    """
    if policy.renewables == 0:
        return 0.0
    w = np.asarray(w, dtype=float).reshape(policy.renewables, -1)
    return float(delta_hours * policy.lambdas[period, battery] @ w[:, period])
