"""
Concentration model for renewable forecast errors.

W is the set of deviation vectors w with K+ w+ + K- w- <= b, where w+ and
w- are the entrywise positive and negative parts and K+, K- are
nonnegative. Coordinates are ordered renewable-major: column j*T + t holds
the deviation of the j-th renewable in period t (both 0-based), in MW.

The set is nonconvex but its intersection with any sign orthant is a
polytope, and it is closed under shrinking magnitudes without changing
signs. The separation and sampling code relies on both facts.
"""
from __future__ import annotations

import logging

import numpy as np

from battopf.exceptions import DimensionError, UncertaintyModelError

logger = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9


class Membership:
    def __init__(self, inside, slack):
        self.inside = inside
        self.slack = slack

    def __bool__(self):
        return self.inside

    def __repr__(self):
        return f"Membership(inside={self.inside}, min_slack={self.slack.min() if self.slack.size else 0.0:.3g})"


class ConcentrationModel:
    """
    Nonnegative matrices K+ and K- with right-hand side b over n*T coordinates.

    Args:
        k_plus: (m, n*T) array, entries >= 0
        k_minus: (m, n*T) array, entries >= 0
        b: (m,) array, entries >= 0 so that w = 0 belongs to W
        renewables: number of renewables n
        periods: number of periods T
    """

    def __init__(self, k_plus, k_minus, b, renewables, periods):
        self.renewables = int(renewables)
        self.periods = int(periods)
        dim = self.renewables * self.periods
        self.k_plus = np.asarray(k_plus, dtype=float).reshape(-1, dim) if dim else np.zeros((len(b), 0))
        self.k_minus = np.asarray(k_minus, dtype=float).reshape(-1, dim) if dim else np.zeros((len(b), 0))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        if self.k_plus.shape != self.k_minus.shape or self.k_plus.shape[0] != self.b.size:
            raise UncertaintyModelError(
                f"K+ {self.k_plus.shape}, K- {self.k_minus.shape} and b ({self.b.size}) do not line up"
            )
        if not (np.all(np.isfinite(self.k_plus)) and np.all(np.isfinite(self.k_minus)) and np.all(np.isfinite(self.b))):
            raise UncertaintyModelError("concentration model entries must be finite")
        if np.any(self.k_plus < 0) or np.any(self.k_minus < 0):
            raise UncertaintyModelError("concentration model requires nonnegative matrices")
        if np.any(self.b < 0):
            raise UncertaintyModelError("concentration model requires b >= 0 so that w = 0 is admissible")

    @property
    def dimension(self):
        return self.renewables * self.periods

    @property
    def rows(self):
        return self.b.size

    def index(self, renewable, period):
        return renewable * self.periods + period

    def period_columns(self, period):
        return [self.index(j, period) for j in range(self.renewables)]

    def _flatten(self, w):
        flat = np.asarray(w, dtype=float).reshape(-1)
        if flat.size != self.dimension:
            raise DimensionError(f"deviation vector has {flat.size} entries, model expects {self.dimension}")
        return flat

    def membership(self, w):
        """Evaluate every row of K+ w+ + K- w- <= b at w.

        Returns:
            Membership: inside flag (all slacks >= -1e-9) and per-row slack
        """
        flat = self._flatten(w)
        if not np.all(np.isfinite(flat)):
            raise DimensionError("deviation vector must be finite")
        slack = self.b - self.k_plus @ np.maximum(flat, 0.0) - self.k_minus @ np.maximum(-flat, 0.0)
        return Membership(bool(np.all(slack >= -MEMBERSHIP_TOL)), slack)

    def orthant_matrix(self, signs):
        """Rows of W restricted to the orthant sign(w) = signs, over magnitudes."""
        signs = np.asarray(signs).reshape(-1)
        return np.where(signs > 0, self.k_plus, self.k_minus)

    def orthant_bounds(self, signs):
        """Largest magnitude each coordinate reaches alone in the given orthant.

        Setting every other coordinate to zero is feasible (b >= 0), so this
        is exact per coordinate. np.inf marks a coordinate no row limits.
        """
        matrix = self.orthant_matrix(signs)
        with np.errstate(divide='ignore', invalid='ignore'):
            ratios = np.where(matrix > 0, self.b[:, None] / np.where(matrix > 0, matrix, 1.0), np.inf)
        if ratios.shape[0] == 0:
            return np.full(self.dimension, np.inf)
        return ratios.min(axis=0)

    def coordinate_bounds(self):
        """Per-coordinate (max w_c, max -w_c) over W."""
        ones = np.ones(self.dimension)
        return self.orthant_bounds(ones), self.orthant_bounds(-ones)

    def is_trivial(self):
        upper, lower = self.coordinate_bounds()
        return bool(np.all(upper <= 0) and np.all(lower <= 0))

    def check_full_dimensional(self, seed=0, draws=64):
        """Heuristic check that some orthant of W has nonempty interior.

        Returns:
            bool: True if a full-dimensional orthant was found; a warning is
            logged otherwise
        """
        if self.dimension == 0:
            return True
        rng = np.random.default_rng(seed)
        candidates = [np.ones(self.dimension), -np.ones(self.dimension)]
        candidates += list(rng.choice([-1.0, 1.0], size=(draws, self.dimension)))
        for signs in candidates:
            if np.all(self.orthant_bounds(signs) > 0):
                return True
        logger.warning(
            f"uncertainty set looks lower-dimensional: no sampled orthant of the {self.dimension} "
            f"deviation coordinates has interior points"
        )
        return False

    def to_dict(self):
        return {
            'type': 'concentration',
            'K_plus': self.k_plus.tolist(),
            'K_minus': self.k_minus.tolist(),
            'b': self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, data, renewables, periods):
        kind = data.get('type', 'concentration')
        if kind == 'budgets':
            return from_budgets(data['gamma'], data['Gamma'])
        if kind != 'concentration':
            raise UncertaintyModelError(f"unknown uncertainty type {kind!r}")
        dim = renewables * periods
        b = data['b']
        k_plus = np.asarray(data['K_plus'], dtype=float)
        k_minus = np.asarray(data['K_minus'], dtype=float)
        if k_plus.size == 0:
            k_plus = np.zeros((len(b), dim))
        if k_minus.size == 0:
            k_minus = np.zeros((len(b), dim))
        if k_plus.ndim != 2 or k_plus.shape[1] != dim or k_minus.ndim != 2 or k_minus.shape[1] != dim:
            raise UncertaintyModelError(
                f"K+ and K- need {dim} columns ({renewables} renewables x {periods} periods)"
            )
        return cls(k_plus, k_minus, b, renewables, periods)

    @classmethod
    def zero(cls, renewables, periods):
        """W = {0}: every coordinate pinned by a row with b = 0."""
        dim = renewables * periods
        eye = np.eye(dim)
        return cls(np.vstack([eye, np.zeros((dim, dim))]), np.vstack([np.zeros((dim, dim)), eye]),
                   np.zeros(2 * dim), renewables, periods)

    def __eq__(self, other):
        if not isinstance(other, ConcentrationModel):
            return NotImplemented
        return (
            self.renewables == other.renewables
            and self.periods == other.periods
            and np.array_equal(self.k_plus, other.k_plus)
            and np.array_equal(self.k_minus, other.k_minus)
            and np.array_equal(self.b, other.b)
        )

    def __repr__(self):
        return f"ConcentrationModel(rows={self.rows}, renewables={self.renewables}, periods={self.periods})"


def from_budgets(gamma, big_gamma):
    """Build the uncertainty-budget special case.

    |w_jt| <= gamma_jt for every coordinate, and for every period
    sum_j |w_jt| / gamma_jt <= Gamma_t.

    Args:
        gamma: (n, T) per-renewable, per-period bounds in MW, all > 0
        big_gamma: (T,) per-period budgets, all > 0

    Returns:
        ConcentrationModel
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma.reshape(-1, 1)
    big_gamma = np.asarray(big_gamma, dtype=float).reshape(-1)
    renewables, periods = gamma.shape
    if big_gamma.size != periods:
        raise UncertaintyModelError(f"Gamma has {big_gamma.size} entries for {periods} periods")
    if np.any(gamma <= 0) or np.any(big_gamma <= 0):
        raise UncertaintyModelError("budget parameters gamma and Gamma must be positive")

    dim = renewables * periods
    eye = np.eye(dim)
    zeros = np.zeros((dim, dim))
    budget = np.zeros((periods, dim))
    for t in range(periods):
        for j in range(renewables):
            budget[t, j * periods + t] = 1.0 / gamma[j, t]

    k_plus = np.vstack([eye, zeros, budget])
    k_minus = np.vstack([zeros, eye, budget])
    b = np.concatenate([gamma.reshape(-1), gamma.reshape(-1), big_gamma])
    return ConcentrationModel(k_plus, k_minus, b, renewables, periods)


def membership(model, w):
    return model.membership(w)
