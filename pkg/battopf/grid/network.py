"""
DC network model: susceptance matrix, angle solves and shift factors.

With branch susceptances b (1/x, p.u.) and the branch-bus incidence A
(+1 at the from bus, -1 at the to bus), branch flows are diag(b) A theta
and nodal injections are B theta with B = A^T diag(b) A. The slack angle
is fixed at zero, so B is reduced by the slack row and column and
factorized once by Cholesky.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.csgraph import connected_components

from battopf.exceptions import NetworkError, UnbalancedInjectionError

logger = logging.getLogger(__name__)

# p.u. imbalance tolerated by nominal_flows
BALANCE_TOL = 1e-6


class DCNetwork:
    """
    Reduced DC susceptance system of a connected network.

    Attributes:
        bus_ids: bus ids in matrix order
        slack: slack bus id
        slack_index: position of the slack in bus_ids
        incidence: (branches, buses) sparse incidence matrix
        susceptance: (branches,) series susceptances, p.u.
        reduced: dense reduced B, slack row and column removed
        base_mva: system base for p.u. conversions
    """

    def __init__(self, bus_ids, slack, incidence, susceptance, base_mva):
        self.bus_ids = tuple(bus_ids)
        self.slack = slack
        self.slack_index = self.bus_ids.index(slack)
        self.incidence = sp.csr_matrix(incidence)
        self.susceptance = np.asarray(susceptance, dtype=float)
        self.base_mva = float(base_mva)
        self.keep = np.array([k for k in range(len(self.bus_ids)) if k != self.slack_index], dtype=int)
        self.branch_matrix = sp.diags(self.susceptance) @ self.incidence
        self.bus_matrix = (self.incidence.T @ self.branch_matrix).tocsr()
        self.reduced = self.bus_matrix[self.keep][:, self.keep].toarray()
        try:
            self._factor = cho_factor(self.reduced, lower=True) if self.keep.size else None
        except LinAlgError as exc:
            raise NetworkError(f"reduced susceptance matrix is not positive definite: {exc}") from exc

    @property
    def num_buses(self):
        return len(self.bus_ids)

    @property
    def num_branches(self):
        return self.susceptance.size

    def solve_angles(self, injections_pu):
        """Angles theta (radians) with theta[slack] = 0.

        injections_pu is a (buses,) vector or a (buses, k) stack of columns.
        """
        injections_pu = np.asarray(injections_pu, dtype=float)
        theta = np.zeros_like(injections_pu)
        if self._factor is not None:
            theta[self.keep] = cho_solve(self._factor, injections_pu[self.keep])
        return theta

    def branch_flows(self, theta):
        """Branch flows in p.u. for angles theta."""
        return self.branch_matrix @ theta


@dataclass
class ShiftFactorMatrix:
    """
    Rows nu_km of power transfer distribution factors.

    matrix[l] @ p is the flow on branch l for a balanced injection vector p
    (any unit in, same unit out). The slack column is zero.
    """

    matrix: np.ndarray
    slack_index: int

    def flows(self, injections):
        return self.matrix @ np.asarray(injections, dtype=float)

    def row(self, branch):
        return self.matrix[branch]


def build_dc_network(case):
    """Assemble and factorize the reduced susceptance matrix of a case.

    Raises:
        NetworkError: the network is disconnected; names a bus not reachable
            from the slack
    """
    index = case.bus_index
    nb = len(case.buses)
    nl = len(case.branches)
    rows = np.repeat(np.arange(nl), 2)
    cols = np.array([index[end] for br in case.branches for end in (br.from_bus, br.to_bus)], dtype=int)
    vals = np.tile([1.0, -1.0], nl)
    incidence = sp.csr_matrix((vals, (rows, cols)), shape=(nl, nb))

    adjacency = abs(incidence.T) @ abs(incidence)
    _, labels = connected_components(adjacency, directed=False)
    slack_position = index[case.slack_bus]
    cut_off = np.flatnonzero(labels != labels[slack_position])
    if cut_off.size:
        bus = case.buses[cut_off[0]].id
        raise NetworkError(f"network is disconnected: bus {bus} is not reachable from slack bus {case.slack_bus}", bus)

    network = DCNetwork(
        bus_ids=case.bus_ids,
        slack=case.slack_bus,
        incidence=incidence,
        susceptance=[br.susceptance for br in case.branches],
        base_mva=case.base_mva,
    )
    logger.debug(f"built DC network with {nb} buses and {nl} branches")
    return network


def compute_shift_factors(net):
    """Shift factors nu = diag(b) A [B_red^-1 with a zero slack column]."""
    matrix = np.zeros((net.num_branches, net.num_buses))
    if net.keep.size:
        reduced_branch = net.branch_matrix[:, net.keep].toarray()
        matrix[:, net.keep] = cho_solve(net._factor, reduced_branch.T).T
    return ShiftFactorMatrix(matrix=matrix, slack_index=net.slack_index)


@dataclass
class NominalFlows:
    flows_mw: np.ndarray
    overloaded: list


def nominal_flows(net, case, generation_mw, period=0, shift_factors=None):
    """Branch flows for a bus generation vector in one period.

    The injection is generation plus renewable forecast minus load, all in MW.

    Args:
        net: DCNetwork
        case: GridCase
        generation_mw: (buses,) generation per bus, MW
        period: 0-based period index
        shift_factors: optional precomputed ShiftFactorMatrix

    Returns:
        NominalFlows with per-branch MW flows and the indices of branches
        whose |flow| exceeds their limit

    Raises:
        UnbalancedInjectionError: injections do not sum to zero within 1e-6 p.u.
    """
    injection = (
        np.asarray(generation_mw, dtype=float)
        + case.forecast_matrix()[:, period]
        - case.load_matrix()[:, period]
    )
    imbalance = float(injection.sum()) / case.base_mva
    if abs(imbalance) > BALANCE_TOL:
        raise UnbalancedInjectionError(f"period {period + 1}: injections sum to {imbalance:.3g} p.u., expected 0")
    shift_factors = shift_factors or compute_shift_factors(net)
    flows = shift_factors.flows(injection)
    overloaded = [
        k for k, br in enumerate(case.branches)
        if not br.unlimited and abs(flows[k]) > br.limit_mw + 1e-9
    ]
    return NominalFlows(flows_mw=flows, overloaded=overloaded)


def generation_by_bus(case, dispatch):
    """Sum generator dispatch (generators x T) onto buses (buses x T)."""
    dispatch = np.asarray(dispatch, dtype=float).reshape(len(case.generators), -1)
    by_bus = np.zeros((len(case.buses), dispatch.shape[1]))
    index = case.bus_index
    for k, gen in enumerate(case.generators):
        by_bus[index[gen.bus]] += dispatch[k]
    return by_bus
