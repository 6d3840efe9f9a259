"""
Exception hierarchy shared by the solver apps.

Management commands map these onto exit codes (see battopf.runs.cli).
"""


class BattopfError(Exception):
    """Base class for every planner error."""


class CaseParseError(BattopfError):
    """Raised when a MATPOWER or scenario document cannot be read."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CaseValidationError(BattopfError):
    """Raised when a parsed case violates a GridCase invariant."""


class NetworkError(BattopfError):
    """Raised when the DC network cannot be assembled (e.g. islands)."""

    def __init__(self, message, bus=None):
        self.bus = bus
        super().__init__(message)


class UnbalancedInjectionError(BattopfError):
    """Raised when nodal injections do not sum to zero."""


class CurveDomainError(BattopfError):
    """Raised when a curve is evaluated outside its breakpoints."""


class RangeViolation(BattopfError):
    """Raised when a battery step leaves the admissible charge range.

    Attributes:
        overshoot: magnitude of the excursion beyond the range, MWh chemical
    """

    def __init__(self, message, overshoot):
        self.overshoot = overshoot
        super().__init__(message)


class UncertaintyModelError(BattopfError):
    """Raised for malformed concentration models."""


class DimensionError(BattopfError):
    """Raised when vector and model dimensions disagree."""


class ControlPolicyError(BattopfError):
    """Raised when a control policy breaks nonnegativity or balance."""


class LPModelError(BattopfError):
    """Raised when a separation LP is unbounded or malformed."""


class DuplicateCutError(BattopfError):
    """Raised when a cut already present in the pool is added again."""


class RobustInfeasibleError(BattopfError):
    """Raised when the master relaxation becomes infeasible.

    Attributes:
        trail: provenance of every cut in the pool at the time of failure
    """

    def __init__(self, message, trail=None):
        self.trail = trail or []
        super().__init__(message)


class PlanRejectedError(BattopfError):
    """Raised when a plan handed to the validator is malformed."""
