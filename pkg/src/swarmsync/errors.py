"""Exception hierarchy.

Every error carries a short ``code`` so the CLI can emit a single greppable
diagnostic line (``swarmsync: error[<code>]: <detail>``).
"""

from __future__ import annotations


class SwarmSyncError(Exception):
    code = "error"


class DimensionMismatch(SwarmSyncError, ValueError):
    code = "dimension"


class SingularCoupling(SwarmSyncError, ArithmeticError):
    code = "singular-coupling"


class NonPositiveQ(SwarmSyncError, ArithmeticError):
    code = "non-positive-q"


class BoundViolation(SwarmSyncError, ValueError):
    code = "bound-violation"


class ZeroSeparation(SwarmSyncError, ArithmeticError):
    code = "zero-separation"


class InnerRadiusBreach(SwarmSyncError, ArithmeticError):
    """An agent reached the inner exclusion radius of an obstacle."""

    code = "inner-radius-breach"


class IsolatedAgent(SwarmSyncError, ValueError):
    code = "isolated-agent"


class NonPositivePole(SwarmSyncError, ValueError):
    code = "non-positive-pole"


class InvalidDecayRate(SwarmSyncError, ValueError):
    """Dwell-time formula needs the decay rate strictly inside (0, 1)."""

    code = "invalid-decay-rate"


class RuleInapplicable(SwarmSyncError, ValueError):
    code = "rule-inapplicable"


class AdmissibilityViolation(SwarmSyncError, ValueError):
    code = "admissibility"


class NonFiniteState(SwarmSyncError, ArithmeticError):
    code = "non-finite-state"


class ConfigInvalid(SwarmSyncError, ValueError):
    code = "config-invalid"


class ParseError(SwarmSyncError, ValueError):
    """Syntax error in a config file or a drift expression."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        elif column is not None:
            where = f" (column {column})"
        super().__init__(message + where)


class ValidationError(SwarmSyncError, ValueError):
    """A named invariant failed while loading a config."""

    code = "validation"

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)
