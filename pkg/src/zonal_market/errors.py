"""Exception types shared across the package."""


class MarketError(Exception):
    """Base class for all package errors."""


class InfeasibleError(MarketError):
    """The clearing LP has no feasible point (demand cannot be met)."""


class UnboundedError(MarketError):
    """The clearing LP is unbounded; impossible for box-bounded fractions."""


class NoFeasiblePointError(MarketError):
    """Every start of the integrated solver failed to reach a feasible point."""


class ParseError(MarketError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None when not line-specific."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ZeroTotalError(MarketError, ValueError):
    """Gini index requested for a profit vector summing to zero."""


class GapWarning(UserWarning):
    """A demand series skips calendar days; the series is still returned."""
