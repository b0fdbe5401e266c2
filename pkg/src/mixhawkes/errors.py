"""Exception hierarchy.

Errors fall into two families that the command-line layer maps to exit
codes: input/configuration problems (:class:`ValidationError` and
friends, exit 2) and numerical failures (:class:`NumericalError`, exit 3).
"""


class MixHawkesError(Exception):
    """Base class for all package errors."""


class ValidationError(MixHawkesError, ValueError):
    """Malformed input data; ``row`` points at the offending line if known."""

    def __init__(self, message, row=None, path=None):
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ConfigurationError(MixHawkesError, ValueError):
    """Inconsistent model, prior or run configuration."""


class DomainError(MixHawkesError, ValueError):
    """Argument outside the mathematical domain of a function."""


class StructureError(MixHawkesError, ValueError):
    """Invalid branching vector or latent-state layout."""


class MisuseError(MixHawkesError, ValueError):
    """A sampler was called on data it does not support."""


class InsufficientDrawsError(MixHawkesError, ValueError):
    """Too few posterior draws for the requested summary."""


class NumericalError(MixHawkesError, ArithmeticError):
    """Base class for numerical failures."""


class NonFiniteParameterError(NumericalError):
    """A parameter or linear predictor overflowed to a non-finite value."""


class NonstationaryError(NumericalError):
    """Branching ratio at or above one where a stationary value is needed."""


class ConcavityError(NumericalError):
    """Adaptive rejection sampling detected a non-log-concave target."""

    def __init__(self, message, abscissa=None):
        self.abscissa = abscissa
        super().__init__(message)


class ArsInitError(NumericalError):
    """Adaptive rejection sampling could not build a valid initial hull."""


class ChainError(NumericalError):
    """A Gibbs sweep failed; carries the sweep index and failing step."""

    def __init__(self, chain, sweep, operation, cause):
        self.chain = chain
        self.sweep = sweep
        self.operation = operation
        self.cause = cause
        super().__init__(
            f"chain {chain} failed at sweep {sweep} in {operation}: "
            f"{type(cause).__name__}: {cause}"
        )


class FitError(NumericalError):
    """One or more chains of a fit failed."""

    def __init__(self, failures):
        self.failures = dict(failures)
        names = ", ".join(str(c) for c in sorted(self.failures))
        detail = "; ".join(str(e) for _, e in sorted(self.failures.items()))
        super().__init__(f"chains failed: {names} ({detail})")
