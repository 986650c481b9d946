"""Exception hierarchy shared across the package."""


class NbscError(Exception):
    """Base class for all package errors."""


class DomainError(NbscError, ValueError):
    """A parameter lies outside its mathematical domain."""


class EquidispersionError(NbscError, ValueError):
    """Sample variance does not exceed the sample mean."""


class ConvergenceError(NbscError, RuntimeError):
    """An iterative fit failed to converge."""


class DegenerateError(NbscError, ValueError):
    """Input carries no variation to estimate from."""


class LengthError(NbscError, ValueError):
    """Input series is too short for the requested operation."""


class SingularDesignError(NbscError, ValueError):
    """Regression design matrix is rank deficient."""


class InfeasibleScenarioError(NbscError, ValueError):
    """Scenario violates the procurement budget."""


class NoFeasiblePointError(NbscError, ValueError):
    """No grid point satisfies the budget constraint."""


class SchemaError(NbscError, ValueError):
    """Input CSV lacks required columns."""


class DateParseError(NbscError, ValueError):
    """A date string matches none of the accepted formats."""


class ConfigError(NbscError, ValueError):
    """Run configuration is malformed or violates an invariant."""
