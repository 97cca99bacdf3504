"""Exception taxonomy.

Exit-code policy for the CLI: validation problems map to exit code 2,
numeric failures to 3, replication failures to 4.
"""


class HedonicWelfareError(Exception):
    """Base class for all package errors."""


# -- validation (exit code 2) -------------------------------------------------

class ConfigError(HedonicWelfareError):
    """Run configuration is malformed or references missing files."""


class SchemaError(HedonicWelfareError):
    """A CSV header does not match the declared schema."""


class ParseError(HedonicWelfareError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class DomainError(HedonicWelfareError):
    """An input lies outside a schedule's declared attribute domain."""


# -- numeric failures (exit code 3) -------------------------------------------

class InfeasibleBudget(HedonicWelfareError):
    """No point of the budget frontier leaves positive consumption."""


class NoInteriorOptimum(HedonicWelfareError):
    """The first-order condition has no sign change on the feasible interval."""


class BracketFailure(HedonicWelfareError):
    """Root bracketing failed within the allowed expansion range."""


class SingularInput(HedonicWelfareError):
    """Input matrix carries no usable variation (e.g. all columns constant)."""


class ConvergenceFailure(HedonicWelfareError):
    """An iterative solver failed to converge; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficient(HedonicWelfareError):
    """Regression design matrix has deficient column rank."""


class DegenerateDesign(HedonicWelfareError):
    """Regressors are collinear or otherwise unusable."""


class GridExhausted(HedonicWelfareError):
    """A grid search selected a boundary point; the grid needs widening."""


class DegenerateCoefficient(HedonicWelfareError):
    """A coefficient is too close to zero for a closed form that divides by it."""


class StepFailure(HedonicWelfareError):
    """An ODE step left the domain of the demand function."""


class ToleranceNotMet(HedonicWelfareError):
    """Integrator error estimate exceeds the requested tolerance."""


class MissingArtifact(HedonicWelfareError):
    """A required pipeline artifact is absent from the output directory."""


# -- replication (exit code 4) -------------------------------------------------

class ChecksumError(HedonicWelfareError):
    """Shipped constants file does not match its recorded checksum."""


class ReplicationFailure(HedonicWelfareError):
    """Benchmark replication exceeded its residual tolerance or broke a pattern."""
