"""
Exception types raised across mmapprox.

Validation problems derive from ValueError, numerical breakdowns from
ArithmeticError. The CLI maps the two families (plus OSError) onto its
exit codes.
"""


class SpecValidationError(ValueError):
    """A market specification, or an argument derived from one, is invalid."""


class NotSymmetricError(SpecValidationError):
    """A matrix that must be symmetric is not."""


class LatticeError(ValueError):
    """An inventory vector does not lie on the inventory lattice."""


class UnsupportedConfigurationError(ValueError):
    """The requested quantity does not exist for this configuration."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class NotPositiveSemidefiniteError(NumericalError):
    """A matrix has an eigenvalue below the PSD tolerance."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed (matrix not positive definite)."""


class BracketingError(NumericalError):
    """A root or maximum could not be bracketed within the expansion budget."""
