"""Exception hierarchy.

Every error raised on purpose by the package derives from ``MediationError``
and carries an ``error_class`` string that the command line front end prints
and maps to an exit code.
"""

from __future__ import annotations

import numpy as np


class MediationError(Exception):
    error_class = "error"


class SchemaError(MediationError):
    """A required column is missing or a column map is malformed."""

    error_class = "schema"


class ValidationError(MediationError):
    """Input values violate a data invariant (bad exposure, mediator, cell)."""

    error_class = "validation"


class ConfigError(MediationError):
    error_class = "config"


class DomainError(MediationError):
    """An effect scale is undefined for the data or the estimates at hand."""

    error_class = "domain"


class PreconditionError(MediationError):
    error_class = "precondition"


class DegenerateInputError(MediationError):
    """Empty exposure arm or another empirical positivity failure."""

    error_class = "positivity-degenerate"


class ConvergenceError(MediationError):
    error_class = "convergence"


class SingularDesignError(ConvergenceError):
    pass


class NonConvergenceError(ConvergenceError):
    """Raised when an iterative fit fails; ``last_iterate`` holds its final coefficients."""

    def __init__(self, message: str, last_iterate: np.ndarray | None = None, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class ModelFitError(ConvergenceError):
    """A nuisance fit failed; ``model`` names which working model."""

    def __init__(self, model: str, cause: ConvergenceError):
        super().__init__(f"{model} model: {cause}")
        self.model = model
        self.cause = cause


EXIT_CODES = {
    "config": 2,
    "schema": 3,
    "validation": 4,
    "convergence": 5,
    "positivity-degenerate": 6,
    "domain": 7,
    "precondition": 8,
    "error": 1,
}
