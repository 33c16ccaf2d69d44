"""Exception hierarchy shared by every module of the package."""


class NarrativeGraphError(Exception):
    """Base class for all package errors."""


class DimensionError(NarrativeGraphError, ValueError):
    """Operand shapes do not line up."""


class ParameterError(NarrativeGraphError, ValueError):
    """An argument is outside its admissible range."""


class ContractError(NarrativeGraphError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(NarrativeGraphError, ArithmeticError):
    """A computation produced a non-finite value."""


class TrainingError(NarrativeGraphError, RuntimeError):
    """Optimisation cannot continue (e.g. non-finite gradients)."""


class ValidationError(NarrativeGraphError, ValueError):
    """Input data violates a schema or invariant."""


class DataError(NarrativeGraphError, ValueError):
    """Data required by an operation is missing."""


class GenerationError(NarrativeGraphError, RuntimeError):
    """Synthetic corpus generation failed."""
