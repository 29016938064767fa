"""Exception taxonomy shared across the package."""


class PtformerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PtformerError):
    """Operand shapes are incompatible. The message names both shapes."""


class ConfigError(PtformerError):
    """A configuration value or combination is invalid."""


class ContractError(PtformerError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class ValidationError(PtformerError):
    """Structural input data is invalid (bad indices, malformed bundles)."""


class ParseError(ValidationError):
    """A file could not be parsed. The message carries file/line context."""


class DegenerateInputError(PtformerError):
    """Input is structurally valid but degenerate for the requested operation
    (fully masked softmax row, zero-degree node, edgeless graph, empty mask)."""


class CapacityError(PtformerError):
    """Requested computation exceeds a hard size guard."""


class DivergenceError(PtformerError):
    """Training produced a nonfinite quantity."""
