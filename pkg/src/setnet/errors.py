"""Exception taxonomy shared across the library.

Every error the library raises on purpose derives from SetNetError so
callers (and the CLI) can map failures to exit-code categories.
"""


class SetNetError(Exception):
    """Base class for all library errors."""


class DimensionError(SetNetError):
    """Shapes or sizes are incompatible with the requested operation."""


class EmptyReductionError(SetNetError):
    """A reduction was requested over a zero-length axis or empty set."""


class NumericError(SetNetError):
    """A non-finite value appeared, or a step was refused because of one."""


class ContractError(SetNetError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""


class FormatError(SetNetError):
    """A file did not match its expected on-disk format."""


class ConfigError(SetNetError):
    """An experiment or CLI configuration is invalid."""


class BudgetError(SetNetError):
    """A requested computation exceeds a hard size/iteration cap."""


class DegenerateSetError(SetNetError):
    """A set is too small for the requested operation (e.g. normalize)."""


class DegenerateMeshError(SetNetError):
    """A mesh has no sampleable area."""
