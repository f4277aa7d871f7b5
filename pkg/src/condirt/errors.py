"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the admissible domain (non-finite, or a probability outside [0, 1])."""


class DegenerateMassError(ValueError):
    """A one-dimensional density has zero total mass and no regularization floor."""


class StructureError(ValueError):
    """Tensor-train cores or bases do not chain consistently."""


class BuildError(RuntimeError):
    """Construction of an approximation failed.

    Attributes
    ----------
    layer : int or None
        Index of the DIRT layer being built, when known.
    point : ndarray or None
        Offending evaluation point, when the failure came from the oracle.
    """

    def __init__(self, message, layer=None, point=None, diagnostics=None):
        super().__init__(message)
        self.layer = layer
        self.point = point
        self.diagnostics = diagnostics or {}


class UnsupportedOperationError(RuntimeError):
    """The requested computation needs a capability the target does not expose."""


class DirtFormatError(IOError):
    """A serialized transport file is malformed, truncated or of the wrong version."""
