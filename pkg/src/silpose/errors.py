"""Exception types raised across the package."""


class SilposeError(Exception):
    """Base class for all package errors."""


class PoleCrossing(SilposeError):
    """A vertex lies on or behind the perspective pole (1 + z0 * z <= 0)."""


class ShapeMismatch(SilposeError, ValueError):
    pass


class NonFiniteGradient(SilposeError, FloatingPointError):
    pass


class EmptySilhouette(SilposeError, ValueError):
    pass


class EmptySelection(SilposeError, ValueError):
    pass


class MissingSemantics(SilposeError):
    pass


class NonRenderableTemplate(SilposeError, ValueError):
    pass


class MissingFile(SilposeError, FileNotFoundError):
    pass


class MalformedManifest(SilposeError, ValueError):
    pass


class MissingReference(SilposeError, KeyError):
    pass
