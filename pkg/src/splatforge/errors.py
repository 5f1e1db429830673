"""Exception types shared across the package."""


class SplatforgeError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(SplatforgeError):
    """A file or container violates its documented layout."""


class AssetValidationError(SplatforgeError):
    """An asset failed a hard precondition (invalid fields, NaNs, ...)."""


class RasterError(SplatforgeError):
    """Rasterizer misuse, e.g. backward without a fragment record."""


class ShadingError(SplatforgeError):
    """Shading precondition failure (non-unit normal, missing light, ...)."""


class MeshError(SplatforgeError):
    """Mesh pipeline failure (empty volume, degenerate hull input, ...)."""


class FitError(SplatforgeError):
    """Optimization failure (divergence, degenerate targets, ...)."""


class ConfigError(SplatforgeError):
    """Run configuration is malformed (unknown keys, bad values)."""
