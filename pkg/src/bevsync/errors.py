"""Exception hierarchy. The CLI maps ConfigError to exit 2 and the rest to exit 3."""


class BevSyncError(Exception):
    pass


class ConfigError(BevSyncError, ValueError):
    """Bad shapes, sizes, file contents or options."""


class DomainError(BevSyncError, ValueError):
    """An argument outside its mathematical domain (view index, timestep, color range)."""


class GeometryError(BevSyncError):
    pass


class BehindCameraError(GeometryError):
    pass


class DegeneracyError(GeometryError):
    pass


class ArityError(GeometryError, ValueError):
    pass


class PointAtInfinityError(GeometryError):
    pass


class NoCorrespondenceError(BevSyncError, LookupError):
    pass


class ConflictError(BevSyncError, ValueError):
    """Overlapping instance masks."""


class SceneSpecError(ConfigError):
    pass


class NumericError(BevSyncError, ArithmeticError):
    pass
