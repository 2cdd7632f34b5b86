"""Exception hierarchy shared by all modules."""


class ApbmError(Exception):
    """Base class for all errors raised by this package."""


class NotSquare(ApbmError):
    pass


class NotSymmetric(ApbmError):
    pass


class NotPositiveDefinite(ApbmError):
    pass


class NonFiniteFunctionValue(ApbmError):
    pass


class SingularInnovation(ApbmError):
    pass


class NonFinite(ApbmError):
    pass


class DimensionMismatch(ApbmError):
    pass


class NegativeLambda(ApbmError):
    pass


class NoAnchorExists(ApbmError):
    pass


class SensorCollocated(ApbmError):
    pass


class NonFiniteState(ApbmError):
    """Simulation diverged; message carries the offending step index."""


class EmptyRecords(ApbmError):
    pass


class MissingThetaSnapshots(ApbmError):
    pass


class ConfigError(ApbmError):
    pass
