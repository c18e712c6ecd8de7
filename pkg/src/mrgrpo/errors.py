"""Exception hierarchy.

Every error raised on purpose by this package derives from ``MrgrpoError``.
Most also derive from ``ValueError`` so callers that only care about bad
input can catch the builtin.
"""


class MrgrpoError(Exception):
    pass


class ConfigurationError(MrgrpoError, ValueError):
    """Bad configuration, architecture/parameter mismatch or bad dimensions."""


class InvalidGroupError(MrgrpoError, ValueError):
    pass


class RewardComputationError(MrgrpoError, ValueError):
    """A reward component could not be computed.

    ``component`` names the offending reward term (``"r_intl"`` etc.).
    """

    def __init__(self, component: str, message: str):
        super().__init__(f"{component}: {message}")
        self.component = component


class InvalidTargetError(MrgrpoError, ValueError):
    pass


class InvalidEmbeddingError(MrgrpoError, ValueError):
    pass


class InvalidDurationError(MrgrpoError, ValueError):
    pass


class CalibrationError(MrgrpoError, ValueError):
    pass


class AnnotationMissingError(MrgrpoError, ValueError):
    pass


class SamplingError(MrgrpoError, ValueError):
    pass


class InvalidTrajectoryError(MrgrpoError, ValueError):
    pass


class SynthesisError(MrgrpoError, ValueError):
    pass


class InvalidReferenceError(MrgrpoError, ValueError):
    pass


class TemplateParseError(MrgrpoError, ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class TemplateValidationError(MrgrpoError, ValueError):
    pass


class TrainingError(MrgrpoError, RuntimeError):
    """A train step was aborted; trainer state is left unchanged."""


class CheckpointVersionError(MrgrpoError, ValueError):
    pass


class DatasetError(MrgrpoError, ValueError):
    pass
