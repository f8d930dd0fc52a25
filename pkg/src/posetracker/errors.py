"""Exception hierarchy.

Every error raised by the library derives from :class:`PoseTrackerError`; the
CLI maps the three intermediate classes onto exit codes.
"""


class PoseTrackerError(Exception):
    pass


class InputError(PoseTrackerError):
    """Bad data: parse failures, schema or invariant violations."""


class ConfigError(PoseTrackerError):
    """Bad configuration or usage."""


# geometry
class DegeneratePose(InputError):
    pass


class DegenerateBox(InputError):
    pass


# skeleton graph
class EmptyPose(InputError):
    pass


class NoValidSamples(InputError):
    pass


class NotNeighbors(InputError):
    pass


# matcher
class ShapeMismatch(InputError):
    pass


class EmptyDataset(InputError):
    pass


class DegenerateDataset(InputError):
    pass


class MatcherUnavailable(ConfigError):
    pass


# providers / files
class ProviderError(PoseTrackerError):
    def __init__(self, message, frame=None):
        if frame is not None:
            message = f"frame {frame}: {message}"
        super().__init__(message)
        self.frame = frame


class FrameOutOfRange(ProviderError):
    pass


class ParseError(InputError):
    pass


class SchemaVersionError(InputError):
    pass


class ValidationError(InputError):
    pass


class InvalidConfig(ConfigError):
    pass


# evaluation
class FrameMismatch(InputError):
    pass
