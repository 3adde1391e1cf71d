"""Exception types raised across the package."""


class StoryMotionError(Exception):
    """Base class; ``kind`` is the machine-readable error type used by the CLI."""

    kind = "error"


class ValidationError(StoryMotionError, ValueError):
    kind = "validation"


class DegenerateRotationError(StoryMotionError, ValueError):
    kind = "degenerate_rotation"


class SchemaError(ValidationError):
    kind = "schema"


class PathNotFoundError(StoryMotionError):
    kind = "path_not_found"


class ScheduleParseError(StoryMotionError):
    kind = "parse"

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class LLMTransportError(StoryMotionError, IOError):
    kind = "io"


class UnmatchedTextError(StoryMotionError):
    kind = "unmatched_text"

    def __init__(self, texts):
        self.texts = sorted(set(texts))
        super().__init__("no database clip matches text: " + ", ".join(repr(t) for t in self.texts))
