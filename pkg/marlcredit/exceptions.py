class MarlCreditError(Exception):
    """Base exception for all marlcredit errors."""


class DomainError(MarlCreditError, ValueError):
    """Raised when an argument lies outside an operation's domain."""


class ShapeError(MarlCreditError, ValueError):
    """Raised when array or matrix dimensions do not line up."""


class ConfigError(MarlCreditError):
    """Raised for invalid run configuration or environment settings."""


class ScenarioParseError(ConfigError):
    """Raised for malformed scenario names.

    :ivar token: the offending token of the scenario name.
    """

    def __init__(self, name, token, reason=""):
        message = "Bad scenario name {!r}: offending token {!r}".format(
            name, token)
        if reason:
            message += " ({})".format(reason)
        super(ScenarioParseError, self).__init__(message)
        self.name = name
        self.token = token


class UsageError(MarlCreditError):
    """Raised when an object is used out of protocol, e.g. step after done."""


class ParseError(MarlCreditError):
    """Raised when a critic response violates the feedback grammar.

    :ivar str kind: one of :data:`PARSE_ERROR_KINDS`.
    :ivar str detail: human readable description.
    :ivar tuple span: ``(start, end)`` character range in the response.
    """

    def __init__(self, kind, detail, span=(0, 0)):
        if kind not in PARSE_ERROR_KINDS:
            raise ValueError("Unknown parse error kind {!r}".format(kind))
        super(ParseError, self).__init__("{}: {}".format(kind, detail))
        self.kind = kind
        self.detail = detail
        self.span = span


PARSE_ERROR_KINDS = frozenset({
    "missing_block",
    "row_count_mismatch",
    "length_mismatch",
    "non_numeric",
    "duplicate_block",
})


class CriticError(MarlCreditError):
    """Raised when a critic cannot produce a verdict.

    :ivar list transcript: ``(role, text)`` pairs exchanged so far.
    """

    def __init__(self, message, transcript=()):
        super(CriticError, self).__init__(message)
        self.transcript = list(transcript)


class TransportError(MarlCreditError):
    """Raised when the chat endpoint cannot be reached after retries."""

    def __init__(self, message, attempt_count=0):
        super(TransportError, self).__init__(message)
        self.attempt_count = attempt_count


class CassetteError(MarlCreditError):
    """Raised when a replay cassette does not match the conversation."""


class BudgetError(MarlCreditError):
    """Raised when a single message cannot fit in the token budget."""


class DatasetError(MarlCreditError):
    """Raised for corrupt dataset files in strict mode."""


class DatasetWriteError(DatasetError):
    """Raised when an episode could only be partially written."""

    def __init__(self, message, bytes_written=0):
        super(DatasetWriteError, self).__init__(message)
        self.bytes_written = bytes_written


class CheckpointError(MarlCreditError):
    """Raised for unreadable or mismatched policy checkpoints."""


class BufferExhaustedError(CheckpointError):
    pass


class TrainingDivergedError(MarlCreditError):
    """Raised when a TD update produces a non-finite loss."""
