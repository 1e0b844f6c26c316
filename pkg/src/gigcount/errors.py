"""Exception hierarchy. Each class maps to one CLI exit code."""


class PipelineError(Exception):
    exit_code = 3


class ValidationError(PipelineError, ValueError):
    """Bad input data or configuration."""

    exit_code = 1


class TransportError(PipelineError):
    """A remote fetch failed or a fixture was missing."""

    exit_code = 2


class UnrecordedRequestError(TransportError):
    pass


class MalformedResponseError(TransportError):
    pass


class InvariantError(PipelineError):
    """An internal consistency check failed."""

    exit_code = 3
