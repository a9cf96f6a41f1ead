"""Error taxonomy shared by the library, the datastore, and the wire protocol.

Every error that can cross the service boundary carries a stable ``code``
(the class name) used verbatim in the JSON error envelope.
"""

from __future__ import annotations


class TunerError(Exception):
    """Base class; ``code`` is the wire-visible error identifier."""

    http_status = 400

    @property
    def code(self) -> str:
        return type(self).__name__


class NotFound(TunerError):
    http_status = 404


class AlreadyExists(TunerError):
    http_status = 409


class AlreadyDone(TunerError):
    http_status = 409


class SpecMismatch(TunerError):
    http_status = 409


class StudyNotActive(TunerError):
    http_status = 409


class TrialNotActive(TunerError):
    http_status = 409


class IllegalTransition(TunerError):
    http_status = 409


class IncompleteFinalMeasurement(TunerError):
    pass


class InvalidSpec(TunerError):
    pass


class InvalidParameters(TunerError):
    """Carries the violation list produced by search-space validation."""

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class MissingMetrics(TunerError):
    pass


class NonMonotoneStep(TunerError):
    pass


class UnknownParameter(TunerError):
    pass


class InfeasibleValue(TunerError):
    pass


class CodeOutOfRange(TunerError):
    pass


class GridExhausted(TunerError):
    pass


class CholeskyFailed(TunerError):
    pass


class NoMeasurements(TunerError):
    pass


class CorruptStore(TunerError):
    pass


class StoreClosed(TunerError):
    """The store (or its server) was shut down; retryable by clients."""

    http_status = 503


class HarmlessDecodeError(TunerError):
    """Designer state in metadata is absent or undecodable; safe to rebuild."""


class DesignerFailure(TunerError):
    """A designer/policy raised; surfaces as the operation's error."""


class ConnectionFailed(TunerError):
    pass


class OperationFailed(TunerError):
    pass


#: code string -> exception class, for decoding wire errors client-side.
CODE_TO_ERROR = {
    cls.__name__: cls
    for cls in list(globals().values())
    if isinstance(cls, type) and issubclass(cls, TunerError) and cls is not TunerError
}


def error_for_code(code: str, message: str) -> TunerError:
    cls = CODE_TO_ERROR.get(code, TunerError)
    return cls(message)
