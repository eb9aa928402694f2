"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class TlimeError(Exception):
    exit_code = 5


class ConfigError(TlimeError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 2


class DataError(TlimeError, ValueError):
    """Bad input data: shape mismatches, unreadable files."""

    exit_code = 3


class IngestError(DataError):
    pass


class IdxMagicError(IngestError):
    pass


class IdxDtypeError(IngestError):
    pass


class IdxLengthError(IngestError):
    """Payload length disagrees with the dimension table."""


class IdxTruncatedError(IdxLengthError):
    pass


class PnmFormatError(IngestError):
    pass


class PnmMagicError(PnmFormatError):
    pass


class PnmMaxvalError(PnmFormatError):
    pass


class PnmHeaderError(PnmFormatError):
    pass


class PnmTruncatedError(PnmFormatError):
    pass


class InvariantError(TlimeError):
    """An internal or contract invariant does not hold."""

    exit_code = 5


class ProbabilityError(InvariantError):
    """A predictor returned something that is not a probability vector."""


class SingularSystemError(TlimeError, ValueError):
    exit_code = 5


class SamplingError(TlimeError):
    exit_code = 5

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class ProtocolError(TlimeError):
    """The external predictor broke the wire protocol."""

    exit_code = 4

    def __init__(self, message, payload=None):
        if payload is not None:
            message = f"{message}; payload: {payload[:500]!r}"
        super().__init__(message)
        self.payload = payload
