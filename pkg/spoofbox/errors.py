"""
Exception hierarchy shared by every SpoofBox module.

Each error carries a stable ``category`` string; the CLI prints it and maps it
to an exit code.
"""


class SpoofBoxError(Exception):
    """Base class for all domain failures"""
    category: str = "internal"


class ConfigurationError(SpoofBoxError):
    category = "config"


class UtteranceTooShortError(SpoofBoxError):
    category = "input"

    def __init__(self, utterance_id: str, n_samples: int, frame_length: int):
        self.utterance_id: str = utterance_id
        self.n_samples: int = n_samples
        self.frame_length: int = frame_length
        name = utterance_id or "<unnamed>"
        super().__init__(f"utterance too short: {name} has {n_samples} samples, one frame needs {frame_length}")


class AudioFormatError(SpoofBoxError):
    category = "input"


class ProtocolError(SpoofBoxError):
    category = "protocol"

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number: int | None = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class DegenerateSpectrumError(SpoofBoxError):
    category = "data"


class InsufficientDataError(SpoofBoxError):
    category = "data"


class DimensionMismatchError(SpoofBoxError):
    category = "data"


class FingerprintMismatchError(SpoofBoxError):
    category = "model"


class CorruptFileError(SpoofBoxError):
    category = "corrupt"


class MissingInputError(SpoofBoxError):
    category = "missing"


EXIT_CODES: dict[str, int] = {
    "internal": 1,
    "config": 2,
    "input": 3,
    "protocol": 4,
    "data": 5,
    "model": 6,
    "corrupt": 7,
    "missing": 8,
}
