"""
Codec Exceptions
One hierarchy for every failure the codec can report, so callers
(CLI, evaluation loops, fuzzers) can catch CodecError and nothing else.
"""


class CodecError(Exception):
    """Base class for all codec failures"""


class DimensionError(CodecError):
    """Tensor or feature map with the wrong shape"""

    def __init__(self, axis, expected, actual, op=None):
        self.axis = axis
        self.expected = expected
        self.actual = actual
        self.op = op
        where = f"{op}: " if op else ""
        super().__init__(f"{where}dimension mismatch on axis '{axis}' (expected {expected}, got {actual})")


class ConfigError(CodecError):
    """Invalid model, training or sweep configuration"""


class PrecisionError(CodecError):
    """CDF table that violates the coder preconditions"""


# The coder documentation calls this a format error
FormatError = PrecisionError


class StreamError(CodecError):
    """Arithmetic decoding failure"""


class TruncatedStreamError(StreamError):
    """Decoder ran past the end of its payload"""


class CorruptStreamError(StreamError):
    """Decoder state inconsistent with the probability tables"""


class ContainerError(CodecError):
    """Malformed .glc container"""


class BadMagicError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class LengthMismatchError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class FingerprintMismatchError(ContainerError):
    """Container was produced by a different model"""


class CheckpointError(CodecError):
    """Malformed tensor checkpoint or config sidecar"""


class ImageFormatError(CodecError):
    """Image that is not a readable 8-bit RGB file"""


class TrainingDivergedError(CodecError):
    """Loss became non-finite during training"""

    def __init__(self, step, terms):
        self.step = step
        self.terms = dict(terms)
        super().__init__(f"non-finite loss at step {step}: {self.terms}")
