"""Exception types shared across the package."""


class BcnnError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(BcnnError):
    """Tensor or layer shapes do not compose."""


class NonBinaryEntry(BcnnError):
    """A value expected to be exactly +1 or -1 is not."""


class LengthMismatch(BcnnError):
    """Packed word buffers disagree with the declared element count."""


class InvalidParallelism(BcnnError):
    """Requested (p_out, p_in) unroll factors are not valid for the layer."""


class NonPsdCovariance(BcnnError):
    """Per-channel 2x2 covariance has an eigenvalue below -1e-6."""


class BudgetTooLarge(BcnnError):
    """Channel budget exceeds the number of channels in the layer."""


class InvalidConfig(BcnnError):
    """Configuration value outside its documented range."""


class MissingFile(BcnnError):
    """A required input file does not exist."""


class CorruptRecord(BcnnError):
    """Binary dataset file length is not a whole number of records."""


class DataExhausted(BcnnError):
    """Dataset has no samples to train on."""


class DivergedLoss(BcnnError):
    """Training loss became non-finite."""


class BadMagic(BcnnError):
    """Model file does not start with the expected magic bytes."""


class UnsupportedVersion(BcnnError):
    """Model file version is not understood by this reader."""


class TruncatedFile(BcnnError):
    """Model file ended before all declared payloads were read."""


class CorruptModelFile(BcnnError):
    """Model file has trailing bytes or an inconsistent descriptor."""
