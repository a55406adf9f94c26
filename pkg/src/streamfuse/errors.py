"""Exception hierarchy shared across the package."""


class StreamFuseError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(StreamFuseError):
    """Stream/schedule shapes (T, M or C) disagree."""


class OverlapEmpty(StreamFuseError):
    """Stream offsets leave no common frame range."""


class InvalidN(StreamFuseError):
    """n-best truncation parameter out of [1, M]."""


class WindowTooShort(StreamFuseError):
    """Analysis window too short for the configured time spans."""


class ProfileMismatch(StreamFuseError):
    """Corruption profile count does not match the stream count."""


class DegenerateData(StreamFuseError):
    """Training data covariance has insufficient rank for PCA."""


class DivergedTraining(StreamFuseError):
    """Autoencoder training loss became non-finite."""


class MissingModel(StreamFuseError):
    """A fusion method requiring a trained model was invoked without one."""


class FormatError(StreamFuseError):
    """Base class for file-format errors."""


class BadMagic(FormatError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(FormatError):
    """File version not understood by this reader."""


class PayloadTruncated(FormatError):
    """File payload shorter than the header promises."""


class InvalidSimplex(FormatError):
    """A stored probability row is too far from the simplex."""


class ManifestError(FormatError):
    """Malformed manifest line; message names the line number."""
