"""Exception types shared across the package.

Invalid arguments and bad configurations raise plain ValueError; the classes
here cover failure modes a caller may want to handle individually (corrupt
bitstreams, stale latent caches, mismatched checkpoints).
"""


class SpecodecError(Exception):
    """Base class for codec-specific failures."""


class BitstreamError(SpecodecError):
    """Base class for bitstream parsing failures."""


class BitstreamFormatError(BitstreamError):
    """Magic bytes or header fields are not a recognizable bitstream."""


class BitstreamVersionError(BitstreamError):
    """Bitstream version is not supported by this implementation."""


class BitstreamTruncatedError(BitstreamError):
    """Payload is shorter than the header promises."""


class TokenRangeError(SpecodecError):
    """Token index outside the codebook; the token data is corrupt."""


class CacheMismatchError(SpecodecError):
    """Latent cache was produced by a different checkpoint than supplied."""


class CheckpointMismatchError(SpecodecError):
    """Checkpoint is incompatible with the requested configuration."""
