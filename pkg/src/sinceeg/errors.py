"""Error types shared by the binary file formats (dataset and checkpoint)."""


class FormatError(Exception):
    """Base class for structured-file format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(FormatError):
    """File carries an unsupported format version."""


class TruncatedPayloadError(FormatError):
    """File ended before the declared payload was fully read."""
