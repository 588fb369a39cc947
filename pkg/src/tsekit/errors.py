"""Exception types shared across the toolkit.

Each class maps to one diagnostic category so the CLI can translate
failures into stable exit codes.
"""


class TsekitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TsekitError):
    """Invalid or inconsistent configuration values."""


class ManifestError(TsekitError):
    """Malformed manifest content; message names the offending line."""


class VocabularyError(TsekitError):
    """Class id or name outside the known vocabulary."""


class AudioFormatError(TsekitError):
    """Audio file violates the PCM16 mono 8 kHz contract."""


class DivergenceError(TsekitError):
    """Training produced a non-finite loss."""
