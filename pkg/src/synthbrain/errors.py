"""Exception hierarchy. Every error raised by the library derives from SynthbrainError."""


class SynthbrainError(Exception):
    """Base class for all synthbrain errors."""

    exit_code = 1


class NiftiError(SynthbrainError):
    """Base class for NIfTI format errors."""

    exit_code = 3


class BadMagicError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class UnsupportedDimensionError(NiftiError):
    pass


class TruncatedFileError(NiftiError):
    pass


class ValidationError(SynthbrainError):
    """Invalid schema, config, or volume contents."""

    exit_code = 4


class ShapeError(SynthbrainError):
    """Tensor / weight shape mismatch."""

    exit_code = 4


class DependencyError(SynthbrainError):
    """A training role is missing upstream weights."""

    exit_code = 5


class CohortTableError(SynthbrainError):
    """Malformed cohort CSV."""

    exit_code = 6
