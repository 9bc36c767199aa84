"""Exception types shared across the package."""


class T2ScreenError(Exception):
    """Base class for all package errors."""


class ParseError(T2ScreenError):
    """Structure file could not be parsed; message carries line/field context."""


class UnknownElementError(T2ScreenError):
    pass


class DegenerateLatticeError(T2ScreenError):
    pass


class MissingDataError(T2ScreenError):
    """A required table entry (isotope, vdW radius, slab geometry) is missing."""


class MisconfigurationError(T2ScreenError):
    """Parameters that would produce absurd work (e.g. supercell cap exceeded)."""


class DimensionCapError(T2ScreenError):
    """Cluster or oracle Hilbert-space dimension above the configured cap."""


class InsufficientDecayError(T2ScreenError):
    """Coherence curve does not decay enough to support a T2 fit."""


class OverlapError(T2ScreenError):
    """Atoms or bath spins closer than the physical sanity bound."""
