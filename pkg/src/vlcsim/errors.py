"""Exception types shared across the simulator."""
from __future__ import annotations



class VlcSimError(Exception):
    """Base class for all simulator errors."""


class DomainError(VlcSimError, ValueError):
    """An input lies outside the domain of a model function."""


class CapacitanceModelError(DomainError):
    """Bias beyond capacitance-model validity (junction voltage >= phi)."""


class NumericalError(VlcSimError, ArithmeticError):
    """A solver failed to converge or an integration went unstable."""


class GridMismatchError(VlcSimError, ValueError):
    """Frequency responses on different grids were combined."""


class BandwidthExceedsGridError(VlcSimError, ValueError):
    """No -3 dB crossing was found inside the frequency grid."""


class CurveFormatError(DomainError):
    """A measured-curve file is malformed; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class FitError(NumericalError):
    """A fit failed to converge; ``best`` holds the best parameters seen."""

    def __init__(self, message: str, best: dict | None = None):
        self.best = best
        super().__init__(message if best is None else f"{message} (best so far: {best})")
