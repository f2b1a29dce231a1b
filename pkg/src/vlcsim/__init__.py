"""Physical-layer simulator for white-LED visible light communication links."""

__version__ = "0.1.0"

from .calibration import DeviceCard, MeasuredCurve, fit_bandwidth, fit_iv, fit_li, load_default_card
from .errors import (
    BandwidthExceedsGridError,
    CapacitanceModelError,
    CurveFormatError,
    DomainError,
    FitError,
    GridMismatchError,
    NumericalError,
    VlcSimError,
)
from .led_device import LedParams, OperatingPoint, equivalent_bandwidth
from .link_model import EqualizerConfig, FrequencyResponse, LinkConfig, eoe_response, extract_3db
from .waveform_sim import BerResult, WaveformConfig, optimize_bias, run_ber

__all__ = [
    "BandwidthExceedsGridError",
    "BerResult",
    "CapacitanceModelError",
    "CurveFormatError",
    "DeviceCard",
    "DomainError",
    "EqualizerConfig",
    "FitError",
    "FrequencyResponse",
    "GridMismatchError",
    "LedParams",
    "LinkConfig",
    "MeasuredCurve",
    "NumericalError",
    "OperatingPoint",
    "VlcSimError",
    "WaveformConfig",
    "eoe_response",
    "equivalent_bandwidth",
    "extract_3db",
    "fit_bandwidth",
    "fit_iv",
    "fit_li",
    "load_default_card",
    "optimize_bias",
    "run_ber",
]
