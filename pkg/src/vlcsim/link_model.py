"""
Frequency-domain view of the VLC link.

Every block (LED, line-of-sight channel, photodiode + TIA, RC post-equalizer)
is a complex transfer function sampled on a common frequency grid. Blocks are
cascaded by pointwise multiplication and the 3-dB bandwidth is read off the
result the same way a network-analyzer trace would be read.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BandwidthExceedsGridError, DomainError, GridMismatchError
from .led_device import LedParams, OperatingPoint, equivalent_bandwidth

# pole_ratio that places the equalized EOE bandwidth of the default card at
# 40 MHz for a 450 mA bias; produced by tune_pole_ratio() and frozen here
DEFAULT_POLE_RATIO = 5.5339


@dataclass(frozen=True)
class FrequencyResponse:
    freqs: np.ndarray
    gains: np.ndarray
    reference_gain: complex = None

    def __post_init__(self):
        f = np.array(self.freqs, dtype=float)
        g = np.array(self.gains, dtype=complex)
        if f.ndim != 1 or f.shape != g.shape:
            raise DomainError("freqs and gains must be 1-D arrays of equal length")
        if f.size == 0:
            raise DomainError("empty frequency grid")
        if np.any(np.diff(f) <= 0):
            raise DomainError("freqs must be strictly increasing")
        if not np.all(np.isfinite(g)):
            raise DomainError("gains contain NaN or Inf")
        f.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "gains", g)
        ref = g[0] if self.reference_gain is None else complex(self.reference_gain)
        object.__setattr__(self, "reference_gain", ref)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.gains)

    def magnitude_db(self) -> np.ndarray:
        """Magnitude in dB relative to |reference_gain|."""
        return 20 * np.log10(np.abs(self.gains) / abs(self.reference_gain))

    def phase_deg(self) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.gains)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["freq_Hz", "mag_dB", "phase_deg"])
        for f, m, ph in zip(self.freqs, self.magnitude_db(), self.phase_deg()):
            writer.writerow([repr(float(f)), repr(float(m)), repr(float(ph))])
        return buf.getvalue()


@dataclass(frozen=True)
class EqualizerConfig:
    """Shunt RC high-boost network; the zero sits at 1/(2 pi R C)."""

    R: float = 1e3
    C: float = 30e-12
    pole_ratio: float = DEFAULT_POLE_RATIO

    def __post_init__(self):
        if not (self.R > 0 and self.C > 0):
            raise DomainError("equalizer R and C must be > 0")
        if not self.pole_ratio > 1:
            raise DomainError("equalizer pole_ratio must be > 1")

    @property
    def f_zero(self) -> float:
        return 1.0 / (2 * math.pi * self.R * self.C)

    @property
    def f_pole(self) -> float:
        return self.pole_ratio * self.f_zero


@dataclass(frozen=True)
class LinkConfig:
    """Channel and receiver settings.

    If ``channel_gain`` is None the line-of-sight gain is computed from the
    Lambertian parameters; otherwise it is used verbatim.
    """

    distance: float = 1.0  # m
    channel_gain: Optional[float] = None
    semi_angle_deg: float = 60.0  # transmitter half-power semi-angle
    rx_area: float = 0.8e-6  # m^2
    lens_gain: float = 340.0  # concentrator gain, calibrated for the default link
    pd_responsivity: float = 0.45  # A/W
    pd_bandwidth: float = 150e6  # Hz
    tia_gain: float = 1e4  # V/A
    noise_rms: float = 1.5e-3  # V, output referred
    equalizer: Optional[EqualizerConfig] = field(default_factory=EqualizerConfig)

    def __post_init__(self):
        for name in ("distance", "rx_area", "lens_gain", "pd_responsivity", "pd_bandwidth", "tia_gain"):
            if not getattr(self, name) > 0:
                raise DomainError(f"LinkConfig.{name} must be > 0")
        if not 0 < self.semi_angle_deg < 90:
            raise DomainError("semi_angle_deg must be in (0, 90)")
        if self.channel_gain is not None and not self.channel_gain > 0:
            raise DomainError("channel_gain must be > 0")
        if not self.noise_rms >= 0:
            raise DomainError("noise_rms must be >= 0")

    def to_dict(self) -> dict:
        data = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "equalizer"}
        eq = self.equalizer
        data["equalizer"] = None if eq is None else {"R": eq.R, "C": eq.C, "pole_ratio": eq.pole_ratio}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "LinkConfig":
        data = dict(data)
        eq = data.pop("equalizer", None)
        return cls(equalizer=None if eq is None else EqualizerConfig(**eq), **data)


def default_grid(f_min: float = 1e5, f_max: float = 1e9, points_per_decade: int = 50) -> np.ndarray:
    """Logarithmic grid, endpoints included."""
    decades = math.log10(f_max / f_min)
    n = int(round(decades * points_per_decade)) + 1
    return np.logspace(math.log10(f_min), math.log10(f_max), n)


def _grid(f_grid) -> np.ndarray:
    return default_grid() if f_grid is None else np.asarray(f_grid, dtype=float)


def _single_pole(f, f_pole):
    return 1.0 / (1.0 + 1j * f / f_pole)


def led_response(op_point: OperatingPoint, f_grid=None) -> FrequencyResponse:
    """One real pole at f_led scaled by the small-signal slope dP/dI (W/A)."""
    f = _grid(f_grid)
    return FrequencyResponse(f, op_point.dP_dI * _single_pole(f, op_point.f_led), op_point.dP_dI)


def channel_gain(cfg: LinkConfig) -> float:
    """Line-of-sight DC gain at normal incidence, (m+1) A_rx G / (2 pi d^2)."""
    if cfg.channel_gain is not None:
        return cfg.channel_gain
    m = -math.log(2) / math.log(math.cos(math.radians(cfg.semi_angle_deg)))
    return (m + 1) * cfg.rx_area * cfg.lens_gain / (2 * math.pi * cfg.distance ** 2)


def receiver_response(cfg: LinkConfig, f_grid=None) -> FrequencyResponse:
    """Photodiode responsivity times TIA gain behind a pole at pd_bandwidth (V/W)."""
    f = _grid(f_grid)
    dc = cfg.pd_responsivity * cfg.tia_gain
    return FrequencyResponse(f, dc * _single_pole(f, cfg.pd_bandwidth), dc)


def channel_response(cfg: LinkConfig, f_grid=None) -> FrequencyResponse:
    f = _grid(f_grid)
    g = channel_gain(cfg)
    return FrequencyResponse(f, np.full(f.shape, g, dtype=complex), g)


def equalizer_response(eq: EqualizerConfig, f_grid=None) -> FrequencyResponse:
    """(1/r) (1 + j f/f_z) / (1 + j f/(r f_z)): DC gain 1/r, unity at high frequency."""
    f = _grid(f_grid)
    r = eq.pole_ratio
    h = (1.0 + 1j * f / eq.f_zero) / (1.0 + 1j * f / eq.f_pole) / r
    return FrequencyResponse(f, h, 1.0 / r)


def cascade(blocks: Sequence[FrequencyResponse]) -> FrequencyResponse:
    if not blocks:
        raise DomainError("cascade needs at least one block")
    f = blocks[0].freqs
    for b in blocks:
        if b.freqs.shape != f.shape or not np.array_equal(b.freqs, f):
            raise GridMismatchError("cascade requires identical frequency grids")
    # a canonical multiplication order makes the result independent of block order bit for bit
    ordered = sorted(blocks, key=lambda b: (b.gains.tobytes(), complex(b.reference_gain).real))
    gains = ordered[0].gains
    ref = complex(ordered[0].reference_gain)
    for b in ordered[1:]:
        gains = _cmul(gains, b.gains)
        ref = ref * b.reference_gain
    return FrequencyResponse(f, gains, ref)


def _cmul(a, b):
    # explicit real arithmetic; vectorized complex products may fuse operations
    re = a.real * b.real - a.imag * b.imag
    im = a.real * b.imag + a.imag * b.real
    return re + 1j * im


def extract_3db(resp: FrequencyResponse) -> float:
    """Lowest frequency where |H| falls to |H(f_min)|/sqrt(2).

    The crossing is interpolated linearly in dB against log-frequency.
    """
    mag_db = 20 * np.log10(np.maximum(resp.magnitude, 1e-300))
    target = mag_db[0] - 10 * math.log10(2)
    below = np.nonzero(mag_db <= target)[0]
    below = below[below > 0]
    if below.size == 0:
        raise BandwidthExceedsGridError(
            f"response stays above -3 dB up to {resp.freqs[-1]:.4g} Hz"
        )
    k = below[0]
    x0, x1 = math.log10(resp.freqs[k - 1]), math.log10(resp.freqs[k])
    y0, y1 = mag_db[k - 1], mag_db[k]
    x = x0 + (target - y0) * (x1 - x0) / (y1 - y0)
    return 10 ** x


def eoe_response(op_point: OperatingPoint, cfg: LinkConfig, f_grid=None, equalized: bool = False):
    """LED -> channel -> receiver (-> equalizer) cascade."""
    f = _grid(f_grid)
    blocks = [led_response(op_point, f), channel_response(cfg, f), receiver_response(cfg, f)]
    if equalized:
        if cfg.equalizer is None:
            raise DomainError("equalized response requested but no equalizer configured")
        blocks.append(equalizer_response(cfg.equalizer, f))
    return cascade(blocks)


@dataclass(frozen=True)
class SweepRow:
    current_A: float
    tau_s_s: float
    tau_c_s: float
    f3db_Hz: float


CHAINS = ("led", "eoe", "equalized")


def bandwidth_vs_bias_sweep(
    currents: Sequence[float],
    p: LedParams,
    cfg: LinkConfig,
    chain: str = "led",
    f_grid=None,
) -> list[SweepRow]:
    """3-dB bandwidth per bias current for the LED alone or the full link.

    ``chain`` selects ``"led"`` (LED block only), ``"eoe"`` (LED, channel,
    receiver) or ``"equalized"`` (EOE plus the post-equalizer).
    """
    if chain not in CHAINS:
        raise DomainError(f"chain must be one of {CHAINS}")
    f = _grid(f_grid)
    rows = []
    for current in sorted(currents):
        op = equivalent_bandwidth(current, p)
        if chain == "led":
            # the LED's bandwidth does not depend on its slope, which is zero below turn-on
            resp = FrequencyResponse(f, _single_pole(f, op.f_led))
        elif op.dP_dI == 0:
            raise DomainError(f"no modulation response at {current!r} A (at or below turn-on)")
        else:
            resp = eoe_response(op, cfg, f, equalized=chain == "equalized")
        rows.append(SweepRow(float(current), op.tau_s, op.tau_c, extract_3db(resp)))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow], with_taus: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if with_taus:
        writer.writerow(["current_A", "tau_s_s", "tau_c_s", "f3db_Hz"])
        for r in rows:
            writer.writerow([repr(r.current_A), repr(r.tau_s_s), repr(r.tau_c_s), repr(r.f3db_Hz)])
    else:
        writer.writerow(["current_A", "f3db_Hz"])
        for r in rows:
            writer.writerow([repr(r.current_A), repr(r.f3db_Hz)])
    return buf.getvalue()


def sweep_to_json(rows: Sequence[SweepRow]) -> str:
    return json.dumps([{"current_A": r.current_A, "f3db_Hz": r.f3db_Hz} for r in rows], indent=2)


def tune_pole_ratio(
    op_point: OperatingPoint,
    cfg: LinkConfig,
    target_hz: float = 40e6,
    f_grid=None,
) -> float:
    """pole_ratio that puts the equalized EOE 3-dB bandwidth at ``target_hz``."""
    from scipy.optimize import brentq

    eq = cfg.equalizer or EqualizerConfig()

    def miss(ratio):
        trial = LinkConfig.from_dict({**cfg.to_dict(), "equalizer": {"R": eq.R, "C": eq.C, "pole_ratio": ratio}})
        return extract_3db(eoe_response(op_point, trial, f_grid, equalized=True)) - target_hz

    return brentq(miss, 1.0 + 1e-6, 1e3, xtol=1e-10)
