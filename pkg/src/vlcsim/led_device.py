"""
LED device physics.

ABC recombination model, carrier-density inversion, differential lifetime,
parasitic I-V characteristic, depletion-capacitance delay and the resulting
bias-dependent 3-dB modulation bandwidth.

Units: amperes, volts, seconds, carrier densities in cm^-3 and recombination
coefficients in the cm-based units customary for ABC models (A in 1/s,
B in cm^3/s, C in cm^6/s, active volume in cm^3).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import CapacitanceModelError, DomainError, NumericalError

Q_ELECTRON = 1.602176634e-19  # C
K_BOLTZMANN_EV = 8.617333262e-5  # eV/K

_MAX_ITER = 200


@dataclass(frozen=True)
class LedParams:
    """Device constants for one LED chip (and the series-chip count)."""

    A: float  # SRH coefficient, 1/s
    B: float  # radiative coefficient, cm^3/s
    C: float  # Auger coefficient, cm^6/s
    active_volume: float  # area x total QW thickness, cm^3
    I0: float  # saturation current, A
    n_ideality: float
    Vt: float = 0.02585  # thermal voltage, V
    Rs: float = 0.0  # series resistance, ohm
    Rp: float = math.inf  # shunt resistance, ohm
    C0: float = 1e-9  # zero-bias space-charge capacitance, F
    phi: float = 3.3  # built-in potential, V
    eta_ext: float = 1.0  # lumped electro-optic factor, W/A
    Eg: float = 2.7  # bandgap for the lineshape, eV
    kT_lineshape: float = 0.02585  # eV
    n_series: int = 1
    I_turn_on: float = 0.0  # A

    def __post_init__(self):
        positive = ("A", "B", "active_volume", "I0", "n_ideality", "Vt", "C0", "phi")
        for name in positive:
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"LedParams.{name} must be finite and > 0, got {value!r}")
        if not (self.C >= 0 and math.isfinite(self.C)):
            raise DomainError(f"LedParams.C must be >= 0, got {self.C!r}")
        if not (self.Rs >= 0 and math.isfinite(self.Rs)):
            raise DomainError(f"LedParams.Rs must be >= 0, got {self.Rs!r}")
        if not self.Rp > 0:
            raise DomainError(f"LedParams.Rp must be > 0 or inf, got {self.Rp!r}")
        if not (self.eta_ext >= 0 and math.isfinite(self.eta_ext)):
            raise DomainError(f"LedParams.eta_ext must be >= 0, got {self.eta_ext!r}")
        if not self.kT_lineshape > 0:
            raise DomainError("LedParams.kT_lineshape must be > 0")
        if int(self.n_series) != self.n_series or self.n_series < 1:
            raise DomainError(f"LedParams.n_series must be an integer >= 1, got {self.n_series!r}")
        if not self.I_turn_on >= 0:
            raise DomainError(f"LedParams.I_turn_on must be >= 0, got {self.I_turn_on!r}")

    @property
    def q_volume(self) -> float:
        """q * active_volume, converts a recombination rate density to amperes."""
        return Q_ELECTRON * self.active_volume

    def replace(self, **changes) -> "LedParams":
        data = asdict(self)
        data.update(changes)
        return LedParams(**data)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["Rp"] = None if math.isinf(self.Rp) else self.Rp
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "LedParams":
        data = dict(data)
        if data.get("Rp") is None:
            data["Rp"] = math.inf
        data["n_series"] = int(data.get("n_series", 1))
        return cls(**data)


@dataclass(frozen=True)
class OperatingPoint:
    """Quantities derived from a DC bias current."""

    I_dc: float
    N: float
    v_d: float
    v_terminal: float
    tau_s: float
    tau_c: float
    f_led: float
    dP_dI: float = field(default=0.0)

    @property
    def f_s(self) -> float:
        """Bandwidth limited by carrier lifetime alone."""
        return 1.0 / (2 * math.pi * self.tau_s)

    @property
    def f_c(self) -> float:
        """Bandwidth limited by the space-charge capacitance alone."""
        return math.inf if self.tau_c == 0 else 1.0 / (2 * math.pi * self.tau_c)


# ---------------------------------------------------------------------------
# ABC recombination
# ---------------------------------------------------------------------------

def _rate(N, p: LedParams):
    return p.A * N + p.B * N * N + p.C * N * N * N


def recombination_current(N, p: LedParams):
    """Total current q*V*(A N + B N^2 + C N^3) carried by a carrier density N."""
    if np.any(np.asarray(N) < 0):
        raise DomainError("carrier density must be >= 0")
    return p.q_volume * _rate(N, p)


def solve_carrier_density(I: float, p: LedParams) -> float:
    """Invert the ABC current relation for the unique nonnegative root.

    Safeguarded Newton iteration inside a bisection bracket. The bracket's
    upper end starts at the SRH-only estimate I/(qVA) and is grown
    geometrically until it encloses the root.
    """
    if not I >= 0:
        raise DomainError(f"current must be >= 0, got {I!r}")
    if I == 0:
        return 0.0
    target = I / p.q_volume
    lo, hi = 0.0, target / p.A
    for _ in range(_MAX_ITER):
        if _rate(hi, p) >= target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise NumericalError("could not bracket carrier density")
    # tighter starting point than the SRH bound when B or C dominate
    N = min(hi, math.sqrt(target / p.B))
    if p.C > 0:
        N = min(N, (target / p.C) ** (1.0 / 3.0))
    for _ in range(_MAX_ITER):
        g = _rate(N, p) - target
        if g > 0:
            hi = N
        else:
            lo = N
        if abs(g) <= 1e-15 * target:
            return N
        dg = p.A + 2 * p.B * N + 3 * p.C * N * N
        step = N - g / dg
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if abs(step - N) <= 1e-15 * max(N, 1.0):
            return step
        N = step
        if hi - lo <= 1e-15 * hi:
            return N
    raise NumericalError(f"carrier density solve did not converge for I={I!r}")


def internal_quantum_efficiency(N: float, p: LedParams) -> float:
    """Radiative fraction B N^2 / (A N + B N^2 + C N^3)."""
    if not N > 0:
        raise DomainError("IQE needs a carrier density > 0")
    return p.B * N / (p.A + p.B * N + p.C * N * N)


def differential_lifetime(N: float, p: LedParams) -> float:
    """Small-signal lifetime from d(rate)/dN = A + 2 B N + 3 C N^2."""
    if not N >= 0:
        raise DomainError("carrier density must be >= 0")
    return 1.0 / (p.A + 2 * p.B * N + 3 * p.C * N * N)


def lifetime_from_current(I: float, p: LedParams) -> float:
    """Lifetime as a function of current, neglecting Auger recombination:
    1/tau^2 = A^2 + 4 B I / (q V)."""
    if not I >= 0:
        raise DomainError(f"current must be >= 0, got {I!r}")
    return 1.0 / math.sqrt(p.A * p.A + 4 * p.B * I / p.q_volume)


# ---------------------------------------------------------------------------
# I-V characteristic
# ---------------------------------------------------------------------------

def junction_voltage(I: float, p: LedParams) -> float:
    """Ideal-diode junction voltage n Vt ln(I/I0), per chip."""
    if not I > 0:
        raise DomainError(f"junction voltage needs I > 0, got {I!r}")
    return p.n_ideality * p.Vt * math.log(I / p.I0)


def _chip_current(v: float, p: LedParams) -> float:
    nvt = p.n_ideality * p.Vt
    if p.Rs == 0:
        return v / p.Rp + p.I0 * math.exp(v / nvt)

    def residual(I):
        vd = v - I * p.Rs
        return I - vd / p.Rp - p.I0 * math.exp(vd / nvt)

    # at I = v/Rs the junction sees no voltage; near v = 0 fall back to the Rs-free current
    hi = v / p.Rs
    if residual(hi) <= 0:
        hi = v / p.Rp + p.I0 * math.exp(v / nvt)
        if residual(hi) < 0:
            raise NumericalError(f"I-V bracket failure at v={v!r}")
    try:
        return brentq(residual, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (RuntimeError, ValueError) as exc:
        raise NumericalError(f"I-V solve failed at v={v!r}: {exc}") from exc


def solve_iv(v_terminal: float, p: LedParams) -> float:
    """Current through the series chain at a terminal voltage.

    Each chip obeys I - (v - I Rs)/Rp = I0 exp((v - I Rs)/(n Vt)) with the
    terminal voltage split equally across the n_series chips.
    """
    if not (v_terminal >= 0 and math.isfinite(v_terminal)):
        raise DomainError(f"terminal voltage must be finite and >= 0, got {v_terminal!r}")
    return _chip_current(v_terminal / p.n_series, p)


def terminal_voltage(I: float, p: LedParams) -> float:
    """Voltage across all series chips, including the Rs drop, at current I."""
    if not I > 0:
        raise DomainError(f"terminal voltage needs I > 0, got {I!r}")
    nvt = p.n_ideality * p.Vt
    if math.isinf(p.Rp):
        vd = junction_voltage(I, p)
    else:
        # residual is increasing in vd; bracket the root between 0 and the Rp-free value
        def residual(vd):
            return vd / p.Rp + p.I0 * math.exp(vd / nvt) - I

        if I > p.I0:
            lo, hi = 0.0, nvt * math.log(I / p.I0)
        else:
            lo, hi = (I - p.I0) * p.Rp, 0.0
        if lo == hi:
            vd = lo
        else:
            vd = brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return p.n_series * (vd + I * p.Rs)


# ---------------------------------------------------------------------------
# Bandwidth
# ---------------------------------------------------------------------------

def capacitance_time_constant(I: float, p: LedParams) -> float:
    """Rs * C0 / sqrt(1 - v_d/phi): series resistance times depletion capacitance."""
    vd = junction_voltage(I, p)
    if vd >= p.phi:
        raise CapacitanceModelError(
            f"bias beyond capacitance-model validity: v_d={vd:.4f} V >= phi={p.phi:.4f} V at I={I!r} A"
        )
    return p.Rs * p.C0 / math.sqrt(1.0 - vd / p.phi)


def equivalent_bandwidth(I: float, p: LedParams) -> OperatingPoint:
    """Populate the operating point at DC bias I, including f_LED = 1/(2 pi (tau_s + tau_c))."""
    tau_s = lifetime_from_current(I, p)
    tau_c = capacitance_time_constant(I, p)
    f_led = 1.0 / (2 * math.pi * (tau_s + tau_c))
    slope = small_signal_slope(I, p) if I > p.I_turn_on else 0.0
    return OperatingPoint(
        I_dc=I,
        N=solve_carrier_density(I, p),
        v_d=junction_voltage(I, p),
        v_terminal=terminal_voltage(I, p),
        tau_s=tau_s,
        tau_c=tau_c,
        f_led=f_led,
        dP_dI=slope,
    )


# ---------------------------------------------------------------------------
# Electro-optic transfer
# ---------------------------------------------------------------------------

def static_optical_power(I: float, p: LedParams) -> float:
    """DC optical output eta_ext * IQE * I, zero below the turn-on current."""
    if not I >= 0:
        raise DomainError(f"current must be >= 0, got {I!r}")
    if I == 0 or I < p.I_turn_on:
        return 0.0
    N = solve_carrier_density(I, p)
    return p.eta_ext * p.q_volume * p.B * N * N


def small_signal_slope(I: float, p: LedParams, rel_step: float = 1e-4) -> float:
    """dP/dI by central finite difference of the static L-I curve."""
    if not I > p.I_turn_on:
        raise DomainError(f"slope needs I > I_turn_on ({p.I_turn_on!r} A), got {I!r}")
    h = rel_step * I
    lo = I - h
    if lo < p.I_turn_on:
        return (static_optical_power(I + h, p) - static_optical_power(I, p)) / h
    return (static_optical_power(I + h, p) - static_optical_power(lo, p)) / (2 * h)


def emission_spectrum(E_grid, p: LedParams) -> np.ndarray:
    """Lineshape sqrt(E - Eg) exp(-E/kT), zero below the gap, peak normalised to 1."""
    E = np.asarray(E_grid, dtype=float)
    if E.ndim != 1 or E.size == 0:
        raise DomainError("energy grid must be a non-empty 1-D sequence")
    if np.any(np.diff(E) <= 0):
        raise DomainError("energy grid must be strictly increasing")
    if E[-1] <= p.Eg:
        raise DomainError("energy grid must extend above the bandgap")
    x = np.clip(E - p.Eg, 0.0, None)
    # shift the exponent by Eg to avoid underflow; normalisation removes it
    spectrum = np.sqrt(x) * np.exp(-x / p.kT_lineshape)
    return spectrum / spectrum.max()
