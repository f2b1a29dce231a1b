"""
Time-domain Monte Carlo link simulation.

PRBS OOK-NRZ source -> bias-tee -> nonlinear LED (RC input stage plus ABC
rate equation, fixed-step RK4) -> channel -> photodiode/TIA with noise ->
discrete RC post-equalizer -> bit-centre slicer -> BER with a Wilson interval.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .errors import DomainError, NumericalError
from .led_device import (
    LedParams,
    capacitance_time_constant,
    solve_carrier_density,
    static_optical_power,
)
from .link_model import EqualizerConfig, LinkConfig, channel_gain

DEFAULT_SEED = 20160601
TRANSIENT_BITS = 20
MIN_COUNTED_BITS = 100
_Z95 = 1.959963984540054

# feedback taps (1-based stage numbers) of maximal-length Fibonacci LFSRs
PRBS_TAPS = {
    7: (7, 6),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    15: (15, 14),
    23: (23, 18),
    31: (31, 28),
}


@dataclass(frozen=True)
class WaveformConfig:
    data_rate: float  # bit/s
    i_dc: float  # A
    prbs_order: int = 10
    vpp: float = 2.5  # V
    samples_per_bit: int = 32
    n_bits: int = 100_000
    rng_seed: int = DEFAULT_SEED
    drive_transconductance: float = 0.2  # A/V, gives 250 mA AC swing at 2.5 Vpp
    equalizer_enabled: bool = True
    threshold_mode: str = "midpoint"

    def __post_init__(self):
        if not self.data_rate > 0:
            raise DomainError("data_rate must be > 0")
        if not self.i_dc >= 0:
            raise DomainError("i_dc must be >= 0")
        if self.samples_per_bit < 8:
            raise DomainError("samples_per_bit must be >= 8")
        if self.n_bits < 1:
            raise DomainError("n_bits must be >= 1")
        if self.threshold_mode not in ("midpoint", "optimal"):
            raise DomainError("threshold_mode must be 'midpoint' or 'optimal'")
        if self.prbs_order not in PRBS_TAPS:
            raise DomainError(f"unsupported PRBS order {self.prbs_order}")

    @property
    def dt(self) -> float:
        return 1.0 / (self.data_rate * self.samples_per_bit)

    @property
    def swing(self) -> float:
        """Peak current deviation g * vpp / 2."""
        return self.drive_transconductance * self.vpp / 2


@dataclass(frozen=True)
class BerResult:
    bits: int
    errors: int
    ber: float
    ci95_low: float
    ci95_high: float
    snr_estimate: float
    threshold: float = math.nan


@dataclass
class WaveformRun:
    """One transmission: its configuration, sampled signals and outcome."""

    config: WaveformConfig
    bits: np.ndarray
    current: np.ndarray
    optical_power: np.ndarray
    received: np.ndarray
    equalized: np.ndarray
    result: BerResult


# ---------------------------------------------------------------------------
# Source
# ---------------------------------------------------------------------------

def prbs_sequence(order: int = 10, seed: int = 0x3FF, n_bits: Optional[int] = None) -> np.ndarray:
    """Maximal-length LFSR sequence; one period unless ``n_bits`` is given,
    in which case the period is repeated cyclically."""
    if order not in PRBS_TAPS:
        raise DomainError(f"unsupported PRBS order {order}")
    mask = (1 << order) - 1
    state = seed & mask
    if state == 0:
        raise DomainError("PRBS seed must be nonzero")
    t1, t2 = PRBS_TAPS[order]
    period = mask
    out = np.empty(period, dtype=np.uint8)
    for k in range(period):
        bit = ((state >> (t1 - 1)) ^ (state >> (t2 - 1))) & 1
        out[k] = bit
        state = ((state << 1) | bit) & mask
    if n_bits is None:
        return out
    return np.resize(out, n_bits)


def drive_waveform(bits, cfg: WaveformConfig) -> np.ndarray:
    """Bias-tee output I_dc + g * v_ac(t) for rectangular NRZ at +/- vpp/2."""
    bits = np.asarray(bits)
    v_ac = np.where(bits > 0, 0.5 * cfg.vpp, -0.5 * cfg.vpp)
    return cfg.i_dc + cfg.drive_transconductance * np.repeat(v_ac, cfg.samples_per_bit)


# ---------------------------------------------------------------------------
# Nonlinear LED
# ---------------------------------------------------------------------------

def _rk4(i_in, p: LedParams, dt: float, tau_c: float, N0: float, if0: float, substeps: int):
    """Integrate the RC stage and the carrier rate equation sample by sample.

    Input is held constant across each sample interval. Returns the carrier
    density and the filtered current at the end of every sample, plus the
    final state.
    """
    qv = p.q_volume
    A, B, C = p.A, p.B, p.C
    h = dt / substeps
    rc = 1.0 / tau_c if tau_c > 0 else 0.0
    n_out = np.empty(len(i_in))
    f_out = np.empty(len(i_in))
    N, i_f = N0, if0
    for k, i_k in enumerate(i_in.tolist()):
        for _ in range(substeps):
            if rc:
                d1 = (i_k - i_f) * rc
                f2 = i_f + 0.5 * h * d1
                d2 = (i_k - f2) * rc
                f3 = i_f + 0.5 * h * d2
                d3 = (i_k - f3) * rc
                f4 = i_f + h * d3
                d4 = (i_k - f4) * rc
            else:
                f2 = f3 = f4 = i_k
                d1 = d2 = d3 = d4 = 0.0
                i_f = i_k
            k1 = i_f / qv - N * (A + N * (B + C * N))
            n2 = N + 0.5 * h * k1
            k2 = f2 / qv - n2 * (A + n2 * (B + C * n2))
            n3 = N + 0.5 * h * k2
            k3 = f3 / qv - n3 * (A + n3 * (B + C * n3))
            n4 = N + h * k3
            k4 = f4 / qv - n4 * (A + n4 * (B + C * n4))
            N = N + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            i_f = i_f + h / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
        if not (N >= 0 and math.isfinite(N)):
            raise NumericalError(
                f"rate-equation integration unstable at sample {k} (N={N!r}); use a smaller dt"
            )
        n_out[k] = N
        f_out[k] = i_f
    return n_out, f_out, N, i_f


def _power(N, i_f, p: LedParams):
    P = p.eta_ext * p.q_volume * p.B * N * N
    return np.where(i_f < p.I_turn_on, 0.0, P)


def stable_substeps(p: LedParams, dt: float, i_max: float, safety: float = 0.5) -> int:
    """Substeps per sample so that h / tau_min stays below ``safety``.

    tau_min is the differential lifetime at the largest current in the run;
    the RC stage is included via its own time constant.
    """
    N = solve_carrier_density(max(i_max, 0.0), p)
    rate = p.A + 2 * p.B * N + 3 * p.C * N * N
    return max(1, math.ceil(dt * rate / safety))


def led_dynamic_transmit(
    i_t,
    p: LedParams,
    dt: float,
    i_dc: Optional[float] = None,
    substeps: int = 1,
    return_state: bool = False,
):
    """Optical power waveform from a drive-current waveform.

    The drive passes a first-order RC stage whose time constant is tau_c
    frozen at the DC bias, then feeds the ABC rate equation
    dN/dt = i_f/(qV) - (A N + B N^2 + C N^3), integrated with classical
    RK4. Output power is eta_ext q V B N^2, forced to zero while the
    filtered current is below I_turn_on. The diode blocks reverse drive, so
    negative currents are clipped to zero.
    """
    i_t = np.asarray(i_t, dtype=float)
    if i_dc is None:
        i_dc = float(np.mean(i_t))
    i_in = np.maximum(i_t, 0.0)
    tau_c = capacitance_time_constant(i_dc, p)
    N0 = solve_carrier_density(i_dc, p)
    n_arr, f_arr, _, _ = _rk4(i_in, p, dt, tau_c, N0, i_dc, substeps)
    P = _power(n_arr, f_arr, p)
    if return_state:
        return P, n_arr, f_arr
    return P


def small_signal_gain(
    p: LedParams,
    i_dc: float,
    freq: float,
    depth: float = 0.01,
    points_per_cycle: int = 64,
    cycles: int = 8,
) -> float:
    """|dP/dI| of the nonlinear transmitter at one modulation frequency.

    Drives i_dc (1 + depth sin(2 pi f t)), waits ten LED time constants and
    demodulates the fundamental of P(t) over ``cycles`` periods (lock-in).
    """
    if not (freq > 0 and 0 < depth < 1):
        raise DomainError("need freq > 0 and 0 < depth < 1")
    dt = 1.0 / (freq * points_per_cycle)
    tau = capacitance_time_constant(i_dc, p) + 1.0 / (p.A + 2 * p.B * solve_carrier_density(i_dc, p))
    n_settle = int(math.ceil(10 * tau * freq)) + 1
    n = (n_settle + cycles) * points_per_cycle
    t_mid = (np.arange(n) + 0.5) * dt  # drive is held over each step
    i_t = i_dc * (1 + depth * np.sin(2 * math.pi * freq * t_mid))
    substeps = stable_substeps(p, dt, i_dc * (1 + depth))
    P = led_dynamic_transmit(i_t, p, dt, i_dc=i_dc, substeps=substeps)
    seg = slice(n_settle * points_per_cycle, n)
    t_end = (np.arange(n) + 1) * dt
    tone = np.exp(-2j * math.pi * freq * t_end[seg])
    fundamental = 2 * np.mean((P[seg] - P[seg].mean()) * tone)
    return float(abs(fundamental) / (i_dc * depth))


def small_signal_3db(p: LedParams, i_dc: float, f_lo: float = 1e5, depth: float = 0.01) -> float:
    """-3 dB frequency of the nonlinear transmitter measured by lock-in sweeps."""
    from scipy.optimize import brentq

    g0 = small_signal_gain(p, i_dc, f_lo, depth)
    target = g0 / math.sqrt(2)
    hi = 1e6
    while small_signal_gain(p, i_dc, hi, depth) > target:
        hi *= 2
        if hi > 1e10:
            raise NumericalError("no -3 dB point below 10 GHz")
    return brentq(lambda f: small_signal_gain(p, i_dc, f, depth) - target, hi / 2 if hi > 1e6 else f_lo, hi,
                  xtol=1e3, rtol=1e-5)


def _transmit_periodic(i_period, n_periods_total, p, dt, i_dc, substeps, tol=1e-12, max_periods=50):
    """LED response to a periodic drive, integrating only until the state at
    period boundaries repeats and tiling the settled period afterwards."""
    i_in = np.maximum(i_period, 0.0)
    tau_c = capacitance_time_constant(i_dc, p)
    N, i_f = solve_carrier_density(i_dc, p), i_dc
    periods = []
    for _ in range(min(n_periods_total, max_periods)):
        n_arr, f_arr, N_end, if_end = _rk4(i_in, p, dt, tau_c, N, i_f, substeps)
        periods.append(_power(n_arr, f_arr, p))
        settled = abs(N_end - N) <= tol * max(N_end, 1.0) and abs(if_end - i_f) <= tol * max(abs(if_end), 1e-3)
        N, i_f = N_end, if_end
        if settled:
            break
    else:
        if n_periods_total > max_periods:
            raise NumericalError("LED response did not settle to a periodic steady state")
    head = np.concatenate(periods)
    remaining = n_periods_total - len(periods)
    if remaining <= 0:
        return head
    return np.concatenate([head, np.tile(periods[-1], remaining)])


# ---------------------------------------------------------------------------
# Receiver and equalizer
# ---------------------------------------------------------------------------

def _pd_filter(cfg: LinkConfig, dt: float):
    """Bilinear single-pole low-pass prewarped to pd_bandwidth."""
    half = math.pi * cfg.pd_bandwidth * dt
    if half >= math.pi / 2:
        raise DomainError("pd_bandwidth must lie below the Nyquist frequency of the sample grid")
    alpha = 1.0 / math.tan(half)
    b = np.array([1.0, 1.0]) / (1.0 + alpha)
    a = np.array([1.0, (1.0 - alpha) / (1.0 + alpha)])
    return b, a


def _filter_from_rest(b, a, x):
    """lfilter starting in the steady state of the first input sample."""
    zi = signal.lfilter_zi(b, a) * x[0]
    y, _ = signal.lfilter(b, a, x, zi=zi)
    return y


def receiver_noise(n: int, cfg: LinkConfig, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise band-limited by the photodiode pole, scaled so its
    stationary RMS equals cfg.noise_rms."""
    if cfg.noise_rms == 0:
        return np.zeros(n)
    b, a = _pd_filter(cfg, dt)
    pole = -a[1]
    gain = math.sqrt(2 * b[0] ** 2 / (1 - pole))
    w = rng.standard_normal(n) * (cfg.noise_rms / gain)
    return signal.lfilter(b, a, w)


def receive(P, cfg: LinkConfig, wcfg: WaveformConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Photodiode + TIA output voltage for optical power P(t) at the LED."""
    P = np.asarray(P, dtype=float)
    dt = wcfg.dt
    gain = cfg.tia_gain * cfg.pd_responsivity * channel_gain(cfg)
    b, a = _pd_filter(cfg, dt)
    v = _filter_from_rest(b, a, gain * P)
    if cfg.noise_rms > 0:
        if rng is None:
            rng = np.random.default_rng(wcfg.rng_seed)
        v = v + receiver_noise(len(v), cfg, dt, rng)
    return v


def equalizer_coefficients(eq: EqualizerConfig, dt: float):
    """Bilinear transform of the zero-pole equalizer, prewarped at f_z."""
    wz = 2 * math.pi * eq.f_zero
    if wz * dt / 2 >= math.pi / 2:
        raise DomainError("equalizer zero lies above the Nyquist frequency")
    r = eq.pole_ratio
    # H(s) = (1/r) (1 + s/wz) / (1 + s/(r wz)) = (s + wz) / (s + r wz)
    fs_warp = wz / (2 * math.tan(wz * dt / 2))
    b, a = signal.bilinear([1.0, wz], [1.0, r * wz], fs=fs_warp)
    return b, a


def equalize_discrete(v, eq: Optional[EqualizerConfig], dt: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if eq is None:
        return v.copy()
    b, a = equalizer_coefficients(eq, dt)
    return _filter_from_rest(b, a, v)


# ---------------------------------------------------------------------------
# Decision and BER
# ---------------------------------------------------------------------------

def wilson_interval(errors: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n <= 0:
        raise DomainError("interval needs n > 0")
    phat = errors / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def bit_centre_samples(v, samples_per_bit: int) -> np.ndarray:
    v = np.asarray(v)
    n_bits = len(v) // samples_per_bit
    return v[samples_per_bit // 2: n_bits * samples_per_bit: samples_per_bit]


def slice_and_count(v, bits, wcfg: WaveformConfig, levels: Optional[tuple[float, float]] = None) -> BerResult:
    """Sample at bit centres, decide against a threshold and count errors.

    ``levels`` are the noiseless steady-state (zero, one) levels used by the
    midpoint threshold; without them the class means of the samples are used.
    """
    samples = bit_centre_samples(v, wcfg.samples_per_bit)
    bits = np.asarray(bits)[: len(samples)].astype(bool)
    samples, bits = samples[TRANSIENT_BITS:], bits[TRANSIENT_BITS:]
    n = len(samples)
    if n < MIN_COUNTED_BITS:
        raise DomainError(f"need at least {MIN_COUNTED_BITS} bits after the transient, got {n}")
    ones, zeros = samples[bits], samples[~bits]
    mu1 = ones.mean() if ones.size else math.nan
    mu0 = zeros.mean() if zeros.size else math.nan

    if wcfg.threshold_mode == "midpoint":
        if levels is None:
            levels = (mu0, mu1)
        threshold = 0.5 * (levels[0] + levels[1])
        errors = int(np.count_nonzero((samples > threshold) != bits))
    else:
        grid = np.linspace(samples.min(), samples.max(), 66)[1:-1]
        counts = [int(np.count_nonzero((samples > t) != bits)) for t in grid]
        best = int(np.argmin(counts))
        threshold, errors = float(grid[best]), counts[best]

    lo, hi = wilson_interval(errors, n)
    spread = (ones.std() if ones.size > 1 else 0.0) + (zeros.std() if zeros.size > 1 else 0.0)
    snr = ((mu1 - mu0) / spread) ** 2 if spread > 0 else math.inf
    return BerResult(n, errors, errors / n, lo, hi, float(snr), float(threshold))


# ---------------------------------------------------------------------------
# End-to-end
# ---------------------------------------------------------------------------

def steady_levels(wcfg: WaveformConfig, p: LedParams, cfg: LinkConfig) -> tuple[float, float]:
    """Noiseless steady-state (zero, one) voltages at the slicer input."""
    gain = cfg.tia_gain * cfg.pd_responsivity * channel_gain(cfg)
    if wcfg.equalizer_enabled and cfg.equalizer is not None:
        gain /= cfg.equalizer.pole_ratio
    lo = max(wcfg.i_dc - wcfg.swing, 0.0)
    hi = wcfg.i_dc + wcfg.swing
    return gain * static_optical_power(lo, p), gain * static_optical_power(hi, p)


def simulate_link(wcfg: WaveformConfig, p: LedParams, cfg: LinkConfig) -> WaveformRun:
    """prbs -> drive -> LED -> receive -> equalize -> slice, deterministic in the seed."""
    period = prbs_sequence(wcfg.prbs_order)
    n_periods = -(-wcfg.n_bits // len(period))
    bits = np.resize(period, wcfg.n_bits)
    i_period = drive_waveform(period, wcfg)
    dt = wcfg.dt
    substeps = stable_substeps(p, dt, wcfg.i_dc + wcfg.swing)
    P = _transmit_periodic(i_period, n_periods, p, dt, wcfg.i_dc, substeps)
    P = P[: wcfg.n_bits * wcfg.samples_per_bit]
    current = np.resize(i_period, len(P))
    rng = np.random.default_rng(wcfg.rng_seed)
    v = receive(P, cfg, wcfg, rng)
    eq = cfg.equalizer if wcfg.equalizer_enabled else None
    v_eq = equalize_discrete(v, eq, dt)
    result = slice_and_count(v_eq, bits, wcfg, steady_levels(wcfg, p, cfg))
    return WaveformRun(wcfg, bits, current, P, v, v_eq, result)


def run_ber(wcfg: WaveformConfig, p: LedParams, cfg: LinkConfig) -> BerResult:
    return simulate_link(wcfg, p, cfg).result


def derived_seed(seed: int, index: int) -> int:
    """Per-grid-point seed; independent of execution order."""
    return (seed ^ index) & 0xFFFFFFFFFFFFFFFF


def _run_point(args):
    wcfg, p, cfg = args
    return run_ber(wcfg, p, cfg)


def optimize_bias(
    data_rate: float,
    current_grid: Sequence[float],
    template: WaveformConfig,
    p: LedParams,
    cfg: LinkConfig,
    workers: int = 1,
) -> tuple[float, list[tuple[float, BerResult]]]:
    """Bias current on the grid with the lowest BER; ties go to the lowest current."""
    grid = [float(c) for c in current_grid]
    if not grid:
        raise DomainError("current grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("current grid must be strictly increasing")
    jobs = [
        (replace(template, data_rate=data_rate, i_dc=c, rng_seed=derived_seed(template.rng_seed, k)), p, cfg)
        for k, c in enumerate(grid)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    table = list(zip(grid, results))
    best = min(range(len(grid)), key=lambda k: (results[k].ber, grid[k]))
    return grid[best], table


def eye_diagram_csv(run: WaveformRun, max_bits: int = 2000) -> str:
    """(time within bit, voltage) pairs of the equalized signal after the transient."""
    spb = run.config.samples_per_bit
    start = TRANSIENT_BITS * spb
    stop = min(len(run.equalized), start + max_bits * spb)
    t_bit = 1.0 / run.config.data_rate
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_in_bit_s", "voltage_V"])
    for k in range(start, stop):
        writer.writerow([repr((k % spb) * t_bit / spb), repr(float(run.equalized[k]))])
    return buf.getvalue()
