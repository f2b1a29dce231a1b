import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import signal

from linear_channel import linear_channel_ber, q_function
from vlcsim.errors import DomainError, NumericalError
from vlcsim.led_device import equivalent_bandwidth, solve_carrier_density, static_optical_power
from vlcsim.link_model import EqualizerConfig, LinkConfig, channel_gain, equalizer_response
from vlcsim.waveform_sim import (
    TRANSIENT_BITS,
    WaveformConfig,
    derived_seed,
    drive_waveform,
    equalize_discrete,
    eye_diagram_csv,
    led_dynamic_transmit,
    optimize_bias,
    prbs_sequence,
    receive,
    receiver_noise,
    run_ber,
    simulate_link,
    slice_and_count,
    small_signal_gain,
    stable_substeps,
    wilson_interval,
)


class TestPrbs:
    def test_period_and_states(self):
        seq = prbs_sequence(10)
        assert len(seq) == 1023
        # every nonzero 10-bit window appears once per period
        ext = np.concatenate([seq, seq[:9]])
        windows = {tuple(ext[k:k + 10]) for k in range(1023)}
        assert len(windows) == 1023
        assert (0,) * 10 not in windows

    def test_balance(self):
        seq = prbs_sequence(10)
        assert seq.sum() == 512 and (seq == 0).sum() == 511

    def test_repeats_cyclically(self):
        seq = prbs_sequence(10, n_bits=3000)
        assert np.array_equal(seq[:1023], seq[1023:2046])

    def test_deterministic(self):
        assert np.array_equal(prbs_sequence(10, seed=0x155), prbs_sequence(10, seed=0x155))

    def test_zero_seed(self):
        with pytest.raises(DomainError):
            prbs_sequence(10, seed=0)

    @pytest.mark.parametrize("order", [7, 9, 11, 15])
    def test_other_orders_maximal(self, order):
        seq = prbs_sequence(order)
        assert seq.sum() == 2 ** (order - 1)


class TestDrive:
    def test_all_ones(self):
        cfg = WaveformConfig(data_rate=1e6, i_dc=0.4)
        i = drive_waveform(np.ones(5, dtype=int), cfg)
        assert np.allclose(i, 0.4 + 0.2 * 2.5 / 2)
        assert len(i) == 5 * cfg.samples_per_bit

    def test_mean_over_period(self):
        cfg = WaveformConfig(data_rate=1e6, i_dc=0.4)
        i = drive_waveform(prbs_sequence(10), cfg)
        assert i.mean() == pytest.approx(0.4 + 0.25 * (512 - 511) / 1023, rel=1e-12)

    def test_swing(self):
        assert WaveformConfig(data_rate=1e6, i_dc=0.1).swing == pytest.approx(0.25)

    def test_low_bias_goes_below_turn_on(self, params):
        i = drive_waveform(prbs_sequence(10), WaveformConfig(data_rate=1e6, i_dc=0.1))
        assert i.min() < params.I_turn_on

    def test_config_validation(self):
        with pytest.raises(DomainError):
            WaveformConfig(data_rate=0.0, i_dc=0.1)
        with pytest.raises(DomainError):
            WaveformConfig(data_rate=1e6, i_dc=0.1, samples_per_bit=4)
        with pytest.raises(DomainError):
            WaveformConfig(data_rate=1e6, i_dc=0.1, threshold_mode="magic")


class TestTransmitter:
    def test_constant_input_settles(self, params):
        dt = 1e-9
        i = np.full(400, 0.3)
        P = led_dynamic_transmit(i, params, dt, substeps=stable_substeps(params, dt, 0.3))
        assert P[-1] == pytest.approx(static_optical_power(0.3, params), rel=1e-3)

    def test_step_settles_to_new_level(self, params):
        dt = 1e-9
        i = np.concatenate([np.full(100, 0.2), np.full(1000, 0.5)])
        P, N, i_f = led_dynamic_transmit(i, params, dt, i_dc=0.2, substeps=4, return_state=True)
        assert N[-1] == pytest.approx(solve_carrier_density(0.5, params), rel=1e-3)
        assert P[-1] == pytest.approx(static_optical_power(0.5, params), rel=1e-3)

    def test_convergence_in_dt(self, params):
        wcfg = WaveformConfig(data_rate=60e6, i_dc=0.4)
        i = drive_waveform(prbs_sequence(10)[:200], wcfg)
        coarse = led_dynamic_transmit(i, params, wcfg.dt, i_dc=0.4, substeps=2)
        fine = led_dynamic_transmit(i, params, wcfg.dt, i_dc=0.4, substeps=4)
        assert np.max(np.abs(fine - coarse)) / np.max(fine) < 1e-4

    def test_power_nonnegative_and_clipped(self, params):
        wcfg = WaveformConfig(data_rate=20e6, i_dc=0.1)
        bits = np.array([1] * 20 + [0] * 40 + [1] * 20)
        i = drive_waveform(bits, wcfg)
        P = led_dynamic_transmit(i, params, wcfg.dt, i_dc=0.1, substeps=2)
        assert np.all(P >= 0)
        # late in a long run of zeros the drive is clipped and the LED is dark
        zero_run = P[(20 + 30) * 32:(20 + 40) * 32]
        assert np.all(zero_run == 0.0)

    def test_instability_detected(self, params):
        i = np.full(50, 0.5)
        with pytest.raises(NumericalError):
            led_dynamic_transmit(i, params, 1e-6, substeps=1)

    def test_small_signal_pole(self, params):
        I = 0.51
        f_led = equivalent_bandwidth(I, params).f_led
        g0 = small_signal_gain(params, I, 1e5)
        for k in (0.1, 0.3, 0.5, 1.0, 1.5):
            g = small_signal_gain(params, I, k * f_led) / g0
            assert g == pytest.approx(1 / math.sqrt(1 + k * k), rel=0.10)


class TestReceiver:
    def test_noiseless_dc(self, link):
        wcfg = WaveformConfig(data_rate=60e6, i_dc=0.3)
        cfg = replace(link, noise_rms=0.0)
        v = receive(np.full(2000, 0.2), cfg, wcfg)
        v = v[-100:]
        assert np.allclose(v, cfg.tia_gain * 0.45 * channel_gain(cfg) * 0.2, rtol=1e-12)

    def test_noise_rms(self, link):
        wcfg = WaveformConfig(data_rate=60e6, i_dc=0.3)
        n = receiver_noise(1_000_000, link, wcfg.dt, np.random.default_rng(3))
        assert n.std() == pytest.approx(1.5e-3, rel=0.02)

    def test_noise_spectrum_shaped_by_photodiode(self, link):
        wcfg = WaveformConfig(data_rate=10e6, i_dc=0.3, samples_per_bit=64)
        fs = 1 / wcfg.dt
        n = receiver_noise(2 ** 20, link, wcfg.dt, np.random.default_rng(4))
        f, pxx = signal.welch(n, fs=fs, nperseg=4096)
        low = pxx[(f > 1e6) & (f < 5e6)].mean()
        at_pole = pxx[np.argmin(np.abs(f - 150e6))]
        assert at_pole / low == pytest.approx(0.5, rel=0.15)

    def test_deterministic(self, link):
        wcfg = WaveformConfig(data_rate=60e6, i_dc=0.3)
        a = receive(np.ones(1000), link, wcfg, np.random.default_rng(9))
        b = receive(np.ones(1000), link, wcfg, np.random.default_rng(9))
        assert np.array_equal(a, b)


class TestEqualizer:
    def test_dc_gain(self, link):
        dt = 1e-9
        y = equalize_discrete(np.concatenate([np.zeros(10), np.ones(20000)]), link.equalizer, dt)
        assert y[-1] == pytest.approx(1 / link.equalizer.pole_ratio, abs=1e-3)

    def test_disabled_is_identity(self):
        x = np.random.default_rng(0).standard_normal(100)
        assert np.array_equal(equalize_discrete(x, None, 1e-9), x)

    def test_matches_analog(self, link):
        from vlcsim.waveform_sim import equalizer_coefficients

        dt = 1 / (60e6 * 32)
        b, a = equalizer_coefficients(link.equalizer, dt)
        f = np.geomspace(1e5, 0.2 / dt, 200)
        _, h = signal.freqz(b, a, worN=f, fs=1 / dt)
        analog = equalizer_response(link.equalizer, f).magnitude
        assert np.max(np.abs(20 * np.log10(np.abs(h) / analog))) < 0.2

    def test_white_noise_shaped(self, link):
        dt = 1 / (40e6 * 32)
        eq = EqualizerConfig(pole_ratio=6.0)
        x = np.random.default_rng(5).standard_normal(2 ** 20)
        y = equalize_discrete(x, eq, dt)
        f, pxx = signal.welch(x, fs=1 / dt, nperseg=8192)
        _, pyy = signal.welch(y, fs=1 / dt, nperseg=8192)
        band = (f > 5e5) & (f < 0.2 / dt)
        ratio = pyy[band] / pxx[band]
        expected = equalizer_response(eq, f[band]).magnitude ** 2
        assert np.median(np.abs(ratio / expected - 1)) < 0.1


class TestSlicer:
    def test_wilson(self):
        lo, hi = wilson_interval(0, 1000)
        assert lo == pytest.approx(0.0, abs=1e-15) and 0 < hi < 0.01
        lo, hi = wilson_interval(50, 1000)
        assert lo < 0.05 < hi

    def test_noiseless_linear_channel(self):
        bits = prbs_sequence(10, n_bits=2000)
        wcfg = WaveformConfig(data_rate=1e6, i_dc=0.0, samples_per_bit=8)
        v = np.repeat(bits.astype(float), 8)
        r = slice_and_count(v, bits, wcfg, (0.0, 1.0))
        assert r.errors == 0 and r.bits == 2000 - TRANSIENT_BITS
        assert r.ci95_low <= r.ber <= r.ci95_high

    def test_too_few_bits(self):
        bits = prbs_sequence(10, n_bits=100)
        wcfg = WaveformConfig(data_rate=1e6, i_dc=0.0, samples_per_bit=8)
        with pytest.raises(DomainError):
            slice_and_count(np.repeat(bits.astype(float), 8), bits, wcfg)

    def test_q3(self):
        r = linear_channel_ber(3.0, 400_000, seed=7)
        assert r.ci95_low <= q_function(3.0) <= r.ci95_high

    def test_inverted_samples(self):
        r = linear_channel_ber(3.0, 200_000, seed=8, invert=True)
        assert r.ber == pytest.approx(1 - q_function(3.0), abs=5e-4)

    def test_optimal_threshold_not_worse(self, params, link):
        base = WaveformConfig(data_rate=60e6, i_dc=0.3, n_bits=20_000)
        mid = run_ber(base, params, link)
        opt = run_ber(replace(base, threshold_mode="optimal"), params, link)
        assert opt.errors <= mid.errors


class TestEndToEnd:
    def test_deterministic(self, params, link):
        wcfg = WaveformConfig(data_rate=60e6, i_dc=0.4, n_bits=20_000, rng_seed=11)
        assert run_ber(wcfg, params, link) == run_ber(wcfg, params, link)

    def test_noiseless_low_rate_error_free(self, params, link):
        wcfg = WaveformConfig(data_rate=10e6, i_dc=0.4, n_bits=5_000)
        assert run_ber(wcfg, params, replace(link, noise_rms=0.0)).errors == 0

    def test_headline_rate(self, params, link):
        bers = {I: run_ber(WaveformConfig(data_rate=60e6, i_dc=I, n_bits=100_000), params, link).ber
                for I in (0.2, 0.51, 0.68)}
        assert bers[0.51] <= 1e-3
        assert bers[0.2] > bers[0.51] and bers[0.68] > bers[0.51]

    def test_eye_dump(self, params, link):
        run = simulate_link(WaveformConfig(data_rate=40e6, i_dc=0.4, n_bits=2_000), params, link)
        lines = eye_diagram_csv(run, max_bits=10).splitlines()
        assert lines[0] == "t_in_bit_s,voltage_V"
        assert len(lines) == 1 + 10 * 32


class TestOptimize:
    def test_single_point(self, params, link):
        best, table = optimize_bias(40e6, [0.3], WaveformConfig(1.0, 0.0, n_bits=2_000), params, link)
        assert best == 0.3 and len(table) == 1

    def test_ties_go_low(self, params, link):
        quiet = replace(link, noise_rms=0.0)
        best, _ = optimize_bias(20e6, [0.2, 0.3, 0.4], WaveformConfig(1.0, 0.0, n_bits=2_000), params, quiet)
        assert best == 0.2

    def test_unsorted_grid(self, params, link):
        with pytest.raises(DomainError):
            optimize_bias(20e6, [0.3, 0.2], WaveformConfig(1.0, 0.0, n_bits=2_000), params, link)

    def test_parallel_matches_serial(self, params, link):
        t = WaveformConfig(1.0, 0.0, n_bits=5_000, rng_seed=5)
        serial = optimize_bias(60e6, [0.2, 0.4], t, params, link)
        parallel = optimize_bias(60e6, [0.2, 0.4], t, params, link, workers=2)
        assert serial == parallel

    def test_derived_seeds(self):
        assert derived_seed(10, 0) == 10
        assert derived_seed(10, 3) == 9
