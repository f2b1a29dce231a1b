import json
import math

import numpy as np
import pytest

from synthetic import bw_curve, iv_curve, li_curve
from vlcsim.calibration import (
    DeviceCard,
    MeasuredCurve,
    bandwidth_aggregates,
    build_default_card,
    fit_bandwidth,
    fit_iv,
    fit_li,
    load_default_card,
    saturation_onset,
)
from vlcsim.errors import CurveFormatError, DomainError
from vlcsim.led_device import equivalent_bandwidth, terminal_voltage


class TestMeasuredCurve:
    def test_parse(self):
        c = MeasuredCurve.from_csv("# bench\nIV,2\n1.0,1e-6\n2.0,1e-3 # hot\n")
        assert c.kind == "IV" and c.chip_count == 2
        assert np.array_equal(c.x, [1.0, 2.0])

    def test_csv_round_trip(self):
        c = MeasuredCurve("LI", [0.0, 0.1, 0.2], [0.0, 0.05, 0.1], 3)
        back = MeasuredCurve.from_csv(c.to_csv())
        assert back.kind == c.kind and back.chip_count == 3
        assert np.array_equal(back.x, c.x) and np.array_equal(back.y, c.y)

    def test_missing_header(self):
        with pytest.raises(CurveFormatError) as err:
            MeasuredCurve.from_csv("1.0,2.0\n2.0,3.0\n")
        assert err.value.line == 1

    def test_bad_row_reports_line(self):
        with pytest.raises(CurveFormatError) as err:
            MeasuredCurve.from_csv("BW,1\n0.1,1e6\n0.2,abc\n")
        assert err.value.line == 3

    def test_wrong_field_count(self):
        with pytest.raises(CurveFormatError) as err:
            MeasuredCurve.from_csv("BW,1\n0.1,1e6,3\n")
        assert err.value.line == 2

    def test_non_increasing(self):
        with pytest.raises(CurveFormatError) as err:
            MeasuredCurve.from_csv("BW,1\n0.2,1e6\n0.1,1e6\n")
        assert err.value.line == 3

    def test_constructor_validation(self):
        with pytest.raises(DomainError):
            MeasuredCurve("XY", [1, 2], [1, 2])
        with pytest.raises(DomainError):
            MeasuredCurve("IV", [1, 2], [1, np.nan])


class TestDeviceCard:
    def test_round_trip_bit_exact(self, card, tmp_path):
        path = tmp_path / "card.json"
        card.save(path)
        back = DeviceCard.load(path)
        assert back == card
        assert back.to_json() == card.to_json()

    def test_default_card_reproducible(self, card):
        assert build_default_card().to_dict() == card.to_dict()

    def test_default_card_meets_anchors(self, params):
        assert equivalent_bandwidth(0.25, params).f_led == pytest.approx(7e6, rel=1e-9)
        assert terminal_voltage(0.45, params) == pytest.approx(3.3, abs=0.1)
        assert terminal_voltage(0.01, params) == pytest.approx(2.7, abs=0.1)
        assert saturation_onset(params) == pytest.approx(1.1, rel=1e-6)
        assert params.I_turn_on == 0.01

    def test_future_format_rejected(self, card):
        data = json.loads(card.to_json())
        data["format_version"] = 99
        with pytest.raises(DomainError):
            DeviceCard.from_dict(data)


class TestFitIV:
    def test_noiseless_exact(self, params):
        fit = fit_iv(iv_curve(params, noise=0.0))
        assert fit.I0 == pytest.approx(params.I0, rel=1e-4)
        assert fit.n_ideality == pytest.approx(params.n_ideality, rel=1e-5)
        assert fit.Rs == pytest.approx(params.Rs, rel=1e-4)
        assert math.isinf(fit.Rp)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_noisy_round_trip(self, params, seed):
        fit = fit_iv(iv_curve(params, seed=seed))
        assert fit.n_ideality == pytest.approx(params.n_ideality, rel=0.05)
        assert fit.Rs == pytest.approx(params.Rs, rel=0.05)
        assert fit.I0 == pytest.approx(params.I0, rel=0.5)
        v_fit = terminal_voltage(0.45, fit.apply(params))
        assert v_fit == pytest.approx(terminal_voltage(0.45, params), rel=0.01)

    def test_zero_series_resistance(self, params):
        p = params.replace(Rs=0.0)
        fit = fit_iv(iv_curve(p, noise=0.0, v=np.linspace(1.8, 3.0, 30)))
        assert fit.Rs < 1e-6

    def test_leakage(self, params):
        p = params.replace(Rp=1e5)
        fit = fit_iv(iv_curve(p, noise=0.0, v=np.linspace(0.5, 3.8, 40)))
        assert fit.Rp == pytest.approx(1e5, rel=0.01)

    def test_chip_count_divides_voltage(self, params):
        one = iv_curve(params, noise=0.0)
        three = MeasuredCurve("IV", 3 * one.x, one.y, chip_count=3)
        assert fit_iv(three).Rs == pytest.approx(fit_iv(one).Rs, rel=1e-6)

    def test_too_few_points(self, params):
        with pytest.raises(DomainError):
            fit_iv(iv_curve(params, v=np.linspace(2.0, 3.8, 4)))

    def test_insufficient_span(self, params):
        with pytest.raises(DomainError):
            fit_iv(iv_curve(params, v=np.linspace(3.5, 3.6, 10)))

    def test_wrong_kind(self, params):
        with pytest.raises(DomainError):
            fit_iv(li_curve(params))


class TestFitBandwidth:
    def test_noiseless_exact(self, params):
        fit = fit_bandwidth(bw_curve(params, noise=0.0), params.I0)
        for name, value in bandwidth_aggregates(params).items():
            assert getattr(fit, name) == pytest.approx(value, rel=1e-3)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_noisy_round_trip(self, params, seed):
        fit = fit_bandwidth(bw_curve(params, seed=seed), params.I0)
        for name, value in bandwidth_aggregates(params).items():
            assert getattr(fit, name) == pytest.approx(value, rel=0.05)

    def test_decompose(self, params):
        fit = fit_bandwidth(bw_curve(params, noise=0.0), params.I0)
        q = fit.decompose(params)
        assert q.C0 == pytest.approx(params.C0, rel=1e-3)
        assert q.phi == pytest.approx(params.phi, rel=1e-3)
        assert equivalent_bandwidth(0.25, q).f_led == pytest.approx(7e6, rel=1e-3)

    def test_flat_data(self, params):
        c = MeasuredCurve("BW", np.geomspace(1e-3, 1, 10), np.full(10, 7e6))
        with pytest.raises(DomainError):
            fit_bandwidth(c, params.I0)

    def test_decreasing_data_does_not_crash(self, params):
        I = np.geomspace(1e-3, 1, 10)
        fit = fit_bandwidth(MeasuredCurve("BW", I, 1e7 / (1 + I)), params.I0)
        assert math.isfinite(fit.residual)

    def test_i0_must_be_below_data(self, params):
        with pytest.raises(DomainError):
            fit_bandwidth(bw_curve(params), 1e-4)


class TestFitLI:
    def test_noiseless_exact(self, params):
        fit = fit_li(li_curve(params, noise=0.0), params)
        assert fit.C == pytest.approx(params.C, rel=1e-4)
        assert fit.eta_ext == pytest.approx(params.eta_ext, rel=1e-6)
        assert fit.I_turn_on == pytest.approx(0.025)
        assert fit.knee_found

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_noisy_round_trip(self, params, seed):
        fit = fit_li(li_curve(params, seed=seed), params)
        assert fit.C == pytest.approx(params.C, rel=0.05)
        assert fit.eta_ext == pytest.approx(params.eta_ext, rel=0.05)
        fitted = fit.apply(params).replace(I_turn_on=params.I_turn_on)
        assert saturation_onset(fitted) == pytest.approx(1.1, rel=0.05)

    def test_no_auger(self, params):
        p = params.replace(C=0.0)
        assert fit_li(li_curve(p, noise=0.0), p).C == 0.0

    def test_no_knee(self, params):
        fit = fit_li(li_curve(params, noise=0.0, currents=np.linspace(0.2, 2.0, 20)), params)
        assert not fit.knee_found
        assert fit.I_turn_on == 0.01

    def test_dark_curve(self, params):
        with pytest.raises(DomainError):
            fit_li(MeasuredCurve("LI", np.linspace(0, 1, 10), np.zeros(10)), params)
