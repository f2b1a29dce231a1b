"""
Command-line interface.

Every subcommand writes machine-readable CSV or JSON plus a run manifest
(``<output>.manifest.json``) recording the command, a hash of everything that
affects the result, the seed and the tool version.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .calibration import DeviceCard, MeasuredCurve, fit_bandwidth, fit_iv, fit_li, load_default_card
from .errors import DomainError, NumericalError, VlcSimError
from .led_device import LedParams, equivalent_bandwidth, solve_iv, terminal_voltage
from .link_model import (
    CHAINS,
    LinkConfig,
    bandwidth_vs_bias_sweep,
    default_grid,
    eoe_response,
    extract_3db,
)
from .waveform_sim import DEFAULT_SEED, WaveformConfig, derived_seed, eye_diagram_csv, optimize_bias, simulate_link

CARD_ENV = "VLCSIM_CARD"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
DEFAULT_BIAS_GRID = (0.1, 0.2, 0.3, 0.4, 0.51, 0.68)
REFERENCE_BIAS = 0.45  # A

LINK_KEYS = {f.name for f in fields(LinkConfig)} - {"equalizer"}
EQUALIZER_KEYS = {"eq_R": "R", "eq_C": "C", "eq_pole_ratio": "pole_ratio"}
WAVEFORM_KEYS = {f.name for f in fields(WaveformConfig)} - {"data_rate", "i_dc"}


class UsageError(DomainError):
    """Invalid command-line or config-file input."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    known = LINK_KEYS | set(EQUALIZER_KEYS) | WAVEFORM_KEYS | {"equalizer"}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(value)
    return out


def link_config(overrides: dict) -> LinkConfig:
    base = LinkConfig()
    link = {k: v for k, v in overrides.items() if k in LINK_KEYS}
    eq = None
    if overrides.get("equalizer", True) is not False:
        eq_fields = {EQUALIZER_KEYS[k]: v for k, v in overrides.items() if k in EQUALIZER_KEYS}
        eq = replace(base.equalizer, **eq_fields)
    return replace(base, equalizer=eq, **link)


def waveform_overrides(overrides: dict) -> dict:
    return {k: v for k, v in overrides.items() if k in WAVEFORM_KEYS}


# ---------------------------------------------------------------------------
# Manifest and output helpers
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: Optional[int]
    tool_version: str
    outputs: list = field(default_factory=list)
    effective_config: dict = field(default_factory=dict)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _count(text: str) -> int:
    value = float(text)
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _write_csv(path: Path, header: Sequence[str], rows, footer: Sequence[str] = ()) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    for line in footer:
        buf.write(f"# {line}\n")
    path.write_text(buf.getvalue())


def _svg_plot(path: Path, x, ys: dict, xlabel: str, ylabel: str, logx: bool = False) -> None:
    """Minimal static line plot."""
    width, height, pad = 640, 400, 60
    x = np.asarray(x, dtype=float)
    xs = np.log10(x) if logx else x
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in ys.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(all_y.min()), float(all_y.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(u):
        return pad + (u - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad}" y="{height - pad + 15}">{10 ** x0 if logx else x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" text-anchor="end">{10 ** x1 if logx else x1:.3g}</text>',
        f'<text x="{pad - 5}" y="{height - pad}" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 5}" y="{pad + 5}" text-anchor="end">{y1:.3g}</text>',
    ]
    for k, (name, y) in enumerate(ys.items()):
        pts = " ".join(f"{px(u):.1f},{py(v):.1f}" for u, v in zip(xs, np.asarray(y, dtype=float)))
        colour = colours[k % len(colours)]
        parts.append(f'<polyline fill="none" stroke="{colour}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 5}" y="{pad + 15 + 15 * k}" text-anchor="end" fill="{colour}">{name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


class Run:
    """Bookkeeping shared by every subcommand."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.outputs: list[str] = []
        self.card = self._load_card()
        self.overrides = read_config(args.config) if args.config else {}

    def _load_card(self) -> DeviceCard:
        path = self.args.card or os.environ.get(CARD_ENV)
        if path:
            try:
                return DeviceCard.load(path)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                raise UsageError(f"cannot read device card {path}: {exc}") from None
        return load_default_card()

    @property
    def params(self) -> LedParams:
        return self.card.params

    def output(self, suffix: str = "") -> Path:
        path = self.out if not suffix else self.out.with_name(self.out.stem + suffix)
        self.outputs.append(str(path))
        return path

    def finish(self, effective: dict, seed: Optional[int] = None) -> None:
        payload = {"command": self.command, "card": self.card.to_dict(), "config": effective, "seed": seed}
        manifest_path = self.out.with_name(self.out.name + ".manifest.json")
        manifest = RunManifest(
            command=self.command,
            config_hash=config_hash(payload),
            seed=seed,
            tool_version=__version__,
            outputs=self.outputs + [str(manifest_path)],
            effective_config=effective,
        )
        manifest.write(manifest_path)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_iv(args) -> None:
    run = Run(args, "iv")
    p = run.params
    rows = []
    if args.v is not None:
        start, stop, count = args.v
        if not (0 <= start < stop and count >= 2):
            raise UsageError("--v needs 0 <= START < STOP and COUNT >= 2")
        for v in np.linspace(start, stop, int(count)):
            try:
                i = solve_iv(float(v), p)
            except VlcSimError as exc:
                raise type(exc)(f"I-V solve failed at v = {v!r} V: {exc}") from None
            vd = v / p.n_series - i * p.Rs
            rows.append((float(v), i, vd))
        if any(b[1] < a[1] for a, b in zip(rows, rows[1:])):
            raise NumericalError("I-V curve is not monotone")
        sweep = {"v_start": start, "v_stop": stop, "count": int(count)}
    else:
        start, stop, count = args.i
        if not (0 < start < stop and count >= 2):
            raise UsageError("--i needs 0 < START < STOP and COUNT >= 2")
        for i in np.geomspace(start, stop, int(count)):
            try:
                v = terminal_voltage(float(i), p)
            except VlcSimError as exc:
                raise type(exc)(f"I-V solve failed at i = {i!r} A: {exc}") from None
            rows.append((v, float(i), v / p.n_series - i * p.Rs))
        sweep = {"i_start": start, "i_stop": stop, "count": int(count)}
    path = run.output()
    _write_csv(path, ["v_V", "i_A", "vd_V"], rows)
    if args.svg:
        arr = np.array(rows)
        _svg_plot(run.output(".svg"), arr[:, 0], {"I": arr[:, 1]}, "terminal voltage (V)", "current (A)")
    run.finish(sweep)


def cmd_bandwidth(args) -> None:
    run = Run(args, "bandwidth")
    currents = _floats(args.currents)
    if not currents:
        raise UsageError("no currents given")
    cfg = link_config(run.overrides)
    rows = bandwidth_vs_bias_sweep(currents, run.params, cfg, chain=args.chain)
    path = run.output()
    _write_csv(path, ["current_A", "tau_s_s", "tau_c_s", "f3db_Hz"], [
        (r.current_A, r.tau_s_s, r.tau_c_s, r.f3db_Hz) for r in rows
    ])
    if args.svg:
        _svg_plot(run.output(".svg"), [r.current_A for r in rows], {"f3dB": [r.f3db_Hz / 1e6 for r in rows]},
                  "bias current (A)", "3-dB bandwidth (MHz)")
    run.finish({"currents": sorted(currents), "chain": args.chain, "link": cfg.to_dict()})


def cmd_freqresp(args) -> None:
    run = Run(args, "freqresp")
    cfg = link_config(run.overrides)
    grid = default_grid(args.fmin, args.fmax, args.points_per_decade)
    op = equivalent_bandwidth(args.bias, run.params)
    traces = {"raw": eoe_response(op, cfg, grid)}
    if args.equalized:
        traces["equalized"] = eoe_response(op, cfg, grid, equalized=True)
    f3 = {name: extract_3db(resp) for name, resp in traces.items()}
    footer = [f"f3db_{name}_Hz={float(value)!r}" for name, value in f3.items()]
    for name, resp in traces.items():
        path = run.output("" if name == "raw" else "_equalized" + run.out.suffix)
        rows = zip(resp.freqs, resp.magnitude_db(), resp.phase_deg())
        _write_csv(path, ["freq_Hz", "mag_dB", "phase_deg"], rows, footer)
    if args.svg:
        _svg_plot(run.output(".svg"), grid, {k: v.magnitude_db() for k, v in traces.items()},
                  "frequency (Hz)", "magnitude (dB)", logx=True)
    run.finish({"bias_A": args.bias, "equalized": args.equalized, "fmin": args.fmin, "fmax": args.fmax,
                "points_per_decade": args.points_per_decade, "link": cfg.to_dict()})


def _waveform_template(run: Run, args) -> WaveformConfig:
    values = waveform_overrides(run.overrides)
    if args.bits is not None:
        values["n_bits"] = args.bits
    if args.seed is not None:
        values["rng_seed"] = args.seed
    values.setdefault("rng_seed", DEFAULT_SEED)
    if args.threshold is not None:
        values["threshold_mode"] = args.threshold
    return WaveformConfig(data_rate=1.0, i_dc=0.0, **values)


def _bias_list(args) -> list[float]:
    if args.bias is not None:
        return [args.bias]
    grid = _floats(args.bias_grid)
    if not grid:
        raise UsageError("empty bias grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("bias grid must be strictly increasing")
    return grid


def cmd_ber(args) -> None:
    run = Run(args, "ber")
    cfg = link_config(run.overrides)
    template = _waveform_template(run, args)
    rates = _floats(args.rate)
    if not rates:
        raise UsageError("no data rate given")
    biases = _bias_list(args)
    rows = []
    eye_run = None
    for rate in rates:
        for k, bias in enumerate(biases):
            seed = derived_seed(template.rng_seed, k)
            wcfg = replace(template, data_rate=rate, i_dc=bias, rng_seed=seed)
            link_run = simulate_link(wcfg, run.params, cfg)
            r = link_run.result
            rows.append((rate, bias, r.ber, r.ci95_low, r.ci95_high, r.bits, r.errors, seed))
            if eye_run is None:
                eye_run = link_run
    path = run.output()
    footer = [f"drive_transconductance_A_per_V={template.drive_transconductance!r}"]
    _write_csv(path, ["data_rate_bps", "current_A", "ber", "ci_low", "ci_high", "bits", "errors", "seed"], rows, footer)
    if args.eye:
        eye_path = Path(args.eye)
        eye_path.write_text(eye_diagram_csv(eye_run))
        run.outputs.append(str(eye_path))
    if args.svg:
        arr = np.array([r[:3] for r in rows], dtype=float)
        _svg_plot(run.output(".svg"), np.arange(len(rows)), {"log10 BER": np.log10(np.maximum(arr[:, 2], 1e-12))},
                  "run index", "log10 BER")
    run.finish({"rates": rates, "biases": biases, "waveform": asdict(template), "link": cfg.to_dict()},
               seed=template.rng_seed)


def cmd_optimize(args) -> None:
    run = Run(args, "optimize")
    cfg = link_config(run.overrides)
    template = _waveform_template(run, args)
    rates = _floats(args.rates)
    if not rates:
        raise UsageError("no data rates given")
    grid = _floats(args.bias_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])) or not grid:
        raise UsageError("bias grid must be non-empty and strictly increasing")
    rows = []
    for rate in rates:
        best, table = optimize_bias(rate, grid, template, run.params, cfg, workers=args.workers)
        ber = dict(table)[best].ber
        rows.append((rate, best, ber))
    path = run.output()
    _write_csv(path, ["data_rate_bps", "i_opt_A", "ber"], rows,
               [f"drive_transconductance_A_per_V={template.drive_transconductance!r}"])
    if args.svg:
        _svg_plot(run.output(".svg"), [r[0] / 1e6 for r in rows], {"I_opt": [r[1] for r in rows]},
                  "data rate (Mb/s)", "optimal bias (A)")
    run.finish({"rates": rates, "bias_grid": grid, "waveform": asdict(template), "link": cfg.to_dict()},
               seed=template.rng_seed)


def cmd_fit(args) -> None:
    run = Run(args, "fit")
    curve = MeasuredCurve.read(args.input)
    kind = args.kind.upper()
    if curve.kind != kind:
        raise UsageError(f"--kind {args.kind} does not match the file's kind {curve.kind}")
    p = run.params
    warnings = list(run.card.warnings)
    residuals = dict(run.card.fit_residuals)
    if kind == "IV":
        fit = fit_iv(curve, Vt=p.Vt)
        p = fit.apply(p).replace(n_series=curve.chip_count)
        residuals["iv_rms_log_current"] = fit.residual
    elif kind == "BW":
        fit = fit_bandwidth(curve, I0=p.I0)
        p = fit.decompose(p)
        residuals["bw_rms_relative"] = fit.residual
    else:
        fit = fit_li(curve, p)
        p = fit.apply(p)
        residuals["li_rms_relative"] = fit.residual
        if not fit.knee_found:
            warnings.append("no turn-on knee in L-I data; I_turn_on set to 10 mA")
    source = Path(args.input).name
    card = DeviceCard(params=p, fit_residuals=residuals, warnings=tuple(warnings),
                      provenance=f"{run.card.provenance} Refit: {kind} from {source}.".strip())
    path = run.output()
    card.save(path)
    digest = hashlib.sha256(Path(args.input).read_bytes()).hexdigest()
    run.finish({"kind": kind, "input": str(args.input), "input_sha256": digest})


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _common(parser: argparse.ArgumentParser, default_out: str) -> None:
    parser.add_argument("--card", help=f"DeviceCard JSON (default: ${CARD_ENV} or the shipped card)")
    parser.add_argument("--config", help="key = value file with LinkConfig / WaveformConfig overrides (SI units)")
    parser.add_argument("-o", "--out", default=default_out, help=f"output file (default {default_out}); "
                        "a manifest is written next to it as <out>.manifest.json")
    parser.add_argument("--svg", action="store_true", help="also write a static SVG line plot")


def _ber_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--bits", type=_count, default=None, help="bits per run (accepts 2e5); default 100000")
    parser.add_argument("--seed", type=int, default=None, help=f"base RNG seed (default {DEFAULT_SEED})")
    parser.add_argument("--threshold", choices=("midpoint", "optimal"), default=None, help="slicer threshold rule")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlcsim", description="White-LED visible light link simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("iv", formatter_class=raw, help="model I-V curve",
                       description="Model I-V curve.\n\ncolumns: v_V terminal voltage (V), i_A current (A), "
                                   "vd_V junction voltage per chip (V)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--v", nargs=3, type=float, metavar=("START", "STOP", "COUNT"), help="linear voltage sweep (V)")
    group.add_argument("--i", nargs=3, type=float, metavar=("START", "STOP", "COUNT"), help="log current sweep (A)")
    _common(p, "iv.csv")
    p.set_defaults(func=cmd_iv)

    p = sub.add_parser("bandwidth", formatter_class=raw, help="3-dB bandwidth versus bias",
                       description="3-dB bandwidth versus bias current.\n\ncolumns: current_A bias (A), "
                                   "tau_s_s carrier lifetime (s), tau_c_s capacitance time constant (s), "
                                   "f3db_Hz 3-dB bandwidth (Hz)")
    p.add_argument("--currents", required=True, help="comma-separated bias currents (A)")
    p.add_argument("--chain", choices=CHAINS, default="led", help="LED only, full EOE link, or equalized link")
    _common(p, "bandwidth.csv")
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("freqresp", formatter_class=raw, help="EOE frequency response",
                       description="End-to-end frequency response at one bias.\n\ncolumns: freq_Hz frequency (Hz), "
                                   "mag_dB magnitude relative to the lowest frequency (dB), phase_deg phase (deg).\n"
                                   "With --equalized a second file <out>_equalized.csv holds the equalized trace; "
                                   "3-dB bandwidths (Hz) appear as footer comments.")
    p.add_argument("--bias", type=float, default=REFERENCE_BIAS, help=f"DC bias (A), default {REFERENCE_BIAS}")
    p.add_argument("--equalized", action="store_true", help="also emit the equalized trace")
    p.add_argument("--fmin", type=float, default=1e5, help="lowest frequency (Hz)")
    p.add_argument("--fmax", type=float, default=1e9, help="highest frequency (Hz)")
    p.add_argument("--points-per-decade", type=int, default=50)
    _common(p, "freqresp.csv")
    p.set_defaults(func=cmd_freqresp)

    p = sub.add_parser("ber", formatter_class=raw, help="Monte Carlo BER",
                       description="Monte Carlo OOK-NRZ bit error rate.\n\ncolumns: data_rate_bps (bit/s), "
                                   "current_A bias (A), ber, ci_low and ci_high Wilson 95% bounds, bits counted, "
                                   "errors counted, seed used for the run")
    p.add_argument("--rate", required=True, help="data rate(s) in bit/s, comma-separated")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--bias", type=float, help="DC bias (A)")
    group.add_argument("--bias-grid", help="strictly increasing comma-separated biases (A)")
    p.add_argument("--eye", help="write eye-diagram samples (t_in_bit_s, voltage_V) of the first run here")
    _ber_options(p)
    _common(p, "ber.csv")
    p.set_defaults(func=cmd_ber)

    p = sub.add_parser("optimize", formatter_class=raw, help="BER-optimal bias per data rate",
                       description="BER-optimal bias per data rate; ties go to the lowest current.\n\n"
                                   "columns: data_rate_bps (bit/s), i_opt_A optimal bias (A), ber at that bias")
    p.add_argument("--rates", required=True, help="data rates in bit/s, comma-separated")
    p.add_argument("--bias-grid", default=",".join(map(str, DEFAULT_BIAS_GRID)),
                   help="strictly increasing comma-separated biases (A)")
    p.add_argument("--workers", type=int, default=1, help="parallel processes per grid")
    _ber_options(p)
    _common(p, "optimize.csv")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("fit", formatter_class=raw, help="fit a device card to measured data",
                       description="Fit measured data and write a DeviceCard JSON.\n\nInput CSV: header "
                                   "'kind,chip_count' then x,y rows. IV: volts, amperes. LI: amperes, watts "
                                   "(or normalized). BW: amperes, hertz. Lines starting with # are comments.")
    p.add_argument("--kind", required=True, choices=("iv", "li", "bw", "IV", "LI", "BW"),
                   help="curve type: iv (V, A), li (A, W) or bw (A, Hz)")
    p.add_argument("input", help="measured-curve CSV")
    _common(p, "card.json")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except VlcSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
