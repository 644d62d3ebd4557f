"""Command-line pipeline: simulate, g2, extract, test, fit, autocorr.

Exit codes: 0 success, 1 analysis failure, 2 usage error, 3 I/O or parse error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .extract import autocorrelation, bias, extract_bits, load_bits, save_bits, write_autocorr_csv
from .hbt import (CoincidenceAccumulator, correct_curve, fit_saturation, normalize_g2,
                  read_points_csv, write_g2_csv)
from .source_sim import PS_PER_S, EmitterConfig, simulate
from .sts import run_battery
from .timetags import StreamError, load_stream, save_stream

EXIT_OK, EXIT_ANALYSIS, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

_EMITTER_FIELDS = {f.name: f for f in dataclasses.fields(EmitterConfig)}


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class AnalysisError(Exception):
    pass


@dataclass
class PipelineConfig:
    emitter: EmitterConfig = field(default_factory=EmitterConfig)
    bin_width_ps: int = 176
    max_delay_ps: int = 176 * 300
    max_lag: int = 100
    n_sequences: int = 100
    sequence_length: int = 100_000
    delta: float = 0.01
    rho: float | None = None
    out_dir: Path = Path(".")

    def as_dict(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if k not in ("emitter", "out_dir")}
        d["emitter"] = self.emitter.as_dict()
        return d


_PIPELINE_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)
                    if f.name not in ("emitter", "out_dir")}


def _coerce(name: str, value: str):
    f = _EMITTER_FIELDS.get(name) or _PIPELINE_FIELDS.get(name)
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind.startswith("int"):
            return int(float(value)) if "e" in value.lower() else int(value)
        return float(value)
    except ValueError:
        raise UsageError(f"config key {name!r}: cannot parse {value!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' comments allowed. ``duration_s`` is accepted."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    out = {}
    for key, value in parser["config"].items():
        if key == "duration_s":
            out["duration_ps"] = int(round(float(value) * PS_PER_S))
        elif key == "preset":
            out["preset"] = value.strip()
        elif key in _EMITTER_FIELDS or key in _PIPELINE_FIELDS:
            out[key] = _coerce(key, value)
        else:
            raise UsageError(f"{path}: unknown config key {key!r}")
    return out


_FLAG_MAP = {
    "power_mw": "excitation_power_mw",
    "saturation_mw": "saturation_power_mw",
    "max_rate_hz": "max_rate_hz",
    "tau0_ps": "antibunch_tau_ps",
    "background_hz": "background_rate_hz",
    "transmittance": "transmittance",
    "dead_time_ps": "dead_time_ps",
    "dark_hz": "dark_rate_hz",
    "seed": "seed",
}


def resolve_config(args) -> PipelineConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    preset = getattr(args, "preset", None) or values.pop("preset", "default")
    values.pop("preset", None)
    for flag, key in _FLAG_MAP.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if getattr(args, "duration_s", None) is not None:
        values["duration_ps"] = int(round(args.duration_s * PS_PER_S))
    for key in _PIPELINE_FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    emitter_kw = {k: v for k, v in values.items() if k in _EMITTER_FIELDS}
    pipe_kw = {k: v for k, v in values.items() if k in _PIPELINE_FIELDS}
    if preset not in ("default", "device"):
        raise UsageError(f"unknown preset {preset!r}")
    try:
        emitter = EmitterConfig.device(**emitter_kw) if preset == "device" else EmitterConfig(**emitter_kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = PipelineConfig(emitter=emitter, out_dir=Path(getattr(args, "out_dir", None) or "."), **pipe_kw)
    if cfg.bin_width_ps <= 0 or cfg.max_delay_ps % cfg.bin_width_ps:
        raise UsageError("max_delay_ps must be a multiple of a positive bin_width_ps")
    if cfg.rho is not None and not 0 < cfg.rho <= 1:
        raise UsageError("rho must lie in (0, 1]")
    if not 0 < cfg.delta < 1:
        raise UsageError("delta must lie in (0, 1)")
    return cfg


def provenance(command: str, cfg: PipelineConfig, input=None, **extra) -> dict:
    """Tool, version, resolved config and seed; the input's own provenance is nested when known."""
    prov = {"tool": "spqrng", "version": __version__, "command": command,
            "seed": cfg.emitter.seed, "config": cfg.as_dict(), **extra}
    if input is not None:
        prov["input"] = str(input)
        side = _sidecar(input)
        if side and "provenance" in side:
            prov["input_provenance"] = side["provenance"]
    return prov


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _out_path(cfg: PipelineConfig, name: str, explicit=None) -> Path:
    path = Path(explicit) if explicit else cfg.out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_stream(path):
    try:
        return load_stream(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except StreamError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_bits(path):
    try:
        return load_bits(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _sidecar(path) -> dict | None:
    p = Path(str(path) + ".json")
    if not p.exists():
        return None
    try:
        return json.loads(p.read_text())
    except (OSError, json.JSONDecodeError):
        return None


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out = _out_path(cfg, "run.ptg", args.output)
    stream = simulate(cfg.emitter)
    try:
        nbytes = save_stream(stream, out)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc}") from None
    n1, n2 = stream.counts()
    dur_s = cfg.emitter.duration_ps / PS_PER_S
    summary = {"events": len(stream), "events_ch1": n1, "events_ch2": n2, "bytes": nbytes,
               "duration_s": dur_s,
               "total_rate_hz": len(stream) / dur_s if dur_s else 0.0,
               "rate_ch1_hz": n1 / dur_s if dur_s else 0.0,
               "rate_ch2_hz": n2 / dur_s if dur_s else 0.0}
    _dump(Path(str(out) + ".json"), {"provenance": provenance("simulate", cfg), "summary": summary})
    _say(args, f"wrote {out}: {len(stream)} events (CH1 {n1}, CH2 {n2}) in {dur_s:g} s, "
               f"total {summary['total_rate_hz'] / 1e6:.4f} MHz "
               f"(CH1 {summary['rate_ch1_hz'] / 1e6:.4f}, CH2 {summary['rate_ch2_hz'] / 1e6:.4f})")
    return EXIT_OK


def cmd_g2(args) -> int:
    cfg = resolve_config(args)
    stream = _load_stream(args.input)
    acc = CoincidenceAccumulator(cfg.bin_width_ps, cfg.max_delay_ps)
    acc.add(stream.timestamps, stream.channels)
    hist = acc.histogram(stream.duration_ps)
    try:
        raw = normalize_g2(hist)
    except ValueError as exc:
        raise AnalysisError(str(exc)) from None
    if cfg.rho is not None:
        rho, source = cfg.rho, "flag"
    else:
        explicit = args.config or any(getattr(args, f, None) is not None for f in _FLAG_MAP) \
            or args.preset
        side = None if explicit else _sidecar(args.input)
        emitter = cfg.emitter
        source = "config"
        if side and "provenance" in side:
            try:
                emitter = EmitterConfig(**side["provenance"]["config"]["emitter"])
                source = "stream sidecar config"
            except (KeyError, TypeError, ValueError):
                pass
        rho = emitter.snr
        source = f"S/(S+B) from {source}: S={emitter.signal_rate_hz:g} Hz, B={emitter.background_rate_hz:g} Hz"
    corrected = correct_curve(raw, rho)
    csv_path = _out_path(cfg, "g2.csv")
    json_path = _out_path(cfg, "g2.json")
    prov = provenance("g2", cfg, input=args.input)
    with open(csv_path, "w") as fh:
        write_g2_csv(fh, raw, corrected, [f"provenance: {json.dumps(prov, sort_keys=True)}"])
    record = {"provenance": prov, "rho": rho, "rho_source": source,
              "g2_0_raw": raw.at(0), "g2_0_corrected": corrected.at(0),
              "sigma_0_raw": raw.sigma_at(0), "sigma_0_corrected": corrected.sigma_at(0),
              "negative_corrected_bins": corrected.has_negative,
              "n1": hist.n1, "n2": hist.n2, "duration_ps": hist.duration_ps}
    _dump(json_path, record)
    _say(args, f"g2(0) raw {raw.at(0):.4f}, corrected {corrected.at(0):.4f} "
               f"+/- {corrected.sigma_at(0):.4f} (rho = {rho:.4f}, {source})")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    stream = _load_stream(args.input)
    raw, unbiased = extract_bits(stream)
    raw_path = _out_path(cfg, "raw.bits")
    ub_path = _out_path(cfg, "unbiased.bits")
    try:
        save_bits(raw, raw_path)
        save_bits(unbiased, ub_path)
    except OSError as exc:
        raise InputError(f"cannot write output: {exc}") from None
    dur_s = stream.duration_ps / PS_PER_S
    summary = {
        "raw_bits": raw.n, "unbiased_bits": unbiased.n,
        "raw_rate_hz": raw.n / dur_s if dur_s else 0.0,
        "unbiased_rate_hz": unbiased.n / dur_s if dur_s else 0.0,
        "unbiased_to_raw": unbiased.n / raw.n if raw.n else 0.0,
        "raw_p0": bias(raw)[0] if raw.n else None,
        "unbiased_p0": bias(unbiased)[0] if unbiased.n else None,
    }
    prov = provenance("extract", cfg, input=args.input)
    for p in (raw_path, ub_path):
        _dump(Path(str(p) + ".json"), {"provenance": prov, "summary": summary})
    _dump(_out_path(cfg, "extract.json"), {"provenance": prov, "summary": summary})
    _say(args, f"raw {raw.n} bits ({summary['raw_rate_hz'] / 1e6:.4f} MHz), unbiased {unbiased.n} bits "
               f"({summary['unbiased_rate_hz'] / 1e3:.1f} kHz), ratio {summary['unbiased_to_raw']:.4f}")
    return EXIT_OK


def cmd_test(args) -> int:
    cfg = resolve_config(args)
    bits = _load_bits(args.input)
    try:
        report = run_battery(bits, cfg.sequence_length, cfg.n_sequences, cfg.delta)
    except ValueError as exc:
        raise AnalysisError(str(exc)) from None
    prov = provenance("test", cfg, input=args.input)
    (_out_path(cfg, "report.json")).write_text(report.to_json(provenance=prov) + "\n")
    table = report.format_table()
    (_out_path(cfg, "report.txt")).write_text(
        f"# provenance: {json.dumps(prov, sort_keys=True)}\n{table}\n")
    _say(args, table)
    return EXIT_OK if report.passed else EXIT_ANALYSIS


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    try:
        points = read_points_csv(args.input)
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        fit = fit_saturation(points)
    except ValueError as exc:
        raise AnalysisError(str(exc)) from None
    prov = provenance("fit", cfg, input=args.input)
    (_out_path(cfg, "fit.json")).write_text(fit.to_json(provenance=prov) + "\n")
    _say(args, f"I_inf = {fit.i_infinity_hz:.6g} Hz, Ps = {fit.p_sat_mw:.6g} mW, "
               f"rms residual {fit.residual_norm:.4g} Hz")
    return EXIT_OK


def cmd_autocorr(args) -> int:
    cfg = resolve_config(args)
    bits = _load_bits(args.input)
    try:
        report = autocorrelation(bits, cfg.max_lag)
    except ValueError as exc:
        raise AnalysisError(str(exc)) from None
    prov = provenance("autocorr", cfg, input=args.input)
    path = _out_path(cfg, "autocorr.csv")
    with open(path, "w") as fh:
        write_autocorr_csv(fh, report, [f"provenance: {json.dumps(prov, sort_keys=True)}"])
    _say(args, f"max |coefficient| over lags 1..{cfg.max_lag}: {report.max_abs():.3g} (n = {report.n})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--preset", choices=["default", "device"])

    emitter = argparse.ArgumentParser(add_help=False)
    emitter.add_argument("--power-mw", type=float)
    emitter.add_argument("--saturation-mw", type=float)
    emitter.add_argument("--max-rate-hz", type=float)
    emitter.add_argument("--tau0-ps", type=int)
    emitter.add_argument("--background-hz", type=float)
    emitter.add_argument("--transmittance", type=float)
    emitter.add_argument("--dead-time-ps", type=int)
    emitter.add_argument("--dark-hz", type=float)
    emitter.add_argument("--duration-s", type=float)

    p = argparse.ArgumentParser(prog="spqrng", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"spqrng {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, emitter], help="simulate a time-tag stream")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("g2", parents=[common, emitter], help="raw and corrected g2 curves")
    s.add_argument("input")
    s.add_argument("--bin-width-ps", dest="bin_width_ps", type=int)
    s.add_argument("--max-delay-ps", dest="max_delay_ps", type=int)
    s.add_argument("--rho", type=float)
    s.set_defaults(func=cmd_g2)

    s = sub.add_parser("extract", parents=[common], help="raw and von Neumann bit files")
    s.add_argument("input")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("test", parents=[common], help="statistical battery on a bit file")
    s.add_argument("input")
    s.add_argument("--n-sequences", dest="n_sequences", type=int)
    s.add_argument("--sequence-length", dest="sequence_length", type=int)
    s.add_argument("--delta", type=float)
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("fit", parents=[common], help="saturation fit of a power,rate CSV")
    s.add_argument("input")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("autocorr", parents=[common], help="lag autocorrelation of a bit file")
    s.add_argument("input")
    s.add_argument("--max-lag", dest="max_lag", type=int)
    s.set_defaults(func=cmd_autocorr)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spqrng {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"spqrng {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except AnalysisError as exc:
        print(f"spqrng {args.command}: analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
