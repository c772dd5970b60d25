"""``hdqkd`` command-line front end."""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import fields, replace

import numpy as np

from . import errors
from .channel import key_rate
from .config import PRESETS, RunConfig, load_config, preset
from .eventsim import ClockModel, TimebinGeometry, attenuation_samples, generate_sequence, simulate_session
from .io import (atomic_write, read_samples_csv, read_tags, write_rows_csv, write_samples_csv,
                 write_tags_binary, write_tags_csv)
from .optimizer import (OptimizationSpec, bin_and_key, compare_dimensions, crossover_attenuation,
                        optimize_params)
from .phaselock import LockConfig, simulate_phase_lock, sinusoidal_drift
from .sync import SyncState, TrackConfig, acquire, pattern_length_for_span, run_tracking
from .tdev import tdev

EXIT_OK = 0
EXIT_CODES = {
    "ValidationError": 2,
    "AcquisitionFailed": 3,
    "NoPositiveKey": 4,
    "SlipUnrecovered": 5,
    "LockLost": 6,
    "NoCrossover": 7,
    "PeakLost": 8,
    "Unsynchronized": 9,
    "InsufficientStatistics": 10,
    "SeriesTooShort": 11,
}

_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9, "ps": 1e-12}


def parse_duration(text: str) -> float:
    """``"50ns"`` -> 5e-8; a bare number is taken as seconds."""
    m = re.fullmatch(r"\s*([-+]?[0-9.]+(?:[eE][-+]?\d+)?)\s*([a-zµ]*)\s*", text)
    if not m or m.group(2) not in _UNITS and m.group(2) != "":
        raise argparse.ArgumentTypeError(f"cannot parse duration {text!r}")
    return float(m.group(1)) * _UNITS.get(m.group(2), 1.0)


def parse_range(text: str) -> np.ndarray:
    """``start:stop:step`` inclusive of ``stop``, or a comma list."""
    try:
        if ":" in text:
            a, b, s = (float(x) for x in text.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            return np.round(np.arange(a, b + s / 2, s), 12)
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


# ---------------------------------------------------------------- config plumbing

_OVERRIDES = {
    # flag: (config field, type, help)
    "--d": ("d", int, "encoding dimension"),
    "--loss-db": ("loss_db", float, "channel attenuation in dB"),
    "--mu1": ("mu1", float, "signal mean photon number"),
    "--mu2": ("mu2", float, "decoy mean photon number"),
    "--p-mu1": ("p_mu1", float, "signal probability"),
    "--pz": ("P_Z", float, "Z-basis probability"),
    "--c": ("c_overlap", float, "overlap parameter in bits"),
    "--base-rate": ("base_rate", float, "2D symbol rate in Hz"),
    "--t-dt": ("t_DT", parse_duration, "detector dead time (e.g. 50ns)"),
    "--p-dc": ("P_DC", float, "dark-count probability per symbol"),
    "--p-err": ("P_err", float, "intrinsic error probability"),
    "--n-z": ("n_Z", float, "Z-basis block size"),
    "--eps-sec": ("eps_sec", float, "secrecy parameter"),
    "--eps-cor": ("eps_cor", float, "correctness parameter"),
    "--f-e": ("f_e", float, "error-correction inefficiency"),
    "--error-model": ("error_model", str, "corrected or printed"),
    "--hoeffding-log-base": ("hoeffding_log_base", float, "log base inside Hoeffding terms"),
    "--seed": ("seed", int, "random seed"),
}


def _add_config_args(p: argparse.ArgumentParser, default_preset: str = "fig4") -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help=f"named parameter set (default {default_preset})")
    g.add_argument("--config", help="INI file; relative names also searched in $HDQKD_CONFIG_DIR")
    g.add_argument("--no-rate-scaling", action="store_true",
                   help="run every dimension at the base rate")
    g.add_argument("--no-postselection", action="store_true",
                   help="drop the interferometric post-selection loss")
    for flag, (dest, typ, hlp) in _OVERRIDES.items():
        g.add_argument(flag, dest=f"ov_{dest}", type=typ, default=None, help=hlp,
                       metavar=flag.lstrip("-").replace("-", "_").upper())
    p.set_defaults(default_preset=default_preset)


def _config(args) -> RunConfig:
    if args.config and args.preset:
        raise ValueError("give --preset or --config, not both")
    cfg = load_config(args.config) if args.config else preset(args.preset or args.default_preset)
    ov = {k[3:]: v for k, v in vars(args).items() if k.startswith("ov_")}
    if args.no_rate_scaling:
        ov["rate_scaling"] = False
    if args.no_postselection:
        ov["include_postselection"] = False
    d = ov.get("d")
    if d is not None and d != cfg.d and ov.get("c_overlap") is None:
        # a preset's overlap was measured for its own dimension
        cfg = replace(cfg, d=d, c_overlap=None)
    return cfg.updated(**ov)


def _summary(command: str, cfg: RunConfig, **payload) -> dict:
    return {"command": command, "config_hash": cfg.config_hash(), "seed": cfg.seed,
            "config": {f.name: getattr(cfg, f.name) for f in fields(cfg)}, **payload}


def _emit(args, summary: dict) -> None:
    text = json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if getattr(args, "json", None):
        atomic_write(args.json, text)
    sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _table(args, header, rows) -> None:
    if getattr(args, "out", None):
        write_rows_csv(args.out, header, rows)
    sys.stdout.write(",".join(header) + "\n")
    for r in rows:
        sys.stdout.write(",".join(_cell(v) for v in r) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


# ---------------------------------------------------------------- commands

def cmd_keyrate(args) -> int:
    cfg = _config(args)
    res = key_rate(cfg.protocol(), cfg.channel(), cfg.n_Z)
    _emit(args, _summary("keyrate", cfg, result=res.to_dict(), skr_kbps=float(res.skr) / 1e3))
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _config(args)
    spec = OptimizationSpec(cfg.protocol(), cfg.channel(), cfg.loss_db, cfg.n_Z,
                            points=args.points, refinements=args.refinements,
                            P_Z_range=(0.5, 0.98) if args.optimize_pz else None)
    best, skr = optimize_params(spec)
    res = key_rate(best, cfg.channel(), cfg.n_Z)
    point = {k: float(getattr(best, k)) for k in ("mu1", "mu2", "p_mu1", "P_Z")}
    _emit(args, _summary("optimize", cfg, optimum=point, skr=skr, result=res.to_dict()))
    return EXIT_OK


def _params_for(cfg: RunConfig, d: int):
    c = cfg.c_overlap if d == cfg.d else None
    return replace(cfg, d=d, c_overlap=c).protocol()


def cmd_sweep(args) -> int:
    cfg = _config(args)
    dims = sorted(set(args.dims))
    params = {d: _params_for(cfg, d) for d in dims}
    curves = compare_dimensions(dims, cfg.channel(), cfg.n_Z, args.loss, params,
                                optimize=args.optimize, points=args.points)
    header = ["loss_db"] + [f"skr_d{d}" for d in dims]
    rows = [[L] + [curves[d][i][1] for d in dims] for i, L in enumerate(args.loss.tolist())]
    _table(args, header, rows)
    return EXIT_OK


def cmd_crossover(args) -> int:
    cfg = _config(args)
    base = {2: preset("table2-2d"), 4: preset("table2-4d")}
    if args.ideal_overlap:
        base = {d: replace(c, c_overlap=None) for d, c in base.items()}
    rows, failures = [], []
    for ta in args.ta:
        params = {}
        for d, c in base.items():
            params[d] = replace(c, t_DT=ta, rate_scaling=cfg.rate_scaling,
                                base_rate=cfg.base_rate).protocol()
        channel = replace(cfg.channel(), t_DT=ta)
        try:
            x = crossover_attenuation(channel, params, 2, 4, cfg.n_Z, optimize=args.optimize,
                                      hi=args.max_loss)
            rows.append([ta * 1e9, x, ""])
        except errors.NoCrossover as exc:
            failures.append(exc)
            rows.append([ta * 1e9, None, exc.leader])
    _table(args, ["t_DT_ns", "crossover_db", "leader_if_none"], rows)
    if len(failures) == len(args.ta):
        raise failures[0]
    return EXIT_OK


def cmd_bin(args) -> int:
    cfg = _config(args)
    samples = read_samples_csv(args.input)
    params = cfg.protocol()
    target = args.block_target or cfg.n_Z
    results = bin_and_key(samples, params, args.bin_width, target)
    rows = []
    for r in results:
        # the trend uses the same block size as the binned keys
        trend = float(key_rate(params, cfg.channel().with_loss(r.mean_loss), target).skr)
        rel = (r.skr - trend) / trend if r.skr is not None and trend > 0 else None
        rows.append([r.loss_db, r.mean_loss, r.occupancy, r.blocks, r.skr, trend, rel])
    _table(args, ["bin_db", "mean_loss_db", "occupancy", "blocks", "skr", "analytic_skr",
                  "rel_diff"], rows)
    return EXIT_OK


def cmd_gen_samples(args) -> int:
    cfg = _config(args)
    rng = np.random.default_rng(cfg.seed)
    # AR(1) fluctuation around the mean loss
    n = args.count
    a = math.exp(-args.interval / args.correlation) if args.correlation > 0 else 0.0
    z = np.empty(n)
    z[0] = rng.normal()
    for k in range(1, n):
        z[k] = a * z[k - 1] + math.sqrt(1 - a * a) * rng.normal()
    losses = np.clip(cfg.loss_db + args.loss_std * z, 0.0, None)
    samples = attenuation_samples(cfg.protocol(), cfg.channel(), losses, args.interval,
                                  seed=int(rng.integers(2**63)))
    write_samples_csv(args.out, samples)
    sys.stdout.write(f"wrote {len(samples)} samples to {args.out}\n")
    return EXIT_OK


def _pattern(cfg: RunConfig, args, span: float = 0.0):
    """Sender pattern and geometry; fully determined by the config seed."""
    params = cfg.protocol()
    geo = TimebinGeometry.for_dimension(cfg.d, params.R)
    rng = np.random.default_rng(cfg.seed)
    length = args.seq_length
    if length is None:
        length = pattern_length_for_span(span, geo.clock_period)
    seq = generate_sequence(length, cfg.d, float(params.P_Z), float(params.p_mu1),
                            seed=int(rng.integers(2**63)))
    return seq, geo, rng


def _session(cfg: RunConfig, args, offset: float = 0.0, frac: float = 0.0,
             white_pm: float = 0.0, span: float = 0.0):
    seq, geo, rng = _pattern(cfg, args, span)
    channel = cfg.channel()
    if args.channel == "off":
        channel = channel.with_loss(400.0)
    clock = ClockModel(offset=offset, fractional_offset=frac, white_pm_sigma=white_pm)
    tags = simulate_session(seq, geo, channel, cfg.protocol(), duration_s=args.duration,
                            clock=clock, seed=int(rng.integers(2**63)))
    return seq, geo, clock, tags


def cmd_simulate(args) -> int:
    cfg = _config(args)
    seq, geo, clock, tags = _session(cfg, args, args.inject_offset, args.fractional_offset,
                                     span=args.search_span)
    if args.format == "bin":
        write_tags_binary(args.out, tags, blind=args.blind)
    else:
        write_tags_csv(args.out, tags, blind=args.blind)
    summ = _summary("simulate", cfg, n_tags=len(tags), n_sent=tags.n_sent,
                    sequence_length=len(seq), output=args.out)
    _emit(args, summ)
    return EXIT_OK


def cmd_sync(args) -> int:
    cfg = _config(args)
    if args.input:
        # a file from `simulate` with the same config and pattern settings
        seq, geo, _ = _pattern(cfg, args, args.search_span)
        tags = read_tags(args.input)
        clock = ClockModel(offset=args.inject_offset, fractional_offset=args.fractional_offset)
    else:
        seq, geo, clock, tags = _session(cfg, args, args.inject_offset, args.fractional_offset,
                                         args.white_pm, args.search_span)
    T = geo.clock_period
    rows_written = []
    try:
        if len(tags) == 0:
            raise errors.AcquisitionFailed("no detections (channel off?)")
        t0 = float(tags.time[0])
        acq_tags = tags.select(tags.time < t0 + args.acq_window)
        acq = acquire(seq, acq_tags, geo, args.search_span, args.threshold)
        err = acq.offset - args.inject_offset
        if seq.looped:
            period = len(seq) * T
            err = (err + period / 2) % period - period / 2
        state = SyncState(acq.offset, 0.0)
        cfg_t = TrackConfig(window=args.window)
        state, rows = run_tracking(state, tags, geo, cfg_t, truth=clock.deterministic)
        rows_written = rows
        resid = np.array([r[4] for r in rows if r[3]])
        rms = float(np.sqrt(np.mean(resid**2))) if resid.size else math.nan
        tdev_rows = []
        for m in (1, 2, 4, 8):
            if 3 * m <= resid.size:
                tdev_rows.append({"tau_s": m * args.window,
                                  "tdev_s": float(tdev(resid, args.window, [m * args.window])[0])})
        summ = _summary("sync", cfg, injected_offset_s=args.inject_offset,
                        acquired_offset_s=acq.offset, offset_error_s=err,
                        offset_error_cycles=err / T, within_half_period=bool(abs(err) <= T / 2),
                        significance=acq.significance, windows=len(rows),
                        residual_rms_s=rms, tdev=tdev_rows, n_tags=len(tags))
    finally:
        if args.telemetry:
            write_rows_csv(args.telemetry, ["t_s", "offset_estimate_s", "freq_estimate",
                                            "locked", "residual_s"],
                           [[repr(a), repr(b), repr(c), int(dd), repr(e)]
                            for a, b, c, dd, e in rows_written])
    _emit(args, summ)
    return EXIT_OK


def cmd_lock(args) -> int:
    cfg = _config(args)
    n = args.steps
    if args.drift == "sinusoid":
        drift = sinusoidal_drift(n, args.amplitude, args.period)
    elif args.drift == "linear":
        drift = args.amplitude * np.arange(n) / args.period
    else:
        drift = np.zeros(n)
    lock = LockConfig(gain=args.gain, dither=args.dither, dwell=args.dwell)
    escape = 0.5 * (1 - 1 / cfg.d)
    tel = None
    try:
        tel = simulate_phase_lock(drift, lock, cfg.d, args.e0, args.visibility,
                                  counts=args.counts or None, seed=cfg.seed)
    finally:
        if args.telemetry and tel is not None:
            write_rows_csv(args.telemetry, ["step", "phase_rad", "qber", "qber_measured", "control"],
                           [[k, repr(a), repr(b), repr(c), repr(e)] for k, (a, b, c, e) in
                            enumerate(zip(tel["phase"].tolist(), tel["qber"].tolist(),
                                          tel["qber_measured"].tolist(), tel["control"].tolist()))])
    settle = min(n // 2, max(int(args.period), 1))
    steady = float(np.mean(tel["qber"][settle:]))
    _emit(args, _summary("lock", cfg, steady_state_qber=steady, e0=args.e0,
                         escape_threshold=escape, below_escape=steady < escape,
                         settle_steps=settle, steps=n))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdqkd", description="Finite-key analysis, simulation "
                                 "and stabilization tools for time-bin QKD.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyrate", help="secret key rate with every intermediate bound")
    _add_config_args(p)
    p.add_argument("--json", help="also write the JSON summary here")
    p.set_defaults(func=cmd_keyrate)

    p = sub.add_parser("optimize", help="maximize the key rate over intensities")
    _add_config_args(p)
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--refinements", type=int, default=2)
    p.add_argument("--optimize-pz", action="store_true", help="also search P_Z")
    p.add_argument("--json")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="key rate versus loss for several dimensions")
    _add_config_args(p, "fig5")
    p.add_argument("--dims", "--dimensions", type=_int_list, default=[2, 4, 8, 16])
    p.add_argument("--loss", type=parse_range, default=parse_range("0:40:1"),
                   help="start:stop:step in dB")
    p.add_argument("--optimize", action="store_true", help="optimize parameters at every point")
    p.add_argument("--points", type=int, default=8, help="grid points per axis when optimizing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("crossover", help="2D/4D crossover loss for given dead times")
    _add_config_args(p)
    p.add_argument("--ta", type=lambda s: [parse_duration(x) for x in s.split(",")],
                   default=[50e-9], help="dead time(s), e.g. 10ns,25ns,50ns")
    p.add_argument("--optimize", action="store_true")
    p.add_argument("--ideal-overlap", action="store_true", help="use c = log2 d")
    p.add_argument("--max-loss", type=float, default=60.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("bin", help="attenuation-binned finite keys from a sample CSV")
    _add_config_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--block-target", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bin)

    p = sub.add_parser("gen-samples", help="synthetic attenuation-sample CSV")
    _add_config_args(p)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--interval", type=float, default=1.0, help="seconds per sample")
    p.add_argument("--loss-std", type=float, default=1.5)
    p.add_argument("--correlation", type=float, default=30.0, help="seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_samples)

    def session_args(p, duration):
        p.add_argument("--duration", type=parse_duration, default=duration)
        p.add_argument("--inject-offset", type=parse_duration, default=0.0)
        p.add_argument("--fractional-offset", type=float, default=0.0)
        p.add_argument("--seq-length", type=int, default=None,
                       help="looped pattern length (default: long enough for the search span)")
        p.add_argument("--channel", choices=("on", "off"), default="on")

    p = sub.add_parser("simulate", help="simulate a tag stream")
    _add_config_args(p)
    session_args(p, 0.01)
    p.add_argument("--search-span", type=parse_duration, default=1e-3,
                   help="sizes the default pattern length as in `sync`")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--blind", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync", help="acquire and track a simulated session")
    _add_config_args(p)
    session_args(p, 2.0)
    p.add_argument("--search-span", type=parse_duration, default=1e-3)
    p.add_argument("--acq-window", type=parse_duration, default=5e-3)
    p.add_argument("--threshold", type=float, default=8.0)
    p.add_argument("--window", type=parse_duration, default=0.1)
    p.add_argument("--white-pm", type=parse_duration, default=0.0)
    p.add_argument("--input", help="tag file (CSV or binary) instead of simulating; the "
                   "injected offset then serves as the reference truth")
    p.add_argument("--telemetry")
    p.add_argument("--json")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("lock", help="QBER-driven interferometer phase lock")
    _add_config_args(p)
    p.add_argument("--drift", choices=("sinusoid", "linear", "none"), default="sinusoid")
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--period", type=float, default=1000.0)
    p.add_argument("--amplitude", type=float, default=math.pi)
    p.add_argument("--gain", type=float, default=2.0)
    p.add_argument("--dither", type=float, default=0.1)
    p.add_argument("--dwell", type=int, default=50)
    p.add_argument("--e0", type=float, default=0.005)
    p.add_argument("--visibility", type=float, default=1.0)
    p.add_argument("--counts", type=int, default=10000, help="events per QBER sample; 0 = exact")
    p.add_argument("--telemetry")
    p.add_argument("--json")
    p.set_defaults(func=cmd_lock)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.HdqkdError as exc:
        name = type(exc).__name__
        return _fail(name, EXIT_CODES.get(name, 1), str(exc), getattr(exc, "leader", None))
    except (ValueError, FileNotFoundError, argparse.ArgumentTypeError) as exc:
        return _fail("ValidationError", EXIT_CODES["ValidationError"], str(exc))


def _fail(name: str, code: int, message: str, leader=None) -> int:
    err = {"error": name, "exit_code": code, "message": message}
    if leader is not None:
        err["leader"] = leader
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
