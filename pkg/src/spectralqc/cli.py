"""Command-line entry point: ``spectralqc <subcommand>``.

Data artifacts go to ``--out`` (default: current directory), logs to stderr,
and a short human summary to stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ConfigError, UnknownKeyError, VersionError

log = logging.getLogger("spectralqc")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNKNOWN_KEY = 3
EXIT_VERSION = 4
EXIT_BAD_VALUE = 5
EXIT_RUNTIME = 6


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _table(rows: list[tuple]) -> str:
    width = max(len(str(k)) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


# ---------------------------------------------------------------------------
# design / budget


def _design_from(cfg: Config, args):
    from .design import derive

    if getattr(args, "L", None) is not None:
        cfg.set("design.length_cm", args.L)
    if getattr(args, "D", None) is not None:
        cfg.set("design.waist_um", args.D)
    if getattr(args, "Q", None) is not None:
        cfg.set("design.quality", args.Q)
    return derive(cfg["design", "length_cm"], cfg["design", "waist_um"], cfg["design", "quality"],
                  cfg["design", "fsr_formula"])


def cmd_design(cfg: Config, args) -> dict:
    from .design import op_budget

    design = _design_from(cfg, args)
    budget = op_budget(design, cfg["design", "t2_ms"])
    report = design.report()
    report.update(ops_before_cavity_decay=budget.ops_before_cavity_decay,
                  limiting_resource=budget.limiting_resource)
    print(_table([("vacuum Rabi frequency g", f"{design.g_vacuum:.4g} MHz"),
                  ("cavity width", f"{design.kappa_width:.4g} kHz"),
                  ("photon lifetime", f"{design.photon_lifetime:.4g} ms"),
                  (f"FSR ({design.fsr_formula})", f"{design.fsr:.5g} MHz"),
                  ("operations per cavity lifetime", f"{budget.ops_before_cavity_decay:.4g}"),
                  ("limiting resource", budget.limiting_resource)]))
    _write_json(args.out / "design.json", report)
    return report


def cmd_budget(cfg: Config, args) -> dict:
    from .design import commensurate_fsr, op_budget, parallel_budget

    design = _design_from(cfg, args)
    budget = op_budget(design, cfg["design", "t2_ms"])
    n_par, total = parallel_budget(args.channels, budget.ops_before_cavity_decay)
    spacing_ghz = cfg["spectral", "channel_spacing"] / 1e3
    try:
        length, k = commensurate_fsr(design, spacing_ghz)
        fsr = design.with_length(length).fsr
    except ValueError as exc:
        log.warning("%s", exc)
        length, k, fsr = None, None, None
    report = {"n_channels": args.channels, "ops_before_cavity_decay": budget.ops_before_cavity_decay,
              "limiting_resource": budget.limiting_resource, "unbounded": budget.unbounded,
              "n_parallel": n_par, "total_ops_estimate": total, "commensurate_length_cm": length,
              "mode_stride": k, "commensurate_fsr_mhz": fsr}
    print(_table([("operations per cavity lifetime", f"{budget.ops_before_cavity_decay:.4g}"),
                  ("parallel pairs N_p", n_par), ("total operations", f"{total:.4g}"),
                  ("commensurate FSR", "n/a" if fsr is None else f"{fsr:.5g} MHz (k = {k}, L = {length:.5g} cm)")]))
    _write_json(args.out / "budget.json", report)
    return report


# ---------------------------------------------------------------------------
# channels


def _channel_table(cfg: Config):
    from .spectral import ChannelTable

    return ChannelTable(cfg["spectral", "inhomogeneous_width"], cfg["spectral", "channel_spacing"],
                        cfg["spectral", "profile"], cfg["spectral", "homogeneous_linewidth"])


def cmd_channels(cfg: Config, args) -> dict:
    from .spectral import DopedVolume, PrepParams, populate, prepare_all

    if args.pull_per_atom is not None:
        cfg.set("spectral.pull_per_atom", _parse_value(args.pull_per_atom))
    if args.noise is not None:
        cfg.set("spectral.measurement_noise", _parse_value(args.noise))
    pull = cfg["spectral", "pull_per_atom"]
    if pull is None:
        raise ConfigError("spectral.pull_per_atom must be set (config or --pull-per-atom)")
    rng = np.random.default_rng(args.seed)
    volume = DopedVolume(cfg["spectral", "dopant_density_cm3"], cfg["spectral", "volume_um3"], args.seed)
    table, summary = populate(volume, _channel_table(cfg), rng)
    params = PrepParams(pull, cfg["spectral", "measurement_noise"], cfg["spectral", "success_probability"])
    table, report = prepare_all(table, params, rng)
    (args.out / "channels.json").write_text(table.dumps() + "\n")
    out = {"populate": summary, "prepare": report}
    _write_json(args.out / "preparation.json", out)
    print(_table([("resolvable channels", table.n_resolvable), ("atoms drawn", summary["total_atoms"]),
                  ("empty channels", len(report["empty_channels"])), ("prepared", report["prepared"]),
                  ("deforming shots", report["total_shots"])]))
    return out


# ---------------------------------------------------------------------------
# simulate


def _noise(cfg: Config, spec: str):
    from .dynamics import NoiseParams

    if spec == "off":
        return None
    base = NoiseParams(cfg["noise", "kappa_width"] * 1e3, cfg["noise", "gamma_excited"], None,
                       cfg["noise", "t2_spin_ms"], cfg["noise", "t1_spin_s"])
    if spec == "default":
        return base
    if spec.startswith("x"):
        return base.scaled(float(spec[1:]))
    raise ConfigError(f"--noise must be off, default or xFACTOR, got {spec!r}")


def _cnot_case(payload):
    from .hilbert import Space, product_state
    from .protocol import cnot, intermediate_state_checks

    label, alpha, beta, target_bit, noise, stirap, cavity_dim, tol, detuning = payload
    space = Space(2, cavity_dim)
    # channel 1 sends and controls, channel 0 receives and is the target
    target = {"e": 1.0} if target_bit == 0 else {"f": 1.0}
    state = product_state(space, [target, {"e": alpha, "f": beta}])
    res = cnot(1, 0, noise=noise, state=state, stirap=stirap, tol=tol, cavity_detuning=detuning)
    checks = intermediate_state_checks(res)
    return {"input": label, "alpha": alpha, "beta": beta, "target_bit": target_bit, "fidelity": res.fidelity,
            "photons_final": res.state.photon_number(),
            "stages": [{"stage": r["stage"], "t_end_us": r["t_end_us"], "overlap": r["overlap"]} for r in res.trace],
            "checkpoints": checks["checkpoints"]}


def _stirap_settings(cfg: Config) -> dict:
    return {"omega_peak": cfg["pulses", "stirap_omega"], "duration": cfg["pulses", "stirap_duration_us"],
            "overlap_fraction": cfg["pulses", "stirap_overlap"]}


def _cavity_detuning(cfg: Config) -> float:
    if cfg["frame", "cavity_detuning_policy"] == "detuned":
        from .dynamics import FrameConfig
        from .hilbert import LevelScheme

        frame = FrameConfig.detuned(cfg["frame", "cavity_detuning"])
        frame.validate(LevelScheme())
        return frame.cavity_detuning
    return 0.0


def _run_cases(fn, cases, jobs: int):
    if jobs > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, cases))
    return [fn(c) for c in cases]


def sim_cnot(cfg: Config, args) -> dict:
    noise = _noise(cfg, args.noise)
    norm = math.hypot(args.alpha, args.beta)
    if norm == 0:
        raise ConfigError("alpha and beta cannot both vanish")
    common = (noise, _stirap_settings(cfg), cfg["simulation", "cavity_dim"], cfg["simulation", "tol"],
              _cavity_detuning(cfg))
    cases = [("superposition", args.alpha / norm, args.beta / norm, 0, *common)]
    if args.basis:
        cases += [(f"|{c}{t}>", float(c == 0), float(c == 1), t, *common) for c in (0, 1) for t in (0, 1)]
    results = _run_cases(_cnot_case, cases, args.jobs)
    rows = [{"input": r["input"], "stage": s["stage"], "t_end_us": s["t_end_us"], "overlap": s["overlap"]}
            for r in results for s in r["stages"]]
    _write_csv(args.out / "trace.csv", rows)
    summary = {"protocol": "cnot", "noise": args.noise, "seed": args.seed, "results": results}
    _write_json(args.out / "summary.json", summary)
    for r in results:
        print(f"{r['input']}: fidelity {r['fidelity']:.6f}")
        for c in r["checkpoints"] if r["input"] == "superposition" else []:
            print(f"  {c['checkpoint']:<28} overlap {c['overlap']:.6f} {'ok' if c['passed'] else 'FAIL'}")
    return summary


def sim_stirap(cfg: Config, args) -> dict:
    from .hilbert import Space, product_state
    from .pulses import run_primitive, stirap_exchange

    st = _stirap_settings(cfg)
    space = Space(2, cfg["simulation", "cavity_dim"])
    norm = math.hypot(args.alpha, args.beta)
    state = product_state(space, [{"a": args.alpha / norm, "c": args.beta / norm}, "a"])
    prim = stirap_exchange(0, 1, detuning=_cavity_detuning(cfg), **st)
    out, tr = run_primitive(state, prim, _noise(cfg, args.noise), samples=200)
    rows = [{"t_us": t, "excited": e, "photons": n, "leak": lk}
            for t, e, n, lk in zip(tr["t"], tr["excited"], tr["photons"], tr["leak"])]
    _write_csv(args.out / "trace.csv", rows)
    r1 = out.population(1, "c") + out.population(1, "a")
    summary = {"protocol": "stirap", "noise": args.noise, "duration_us": prim.duration,
               "peak_excited": float(tr["excited"].max()), "peak_leak": float(tr["leak"].max()),
               "final_photons": float(tr["photons"][-1]), "receiver_population_ac": r1,
               "sender_population_c": out.population(0, "c")}
    _write_json(args.out / "summary.json", summary)
    print(_table([(k, v) for k, v in summary.items()]))
    return summary


def sim_raman(cfg: Config, args) -> dict:
    from .hilbert import LEVEL_INDEX
    from .pulses import calibrate_raman_pi, local_unitary

    omega, delta = cfg["pulses", "raman_omega"], cfg["pulses", "raman_detuning"]
    pair = tuple(args.pair.split(","))
    pulse = calibrate_raman_pi(0, pair, omega, delta)
    u = local_unitary(pulse)
    transfer = abs(u[LEVEL_INDEX[pair[1]], LEVEL_INDEX[pair[0]]]) ** 2
    analytic = 1 / (2 * omega**2 / (2 * delta))
    summary = {"protocol": "raman-pi", "pair": list(pair), "omega_mhz": omega, "detuning_mhz": delta,
               "duration_us": pulse.envelope.duration, "two_photon_correction_mhz": pulse.detuning[1] - pulse.detuning[0],
               "transfer": transfer, "analytic_duration_us": analytic}
    _write_json(args.out / "summary.json", summary)
    _write_csv(args.out / "trace.csv", [{k: v for k, v in summary.items() if not isinstance(v, list)}])
    print(_table([(k, v) for k, v in summary.items()]))
    return summary


def sim_schedule(cfg: Config, args) -> dict:
    from .compiler import parse_schedule, simulate_schedule
    from .hilbert import Space, product_state

    if not args.schedule:
        raise ConfigError("simulate schedule needs --schedule FILE")
    sched = parse_schedule(Path(args.schedule).read_text())
    window = [int(w) for w in args.window.split(",")] if args.window else None
    n = len(window) if window else sched.n_channels
    state = product_state(Space(n, cfg["simulation", "cavity_dim"]), ["e"] * n)
    _, trace = simulate_schedule(sched, state, _noise(cfg, args.noise), window)
    _write_csv(args.out / "trace.csv", trace)
    summary = {"protocol": "schedule", "noise": args.noise, "slots": len(trace),
               "final_fidelity": trace[-1]["fidelity"] if trace else 1.0}
    _write_json(args.out / "summary.json", summary)
    print(_table([(k, v) for k, v in summary.items()]))
    return summary


def cmd_simulate(cfg: Config, args) -> dict:
    return {"cnot": sim_cnot, "stirap": sim_stirap, "raman-pi": sim_raman, "schedule": sim_schedule}[args.protocol](
        cfg, args)


# ---------------------------------------------------------------------------
# compile


def cmd_compile(cfg: Config, args) -> dict:
    from .compiler import emit, parse_circuit, route, routing_overhead, schedule, validate_schedule
    from .design import derive
    from .spectral import ChannelTable

    circuit = parse_circuit(Path(args.circuit).read_text())
    routed = route(circuit)
    n = args.channels or circuit.n_qubits
    sched = schedule(routed, n, cfg["compiler", "mode_stride"])
    problems = validate_schedule(sched)
    if problems:
        raise RuntimeError("guard-rule validator rejected the schedule: " + "; ".join(problems))
    if args.table:
        table = ChannelTable.loads(Path(args.table).read_text())
    else:
        # an ideal, fully prepared table with the configured spacing
        table = _channel_table(cfg)
        table.occupancy[:] = 1
        table.in_window[:] = 1
        table.prepared[:] = True
    design = derive(cfg["design", "length_cm"], cfg["design", "waist_um"], cfg["design", "quality"],
                    cfg["design", "fsr_formula"])
    text, cost = emit(sched, table, design, t2_ms=cfg["design", "t2_ms"])
    (args.out / "schedule.json").write_text(text + "\n")
    report = {"routing": routing_overhead(circuit, routed), "cost": cost.__dict__}
    _write_json(args.out / "cost.json", report)
    print(_table([("gates (routed)", len(routed.gates)), ("slots", cost.total_slots),
                  ("wall time", f"{cost.wall_time_us:.6g} us"), ("budget fraction", f"{cost.overrun_factor:.3g}")]))
    return report


# ---------------------------------------------------------------------------


GLOBAL_DEFAULTS = {"config": None, "set": None, "seed": 0, "jobs": 1, "out": Path("."), "verbose": False}


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # registered on the main parser and on every subcommand so they may appear on either side
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", help="JSON config file", **kw)
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config key (value parsed as JSON, else as a string)", **kw)
    parser.add_argument("--seed", type=int, help="RNG seed (default 0)", **kw)
    parser.add_argument("--jobs", type=int, help="worker processes for independent trials (default 1)", **kw)
    parser.add_argument("--out", type=Path, help="directory for data artifacts (default .)", **kw)
    parser.add_argument("-v", "--verbose", action="store_true", **kw)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectralqc", description="Spectral-hole-burning quantum computer toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    _global_options(p, suppress=False)
    p.set_defaults(**GLOBAL_DEFAULTS)
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        sp = _add(name, **kw)
        _global_options(sp, suppress=True)
        return sp

    sub.add_parser = add_parser

    d = sub.add_parser("design", help="cavity figures from geometry")
    for s in (d, sub.add_parser("budget", help="operation and parallelism budget")):
        s.add_argument("--D", type=float, help="waist (um)")
        s.add_argument("--L", type=float, help="length (cm)")
        s.add_argument("--Q", type=float, help="quality factor")
        if s is not d:
            s.add_argument("--channels", type=int, default=300)

    c = sub.add_parser("channels", help="populate and prepare the spectral channels")
    c.add_argument("--pull-per-atom", help="cavity pull per atom (kHz, or suffixed)")
    c.add_argument("--noise", help="per-probe pull noise (kHz, or suffixed)")

    s = sub.add_parser("simulate", help="run a protocol")
    s.add_argument("protocol", choices=["cnot", "stirap", "raman-pi", "schedule"])
    s.add_argument("--noise", default="off", help="off, default or xFACTOR (scaled default noise)")
    s.add_argument("--alpha", type=float, default=1 / math.sqrt(2))
    s.add_argument("--beta", type=float, default=1 / math.sqrt(2))
    s.add_argument("--basis", action="store_true", help="also run the four computational basis inputs (cnot)")
    s.add_argument("--pair", default="e,a", help="ground levels of the Raman pulse (raman-pi)")
    s.add_argument("--schedule", help="schedule file (schedule)")
    s.add_argument("--window", help="comma-separated channels to simulate (schedule)")

    k = sub.add_parser("compile", help="route, schedule and emit a circuit")
    k.add_argument("circuit", help="circuit text file")
    k.add_argument("--channels", type=int, help="number of channels (default: circuit qubits)")
    k.add_argument("--table", help="prepared channel table file")
    return p


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.load(args.config) if args.config else Config()
        for item in args.set or []:
            path, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
            cfg.set(path, _parse_value(value))
        args.out.mkdir(parents=True, exist_ok=True)
        handler = {"design": cmd_design, "budget": cmd_budget, "channels": cmd_channels,
                   "simulate": cmd_simulate, "compile": cmd_compile}[args.command]
        handler(cfg, args)
    except UnknownKeyError as exc:
        log.error("%s", exc)
        return EXIT_UNKNOWN_KEY
    except VersionError as exc:
        log.error("%s", exc)
        return EXIT_VERSION
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_BAD_VALUE
    except (ValueError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
