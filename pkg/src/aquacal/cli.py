"""``aquacal`` command line.

Exit codes: 0 ok, 2 parse or validation error, 3 hydraulic convergence
failure, 4 I/O error, 5 rule conflict, 6 schema-incompatible seed archive.
Every command writes ``manifest.json`` into its output directory; ``aquacal
replay <manifest>`` reruns it and checks the outputs are bit-identical.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import archive as arch
from .calibration import (COMBINED, CalibrationError, Objective, calibrate, prepare, read_measurements,
                          read_sensors, write_measurements, write_sensors)
from .comparison import aggregate, canonical_methods, compare, curve_csv, table_csv
from .config import RunConfig
from .hydraulics import HydraulicNetwork, SimulationError, eps_times, extract_observations, result_to_csv
from .network import InpError, apply_parameters, parse_inp, validate, write_inp
from .rules import RuleConflictError, RuleError, compile_rules, parse_rules, rules_fingerprint
from .synth import Perturbation, SynthError, make_problem

log = logging.getLogger("aquacal")

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_IO, EXIT_CONFLICT, EXIT_SEED = 0, 2, 3, 4, 5, 6
MANIFEST = "manifest.json"
DEFAULT_OUT = "aquacal-out"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


class Outputs:
    """Files written by a command, all inside one directory."""

    def __init__(self, root: Path):
        self.root = root
        self.written: list[str] = []

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        if name not in self.written:
            self.written.append(name)
        return path


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from None


def _sha(path: str | Path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _load_model(path: str):
    model = parse_inp(_read(path))
    errors = [d for d in validate(model) if d.severity == "ERROR"]
    if errors:
        raise CliError(f"{path}: " + "; ".join(str(d) for d in errors), EXIT_INPUT)
    for note in model.notes:
        log.warning("%s: %s", path, note)
    return model


def _load_problem(args):
    model = _load_model(args.inp)
    rules = parse_rules(_read(args.rules))
    space = compile_rules(rules, model)
    if len(space) == 0:
        raise CliError("rules match no element: parameter space is empty", EXIT_INPUT)
    measurements = read_measurements(_read(args.measurements))
    sensors = read_sensors(_read(args.sensors))
    try:
        sensors.check(model)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{args.sensors}: {exc}", EXIT_INPUT) from None
    return model, rules, space, measurements, sensors


def _created_at() -> str:
    # deterministic unless the caller pins a build time
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return dt.datetime.fromtimestamp(epoch, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _map(threads: int):
    if threads <= 1:
        return map, contextlib.nullcontext()
    from concurrent.futures import ThreadPoolExecutor
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg, out: Outputs):
    model = _load_model(args.inp)
    duration = model.options.duration if args.duration is None else args.duration * 3600.0
    step = model.options.hydraulic_step if args.step is None else args.step * 60.0
    try:
        times = eps_times(duration, step)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    result = HydraulicNetwork(model).simulate(times)
    out.write("result.csv", result_to_csv(result, model))
    if not result.all_converged:
        bad = int(np.flatnonzero(~result.converged)[0])
        raise CliError(f"hydraulics did not converge at t={result.timestamps[bad]!r} s", EXIT_CONVERGENCE)
    print(f"timesteps {len(times)}")
    print(f"max_iterations {int(result.iterations.max())}")


def _perturbation(text: str) -> Perturbation:
    if text in ("", "default"):
        return Perturbation()
    if text == "none":
        return Perturbation.none()
    kwargs = {}
    base = Perturbation()
    for item in text.split(";"):
        key, _, value = item.partition("=")
        key = key.strip()
        if not hasattr(base, key):
            raise CliError(f"unknown perturbation field {key!r}", EXIT_INPUT)
        current = getattr(base, key)
        try:
            if isinstance(current, tuple):
                kwargs[key] = tuple(float(v) for v in value.split(","))
            else:
                kwargs[key] = float(value)
        except ValueError:
            raise CliError(f"bad perturbation value {item!r}", EXIT_INPUT) from None
    return replace(base, **kwargs)


def cmd_synth(args, cfg, out: Outputs):
    profile = args.profile
    n = args.junctions
    if profile.startswith("scaled(") and profile.endswith(")"):
        n = int(profile[len("scaled("):-1])
        profile = "scaled"
    if args.noise < 0:
        raise CliError("noise sigma must be nonnegative", EXIT_INPUT)
    problem = make_problem(profile, seed=args.seed, noise=args.noise, pert=_perturbation(args.perturbation),
                           n_junctions=n)
    out.write("network.inp", write_inp(problem.model))
    out.write("truth.inp", write_inp(problem.truth))
    out.write("rules.txt", problem.rules_text)
    out.write("sensors.txt", write_sensors(problem.sensors))
    out.write("measurements.csv", write_measurements(problem.measurements, problem.model))
    out.write("notes.txt", "\n".join(problem.notes) + "\n")
    print(f"junctions {len(problem.model.junctions)} pipes {len(problem.model.pipes)} "
          f"reservoirs {len(problem.model.reservoirs)}")


def cmd_rules_check(args, cfg, out: Outputs):
    model = _load_model(args.inp)
    rules = parse_rules(_read(args.rules))
    space = compile_rules(rules, model)
    rows = ["name,group,lo,hi,prior,rules"]
    for s in space.specs:
        rows.append(f"{s.name},{s.group},{s.lo!r},{s.hi!r},{s.prior},{' '.join(s.source_rule_ids)}")
    out.write("parameters.csv", "\n".join(rows) + "\n")
    for group in ("flow", "pressure"):
        kinds = space.parameter_kinds(group)
        print(f"{group}: {len(space.group_indices(group))} parameters, kinds {','.join(kinds) or '-'}")
    print(f"rules {len(rules)} fingerprint {rules_fingerprint(rules)}")


def cmd_calibrate(args, cfg, out: Outputs):
    model, rules, space, measurements, sensors = _load_problem(args)
    neat = cfg.neat
    if args.generations is not None:
        neat = replace(neat, max_generations=args.generations)
    neat = replace(neat, seed=args.seed)
    loop = replace(cfg.loop, threads=args.threads)
    obj = cfg.objective.objective()
    ctx = prepare(model, space, measurements, sensors, obj)

    seeds = None
    initial = None
    if args.seed_archive:
        try:
            seed_archive = arch.loads(_read(args.seed_archive))
        except arch.ArchiveError as exc:
            raise CliError(f"{args.seed_archive}: {exc}", EXIT_INPUT) from None
        decision = arch.seed_calibration(seed_archive, model, space, ctx.schema)
        for w in decision.warnings:
            log.warning("seed archive: %s", w)
        if decision.refusals:
            message = "seed archive incompatible: " + "; ".join(decision.refusals)
            if not args.seed_optional:
                raise CliError(message, EXIT_SEED)
            log.warning("%s; starting cold", message)
        else:
            seeds, initial = decision.genomes, decision.initial

    run = calibrate(model, space, measurements, sensors, neat, loop, obj=obj, seeds=seeds, context=ctx,
                    seed_initial=initial)
    snapshot = replace(cfg, neat=neat, loop=loop)
    archive = arch.build(run, ctx, model, rules_fingerprint(rules), snapshot.flat(), _created_at())
    out.write("run.archive", arch.dumps(archive))
    for phase in ("flow", "pressure"):
        out.write(f"curve_{phase}.csv", arch.history_csv(run, phase))
    rows = ["outer,phase,generation,combined"]
    rows += [f"{o},{p},{g},{v!r}" for o, p, g, v in run.combined_history]
    out.write("curve_combined.csv", "\n".join(rows) + "\n")
    calibrated = apply_parameters(model, space, run.final_vector)
    out.write("calibrated.inp", write_inp(calibrated))
    rows = ["name,value"] + [f"{s.name},{v!r}" for s, v in zip(space.specs, run.final_vector.tolist())]
    out.write("parameters.csv", "\n".join(rows) + "\n")
    summary = [
        f"baseline_objective {run.baseline_objective!r}",
        f"calibration_objective {run.calibration_objective!r}",
        f"validation_objective {'none' if run.validation_objective is None else repr(run.validation_objective)}",
        f"reduction {run.reduction!r}",
        f"simulations {run.simulations}",
        f"generations {run.generations}",
        f"outer_iterations {run.outer_iterations}",
        f"seeded {','.join(run.seeded) or 'none'}",
    ]
    first = {}
    for phase, gen, best, _ in run.history:
        first.setdefault(phase, best)
    summary += [f"generation0_best_{p} {v!r}" for p, v in first.items()]
    gen0 = run.combined_history[0][3] if run.combined_history else run.calibration_objective
    summary.append(f"generation0_combined {gen0!r}")
    out.write("summary.txt", "\n".join(summary) + "\n")
    print("\n".join(summary))


def cmd_compare(args, cfg, out: Outputs):
    model, rules, space, measurements, sensors = _load_problem(args)
    cc = cfg.compare
    methods = canonical_methods((cc.methods if args.methods is None else args.methods).split(","))
    budget = args.budget or cc.budget
    n_seeds = args.seeds or cc.seeds
    threshold = cc.acceptance if args.acceptance is None else args.acceptance
    map_fn, pool = _map(args.threads)
    per_seed = []
    with pool:
        for k in range(n_seeds):
            seed = args.seed + k
            rows = compare(model, space, measurements, sensors, methods, budget, seed, cfg.neat,
                           cc.neat_population, map_fn)
            per_seed.append(rows)
            out.write(f"comparison_seed{seed}.csv", table_csv(rows, threshold))
            for r in rows:
                if r.curve.size:
                    out.write(f"curves/{r.method}_seed{seed}.csv", curve_csv(r))
    agg = aggregate(per_seed)
    out.write("comparison.csv", table_csv(agg, threshold))
    print(table_csv(agg, threshold), end="")


def cmd_validate(args, cfg, out: Outputs):
    model = _load_model(args.inp)
    measurements = read_measurements(_read(args.measurements))
    sensors = read_sensors(_read(args.sensors))
    holdout = sensors.holdout()
    if not holdout:
        raise CliError("sensor file declares no holdout sensors", EXIT_INPUT)
    try:
        sensors.check(model)
    except (KeyError, ValueError) as exc:
        raise CliError(f"{args.sensors}: {exc}", EXIT_INPUT) from None
    obj = Objective(args.kind, args.normalization)
    series = _simulated_series(model, measurements, holdout)
    from .calibration import objective
    value = objective(series, {k: measurements.series[k][1] for k in holdout}, obj)
    rows = ["sensor,value"]
    for k in holdout:
        rows.append(f"{k[0]}:{k[1]},{objective({k: series[k]}, {k: measurements.series[k][1]}, obj)!r}")
    rows.append(f"all,{value!r}")
    out.write("validation.csv", "\n".join(rows) + "\n")
    print(f"validation_{obj.kind} {value!r}")


def _simulated_series(model, measurements, keys):
    times = eps_times(model.options.duration, model.options.hydraulic_step)
    result = HydraulicNetwork(model).simulate(times)
    if not result.all_converged:
        raise CliError("hydraulics did not converge", EXIT_CONVERGENCE)
    from .calibration import align
    sim = extract_observations(result, keys)
    out = {}
    for k in keys:
        if k not in measurements.series:
            raise CliError(f"no measurements for sensor {k[0]} {k[1]}", EXIT_INPUT)
        out[k] = sim[k][align(result.timestamps, measurements.series[k][0])]
    return out


def cmd_archive_inspect(args, cfg, out: Outputs):
    try:
        archive = arch.loads(_read(args.archive))
    except arch.ArchiveError as exc:
        raise CliError(f"{args.archive}: {exc}", EXIT_INPUT) from None
    text = arch.summary(archive)
    out.write("inspect.txt", text + "\n")
    print(text)


def cmd_report(args, cfg, out: Outputs):
    run_dir = Path(args.run)
    manifest_path = run_dir / MANIFEST
    if not manifest_path.exists():
        raise CliError(f"{manifest_path}: missing run manifest", EXIT_IO)
    manifest = json.loads(_read(str(manifest_path)))
    if manifest.get("command") != "calibrate":
        raise CliError(f"{run_dir} is not a calibrate run", EXIT_INPUT)
    inputs = manifest["arguments"]
    base_dir = Path(manifest["cwd"])

    def resolve(p):
        return str(base_dir / p)

    for name in ("calibrated.inp", "run.archive"):
        if not (run_dir / name).exists():
            raise CliError(f"{run_dir / name}: missing run artifact", EXIT_IO)
    before = _load_model(resolve(inputs["inp"]))
    after = _load_model(str(run_dir / "calibrated.inp"))
    measurements = read_measurements(_read(resolve(inputs["measurements"])))
    sensors = read_sensors(_read(resolve(inputs["sensors"])))
    keys = sensors.calibration() + sensors.holdout()
    sim_before = _simulated_series(before, measurements, keys)
    sim_after = _simulated_series(after, measurements, keys)
    holdout = set(sensors.holdout())
    from .calibration import objective
    raw = Objective("rmse", "raw")
    resid = ["sensor,role,rmse_before,rmse_after"]
    for k in keys:
        times, obs = measurements.series[k]
        role = "validation" if k in holdout else "calibration"
        name = f"sensor_{k[0]}_{k[1]}" + ("_validation" if k in holdout else "") + ".csv"
        rows = ["time_s,observed,before,after"]
        rows += [f"{t!r},{o!r},{b!r},{a!r}" for t, o, b, a in
                 zip(times.tolist(), obs.tolist(), sim_before[k].tolist(), sim_after[k].tolist())]
        out.write(name, "\n".join(rows) + "\n")
        resid.append(f"{k[0]}:{k[1]},{role},{objective({k: sim_before[k]}, {k: obs}, raw)!r},"
                     f"{objective({k: sim_after[k]}, {k: obs}, raw)!r}")
    out.write("residuals.csv", "\n".join(resid) + "\n")
    archive = arch.loads(_read(str(run_dir / "run.archive")))
    for phase in ("flow", "pressure"):
        out.write(f"convergence_{phase}.csv", arch.history_csv(archive, phase))
    print(f"sensors {len(keys)} (validation {len(holdout)})")


def cmd_config_dump(args, cfg, out: Outputs):
    text = cfg.dumps()
    out.write("config.ini", text)
    print(text, end="")


def cmd_replay(args, cfg, out: Outputs):
    raise AssertionError("handled in main")


# ---------------------------------------------------------------------------
# parser


def _globals(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--threads", type=int, default=d(1), help="evaluation threads; results do not depend on it")
    parser.add_argument("--out", default=d(DEFAULT_OUT), help="output directory")
    parser.add_argument("--config", default=d(None), help="key = value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aquacal", description="Water network calibration with ES-NEAT.")
    parser.add_argument("--version", action="version", version=f"aquacal {__version__}")
    _globals(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="extended-period simulation to CSV")
    p.add_argument("inp")
    p.add_argument("--duration", type=float, help="hours (default: INP [TIMES])")
    p.add_argument("--step", type=float, help="minutes (default: INP [TIMES])")
    p.set_defaults(func=cmd_simulate, inputs=("inp",))

    p = sub.add_parser("synth", parents=[common], help="synthetic benchmark problem")
    p.add_argument("--profile", default="fossolo-like", help="fossolo-like, scaled or scaled(N)")
    p.add_argument("--junctions", type=int, help="junction count for the scaled profile")
    p.add_argument("--noise", type=float, default=0.0, help="gaussian measurement noise sigma")
    p.add_argument("--perturbation", default="default",
                   help="default, none, or field=value;... overrides (tuples comma separated)")
    p.set_defaults(func=cmd_synth, inputs=())

    p = sub.add_parser("rules", help="rule file tools")
    rsub = p.add_subparsers(dest="subcommand", required=True)
    q = rsub.add_parser("check", parents=[common], help="compile rules against a model")
    q.add_argument("rules")
    q.add_argument("inp")
    q.set_defaults(func=cmd_rules_check, inputs=("rules", "inp"))

    problem_args = argparse.ArgumentParser(add_help=False)
    problem_args.add_argument("inp")
    problem_args.add_argument("rules")
    problem_args.add_argument("measurements")
    problem_args.add_argument("sensors")

    p = sub.add_parser("calibrate", parents=[common, problem_args], help="ES-NEAT calibration")
    p.add_argument("--seed-archive", help="archive whose genomes seed generation 0")
    p.add_argument("--seed-optional", action="store_true",
                   help="an incompatible seed archive only warns and the run starts cold")
    p.add_argument("--generations", type=int, help="generations per phase (overrides config)")
    p.set_defaults(func=cmd_calibrate, inputs=("inp", "rules", "measurements", "sensors", "seed_archive"))

    p = sub.add_parser("compare", parents=[common, problem_args], help="baselines vs ES-NEAT")
    p.add_argument("--methods", help="comma list from mc,lhs,sa,pso,sceua,ga,es-neat")
    p.add_argument("--budget", type=int, help="evaluations per method")
    p.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")
    p.add_argument("--acceptance", type=float, help="accepted if final best is below this")
    p.set_defaults(func=cmd_compare, inputs=("inp", "rules", "measurements", "sensors"))

    p = sub.add_parser("validate", parents=[common], help="objective at holdout sensors")
    p.add_argument("inp", help="calibrated model")
    p.add_argument("measurements")
    p.add_argument("sensors")
    p.add_argument("--kind", default="rmse", choices=("rmse", "nse", "mae"))
    p.add_argument("--normalization", default=COMBINED.normalization, choices=("raw", "per-sensor-std"))
    p.set_defaults(func=cmd_validate, inputs=("inp", "measurements", "sensors"))

    p = sub.add_parser("archive", help="archive tools")
    asub = p.add_subparsers(dest="subcommand", required=True)
    q = asub.add_parser("inspect", parents=[common], help="validate and summarise an archive")
    q.add_argument("archive")
    q.set_defaults(func=cmd_archive_inspect, inputs=("archive",))

    p = sub.add_parser("report", parents=[common], help="before/after series per sensor from a calibrate run")
    p.add_argument("run", help="output directory of a calibrate command")
    p.set_defaults(func=cmd_report, inputs=())

    p = sub.add_parser("config", help="configuration tools")
    csub = p.add_subparsers(dest="subcommand", required=True)
    q = csub.add_parser("dump", parents=[common], help="print the effective configuration")
    q.set_defaults(func=cmd_config_dump, inputs=())

    p = sub.add_parser("replay", help="rerun a command from its manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="directory for the rerun (default: <original>-replay)")
    p.set_defaults(func=cmd_replay, inputs=())
    return parser


def _strip_out(argv: list[str]) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        out.append(a)
    return out


def _replay(args) -> int:
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        print(f"error: cannot read {manifest_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: {manifest_path}: not a manifest ({exc})", file=sys.stderr)
        return EXIT_INPUT
    cwd = manifest["cwd"]
    target = Path(args.out) if args.out else Path(cwd) / (manifest["out"].rstrip("/") + "-replay")
    target = target.resolve()
    for name, digest in manifest["inputs"].items():
        path = Path(cwd) / name
        if not path.exists() or (not path.is_dir() and _sha(path) != digest):
            print(f"error: input {name} changed or missing since the recorded run", file=sys.stderr)
            return EXIT_IO
    old = os.getcwd()
    os.chdir(cwd)
    try:
        code = main(manifest["argv"] + ["--out", str(target)], _from_replay=True)
    finally:
        os.chdir(old)
    if code != manifest["exit_code"]:
        print(f"replay exit code {code} differs from recorded {manifest['exit_code']}", file=sys.stderr)
        return EXIT_INPUT
    mismatched = []
    for name, digest in manifest["outputs"].items():
        path = target / name
        if not path.exists() or _sha(path) != digest:
            mismatched.append(name)
    if mismatched:
        print("replay outputs differ: " + ", ".join(mismatched), file=sys.stderr)
        return EXIT_INPUT
    print(f"replay identical: {len(manifest['outputs'])} output file(s)")
    return EXIT_OK


def main(argv=None, _from_replay: bool = False) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    if args.command == "replay":
        return _replay(args)

    out = Outputs(Path(args.out))
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    code = EXIT_OK
    message = None
    try:
        cfg = RunConfig.loads(_read(args.config)) if args.config else RunConfig()
        out.root.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
    except CliError as exc:
        code, message = exc.code, str(exc)
    except RuleConflictError as exc:
        code, message = EXIT_CONFLICT, str(exc)
    except (InpError, RuleError, CalibrationError, SynthError, arch.ArchiveError, ValueError, KeyError) as exc:
        code, message = EXIT_INPUT, str(exc)
    except SimulationError as exc:
        code, message = EXIT_CONVERGENCE, str(exc)
    except OSError as exc:
        code, message = EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}"
    if message:
        print(f"error: {message}", file=sys.stderr)
    try:
        _write_manifest(args, argv, out, started, code, message)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc.strerror}", file=sys.stderr)
        return code or EXIT_IO
    return code


def _write_manifest(args, argv, out: Outputs, started, code, message):
    out.root.mkdir(parents=True, exist_ok=True)
    inputs = {}
    arguments = {}
    for name in args.inputs:
        value = getattr(args, name, None)
        if value:
            arguments[name] = value
            if os.path.isfile(value):
                inputs[value] = _sha(value)
    if args.config and os.path.isfile(args.config):
        inputs[args.config] = _sha(args.config)
    if args.command == "report" and os.path.isdir(args.run):
        arguments["run"] = args.run
    manifest = {
        "command": " ".join(filter(None, [args.command, getattr(args, "subcommand", None)])),
        "argv": _strip_out(argv),
        "cwd": os.getcwd(),
        "arguments": arguments,
        "inputs": inputs,
        "seed": args.seed,
        "threads": args.threads,
        "config": args.config,
        "out": args.out,
        "started": started,
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
        "version": __version__,
        "exit_code": code,
        "error": message,
        "outputs": {name: _sha(out.root / name) for name in out.written},
    }
    with open(out.root / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    sys.exit(main())
