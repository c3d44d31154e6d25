"""Command-line interface: simulate, sweep-tau, fit, predict, preset-list.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure.
"""

import argparse
import csv
import io
import logging
import sys
import warnings

import numpy as np

from . import __version__
from .approx import equilibrium_prediction
from .dynamics import ProjectionSpec, evolve_coherent, simulate_projected, tau_sweep
from .files import (
    SCENARIO_SCHEMA,
    SCHEMA_VERSION,
    ConfigError,
    estimate_report,
    output_path,
    preparation_from_dict,
    read_manifest,
    read_scenario,
    resolve_system,
    scenario_times,
    validate_scenario,
    write_estimate_csv,
    write_trajectory,
)
from .inversion import (
    RegimeError,
    UnidentifiableError,
    bootstrap_uncertainty,
    estimate_couplings_shorttau,
    refine_fit,
)
from .presets import PRESETS, PYRIDINE_EXPERIMENTAL_EFFECTIVE, PYRIDINE_SIMULATED_EFFECTIVE

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("zenotocsy")


def _preparation_args(args):
    chosen = [k for k in ("excite", "deplete", "custom") if getattr(args, k, None)]
    if len(chosen) > 1:
        raise ConfigError("give only one of --excite, --deplete, --custom", "preparation")
    if not chosen:
        return None
    kind = chosen[0]
    if kind == "custom":
        return {"kind": "custom", "values": [float(v) for v in args.custom]}
    return {"kind": kind, "sites": list(getattr(args, kind))}


def _scenario_from_args(args):
    if args.config:
        cfg = read_scenario(args.config)
    else:
        cfg = {"schema": SCENARIO_SCHEMA, "version": SCHEMA_VERSION, "system": args.system, "mode": args.mode}
        if args.mode == "projected":
            cfg["preparation"] = _preparation_args(args)
            if cfg["preparation"] is None:
                raise ConfigError("projected mode needs --excite, --deplete or --custom", "preparation")
            if args.tau is None or args.cycles is None:
                raise ConfigError("projected mode needs --tau and --cycles", "tau_s" if args.tau is None else "n_cycles")
            cfg.update(tau_s=args.tau, n_cycles=args.cycles, fidelity=args.fidelity, damping_per_s=args.damping)
        else:
            if not args.operator:
                raise ConfigError("coherent mode needs --operator SITE AXIS", "initial_operator")
            ops = [list(op) for op in args.operator]
            cfg["initial_operator"] = ops if len(ops) > 1 else ops[0]
            cfg["times"] = {"start": 0.0, "stop": args.t_max, "num": args.n_times}
        cfg = validate_scenario(cfg)
    if args.output:
        cfg["output"] = args.output
    cfg.setdefault("output", "trajectory.csv")
    return cfg


def cmd_simulate(args):
    cfg = _scenario_from_args(args)
    system, convention = resolve_system(cfg["system"])
    out = output_path(cfg["output"])
    if cfg["mode"] == "projected":
        prep = preparation_from_dict(cfg["preparation"])
        try:
            prep.polarizations(system)
        except ValueError as exc:
            raise ConfigError(str(exc), "preparation") from None
        projection = ProjectionSpec(cfg["fidelity"], cfg["damping_per_s"])
        traj = simulate_projected(system, cfg["tau_s"], prep, cfg["n_cycles"], projection, convention)
        final = traj.values[-1]
        summary = ", ".join(f"{lab}={v:.4f}" for lab, v in zip(traj.labels, final))
    else:
        init = cfg["initial_operator"]
        axis = init[0][1] if isinstance(init[0], list) else init[1]
        observables = cfg.get("observables") or [[lab, axis] for lab in system.labels]
        try:
            traj = evolve_coherent(system, init, scenario_times(cfg),
                                   [tuple(o) for o in observables], convention)
        except ValueError as exc:
            raise ConfigError(str(exc), "initial_operator") from None
        summary = f"{traj.values.shape[0]} time points"
    extra = {"mode": cfg["mode"], "system": _system_ref(cfg["system"]), "schema_version": SCHEMA_VERSION}
    csv_path, meta_path = write_trajectory(traj, out, extra)
    print(f"wrote {csv_path} and {meta_path}")
    print(f"final: {summary}")
    return EXIT_OK


def _system_ref(ref):
    return ref if isinstance(ref, str) else "inline"


def cmd_sweep_tau(args):
    system, convention = resolve_system(args.system)
    prep_dict = _preparation_args(args)
    if prep_dict is None:
        raise ConfigError("needs --excite, --deplete or --custom", "preparation")
    prep = preparation_from_dict(prep_dict)
    try:
        prep.polarizations(system)
    except ValueError as exc:
        raise ConfigError(str(exc), "preparation") from None
    if len(args.taus) < 2:
        raise ConfigError("a sweep needs at least two tau values", "taus")
    if any(t <= 0 for t in args.taus):
        raise ConfigError("tau values must be positive", "taus")
    if args.total_time <= 0:
        raise ConfigError("must be positive", "total_time")
    projection = ProjectionSpec(args.fidelity, args.damping)
    rows = tau_sweep(system, prep, args.taus, args.total_time, projection, convention)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})
    text = buf.getvalue()
    if args.output:
        path = output_path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# schema=zenotocsy/sweep version={SCHEMA_VERSION} "
                     f"angular_factor={format(convention.angular_factor, '.17g')}\n")
            fh.write(text)
        print(f"wrote {path}")
    print(text, end="")
    return EXIT_OK


def _pyridine_reference(estimate):
    order = [("{1,1'}", "{2,2'}"), ("{1,1'}", "3"), ("{2,2'}", "3")]
    labels = list(estimate.pair_labels)
    if sorted(labels) != sorted(order):
        return None
    got = [estimate.values[labels.index(p)] for p in order]
    return {
        "columns": ["J12,J1'2", "J13", "J23"],
        "rows": [
            ("this fit", [f"{v:.2f}" for v in got]),
            ("simulations", [f"{v:.2f}" for v in PYRIDINE_SIMULATED_EFFECTIVE]),
            ("experiments", [f"{v:.1f}+/-{e:.1f}" for v, e in PYRIDINE_EXPERIMENTAL_EFFECTIVE]),
            ("literature", ["4.86, 0.98", "1.85", "7.66"]),
        ],
    }


def cmd_fit(args):
    dataset, system, convention, options = read_manifest(args.manifest)
    refine = args.refine or options["refine"]
    n_boot = args.bootstrap if args.bootstrap is not None else options["bootstrap"]
    seed = args.seed if args.seed is not None else options["seed"]
    if n_boot and n_boot < 10:
        raise ConfigError("needs at least 10 replicates", "bootstrap")
    try:
        estimate = estimate_couplings_shorttau(dataset, convention=convention)
    except (UnidentifiableError, RegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if refine:
        estimate = refine_fit(dataset, estimate, fit_damping=options["fit_damping"], convention=convention)
    boot = bootstrap_uncertainty(dataset, estimate, n_boot, seed, convention=convention) if n_boot else None
    reference = _pyridine_reference(estimate) if options["system_ref"] == "pyridine" else None
    report = estimate_report(estimate, boot, reference)
    print(report, end="")
    if args.report:
        path = output_path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report, encoding="utf-8")
    if args.csv:
        write_estimate_csv(estimate, output_path(args.csv), convention.angular_factor, boot)
    return EXIT_OK


def cmd_predict(args):
    system, _ = resolve_system(args.system)
    prep_dict = _preparation_args(args)
    if prep_dict is None:
        raise ConfigError("needs --excite, --deplete or --custom", "preparation")
    try:
        P0 = preparation_from_dict(prep_dict).polarizations(system)
    except ValueError as exc:
        raise ConfigError(str(exc), "preparation") from None
    pred = equilibrium_prediction(P0, system)
    print(f"equipartition asymptote: {pred.value:.4f}")
    for lab, v in zip(system.labels, pred.site_values):
        print(f"  site {lab}: {v:.4f}")
    for name, v in zip(pred.group_names, pred.group_values):
        print(f"  group {name}: {v:.4f}")
    if not system.is_connected():
        print("warning: coupling network is not connected; equipartition holds per component only")
    return EXIT_OK


def cmd_preset_list(args):
    for name, (_, description) in sorted(PRESETS.items()):
        print(f"{name:<10} {description}")
    return EXIT_OK


def _add_preparation(p):
    p.add_argument("--excite", nargs="+", metavar="SITE", help="sites prepared at +1, others 0")
    p.add_argument("--deplete", nargs="+", metavar="SITE", help="sites prepared at 0, others +1")
    p.add_argument("--custom", nargs="+", type=float, metavar="P", help="explicit per-site polarizations")


def build_parser():
    parser = argparse.ArgumentParser(prog="zenotocsy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="projected or coherent trajectory to CSV")
    p.add_argument("--config", help="scenario JSON file (other options then only override output)")
    p.add_argument("--system", default="pyridine", help="preset name or spin-system JSON (default: pyridine)")
    p.add_argument("--mode", choices=["projected", "coherent"], default="projected",
                   help="dynamics to run (default projected)")
    _add_preparation(p)
    p.add_argument("--tau", type=float, help="cycle time in seconds")
    p.add_argument("--cycles", type=int, help="number of projection cycles")
    p.add_argument("--fidelity", type=float, default=0.0, help="off-diagonal retention (default 0)")
    p.add_argument("--damping", type=float, default=0.0, help="damping rate 1/s (default 0)")
    p.add_argument("--operator", nargs=2, action="append", metavar=("SITE", "AXIS"),
                   help="coherent mode initial operator; repeat to sum several")
    p.add_argument("--t-max", type=float, default=0.15, help="coherent mode end time in s (default 0.15)")
    p.add_argument("--n-times", type=int, default=301, help="coherent mode grid size (default 301)")
    p.add_argument("-o", "--output", help="output CSV (default trajectory.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-tau", help="compare cycle times at fixed total mixing time")
    p.add_argument("--system", default="pyridine", help="preset name or spin-system JSON (default: pyridine)")
    _add_preparation(p)
    p.add_argument("--taus", nargs="+", type=float, required=True, help="cycle times in s")
    p.add_argument("--total-time", type=float, required=True, help="total mixing time in s")
    p.add_argument("--fidelity", type=float, default=0.0, help="off-diagonal retention (default 0)")
    p.add_argument("--damping", type=float, default=0.0, help="damping rate 1/s (default 0)")
    p.add_argument("-o", "--output", help="summary CSV (default: print to stdout)")
    p.set_defaults(func=cmd_sweep_tau)

    p = sub.add_parser("fit", help="extract |J| from a manifest of trajectory files")
    p.add_argument("manifest", help="fit manifest JSON")
    p.add_argument("--refine", action="store_true", help="least-squares refinement after short-tau (default: manifest 'refine', else off)")
    p.add_argument("--bootstrap", type=int, help="residual-bootstrap replicates (default: manifest 'bootstrap', else 0)")
    p.add_argument("--seed", type=int, help="bootstrap seed (default: manifest 'seed', else 0)")
    p.add_argument("--report", help="write the text report here")
    p.add_argument("--csv", help="write the estimate table here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="equipartition asymptote of a preparation")
    p.add_argument("--system", default="pyridine", help="preset name or spin-system JSON (default: pyridine)")
    _add_preparation(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("preset-list", help="list built-in spin systems")
    p.set_defaults(func=cmd_preset_list)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
