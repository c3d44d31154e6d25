"""Readers and writers for every file the command line consumes or emits.

Structured files are JSON objects carrying ``"schema"`` and ``"version"``
keys.  CSV outputs start with a ``#`` line of ``key=value`` fields that
includes the schema version and the angular factor.  Loaders refuse any
other version.
"""

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from .dynamics import Preparation
from .presets import PRESETS, get_preset
from .spin_core import DEFAULT_ANGULAR_FACTOR, HamiltonianConvention, build_spin_system

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "ZENOTOCSY_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration or input file; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def _fmt(x):
    return format(float(x), ".17g")


def _check_header(obj, schema, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    if obj.get("schema") != schema:
        raise ConfigError(f"expected schema {schema!r}, got {obj.get('schema')!r}", "schema")
    if obj.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported version {obj.get('version')!r} (this build reads {SCHEMA_VERSION})", "version")


def _reject_unknown(obj, allowed, where=""):
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys {extra}", where or extra[0])


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _dump_json(obj, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- spin systems -----------------------------------------------------------

SYSTEM_SCHEMA = "zenotocsy/spin-system"


def system_to_dict(system, convention=None):
    convention = convention or HamiltonianConvention()
    return {
        "schema": SYSTEM_SCHEMA,
        "version": SCHEMA_VERSION,
        "labels": list(system.labels),
        "couplings": [[a, b, j] for a, b, j in system.coupling_list()],
        "equivalence_groups": [list(g) for g in system.equivalence_groups],
        "angular_factor": float(convention.angular_factor),
    }


def system_from_dict(obj):
    """Parse a spin-system object; returns ``(SpinSystem, HamiltonianConvention)``."""
    _check_header(obj, SYSTEM_SCHEMA, "spin system")
    _reject_unknown(obj, {"schema", "version", "labels", "couplings", "equivalence_groups", "angular_factor"})
    for key in ("labels", "couplings"):
        if key not in obj:
            raise ConfigError("missing", key)
    try:
        system = build_spin_system(obj["labels"], [tuple(c) for c in obj["couplings"]],
                                   obj.get("equivalence_groups"))
        convention = HamiltonianConvention(float(obj.get("angular_factor", DEFAULT_ANGULAR_FACTOR)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "couplings") from None
    return system, convention


def write_system(system, path, convention=None):
    _dump_json(system_to_dict(system, convention), path)


def read_system(path):
    return system_from_dict(_load_json(path))


def resolve_system(ref, base_dir=None):
    """A preset name, a path to a spin-system file, or an inline object."""
    if isinstance(ref, dict):
        return system_from_dict(ref)
    if not isinstance(ref, str):
        raise ConfigError("must be a preset name, file path or inline object", "system")
    if ref in PRESETS:
        return get_preset(ref), HamiltonianConvention()
    path = Path(ref)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    if not path.exists():
        raise ConfigError(f"{ref!r} is neither a preset ({sorted(PRESETS)}) nor an existing file", "system")
    return read_system(path)


# -- preparations -----------------------------------------------------------

def preparation_from_dict(obj, field="preparation"):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError("must be an object with a 'kind'", field)
    kind = obj["kind"]
    if kind == "custom":
        _reject_unknown(obj, {"kind", "values"}, field)
        if "values" not in obj:
            raise ConfigError("custom preparation needs 'values'", field)
        return Preparation.custom(obj["values"])
    if kind in ("excite", "deplete"):
        _reject_unknown(obj, {"kind", "sites"}, field)
        sites = obj.get("sites")
        if not sites:
            raise ConfigError(f"{kind} preparation needs a non-empty 'sites' list", field)
        return Preparation(kind, tuple(str(s) for s in sites))
    raise ConfigError(f"kind must be excite, deplete or custom, got {kind!r}", field)


# -- scenarios --------------------------------------------------------------

SCENARIO_SCHEMA = "zenotocsy/scenario"
_SCENARIO_KEYS = {
    "schema", "version", "system", "mode", "preparation", "tau_s", "n_cycles", "fidelity",
    "damping_per_s", "output", "seed", "initial_operator", "times", "observables",
}


def validate_scenario(obj):
    """Check a scenario object and return it with defaults filled in."""
    _check_header(obj, SCENARIO_SCHEMA, "scenario")
    _reject_unknown(obj, _SCENARIO_KEYS)
    cfg = dict(obj)
    if "system" not in cfg:
        raise ConfigError("missing", "system")
    mode = cfg.setdefault("mode", "projected")
    if mode == "projected":
        for key in ("preparation", "tau_s", "n_cycles"):
            if key not in cfg:
                raise ConfigError("required in projected mode", key)
        preparation_from_dict(cfg["preparation"])
        _number(cfg, "tau_s", minimum=0.0)
        n_cycles = cfg["n_cycles"]
        if not isinstance(n_cycles, int) or isinstance(n_cycles, bool) or n_cycles < 0:
            raise ConfigError(f"must be a non-negative integer, got {n_cycles!r}", "n_cycles")
        _number(cfg, "fidelity", default=0.0, minimum=0.0, maximum=1.0)
        _number(cfg, "damping_per_s", default=0.0, minimum=0.0)
        for key in ("initial_operator", "times", "observables"):
            if key in cfg:
                raise ConfigError("only valid in coherent mode", key)
    elif mode == "coherent":
        for key in ("initial_operator", "times"):
            if key not in cfg:
                raise ConfigError("required in coherent mode", key)
        init = cfg["initial_operator"]
        for op in (init if init and isinstance(init[0], list) else [init]):
            _operator(op, "initial_operator")
        times = cfg["times"]
        if isinstance(times, dict):
            _reject_unknown(times, {"start", "stop", "num"}, "times")
            if not {"start", "stop", "num"} <= set(times) or int(times["num"]) < 1:
                raise ConfigError("needs start, stop and num >= 1", "times")
        elif not isinstance(times, list) or not times:
            raise ConfigError("must be a non-empty list or {start, stop, num}", "times")
        for ob in cfg.get("observables") or []:
            _operator(ob, "observables")
        for key in ("preparation", "tau_s", "n_cycles", "fidelity", "damping_per_s"):
            if key in cfg:
                raise ConfigError("only valid in projected mode", key)
    else:
        raise ConfigError(f"must be 'projected' or 'coherent', got {mode!r}", "mode")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        raise ConfigError("must be an integer", "seed")
    return cfg


def _number(cfg, key, default=None, minimum=None, maximum=None):
    if key not in cfg:
        cfg[key] = default
        return default
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ConfigError(f"must be a finite number, got {v!r}", key)
    if (minimum is not None and v < minimum) or (maximum is not None and v > maximum):
        raise ConfigError(f"{v} outside [{minimum}, {maximum}]", key)
    return v


def _operator(spec, field):
    if not (isinstance(spec, (list, tuple)) and len(spec) == 2 and spec[1] in ("x", "y", "z")):
        raise ConfigError(f"must be [site, axis] with axis x, y or z, got {spec!r}", field)


def read_scenario(path):
    return validate_scenario(_load_json(path))


def scenario_times(cfg):
    times = cfg["times"]
    if isinstance(times, dict):
        return np.linspace(float(times["start"]), float(times["stop"]), int(times["num"]))
    return np.asarray(times, dtype=float)


def output_path(name):
    """Resolve relative output names against ``$ZENOTOCSY_OUTPUT_DIR`` when set."""
    path = Path(name)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


# -- trajectories -----------------------------------------------------------

TRAJECTORY_SCHEMA = "zenotocsy/trajectory"


def _csv_text(comment, header, rows):
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _schema_comment(schema, angular_factor):
    return f"schema={schema} version={SCHEMA_VERSION} angular_factor={_fmt(angular_factor)}"


def write_trajectory(traj, path, extra_metadata=None):
    """Write ``traj`` as CSV plus a ``<name>.meta.json`` sidecar; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    factor = traj.metadata.get("angular_factor", DEFAULT_ANGULAR_FACTOR)
    if hasattr(traj, "labels"):
        header = ["time_s", *traj.labels, *traj.group_names]
        data = np.column_stack([traj.times, traj.values, traj.group_values])
    else:
        header = ["time_s", *traj.names]
        data = np.column_stack([traj.times, traj.values])
    text = _csv_text(_schema_comment(TRAJECTORY_SCHEMA, factor), header, data)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    meta = {"schema": TRAJECTORY_SCHEMA, "version": SCHEMA_VERSION, "columns": header}
    meta.update({k: v for k, v in traj.metadata.items()})
    if extra_metadata:
        meta.update(extra_metadata)
    meta_path = sidecar_path(path)
    _dump_json(meta, meta_path)
    return path, meta_path


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _parse_comment(line):
    fields = dict(item.split("=", 1) for item in line.lstrip("#").split() if "=" in item)
    return fields


def read_trajectory_csv(path):
    """Return ``(columns, values, header_fields)``; ``values`` includes the time column."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise ConfigError(f"trajectory file not found: {path}") from None
    if not lines or not lines[0].startswith("#"):
        raise ConfigError(f"{path}: missing schema line")
    fields = _parse_comment(lines[0])
    if fields.get("schema") != TRAJECTORY_SCHEMA:
        raise ConfigError(f"{path}: expected schema {TRAJECTORY_SCHEMA}, got {fields.get('schema')!r}", "schema")
    if fields.get("version") != str(SCHEMA_VERSION):
        raise ConfigError(f"{path}: unsupported version {fields.get('version')!r}", "version")
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError(f"{path}: no header row") from None
    if not header or header[0] != "time_s":
        raise ConfigError(f"{path}: first column must be time_s")
    try:
        rows = [[float(v) for v in row] for row in reader if row]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, values, fields


# -- manifests --------------------------------------------------------------

MANIFEST_SCHEMA = "zenotocsy/manifest"


def read_manifest(path):
    """Load a fit manifest into ``(dataset, system, convention, options)``."""
    from .inversion import BuildUpDataset, Experiment

    path = Path(path)
    obj = _load_json(path)
    _check_header(obj, MANIFEST_SCHEMA, "manifest")
    _reject_unknown(obj, {"schema", "version", "system", "experiments", "refine", "fit_damping",
                          "bootstrap", "seed"})
    if "system" not in obj:
        raise ConfigError("missing", "system")
    system, convention = resolve_system(obj["system"], base_dir=path.parent)
    entries = obj.get("experiments") or []
    if not entries:
        raise ConfigError("manifest lists no experiments", "experiments")

    experiments, headers = [], []
    for k, entry in enumerate(entries):
        where = f"experiments[{k}]"
        if not isinstance(entry, dict):
            raise ConfigError("must be an object", where)
        _reject_unknown(entry, {"file", "preparation", "tau_s", "n_cycles", "noise"}, where)
        for key in ("file", "preparation", "tau_s"):
            if key not in entry:
                raise ConfigError(f"missing {key!r}", where)
        header, data, fields = read_trajectory_csv(path.parent / entry["file"])
        factor = float(fields.get("angular_factor", DEFAULT_ANGULAR_FACTOR))
        if not np.isclose(factor, convention.angular_factor, rtol=1e-12):
            raise ConfigError(f"{entry['file']} was written with angular factor {factor}, "
                              f"system uses {convention.angular_factor}", where)
        headers.append((entry["file"], header))
        prep = preparation_from_dict(entry["preparation"], f"{where}.preparation")
        tau = float(entry["tau_s"])
        n_cycles = entry.get("n_cycles", data.shape[0] - 1)
        if n_cycles != data.shape[0] - 1:
            raise ConfigError(f"n_cycles={n_cycles} but {entry['file']} has {data.shape[0] - 1} cycles", where)
        if data.shape[0] > 1 and not np.allclose(np.diff(data[:, 0]), tau, rtol=1e-9, atol=1e-15):
            raise ConfigError(f"time_s column of {entry['file']} is not spaced by tau_s={tau}", where)
        try:
            initial = prep.polarizations(system)
        except ValueError as exc:
            raise ConfigError(str(exc), f"{where}.preparation") from None
        experiments.append(Experiment(initial=initial, tau=tau, values=data[:, 1:], columns=header[1:],
                                      preparation=prep, noise=entry.get("noise"), name=entry["file"]))

    first_file, first = headers[0]
    for name, header in headers[1:]:
        if header != first:
            missing = sorted(set(first) - set(header))
            extra = sorted(set(header) - set(first))
            raise ConfigError(f"columns of {name} differ from {first_file}: missing {missing}, extra {extra}",
                              "experiments")
    try:
        dataset = BuildUpDataset.for_system(system, experiments)
    except ValueError as exc:
        raise ConfigError(str(exc), "experiments") from None
    options = {
        "refine": bool(obj.get("refine", False)),
        "fit_damping": bool(obj.get("fit_damping", False)),
        "bootstrap": int(obj.get("bootstrap", 0)),
        "seed": int(obj.get("seed", 0)),
        "system_ref": obj["system"] if isinstance(obj["system"], str) else None,
    }
    return dataset, system, convention, options


def write_manifest(path, system_ref, entries, **options):
    obj = {"schema": MANIFEST_SCHEMA, "version": SCHEMA_VERSION, "system": system_ref,
           "experiments": list(entries)}
    obj.update(options)
    _dump_json(obj, path)


# -- estimates --------------------------------------------------------------

ESTIMATE_SCHEMA = "zenotocsy/estimate"


def write_estimate_csv(estimate, path, angular_factor=DEFAULT_ANGULAR_FACTOR, bootstrap=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# {_schema_comment(ESTIMATE_SCHEMA, angular_factor)} method={estimate.method}\n")
    writer = csv.writer(buf, lineterminator="\n")
    header = ["group_a", "group_b", "J_Hz", "stderr_Hz"]
    if bootstrap is not None:
        header.append("bootstrap_stderr_Hz")
    writer.writerow(header)
    for k, ((a, b), v, s) in enumerate(zip(estimate.pair_labels, estimate.values, estimate.stderr)):
        row = [a, b, _fmt(v), _fmt(s)]
        if bootstrap is not None:
            row.append(_fmt(bootstrap.stderr[k]))
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_estimate_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    fields = _parse_comment(lines[0]) if lines and lines[0].startswith("#") else {}
    if fields.get("schema") != ESTIMATE_SCHEMA or fields.get("version") != str(SCHEMA_VERSION):
        raise ConfigError(f"{path}: not a version {SCHEMA_VERSION} estimate file")
    rows = list(csv.DictReader(lines[1:]))
    return rows, fields


def estimate_report(estimate, bootstrap=None, reference=None):
    """Human-readable report; ``reference`` maps pair labels to comparison rows."""
    lines = [f"method: {estimate.method}"]
    for k, ((a, b), v, s) in enumerate(zip(estimate.pair_labels, estimate.values, estimate.stderr)):
        line = f"  |J|({a}, {b}) = {v:.3f} +/- {s:.3f} Hz"
        if bootstrap is not None:
            line += f"  (bootstrap +/- {bootstrap.stderr[k]:.3f})"
        lines.append(line)
    if estimate.damping is not None:
        lines.append(f"  damping = {estimate.damping:.4g} 1/s")
    for key in ("residual_norm", "converged", "max_j_tau"):
        if key in estimate.diagnostics:
            lines.append(f"  {key}: {estimate.diagnostics[key]}")
    if reference:
        lines.append("")
        cols = list(reference["columns"])
        lines.append(" " * 14 + "".join(f"{c:>16}" for c in cols))
        for name, row in reference["rows"]:
            lines.append(f"{name:<14}" + "".join(f"{x:>16}" for x in row))
    return "\n".join(lines) + "\n"
