"""Command-line experiment runner.

Every command resolves its configuration from built-in defaults, an
optional JSON file (``--config``) and command-line flags, in that order of
precedence, validates it against ``CONFIG_SCHEMA`` and writes its outputs
plus ``manifest.json`` (the resolved configuration and library version)
into ``--out``.

Exit codes: 0 success, 2 invalid configuration, 3 solver non-convergence,
4 only stalled trajectories, 1 any other error.
"""
import argparse
import copy
import json
import logging
import math
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from ._accel import thread_count
from ._io import dumps, plain, write_json

log = logging.getLogger("rotaflow")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_STALLED = 4

COMMANDS = ("rotation", "rotation-set", "perturbation-sweep", "occupation", "divcurl-check",
            "cell-solve", "homogenize", "catalog-list")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_posint = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "field": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
        },
        "x0": _vec,
        "T": {"type": "number", "minimum": 1},
        "grid": {"type": "integer", "minimum": 2},
        "random_points": {"type": "integer", "minimum": 0},
        "tol_singleton": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "tol_segment": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "include_equilibria": {"type": "boolean"},
        "family": {"type": "string"},
        "n_list": {"type": "array", "items": _posint, "minItems": 1},
        "limit": {"enum": ["reference", "computed", "none"]},
        "resolution": {"type": ["integer", "null"], "minimum": 2},
        "sample_every": _pos,
        "freq_cutoff": {"type": "integer", "minimum": 1},
        "measure": {"enum": ["analytic", "occupation"]},
        "quadrature_nodes": {"type": "integer", "minimum": 8},
        "conductivity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"enum": ["uniform", "laminate", "generic"]},
                "amplitude": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "resolution": {"type": "integer", "minimum": 16},
                "tol": _pos,
                "max_iter": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "lam": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "zeta": {"type": ["array", "null"], "items": _num, "minItems": 1},
        "eps": {"type": "array", "items": _pos, "minItems": 1},
        "t_final": _pos,
        "profile": {
            "type": "object",
            "required": ["name"],
            "properties": {"name": {"enum": ["gaussian", "trig"]}},
        },
        "points_per_axis": {"type": "integer", "minimum": 1},
        "time_samples": {"type": "integer", "minimum": 1},
        "p": {"type": "number", "minimum": 1},
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "abs_tol": _pos,
                "rel_tol": _pos,
                "max_step": _pos,
                "min_step": _pos,
                "scheme": {"enum": ["adaptive_embedded_45", "fixed_rk4"]},
            },
        },
        "engine": {"enum": ["auto", "numba", "numpy"]},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer"},
        "out": {"type": "string"},
        "svg": {"type": "boolean"},
        "timings": {"type": "boolean"},
    },
}

DEFAULTS = {
    "field": {"name": "shear_41", "params": {}},
    "x0": [0.3, 0.5],
    "T": 1e4,
    "grid": 16,
    "random_points": 0,
    "tol_singleton": None,
    "tol_segment": None,
    "include_equilibria": True,
    "family": "vanishing_segment_42_perturbed",
    "n_list": [4, 16, 64, 256],
    "limit": "reference",
    "resolution": None,
    "sample_every": 0.01,
    "freq_cutoff": 5,
    "measure": "analytic",
    "quadrature_nodes": 128,
    "conductivity": {"sigma": "generic", "amplitude": 0.5, "resolution": 32, "tol": 1e-10,
                     "max_iter": None},
    "lam": [1.0, math.sqrt(2.0)],
    "zeta": None,
    "eps": [0.25, 0.125, 0.0625, 0.03125, 0.015625],
    "t_final": 1.0,
    "profile": {"name": "gaussian"},
    "points_per_axis": 64,
    "time_samples": 16,
    "p": 2.0,
    "integrator": {"abs_tol": 1e-10, "rel_tol": 1e-10, "max_step": 0.1, "min_step": 1e-12,
                   "scheme": "adaptive_embedded_45"},
    "engine": "auto",
    "threads": None,
    "seed": 0,
    "out": "rotaflow-out",
    "svg": False,
    "timings": False,
}

# keys each command reads, echoed into its manifest
USED = {
    "rotation": ["field", "x0", "T", "integrator"],
    "rotation-set": ["field", "grid", "T", "random_points", "tol_singleton", "tol_segment",
                     "include_equilibria", "integrator"],
    "perturbation-sweep": ["family", "field", "n_list", "grid", "T", "limit", "integrator"],
    "occupation": ["field", "x0", "T", "resolution", "sample_every", "integrator"],
    "divcurl-check": ["field", "measure", "freq_cutoff", "x0", "T", "resolution",
                      "sample_every", "quadrature_nodes", "integrator"],
    "cell-solve": ["conductivity", "lam"],
    "homogenize": ["field", "conductivity", "lam", "zeta", "eps", "t_final", "profile",
                   "points_per_axis", "time_samples", "p", "integrator"],
    "catalog-list": [],
}
COMMON = ["command", "engine", "threads", "seed", "out", "svg", "timings"]


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rotaflow",
        description="Rotation vectors, rotation sets, invariant measures, cell problems and "
                    "transport homogenization for periodic flows on the torus.",
        epilog="exit codes: 0 ok, 1 unexpected error, 2 configuration error, "
               "3 solver non-convergence, 4 only stalled trajectories",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"rotaflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        if name == "catalog-list":
            continue
        p.add_argument("--engine", choices=["auto", "numba", "numpy"])
        p.add_argument("--threads", type=int, help="worker threads (default: ROTAFLOW_THREADS "
                                                   "or all cores)")
        p.add_argument("--seed", type=int)
        p.add_argument("--field", help="catalog field name")
        p.add_argument("--param", type=_param, action="append", metavar="KEY=VALUE",
                       help="field parameter, value parsed as JSON when possible")
        p.add_argument("--abs-tol", type=float)
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--max-step", type=float)
        p.add_argument("--min-step", type=float)
        p.add_argument("--scheme", choices=["adaptive_embedded_45", "fixed_rk4"])
        p.add_argument("--T", type=float, dest="T")
        p.add_argument("--x0", type=_floats)
        p.add_argument("--grid", type=int)
        p.add_argument("--random-points", type=int)
        p.add_argument("--tol-singleton", type=float)
        p.add_argument("--tol-segment", type=float)
        p.add_argument("--family")
        p.add_argument("--n-list", type=_ints)
        p.add_argument("--limit", choices=["reference", "computed", "none"])
        p.add_argument("--resolution", type=int)
        p.add_argument("--sample-every", type=float)
        p.add_argument("--K", type=int, dest="freq_cutoff")
        p.add_argument("--measure", choices=["analytic", "occupation"])
        p.add_argument("--sigma", choices=["uniform", "laminate", "generic"])
        p.add_argument("--amplitude", type=float)
        p.add_argument("--cell-resolution", type=int)
        p.add_argument("--cell-tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--lam", type=_floats)
        p.add_argument("--zeta", type=_floats)
        p.add_argument("--eps", type=_floats)
        p.add_argument("--t-final", type=float)
        p.add_argument("--profile", choices=["gaussian", "trig"])
        p.add_argument("--points", type=int, dest="points_per_axis")
        p.add_argument("--time-samples", type=int)
        p.add_argument("--p", type=float, dest="p")
        p.add_argument("--svg", action="store_true", default=None)
        p.add_argument("--timings", action="store_true", default=None,
                       help="add wall-clock columns (breaks byte-identical reruns)")
    return parser


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _flag_overrides(args):
    a = vars(args)
    over = {}
    simple = ["out", "engine", "threads", "seed", "T", "x0", "grid", "random_points",
              "tol_singleton", "tol_segment", "family", "n_list", "limit", "resolution",
              "sample_every", "freq_cutoff", "measure", "lam", "zeta", "eps", "t_final",
              "points_per_axis", "time_samples", "p", "svg", "timings"]
    for key in simple:
        if a.get(key) is not None:
            over[key] = a[key]
    if a.get("field") is not None:
        over["field"] = {"name": a["field"]}
    if a.get("param"):
        over.setdefault("field", {})["params"] = dict(a["param"])
    integ = {k: a[f] for k, f in [("abs_tol", "abs_tol"), ("rel_tol", "rel_tol"),
                                  ("max_step", "max_step"), ("min_step", "min_step"),
                                  ("scheme", "scheme")] if a.get(f) is not None}
    if integ:
        over["integrator"] = integ
    cond = {k: a[f] for k, f in [("sigma", "sigma"), ("amplitude", "amplitude"),
                                 ("resolution", "cell_resolution"), ("tol", "cell_tol"),
                                 ("max_iter", "max_iter")] if a.get(f) is not None}
    if cond:
        over["conductivity"] = cond
    if a.get("profile") is not None:
        over["profile"] = {"name": a["profile"]}
    return over


def resolve_config(args):
    """Defaults <- config file <- flags, validated; returns the full config."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        if file_cfg.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {file_cfg['command']!r}, not {args.command!r}")
    file_cfg = {**file_cfg, "command": args.command}
    try:
        jsonschema.validate(file_cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config file: {exc.message}") from None
    if "field" in file_cfg and "params" not in file_cfg["field"]:
        file_cfg["field"] = {**file_cfg["field"], "params": {}}
    over = _flag_overrides(args)
    if "field" in over and "name" in over["field"] and "params" not in over["field"]:
        over["field"]["params"] = {}
    cfg = _merge(_merge(DEFAULTS, file_cfg), over)
    cfg["command"] = args.command
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"{where or 'config'}: {exc.message}") from None
    keys = COMMON + USED[args.command]
    return {k: cfg[k] for k in keys if k in cfg}


def _integrator(cfg):
    from .integrate import IntegratorConfig

    try:
        return IntegratorConfig(engine=cfg.get("engine", "auto"), **cfg["integrator"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _field(cfg, name=None, params=None):
    from .fields import CatalogError, catalog_build

    name = name or cfg["field"]["name"]
    params = cfg["field"].get("params", {}) if params is None else params
    if name == "custom":
        raise ConfigError("custom fields are only available from Python")
    try:
        return catalog_build(name, params)
    except CatalogError as exc:
        raise ConfigError(str(exc)) from None
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name}: {exc}") from None


def _x0(cfg, field):
    x0 = np.asarray(cfg["x0"], dtype=float)
    if x0.size != field.dimension:
        raise ConfigError(f"x0 has {x0.size} coordinates, field {field.name} needs "
                          f"{field.dimension}")
    return x0


def _cmd_rotation(cfg, out):
    from .rotation import rotation_vector, write_estimates_csv

    field = _field(cfg)
    est = rotation_vector(field, _x0(cfg, field), cfg["T"], _integrator(cfg))
    write_json({"field": field.name, "x0": est.x0, "zeta_hat": est.zeta_hat, "T": est.T,
                "cauchy_gap": est.cauchy_gap, "stalled": est.stalled},
               os.path.join(out, "rotation.json"))
    write_estimates_csv([est], os.path.join(out, "rotation.csv"))
    return ["rotation.json", "rotation.csv"], EXIT_STALLED if est.stalled else EXIT_OK


def _cmd_rotation_set(cfg, out):
    from .rotation import classify, rotation_set, rotation_vectors

    field = _field(cfg)
    integ = _integrator(cfg)
    est = rotation_set(field, cfg["grid"], cfg["T"], integ, cfg["tol_singleton"],
                       cfg["tol_segment"], cfg["include_equilibria"], cfg["threads"])
    if cfg["random_points"]:
        rng = np.random.default_rng(cfg["seed"])
        extra = rng.random((cfg["random_points"], field.dimension))
        est.points.extend(rotation_vectors(field, extra, cfg["T"], integ, cfg["threads"]))
        cls, zeta, hull, diam, ts, tg = classify(est.points, est.max_speed,
                                                 cfg["tol_singleton"], cfg["tol_segment"])
        est.classification, est.zeta, est.hull, est.diameter = cls, zeta, hull, diam
        est.tol_singleton, est.tol_segment = ts, tg
    est.to_json(os.path.join(out, "rotation_set.json"))
    est.to_csv(os.path.join(out, "rotation_set.csv"))
    moving = [p for p in est.points if not p.equilibrium]
    code = EXIT_STALLED if moving and all(p.stalled for p in moving) else EXIT_OK
    return ["rotation_set.json", "rotation_set.csv"], code


def _limit_name(family):
    return family[:-len("_perturbed")] if family.endswith("_perturbed") else None


def _cmd_sweep(cfg, out):
    from .fields import reference_rotation
    from .rotation import perturbation_sweep, rotation_set

    family = cfg["family"]
    params = dict(cfg["field"].get("params", {})) if cfg["field"]["name"] == family else {}
    params.pop("n", None)
    probe = _field(cfg, family, {**params, "n": cfg["n_list"][0]})
    integ = _integrator(cfg)
    limit = None
    base = _limit_name(family)
    if cfg["limit"] != "none" and base is not None:
        lim_params = {k: v for k, v in params.items() if k not in ("gamma",)}
        lim_field = _field(cfg, base, lim_params)
        if cfg["limit"] == "reference":
            limit = reference_rotation(lim_field)
        else:
            limit = rotation_set(lim_field, cfg["grid"], cfg["T"], integ, threads=cfg["threads"])
    del probe
    res = perturbation_sweep(family, cfg["n_list"], cfg["grid"], cfg["T"], integ,
                             params=params, limit=limit, threads=cfg["threads"])
    res.to_json(os.path.join(out, "sweep.json"))
    res.to_csv(os.path.join(out, "sweep.csv"))
    return ["sweep.json", "sweep.csv"], EXIT_OK


def _cmd_occupation(cfg, out):
    from .measures import mean_under_measure, occupation_measure

    field = _field(cfg)
    m = occupation_measure(field, _x0(cfg, field), cfg["T"], cfg["resolution"],
                           _integrator(cfg), cfg["sample_every"])
    m.to_csv(os.path.join(out, "histogram.csv"))
    write_json({"field": field.name, "x0": m.x0, "T": m.T, "resolution": m.resolution,
                "mass": float(m.weights.sum()), "endpoint": m.endpoint,
                "mean_b": mean_under_measure(field, m),
                "rotation_vector": (m.endpoint - m.x0) / m.T, "stalled": m.stalled},
               os.path.join(out, "occupation.json"))
    return ["histogram.csv", "occupation.json"], EXIT_STALLED if m.stalled else EXIT_OK


def _cmd_divcurl(cfg, out):
    from .measures import divcurl_residual, invariant_measure, occupation_measure

    field = _field(cfg)
    if cfg["measure"] == "analytic":
        try:
            mu = invariant_measure(field, cfg["quadrature_nodes"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        mu = occupation_measure(field, _x0(cfg, field), cfg["T"], cfg["resolution"],
                                _integrator(cfg), cfg["sample_every"])
    rep = divcurl_residual(field, mu, cfg["freq_cutoff"])
    rep.to_json(os.path.join(out, "divcurl.json"))
    return ["divcurl.json"], EXIT_OK


def _solve(cfg):
    from . import elliptic

    c = cfg["conductivity"]
    try:
        spec = elliptic.conductivity(c["sigma"], c["amplitude"], c["resolution"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sol = elliptic.solve_cell(spec, c["tol"], c["max_iter"])
    if not sol.converged:
        raise NonConvergence(f"cell problem did not converge: residual {sol.residual:.3e} "
                             f"after {sol.iterations} iterations")
    return sol


def _cmd_cell(cfg, out):
    from .elliptic import electric_field, min_field_norm, small_denominators

    sol = _solve(cfg)
    lam = np.asarray(cfg["lam"], dtype=float)
    zeta = sol.A_star @ lam
    report = sol.to_dict()
    report.update({"lam": lam, "A_star_lambda": zeta,
                   "small_denominators": small_denominators(zeta),
                   "min_field_norm": min_field_norm(electric_field(sol, lam))})
    write_json(report, os.path.join(out, "cell.json"))
    sol.to_csv(os.path.join(out, "du.csv"))
    return ["cell.json", "du.csv"], EXIT_OK


def _cmd_homogenize(cfg, out):
    from .elliptic import electric_field, small_denominators
    from .fields import reference_rotation
    from .homogenize import TransportExperiment, profile, run_experiment

    if cfg["field"]["name"] == "conductivity":
        sol = _solve(cfg)
        lam = np.asarray(cfg["lam"], dtype=float)
        field = electric_field(sol, lam)
        zeta = sol.A_star @ lam if cfg["zeta"] is None else np.asarray(cfg["zeta"])
        hits = small_denominators(zeta)
        if hits:
            log.warning("small denominators |zeta.kappa| < 1e-6 for kappa in %s", hits[:5])
    else:
        field = _field(cfg)
        if cfg["zeta"] is not None:
            zeta = np.asarray(cfg["zeta"], dtype=float)
        else:
            ref = reference_rotation(field)
            if ref is None or ref[0] != "singleton":
                raise ConfigError(f"no singleton rotation vector known for {field.name}; "
                                  "pass --zeta")
            zeta = ref[1]
    if zeta.size != field.dimension:
        raise ConfigError("zeta has the wrong dimension")
    prof = dict(cfg["profile"])
    u0 = profile(prof.pop("name"), **prof)
    try:
        exp = TransportExperiment(field, u0, cfg["eps"], cfg["t_final"],
                                  points_per_axis=cfg["points_per_axis"],
                                  time_samples=cfg["time_samples"], p=cfg["p"],
                                  config=_integrator(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    table = run_experiment(exp, zeta, threads=cfg["threads"],
                           progress=lambda e, r: log.info("eps=%g error=%.6e", e, r))
    table.to_csv(os.path.join(out, "convergence.csv"), cfg["timings"])
    report = table.to_dict(cfg["timings"])
    report["zeta"] = zeta
    write_json(report, os.path.join(out, "convergence.json"))
    files = ["convergence.csv", "convergence.json"]
    if cfg["svg"]:
        table.to_svg(os.path.join(out, "convergence.svg"))
        files.append("convergence.svg")
    total = exp.points_per_axis ** 2
    code = EXIT_STALLED if table.stalled and all(s == total for s in table.stalled) else EXIT_OK
    return files, code


def _cmd_catalog(cfg, out):
    from .fields import catalog_entries

    listing = [{"name": n, "description": d, "params": p} for n, d, p in catalog_entries()]
    text = dumps(listing)
    sys.stdout.write(text)
    with open(os.path.join(out, "catalog.json"), "w") as fh:
        fh.write(text)
    return ["catalog.json"], EXIT_OK


HANDLERS = {
    "rotation": _cmd_rotation,
    "rotation-set": _cmd_rotation_set,
    "perturbation-sweep": _cmd_sweep,
    "occupation": _cmd_occupation,
    "divcurl-check": _cmd_divcurl,
    "cell-solve": _cmd_cell,
    "homogenize": _cmd_homogenize,
    "catalog-list": _cmd_catalog,
}


def run(cfg):
    """Execute a resolved configuration; returns (exit_code, output files)."""
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if cfg.get("threads") is None and cfg["command"] != "catalog-list":
        cfg = {**cfg, "threads": thread_count(None)}
    files, code = HANDLERS[cfg["command"]](cfg, out)
    echo = dict(cfg)
    # thread count never changes results, so it stays out of the manifest
    echo.pop("threads", None)
    write_json({"version": __version__, "command": cfg["command"], "config": plain(echo),
                "outputs": sorted(files), "exit_code": code},
               os.path.join(out, "manifest.json"))
    return code, files


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        code, files = run(cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NonConvergence as exc:
        log.error("%s", exc)
        return EXIT_NONCONVERGENCE
    except Exception as exc:  # noqa: BLE001
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR
    log.info("wrote %s to %s", ", ".join(files), cfg["out"])
    return code


if __name__ == "__main__":
    sys.exit(main())
