"""Config-driven command line front end.

A run loads one JSON config, dispatches to the solvers or the dissociation
pipeline, and writes its artifacts plus a manifest (path, sha256, size per
file) into the output directory. All randomness is seeded, nothing
timestamps its output, so identical (config, seed) pairs produce
byte-identical files.

Exit codes: 0 success, 2 config validation error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .costs import COST_FAMILIES, CostSpec, EtaDomainError, SizeCapError, cost_tensor
from .dissociation import (
    DissociationReport,
    SceInfeasibleError,
    dirac_degeneracy_demo,
    dissociation_curve,
    taylor_slope_check,
)
from .entropic import epsilon_schedule_solve, solve_sinkhorn
from .exact import monge_diagnostics, solve_lp, uniqueness_probe, verify_splitting
from .measures import DiscreteMeasure, grid_measure

__all__ = ["CONFIG_SCHEMA", "run", "emit_plot_data", "main"]

COMMANDS = ("solve", "dissociate", "taylor-check", "monge-check", "dirac-demo")

PLOT_HEADER = "# R total eta residual_order2 residual_order3"

_MEASURE_SPEC = {
    "type": "object",
    "oneOf": [
        {"required": ["points", "weights"]},
        {"required": ["file"]},
        {"required": ["grid"]},
    ],
    "properties": {
        "points": {"type": "array", "minItems": 1},
        "weights": {"type": "array", "minItems": 1},
        "d": {"type": "integer", "minimum": 1},
        "file": {"type": "string"},
        "grid": {
            "type": "object",
            "required": ["box", "n"],
            "properties": {
                "box": {"type": "array", "minItems": 1},
                "n": {"type": "integer", "minimum": 1},
                "density": {"type": "string"},
                "jitter": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_ETAS_SPEC = {
    "oneOf": [
        {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        {
            "type": "object",
            "required": ["min", "max", "num"],
            "properties": {
                "min": {"type": "number", "exclusiveMinimum": 0},
                "max": {"type": "number", "exclusiveMinimum": 0},
                "num": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "command"],
    "properties": {
        "schema_version": {"const": 1},
        "command": {"enum": list(COMMANDS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "backend": {"enum": ["lp", "entropic"]},
        "cost": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": list(COST_FAMILIES)},
                "Na": {"type": "integer", "minimum": 1},
                "Nb": {"type": "integer", "minimum": 1},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "d": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "marginals": {"type": "array", "items": _MEASURE_SPEC, "minItems": 1},
        "solver": {
            "type": "object",
            "properties": {
                "pivot_limit": {"type": "integer", "minimum": 1},
                "mass_tol": {"type": "number", "exclusiveMinimum": 0},
                "probe": {
                    "type": "object",
                    "properties": {
                        "trials": {"type": "integer", "minimum": 2},
                        "delta": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "entropic": {
            "type": "object",
            "properties": {
                "epsilon": {
                    "oneOf": [
                        {"type": "number", "exclusiveMinimum": 0},
                        {
                            "type": "array",
                            "items": {"type": "number", "exclusiveMinimum": 0},
                            "minItems": 1,
                        },
                    ]
                },
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "dissociation": {
            "type": "object",
            "required": ["Na", "Nb", "rho_a", "rho_b"],
            "properties": {
                "Na": {"type": "integer", "minimum": 1},
                "Nb": {"type": "integer", "minimum": 1},
                "rho_a": _MEASURE_SPEC,
                "rho_b": _MEASURE_SPEC,
                "etas": _ETAS_SPEC,
            },
            "additionalProperties": False,
        },
        "taylor_window": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 2,
            "maxItems": 2,
        },
        "dirac": {
            "type": "object",
            "required": ["y_hats"],
            "properties": {
                "y_hats": {"type": "array", "minItems": 1},
                "n_plans": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"command": {"const": "solve"}}},
         "then": {"required": ["cost", "marginals"]}},
        {"if": {"properties": {"command": {"const": "monge-check"}}},
         "then": {"required": ["cost", "marginals"]}},
        {"if": {"properties": {"command": {"const": "dissociate"}}},
         "then": {"required": ["dissociation"]}},
        {"if": {"properties": {"command": {"const": "taylor-check"}}},
         "then": {"required": ["dissociation"]}},
        {"if": {"properties": {"command": {"const": "dirac-demo"}}},
         "then": {"required": ["marginals", "dirac"]}},
    ],
}


class ConfigError(ValueError):
    """Config failed validation; message names the offending JSON path."""


class SolverFailure(RuntimeError):
    pass


def _error_path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    missing = re.search(r"'([^']+)' is a required property", err.message)
    if missing:
        parts.append(missing.group(1))
    return ".".join(parts) if parts else "(root)"


def validate_config(config: dict) -> None:
    validator = Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(f"{_error_path(err)}: {err.message}")


def _collect_file_refs(config: dict):
    specs = list(config.get("marginals", []))
    dis = config.get("dissociation")
    if dis:
        specs += [dis["rho_a"], dis["rho_b"]]
    return [s["file"] for s in specs if "file" in s]


def _resolve_measure(spec: dict, base_dir: Path, rng) -> DiscreteMeasure:
    if "file" in spec:
        return DiscreteMeasure.from_json(json.loads((base_dir / spec["file"]).read_text()))
    if "grid" in spec:
        g = spec["grid"]
        return grid_measure(g["box"], g["n"], g.get("density", "uniform"),
                            g.get("jitter", 0.0), rng)
    return DiscreteMeasure.from_json(spec)


def _eta_list(spec) -> list:
    if spec is None:
        spec = {"min": 1e-3, "max": 1e-2, "num": 8}
    if isinstance(spec, list):
        return [float(e) for e in spec]
    return list(np.geomspace(spec["max"], spec["min"], int(spec["num"])))


def _jsonable(value):
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def emit_plot_data(report: DissociationReport, path) -> None:
    """Write a plot-ready table: separation-energy pairs plus log-log
    residual columns, one line per eta in the report's (descending) order."""
    if not report.rows:
        raise ValueError("cannot emit plot data from an empty report")
    lines = [PLOT_HEADER]
    for r in report.rows:
        fields = (1.0 / r.eta, r.total, r.eta, r.residual_order2, r.residual_order3)
        lines.append(" ".join(repr(float(v)) for v in fields))
    Path(path).write_text("\n".join(lines) + "\n")


def _support_entries(report, mass_tol):
    return [
        {"indices": list(idx), "mass": mass}
        for idx, mass in report.support(mass_tol)
    ]


def _solve_outputs(config, marginals, out_dir, backend):
    spec = CostSpec.from_json(config["cost"])
    cost = cost_tensor(spec, marginals)
    solver_cfg = config.get("solver", {})
    mass_tol = solver_cfg.get("mass_tol", 1e-9)
    if backend == "lp":
        rep = solve_lp(cost, marginals, pivot_limit=solver_cfg.get("pivot_limit", 50_000))
        if not rep.optimal:
            raise SolverFailure(f"lp solve failed: status={rep.status!r}")
        check = verify_splitting(rep, cost)
        payload = {
            "schema_version": 1,
            "command": "solve",
            "backend": "lp",
            "status": rep.status,
            "value": rep.value,
            "dual_value": rep.dual_value,
            "pivots": rep.pivots,
            "support": _support_entries(rep, mass_tol),
            "potentials": [list(t) for t in rep.potentials.tables],
            "splitting": {
                "ok": check.ok,
                "max_violation": check.max_violation,
                "max_support_gap": check.max_support_gap,
                "value_gap": check.value_gap,
            },
        }
    else:
        ent = config.get("entropic", {})
        epsilon = ent.get("epsilon", 1e-2)
        tol = ent.get("tol", 1e-8)
        max_iter = ent.get("max_iter", 100_000)
        trace = None
        if isinstance(epsilon, list):
            res, trace = epsilon_schedule_solve(cost, marginals, epsilon, tol=tol, max_iter=max_iter)
        else:
            res = solve_sinkhorn(cost, marginals, epsilon, tol=tol, max_iter=max_iter)
        if res.status != "converged":
            raise SolverFailure(f"entropic solve failed: status={res.status!r}")
        payload = {
            "schema_version": 1,
            "command": "solve",
            "backend": "entropic",
            "status": res.status,
            "value": res.value,
            "marginal_error": res.marginal_error,
            "sweeps": res.state.iterations,
            "epsilon": epsilon,
            "potentials": [list(t) for t in res.state.potentials],
        }
        if trace is not None:
            payload["trace"] = trace
    _write_json(out_dir / "report.json", payload)
    return ["report.json"]


def _monge_outputs(config, marginals, out_dir, seed):
    spec = CostSpec.from_json(config["cost"])
    cost = cost_tensor(spec, marginals)
    solver_cfg = config.get("solver", {})
    mass_tol = solver_cfg.get("mass_tol", 1e-9)
    probe_cfg = solver_cfg.get("probe", {})
    rep = solve_lp(cost, marginals, pivot_limit=solver_cfg.get("pivot_limit", 50_000))
    if not rep.optimal:
        raise SolverFailure(f"lp solve failed: status={rep.status!r}")
    diag = monge_diagnostics(rep, mass_tol=mass_tol)
    probe = uniqueness_probe(
        cost,
        marginals,
        trials=probe_cfg.get("trials", 5),
        delta=probe_cfg.get("delta", 1e-7),
        seed=probe_cfg.get("seed", seed),
        mass_tol=mass_tol,
    )
    payload = {
        "schema_version": 1,
        "command": "monge-check",
        "value": rep.value,
        "dual_value": rep.dual_value,
        "graphical_mass_fraction": diag.graphical_mass_fraction,
        "max_partner_count": diag.max_partner_count,
        "is_graphical": diag.is_graphical,
        "map_tables": [list(t) for t in diag.map_tables],
        "support": _support_entries(rep, mass_tol),
        "uniqueness": {
            "unique": probe.unique,
            "supports_identical": probe.supports_identical,
            "value_spread": probe.value_spread,
            "spread_tol": probe.spread_tol,
            "values": list(probe.values),
            "trials": probe.trials,
            "delta": probe.delta,
            "seed": probe.seed,
        },
    }
    _write_json(out_dir / "monge.json", payload)
    return ["monge.json"]


def _dissociation_report(config, base_dir, rng, backend):
    dis = config["dissociation"]
    rho_a = _resolve_measure(dis["rho_a"], base_dir, rng)
    rho_b = _resolve_measure(dis["rho_b"], base_dir, rng)
    etas = _eta_list(dis.get("etas"))
    options = dict(config.get("entropic", {})) if backend == "entropic" else None
    return dissociation_curve(rho_a, rho_b, int(dis["Na"]), int(dis["Nb"]),
                              etas, backend=backend, options=options)


def _dissociate_outputs(report, out_dir):
    report.to_csv(out_dir / "curve.csv")
    _write_json(out_dir / "curve.json", report.to_json())
    emit_plot_data(report, out_dir / "plot.dat")
    return ["curve.csv", "curve.json", "plot.dat"]


def _taylor_outputs(config, report, out_dir):
    files = _dissociate_outputs(report, out_dir)
    window = tuple(config.get("taylor_window", (1e-3, 1e-2)))
    check = taylor_slope_check(report, window)
    _write_json(out_dir / "slopes.json", {
        "schema_version": 1,
        "command": "taylor-check",
        "slope2": check.slope2,
        "slope3": check.slope3,
        "status": check.status,
        "n_points": check.n_points,
        "window": list(check.window),
    })
    return files + ["slopes.json"]


def _dirac_outputs(config, marginals, out_dir, seed):
    dirac_cfg = config["dirac"]
    rep = dirac_degeneracy_demo(
        marginals,
        dirac_cfg["y_hats"],
        n_plans=dirac_cfg.get("n_plans", 20),
        seed=seed,
    )
    payload = rep.to_json()
    payload["command"] = "dirac-demo"
    _write_json(out_dir / "degeneracy.json", payload)
    return ["degeneracy.json"]


def _write_manifest(out_dir: Path, config, seed, files) -> None:
    entries = []
    for name in sorted(files):
        data = (out_dir / name).read_bytes()
        entries.append({
            "path": name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        })
    _write_json(out_dir / "manifest.json", {
        "schema_version": 1,
        "command": config["command"],
        "seed": seed,
        "files": entries,
    })


def run(config: dict, out_dir, base_dir=None, seed=None, backend=None) -> int:
    """Execute one validated run; returns the process exit code."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    out_dir = Path(out_dir)
    try:
        validate_config(config)
        for ref in _collect_file_refs(config):
            if not (base_dir / ref).is_file():
                raise ConfigError(f"referenced file does not exist: {ref}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    seed = int(config.get("seed", 0)) if seed is None else int(seed)
    backend = backend or config.get("backend", "lp")
    command = config["command"]
    if command == "monge-check" and backend != "lp":
        print("config error: backend: monge-check requires the lp backend", file=sys.stderr)
        return 2

    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    try:
        if command in ("solve", "monge-check", "dirac-demo"):
            marginals = [_resolve_measure(s, base_dir, rng) for s in config["marginals"]]
        if command == "solve":
            files = _solve_outputs(config, marginals, out_dir, backend)
        elif command == "monge-check":
            files = _monge_outputs(config, marginals, out_dir, seed)
        elif command == "dirac-demo":
            files = _dirac_outputs(config, marginals, out_dir, seed)
        else:
            report = _dissociation_report(config, base_dir, rng, backend)
            if command == "dissociate":
                files = _dissociate_outputs(report, out_dir)
            else:
                files = _taylor_outputs(config, report, out_dir)
    except (SolverFailure, SceInfeasibleError, EtaDomainError, SizeCapError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    _write_manifest(out_dir, config, seed, files)
    print(f"wrote {len(files) + 1} files to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otdissoc",
        description="Multi-marginal transport solvers and dissociation curves "
                    "for separated-fragment Coulomb systems.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--out", required=True, help="output directory for artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    parser.add_argument("--backend", choices=["lp", "entropic"], default=None,
                        help="override the config backend")
    args = parser.parse_args(argv)

    config_path = Path(args.config)
    try:
        config = json.loads(config_path.read_text())
    except FileNotFoundError:
        print(f"config error: no such file: {config_path}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as err:
        print(f"config error: invalid JSON in {config_path}: {err}", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("config error: seed: must fit in an unsigned 64-bit integer", file=sys.stderr)
        return 2
    return run(config, args.out, base_dir=config_path.parent,
               seed=args.seed, backend=args.backend)


if __name__ == "__main__":
    raise SystemExit(main())
