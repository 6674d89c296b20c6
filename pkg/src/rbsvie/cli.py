"""Command line front end.

Subcommands
    solve               solve an instance and write solution artifacts
    oracle-check        exhaustive stopping-rule audit on a small lattice
    compare             order two instances and check their solutions
    stop                stopping-rule consistency report
    verify-assumptions  spot-check the declared instance regularity

Configs are INI files; see the package README for the key reference.
Exit codes: 0 success, 1 bad config or infeasible request, 2 solver
failed to converge, 3 a verification check failed.  All artifacts are
byte-reproducible from (config, flags).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rbsvie import mc
from rbsvie.compare import CompareError, OrderedPair, check_comparison
from rbsvie.grid import TimeGrid, build_lattice
from rbsvie.instances import (CATALOG_NAMES, InstanceError, catalog_instance,
                              verify_assumptions)
from rbsvie.oracle import MAX_RULE_NODES, best_rule, interior_node_count
from rbsvie.snell import flatness_defect
from rbsvie.stopping import (extract_frontier, frontier_rows,
                             inconsistency_report, premature_increment_mass)
from rbsvie.volterra import NoConvergence, PicardConfig, solve

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_CONVERGENCE = 2
EXIT_VERIFICATION = 3

ORACLE_TOLERANCE = 1e-10


class ConfigError(ValueError):
    pass


class VerificationFailure(RuntimeError):
    pass


_SECTIONS = {
    "instance": None,  # name plus free-form numeric parameters
    "grid": {"t", "n"},
    "picard": {"tolerance", "max_iters", "mode", "delta"},
    "mc": {"n_paths", "seed", "basis_degree", "basis_family"},
    "output": {"dir"},
}


@dataclass
class RunConfig:
    instance_name: str
    instance_params: dict = field(default_factory=dict)
    n_steps: int = 50
    tolerance: float | None = None
    max_iters: int = 200
    mode: str = "global"
    delta: float | None = None
    n_paths: int = 100_000
    seed: int = 20260825
    basis_degree: int = 8
    basis_family: str = "pwlinear"
    out_dir: str | None = None


def _get_float(cp, section, key, default=None):
    if not cp.has_option(section, key):
        return default
    try:
        return float(cp.get(section, key))
    except ValueError:
        raise ConfigError(f"{section}.{key} must be a number, got '{cp.get(section, key)}'")


def _get_int(cp, section, key, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key} must be an integer, got '{raw}'")
    return val


def load_config(path: str) -> RunConfig:
    """Parse and fully validate an INI run config.

    Raises ConfigError on anything unexpected; nothing is written before
    validation succeeds.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read_string(p.read_text())
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")

    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        if allowed is not None:
            for key in cp.options(section):
                if key not in allowed:
                    raise ConfigError(f"unknown key {section}.{key}")

    if not cp.has_section("instance") or not cp.has_option("instance", "name"):
        raise ConfigError("config needs an [instance] section with a name")
    name = cp.get("instance", "name")
    if name not in CATALOG_NAMES:
        raise ConfigError(f"unknown instance '{name}'; known: {', '.join(CATALOG_NAMES)}")
    params = {}
    for key in cp.options("instance"):
        if key == "name":
            continue
        params[key] = _get_float(cp, "instance", key)

    cfg = RunConfig(instance_name=name, instance_params=params)

    horizon = _get_float(cp, "grid", "t")
    if horizon is not None:
        if horizon <= 0:
            raise ConfigError(f"grid.T must be positive, got {horizon}")
        if "horizon" in params:
            raise ConfigError("specify the horizon once: either grid.T or instance.horizon")
        params["horizon"] = horizon
    n = _get_int(cp, "grid", "n")
    if n is not None:
        if n < 1:
            raise ConfigError(f"grid.N must be >= 1, got {n}")
        cfg.n_steps = n

    cfg.tolerance = _get_float(cp, "picard", "tolerance", cfg.tolerance)
    if cfg.tolerance is not None and cfg.tolerance <= 0:
        raise ConfigError("picard.tolerance must be positive")
    cfg.max_iters = _get_int(cp, "picard", "max_iters", cfg.max_iters)
    if cfg.max_iters < 1:
        raise ConfigError("picard.max_iters must be >= 1")
    if cp.has_option("picard", "mode"):
        cfg.mode = cp.get("picard", "mode")
        if cfg.mode not in ("global", "windowed"):
            raise ConfigError(f"picard.mode must be global or windowed, got '{cfg.mode}'")
    cfg.delta = _get_float(cp, "picard", "delta", cfg.delta)

    cfg.n_paths = _get_int(cp, "mc", "n_paths", cfg.n_paths)
    if cfg.n_paths < 2:
        raise ConfigError("mc.n_paths must be >= 2")
    cfg.seed = _get_int(cp, "mc", "seed", cfg.seed)
    cfg.basis_degree = _get_int(cp, "mc", "basis_degree", cfg.basis_degree)
    if cp.has_option("mc", "basis_family"):
        cfg.basis_family = cp.get("mc", "basis_family")

    if cp.has_option("output", "dir"):
        cfg.out_dir = cp.get("output", "dir")

    try:
        catalog_instance(name, dict(params))
    except InstanceError as exc:
        raise ConfigError(str(exc))
    return cfg


def _build(cfg: RunConfig, max_n=None):
    spec = catalog_instance(cfg.instance_name, dict(cfg.instance_params))
    n = cfg.n_steps if max_n is None else min(cfg.n_steps, max_n)
    grid = TimeGrid(spec.horizon, n)
    lat = build_lattice(grid, spec.x0, spec.dynamics)
    return spec, grid, lat


def _picard_config(cfg: RunConfig, engine: str) -> PicardConfig:
    tol = cfg.tolerance
    if tol is None:
        tol = 1e-10 if engine == "lattice" else 1e-6
    return PicardConfig(tolerance=tol, max_iters=cfg.max_iters,
                        mode=cfg.mode, delta=cfg.delta)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    # repr keeps full float precision so files round-trip exactly
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _frontier_summary(rows) -> dict:
    return {
        "n_rows": len(rows),
        "rows": [[float(v) for v in row] for row in rows],
    }


def cmd_solve(args) -> int:
    cfg = load_config(args.config[0])
    spec, grid, lat = _build(cfg, args.max_n)
    out = _out_dir(args, cfg)

    if args.engine == "lattice":
        sol = solve(lat, spec, _picard_config(cfg, "lattice"))
        frontier = extract_frontier(sol, lat, spec)
        f_rows = frontier_rows(frontier, lat)
        payload = {
            "engine": "lattice",
            "instance": spec.label,
            "n_steps": grid.n_steps,
            "horizon": grid.horizon,
            "mode": sol.mode,
            "iterations": sol.iterations,
            "residual_history": [float(r) for r in sol.residual_history],
            "y_diag": [[float(v) for v in row] for row in sol.y_diag],
            "y0": float(sol.y_diag[0][0]),
            "frontier": _frontier_summary(f_rows),
        }
        y_rows = []
        for i in range(grid.n_steps + 1):
            for k in range(i + 1):
                y_rows.append((grid.t(i), k, float(lat.x[i][k]),
                               float(sol.y_diag[i][k])))
    else:
        bundle = mc.simulate(grid, spec, cfg.n_paths, cfg.seed)
        basis = mc.RegressionBasis(cfg.basis_family, cfg.basis_degree)
        sol = mc.solve_mc(bundle, spec, basis, _picard_config(cfg, "mc"))
        f_rows = [(0.0, t_j, lo, hi) for t_j, lo, hi in sol.frontier_rows]
        payload = {
            "engine": "mc",
            "instance": spec.label,
            "n_steps": grid.n_steps,
            "horizon": grid.horizon,
            "iterations": sol.iterations,
            "residual_history": [float(r) for r in sol.residual_history],
            "y_diag": [float(v) for v in sol.e_y_diag],
            "y0": sol.y0,
            "y0_se": sol.y0_se,
            "floor_margin": sol.floor_margin,
            "metadata": sol.metadata,
            "frontier": _frontier_summary(f_rows),
        }
        # mc rows estimate the mean diagonal: no lattice node applies
        y_rows = [(grid.t(i), "", "", float(sol.e_y_diag[i]))
                  for i in range(grid.n_steps + 1)]

    _write_json(out / "solution.json", payload)
    _write_csv(out / "y_diag.csv", ("anchor_time", "node_index", "state", "y"), y_rows)
    _write_csv(out / "frontier.csv",
               ("anchor_time", "time", "critical_state_low", "critical_state_high"),
               f_rows)
    print(f"solved {spec.label} (engine={args.engine}, N={grid.n_steps}): "
          f"y0={payload['y0']:.10g}, {sol.iterations} iteration(s); wrote {out}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg = load_config(args.config[0])
    spec, grid, lat = _build(cfg, args.max_n)
    n = grid.n_steps
    worst = interior_node_count(n, 0)
    if worst > MAX_RULE_NODES:
        raise ConfigError(
            f"oracle-check needs at most {MAX_RULE_NODES} interior nodes; "
            f"N={n} has {worst} (use N <= 5 or --max-n)")
    out = _out_dir(args, cfg)

    sol = solve(lat, spec, _picard_config(cfg, "lattice"))
    deviations = []
    for i in range(n + 1):
        zrow = [sol.z.at(i, j) for j in range(i, n)]
        for k in range(i + 1):
            _, val = best_rule(lat, spec, i, k, sol.y_diag, zrow)
            deviations.append({
                "anchor": i,
                "node": k,
                "solver": float(sol.ytilde.at(i, i)[k]),
                "exhaustive": float(val),
                "abs_error": abs(float(sol.ytilde.at(i, i)[k]) - float(val)),
            })
    max_dev = max(d["abs_error"] for d in deviations)
    _write_json(out / "report.json", {
        "command": "oracle-check",
        "instance": spec.label,
        "n_steps": n,
        "tolerance": ORACLE_TOLERANCE,
        "max_abs_error": max_dev,
        "nodes_checked": len(deviations),
        "deviations": deviations,
    })
    print(f"oracle-check {spec.label} N={n}: max |error| = {max_dev:.3e} "
          f"over {len(deviations)} nodes; wrote {out / 'report.json'}")
    if max_dev > ORACLE_TOLERANCE:
        raise VerificationFailure(
            f"exhaustive stopping-rule values deviate by {max_dev:.3e} "
            f"(tolerance {ORACLE_TOLERANCE})")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.config) != 2:
        raise ConfigError("compare needs exactly two --config files (low, high)")
    cfg_lo = load_config(args.config[0])
    cfg_hi = load_config(args.config[1])
    if cfg_lo.n_steps != cfg_hi.n_steps:
        raise ConfigError("compare needs both configs on the same grid.N")
    spec_lo, grid, lat = _build(cfg_lo, args.max_n)
    spec_hi, _, _ = _build(cfg_hi, args.max_n)
    try:
        pair = OrderedPair.build(spec_lo, spec_hi, lat)
    except CompareError as exc:
        raise ConfigError(f"pair rejected: {exc}")
    out = _out_dir(args, cfg_lo)

    report = check_comparison(lat, pair, _picard_config(cfg_lo, "lattice"))
    _write_json(out / "report.json", {
        "command": "compare",
        "low": spec_lo.label,
        "high": spec_hi.label,
        "low_params": cfg_lo.instance_params,
        "high_params": cfg_hi.instance_params,
        "n_steps": grid.n_steps,
        "ordering_witnesses": list(pair.witnesses),
        "max_diff": report.max_diff,
        "ordered": report.ordered,
        "witness": list(report.witness) if report.witness else None,
        "driver_ordering_ok": report.driver_ordering_ok,
        "y_range": list(report.y_range),
        "z_range": list(report.z_range),
    })
    print(f"compare {spec_lo.label} <= {spec_hi.label}: max(Y_lo - Y_hi) = "
          f"{report.max_diff:.3e}; wrote {out / 'report.json'}")
    if not report.ordered:
        raise VerificationFailure(
            f"solutions are not ordered: max(Y_lo - Y_hi) = {report.max_diff:.3e}")
    return EXIT_OK


def cmd_stop(args) -> int:
    cfg = load_config(args.config[0])
    spec, grid, lat = _build(cfg, args.max_n)
    out = _out_dir(args, cfg)

    sol = solve(lat, spec, _picard_config(cfg, "lattice"))
    rep = inconsistency_report(lat, spec, sol)
    frontier = extract_frontier(sol, lat, spec)
    mass = max(premature_increment_mass(sol, frontier, i)
               for i in range(grid.n_steps + 1))
    _write_json(out / "inconsistency.json", {
        "command": "stop",
        "instance": spec.label,
        "n_steps": grid.n_steps,
        "anchor_times": list(rep.anchor_times),
        "e_y": list(rep.e_y),
        "j_own": list(rep.j_own),
        "j_restarted": list(rep.j_restarted),
        "gap": list(rep.gap),
        "max_gap": rep.max_gap,
        "frontiers_identical": rep.frontiers_identical,
        "inconsistent": rep.inconsistent(),
        "max_identity_error": rep.max_identity_error,
        "premature_increment_mass": mass,
    })
    print(f"stop {spec.label} N={grid.n_steps}: max gap = {rep.max_gap:.3e}, "
          f"frontiers identical = {rep.frontiers_identical}; "
          f"wrote {out / 'inconsistency.json'}")
    if rep.max_identity_error > 1e-8:
        raise VerificationFailure(
            f"own-rule value disagrees with E[Y] by {rep.max_identity_error:.3e}")
    if min(rep.gap) < -1e-8:
        raise VerificationFailure(
            f"a restarted rule beats the own rule by {-min(rep.gap):.3e}")
    if mass > 1e-12:
        raise VerificationFailure(
            f"reflection increments of size {mass:.3e} appear off the stop region")
    return EXIT_OK


def cmd_verify_assumptions(args) -> int:
    cfg = load_config(args.config[0])
    spec, grid, _ = _build(cfg, args.max_n)
    out = _out_dir(args, cfg)

    rep = verify_assumptions(spec, n_steps=grid.n_steps)
    _write_json(out / "report.json", {
        "command": "verify-assumptions",
        "instance": rep.instance,
        "n_steps": rep.n_steps,
        "samples": rep.samples,
        "ok": rep.ok,
        "lipschitz_ratio": rep.lipschitz_ratio,
        "holder_ratio": rep.holder_ratio,
        "violations": [
            {"kind": v.kind, "detail": v.detail} for v in rep.violations
        ],
    })
    status = "ok" if rep.ok else f"{len(rep.violations)} violation(s)"
    print(f"verify-assumptions {spec.label}: {status}; wrote {out / 'report.json'}")
    if not rep.ok:
        raise VerificationFailure(
            "; ".join(v.detail for v in rep.violations[:3]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbsvie",
        description="Lattice and Monte Carlo solvers for reflected "
                    "backward stochastic Volterra equations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", action="append", required=True,
                        metavar="PATH", help="INI run config (repeatable where noted)")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="artifact directory (default: output.dir or cwd)")
        sp.add_argument("--max-n", type=int, default=None, metavar="INT",
                        help="cap the number of time steps")

    sp = sub.add_parser("solve", help="solve an instance and write artifacts")
    common(sp)
    sp.add_argument("--engine", choices=("lattice", "mc"), default="lattice")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("oracle-check",
                        help="exhaustive stopping-rule audit (small N only)")
    common(sp)
    sp.set_defaults(fn=cmd_oracle_check)

    sp = sub.add_parser("compare", help="order two instances and their solutions")
    common(sp)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("stop", help="stopping-rule consistency report")
    common(sp)
    sp.set_defaults(fn=cmd_stop)

    sp = sub.add_parser("verify-assumptions",
                        help="spot-check declared instance regularity")
    common(sp)
    sp.set_defaults(fn=cmd_verify_assumptions)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # keep exit 2 reserved for solver non-convergence
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstanceError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except mc.MCError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION


if __name__ == "__main__":
    sys.exit(main())
