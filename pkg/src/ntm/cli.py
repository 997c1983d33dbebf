"""Command-line front end: ``ntm run|sweep|validate-edge|plot|synth-graph``.

Exit codes: 0 when every requested output was written and no solver
aborted, 1 when a solver aborted (partial outputs are written and flagged in
the manifest), 2 for configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    arrival_times,
    correlation_with_seed,
    flux_table,
    mass_error_series,
    top_flux_edges,
)
from .config import ConfigError, build_geometry, build_params, build_transient, deep_merge, load_config, resolve, sweep_points
from .connectome import ConnectomeError, save_connectome, synthesize_graph
from .integrator import IntegrationError, configure_workers, run, seeded_state
from .steady_state import ShootingError, flux_residual, solve_profile
from .transient import DIRICHLET, TransientError, bolus, boundary_fluxes, simulate_edge

logger = logging.getLogger("ntm")

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2

TOP_FLUX_FRACTION = 0.1


def _fmt(x) -> str:
    return repr(float(x))


def _git_commit():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=5, check=True)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def _stamp() -> dict:
    return {"ntm_version": __version__, "git_commit": _git_commit(), "python": platform.python_version(),
            "numpy": np.__version__}


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _jsonable(x):
    """Replace non-finite floats by ``None`` so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


# ---------------------------------------------------------------- run outputs

def write_trajectory_csv(traj, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "region", "N", "M", "tau"])
        for t, N, M in zip(traj.times, traj.N, traj.M):
            for lab, n, m in zip(traj.labels, N, M):
                w.writerow([_fmt(t), lab, _fmt(n), _fmt(m), _fmt(n + m)])


def write_flux_csv(traj, path: Path):
    labels = traj.labels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "source", "target", "weighted_flux"])
        for t, fl in zip(traj.times, traj.flux):
            for (i, j), v in zip(traj.edges, fl):
                w.writerow([_fmt(t), labels[i], labels[j], _fmt(v)])


def write_mass_csv(traj, errors, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "total_mass", "relative_error"])
        for t, m, e in zip(traj.times, traj.total_mass, errors):
            w.writerow([_fmt(t), _fmt(m), _fmt(e)])


def write_correlation_csv(corr, path: Path):
    keys = ["pearson_out", "pearson_in", "spearman_out", "spearman_in"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *keys])
        for k, t in enumerate(corr["times"]):
            w.writerow([_fmt(t), *(_fmt(corr[key][k]) for key in keys)])


def write_top_flux_csv(traj, path: Path):
    labels = traj.labels
    table = flux_table(traj, len(traj) - 1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "weighted_flux"])
        if table:
            for i, j, v in top_flux_edges(table, TOP_FLUX_FRACTION):
                w.writerow([labels[i], labels[j], _fmt(v)])


def write_run_outputs(traj, rc, out_dir: Path) -> list:
    """Write all post-processed files for ``traj``; return their names."""
    written = []
    write_trajectory_csv(traj, out_dir / "trajectory.csv")
    written.append("trajectory.csv")
    write_flux_csv(traj, out_dir / "fluxes.csv")
    written.append("fluxes.csv")
    errors = mass_error_series(traj)
    write_mass_csv(traj, errors, out_dir / "mass_error.csv")
    written.append("mass_error.csv")
    write_top_flux_csv(traj, out_dir / "top_fluxes.csv")
    written.append("top_fluxes.csv")
    seed = rc.seed_indices[0]
    report = arrival_times(traj, seed_index=seed)
    summary = report.to_dict()
    summary["max_mass_error"] = float(errors.max())
    summary["final_time"] = float(traj.times[-1])
    if rc.conn.h >= 3:
        corr = correlation_with_seed(traj, rc.conn, seed)
        write_correlation_csv(corr, out_dir / "correlations.csv")
        written.append("correlations.csv")
        summary["final_correlations"] = {k: float(v[-1]) for k, v in corr.items() if k != "times"}
    _write_json(out_dir / "staging.json", _jsonable(summary))
    written.append("staging.json")
    return written


def execute_run(cfg: dict) -> tuple[int, dict]:
    """Resolve ``cfg``, integrate, write outputs and the manifest.

    Returns the exit code and the manifest.  Configuration problems raise
    :class:`ConfigError`.
    """
    rc = resolve(cfg)
    configure_workers(cfg.get("workers"))
    out_dir = rc.out_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc
    manifest = {"config": rc.manifest_config(), **_stamp(), "status": "running", "outputs": []}
    state0 = seeded_state(rc.conn, rc.seed_indices, rc.params, rc.total_tau)
    start = time.perf_counter()
    code = EXIT_OK
    try:
        traj = run(state0, rc.conn, rc.geom, rc.params, rc.integrator)
        manifest["status"] = "ok"
    except IntegrationError as exc:
        logger.error("integration aborted: %s", exc)
        traj = exc.trajectory
        manifest["status"] = "failed"
        manifest["message"] = str(exc)
        manifest["partial"] = True
        code = EXIT_SOLVER
    manifest["runtime_s"] = round(time.perf_counter() - start, 3)
    if traj is not None and len(traj) > 0:
        manifest["outputs"] = write_run_outputs(traj, rc, out_dir)
    if cfg.get("output", {}).get("plots") and traj is not None and len(traj) > 0:
        manifest["outputs"] += plot_run(out_dir)
    _write_json(out_dir / "manifest.json", _jsonable(manifest))
    return code, manifest


# ---------------------------------------------------------------- subcommands

def _config_from_args(args) -> dict:
    path = args.config
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if isinstance(data, dict) and "config" in data and "ntm_version" in data:
            # a manifest from an earlier run: replay its resolved config
            cfg = deep_merge(load_config(), data["config"])
            cfg["connectome"] = data["config"]["connectome"]
            from .config import apply_overrides
            cfg = apply_overrides(cfg, args.set)
        else:
            cfg = load_config(path, args.set)
    else:
        cfg = load_config(None, args.set)
    if getattr(args, "out", None):
        cfg["output"]["dir"] = args.out
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    return cfg


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    code, manifest = execute_run(cfg)
    print(f"{manifest['status']}: outputs in {cfg['output']['dir']}")
    return code


def _sweep_worker(payload):
    name, cfg = payload
    try:
        code, manifest = execute_run(cfg)
        return name, code, manifest.get("status", "failed"), manifest.get("message", "")
    except (ConfigError, ConnectomeError, OSError, ValueError) as exc:
        return name, EXIT_CONFIG, "error", str(exc)


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    points = sweep_points(cfg)
    root = Path(cfg["output"]["dir"])
    root.mkdir(parents=True, exist_ok=True)
    payloads = []
    for name, over in points:
        point_cfg = deep_merge(cfg, over)
        point_cfg["output"]["dir"] = str(root / name)
        point_cfg["sweep"] = {"grid": {}, "max_points": cfg["sweep"].get("max_points", 64), "workers": 1}
        resolve(point_cfg)  # fail fast on invalid grid values
        payloads.append((name, point_cfg))
    workers = int(cfg["sweep"].get("workers") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    else:
        results = [_sweep_worker(p) for p in payloads]

    rows = []
    for (name, over), (_, code, status, message) in zip(points, results):
        row = {"point": name, "status": status, "message": message}
        for section in over.values():
            row.update({k: v for k, v in section.items()})
        staging = root / name / "staging.json"
        if staging.is_file():
            s = json.loads(staging.read_text(encoding="utf-8"))
            row["half_decay_time"] = s.get("half_decay_time")
            row["seed_final_fraction"] = s.get("seed_final_fraction")
            row["max_mass_error"] = s.get("max_mass_error")
        rows.append(row)
    columns = ["point", "status"] + sorted({k for r in rows for k in r} - {"point", "status", "message"}) + ["message"]
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    failed = [r["point"] for r in rows if r["status"] != "ok"]
    print(f"{len(rows) - len(failed)}/{len(rows)} sweep points ok; summary in {root / 'summary.csv'}")
    if any(code == EXIT_CONFIG for _, code, _, _ in results):
        return EXIT_CONFIG
    return EXIT_SOLVER if failed else EXIT_OK


def relative_sup_difference(a, b) -> float:
    """``max|a - b| / max|b|``, or the absolute difference when ``b`` vanishes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = float(np.abs(a - b).max())
    scale = float(np.abs(b).max())
    return diff / scale if scale > 0 else diff


def validate_edge(cfg: dict) -> dict:
    """Relax the transient edge solver and compare with the steady profile."""
    p = build_params(cfg["params"])
    geom = build_geometry(cfg["geometry"])
    tsec = cfg["transient"]
    tcfg = build_transient(tsec)
    n0, m0 = bolus(geom, float(tsec.get("bolus", 0.0)))
    start = time.perf_counter()
    res = simulate_edge(n0, m0, tcfg, geom, p)
    elapsed = time.perf_counter() - start
    n, m = res.final
    if tcfg.bc_kind == DIRICHLET:
        N_left, N_right = tcfg.N_left, tcfg.N_right
    else:
        N_left, N_right = float(n[0]), float(n[-1])
    prof = solve_profile(N_left, N_right, geom, p, tol=cfg["integrator"]["tol"],
                         tol_mode=cfg["integrator"]["tol_mode"])
    resid = float(np.abs(flux_residual(prof.n_values, prof.flux_J, geom, p)).max())
    J_left, J_right = boundary_fluxes(n, geom, p)
    return {
        "n_rel_diff": relative_sup_difference(n, prof.n_values),
        "m_rel_diff": relative_sup_difference(m, prof.m_values),
        "steady_flux": prof.flux_J,
        "transient_boundary_flux": [J_left, J_right],
        "flux_residual": resid,
        "shooting_tol": prof.tol,
        "relaxed": res.relaxed,
        "steps": res.steps,
        "final_time": res.times[-1],
        "mass_drift": abs(res.mass[-1] - res.mass[0]) / res.mass[0] if res.mass[0] > 0 else 0.0,
        "runtime_s": elapsed,
        "N_left": N_left,
        "N_right": N_right,
        "_profiles": (geom.mesh, n, m, prof.n_values, prof.m_values),
    }


def cmd_validate_edge(args) -> int:
    cfg = _config_from_args(args)
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = validate_edge(cfg)
    except (TransientError, ShootingError) as exc:
        logger.error("edge validation failed: %s", exc)
        _write_json(out / "edge_report.json", {"status": "failed", "message": str(exc), **_stamp()})
        return EXIT_SOLVER
    x, n, m, ns, ms = report.pop("_profiles")
    with open(out / "edge_profiles.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "n_transient", "m_transient", "n_steady", "m_steady"])
        for row in zip(x, n, m, ns, ms):
            w.writerow([_fmt(v) for v in row])
    report.update({"status": "ok", "config": {k: cfg[k] for k in ("params", "geometry", "transient")}, **_stamp()})
    _write_json(out / "edge_report.json", _jsonable(report))
    print(f"n diff {report['n_rel_diff']:.3e}, m diff {report['m_rel_diff']:.3e}, "
          f"flux residual {report['flux_residual']:.3e}")
    return EXIT_OK


def plot_run(run_dir: Path) -> list:
    from .plotting import plot_run_directory

    return plot_run_directory(run_dir)


def cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    try:
        written = plot_run(run_dir)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_synth_graph(args) -> int:
    conn = synthesize_graph(args.n_regions, args.density, args.seed, mirrored=args.mirrored)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_connectome(conn, out / "weights.csv", out / "nodes.csv")
    print(f"wrote {conn.h}-region graph with {len(conn.edges())} edges to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntm", description="Network transport model of tau spread")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", help="JSON config file (or a manifest.json to replay)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. params.lambda=0.1 (repeatable)")
        p.add_argument("-o", "--out", help="output directory (overrides output.dir)")
        p.add_argument("--workers", type=int, help="edge-solver threads (default: $NTM_WORKERS or all cores)")
        return p

    with_config(sub.add_parser("run", help="integrate one network run")).set_defaults(func=cmd_run)
    with_config(sub.add_parser("sweep", help="run every point of sweep.grid")).set_defaults(func=cmd_sweep)
    with_config(sub.add_parser("validate-edge", help="compare transient and steady single-edge profiles")
                ).set_defaults(func=cmd_validate_edge)

    p = sub.add_parser("plot", help="render SVG charts for a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synth-graph", help="write a seeded synthetic connectome as CSV")
    p.add_argument("--n-regions", type=int, default=30)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--mirrored", action="store_true")
    p.add_argument("-o", "--out", default=".")
    p.set_defaults(func=cmd_synth_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ConnectomeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
