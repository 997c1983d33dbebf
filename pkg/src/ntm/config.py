"""Structured run configuration: defaults, overrides and resolution."""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

from .connectome import Connectome, load_connectome, synthesize_graph
from .integrator import IntegratorConfig
from .kinetics import EdgeGeometry, EdgeParams
from .transient import TransientConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULTS = {
    "connectome": {"synthetic": {"n_regions": 30, "density": 0.3, "seed": 7, "mirrored": False}},
    "params": {},
    "geometry": {
        "boundaries": [20.0, 40.0, 1040.0, 1060.0, 1080.0],
        "counts": [40, 20, 400, 20, 40],
    },
    "integrator": {
        "dt": 0.05,
        "t_end": 180.0,
        "flux_scale": 1000.0,
        "tol": 1e-10,
        "tol_mode": "absolute",
        "warm_start": True,
    },
    "seed": {"labels": None, "total_tau": 0.02},
    "output": {"dir": "ntm_output", "stride": 20, "plots": False},
    "sweep": {"grid": {}, "max_points": 64, "workers": 1},
    "transient": {
        "bolus": 0.5,
        "phi": 1.0,
        "dt_fast": 0.01,
        "t_end": 1e9,
        "dt_max": 1e8,
        "relax_tol": 1e-10,
        "bc_kind": "neumann",
        "N_left": None,
        "N_right": None,
    },
    "workers": None,
}

SWEEPABLE = {"lambda", "lambda1", "lambda2", "gamma1", "gamma2", "delta", "epsilon", "beta",
             "D", "f", "v_a", "v_r", "dt", "flux_scale"}


def deep_merge(base: dict, update: dict) -> dict:
    """Recursively merge ``update`` into a copy of ``base``."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str):
    """Split ``a.b.c=value`` into a key path and a JSON-decoded value.

    Values that are not valid JSON are kept as plain strings.
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [k for k in key.strip().split(".") if k]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(cfg: dict, overrides) -> dict:
    out = copy.deepcopy(cfg)
    for text in overrides or ():
        path, value = parse_override(text)
        node = out
        for k in path[:-1]:
            if not isinstance(node.setdefault(k, {}), dict):
                raise ConfigError(f"cannot set {'.'.join(path)}: {k!r} is not a section")
            node = node[k]
        node[path[-1]] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the JSON file at ``path`` (if any), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        if "connectome" in user:
            # a connectome source replaces the default rather than merging with it
            cfg["connectome"] = {}
        base_dir = Path(path).resolve().parent
        for key in ("weights", "nodes"):
            ref = user.get("connectome", {}).get(key)
            if isinstance(ref, str) and not Path(ref).is_absolute():
                user["connectome"][key] = str(base_dir / ref)
        cfg = deep_merge(cfg, user)
    return apply_overrides(cfg, overrides)


@dataclass
class RunConfig:
    """Fully resolved inputs of a run."""

    conn: Connectome
    params: EdgeParams
    geom: EdgeGeometry
    integrator: IntegratorConfig
    seed_indices: tuple
    total_tau: float
    out_dir: Path
    raw: dict

    def manifest_config(self) -> dict:
        """The config with the connectome inlined, enough to reproduce the run."""
        cfg = copy.deepcopy(self.raw)
        cfg["connectome"] = {"inline": self.conn.to_dict()}
        cfg["seed"]["labels"] = [self.conn.region_labels[i] for i in self.seed_indices]
        return cfg


def _build_connectome(section: dict) -> Connectome:
    kinds = [k for k in ("weights", "synthetic", "inline") if section.get(k) is not None]
    if len(kinds) != 1:
        raise ConfigError("connectome needs exactly one of 'weights'/'nodes', 'synthetic' or 'inline'")
    kind = kinds[0]
    if kind == "weights":
        if section.get("nodes") is None:
            raise ConfigError("connectome.weights needs connectome.nodes")
        return load_connectome(Path(section["weights"]), Path(section["nodes"]))
    if kind == "synthetic":
        s = section["synthetic"]
        return synthesize_graph(int(s["n_regions"]), float(s["density"]), int(s["seed"]),
                                bool(s.get("mirrored", False)))
    return Connectome.from_dict(section["inline"])


def build_params(section: dict) -> EdgeParams:
    try:
        return EdgeParams().replace(**section)
    except TypeError as exc:
        raise ConfigError(f"unknown edge parameter: {exc}") from exc


def build_geometry(section: dict) -> EdgeGeometry:
    try:
        return EdgeGeometry.from_counts(tuple(section["boundaries"]), tuple(section["counts"]))
    except KeyError as exc:
        raise ConfigError(f"geometry needs {exc}") from exc


def build_integrator(section: dict, stride: int) -> IntegratorConfig:
    try:
        return IntegratorConfig(output_stride=int(stride), **section)
    except TypeError as exc:
        raise ConfigError(f"unknown integrator setting: {exc}") from exc


def build_transient(section: dict) -> TransientConfig:
    fields = {k: v for k, v in section.items() if k != "bolus"}
    try:
        return TransientConfig(**fields)
    except TypeError as exc:
        raise ConfigError(f"unknown transient setting: {exc}") from exc


def resolve(cfg: dict) -> RunConfig:
    """Turn a config tree into validated model objects."""
    try:
        conn = _build_connectome(cfg["connectome"])
        params = build_params(cfg["params"])
        geom = build_geometry(cfg["geometry"])
        integ = build_integrator(cfg["integrator"], cfg["output"]["stride"])
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    labels = cfg["seed"].get("labels")
    if labels is None:
        labels = [conn.region_labels[0]]
    elif isinstance(labels, str):
        labels = [labels]
    try:
        seeds = tuple(conn.index(lab) for lab in labels)
    except KeyError as exc:
        raise ConfigError(f"seed {exc.args[0]}") from None
    if not seeds:
        raise ConfigError("at least one seed region is required")
    total_tau = float(cfg["seed"]["total_tau"])
    if not total_tau > 0:
        raise ConfigError("seed.total_tau must be positive")
    return RunConfig(conn, params, geom, integ, seeds, total_tau, Path(cfg["output"]["dir"]), cfg)


def sweep_points(cfg: dict):
    """Expand ``sweep.grid`` into a list of ``(name, overrides)`` pairs.

    Parameter keys go to ``params``; ``dt`` and ``flux_scale`` go to the
    integrator.  Points are ordered as the Cartesian product of the grid
    lists in sorted key order.
    """
    grid = cfg.get("sweep", {}).get("grid") or {}
    if not grid:
        raise ConfigError("sweep.grid is empty")
    for key, values in grid.items():
        if key not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {key!r}; choose from {sorted(SWEEPABLE)}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.grid.{key} must be a non-empty list")
    keys = sorted(grid)
    total = 1
    for k in keys:
        total *= len(grid[k])
    cap = int(cfg["sweep"].get("max_points", 64))
    if total > cap:
        raise ConfigError(f"sweep has {total} points, above the cap of {cap}")
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        name = "_".join(f"{k}={v}" for k, v in zip(keys, combo))
        over = {}
        for k, v in zip(keys, combo):
            section = "integrator" if k in ("dt", "flux_scale") else "params"
            over.setdefault(section, {})[k] = v
        points.append((name, over))
    return points
