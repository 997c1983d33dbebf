"""Quasi-static network time stepping.

Each slow step solves the steady profile of every edge for the current
node densities, assembles the net edge fluxes and the mass-feedback
coefficients, and advances the soluble node densities by one explicit Euler
step of the node mass balance

    (V_i (1 + g'(N_i)) + sum_j (C^i_ij + C^i_ji)) dN_i/dt
        = flux_scale * sum_j (c_ji J_ji - c_ij J_ij).

Aggregate node densities follow from ``M_i = g(N_i)``.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .connectome import Connectome
from .kinetics import EdgeGeometry, EdgeParams, equilibrium_insoluble, equilibrium_insoluble_derivative
from .steady_state import (
    OK,
    _STATUS_TEXT,
    EdgeDiscretization,
    EdgeProfile,
    _solve_edges,
    edge_mass,
    insoluble_profile,
    shooting_tolerance,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "NTM_WORKERS"


class IntegrationError(RuntimeError):
    """A slow step could not be completed.

    ``trajectory`` holds whatever was recorded before the failure.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory
        # fluxes, masses and total of the last state whose edges were solved
        self.last_record = None


@dataclass(frozen=True)
class NetworkState:
    t: float
    N: np.ndarray
    M: np.ndarray

    @classmethod
    def from_soluble(cls, t, N, p: EdgeParams) -> "NetworkState":
        N = np.asarray(N, dtype=float)
        return cls(float(t), N, np.asarray(equilibrium_insoluble(N, p), dtype=float))


@dataclass(frozen=True)
class IntegratorConfig:
    """Slow-time stepping controls.

    ``flux_scale`` converts edge fluxes (fast-time units) into slow-time
    units; 86400 turns µM·µm/s into µM·µm/day.
    """

    dt: float = 0.05
    t_end: float = 180.0
    flux_scale: float = 1.0
    tol: float = 1e-10
    tol_mode: str = "absolute"
    output_stride: int = 1
    warm_start: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.flux_scale > 0:
            raise ValueError("flux_scale must be positive")
        if self.output_stride < 1:
            raise ValueError("output_stride must be at least 1")
        if self.tol_mode not in ("absolute", "relative"):
            raise ValueError("tol_mode must be 'absolute' or 'relative'")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    """Recorded states plus per-edge weighted fluxes and masses."""

    labels: tuple[str, ...]
    edges: np.ndarray
    times: list = field(default_factory=list)
    N: list = field(default_factory=list)
    M: list = field(default_factory=list)
    flux: list = field(default_factory=list)
    edge_mass: list = field(default_factory=list)
    total_mass: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    def record(self, state: NetworkState, flux, emass, total):
        self.times.append(state.t)
        self.N.append(np.array(state.N))
        self.M.append(np.array(state.M))
        self.flux.append(np.array(flux))
        self.edge_mass.append(np.array(emass))
        self.total_mass.append(float(total))

    def __len__(self):
        return len(self.times)

    def state(self, k) -> NetworkState:
        return NetworkState(self.times[k], self.N[k], self.M[k])

    @property
    def tau(self) -> np.ndarray:
        """``(T, h)`` total tau ``N + M``."""
        return np.asarray(self.N) + np.asarray(self.M)


def configure_workers(n=None):
    """Set the edge-solver thread count (``NTM_WORKERS`` when ``n`` is None)."""
    import numba

    if n is None:
        n = os.environ.get(WORKERS_ENV)
    if n is None:
        return numba.get_num_threads()
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def seed_soluble_density(total_tau: float, p: EdgeParams) -> float:
    """Soluble density ``N`` with ``N + g(N) = total_tau``."""
    if total_tau < 0:
        raise ValueError("total tau must be nonnegative")
    if total_tau == 0:
        return 0.0
    hi = min(total_tau, p.n_max)

    def excess(n):
        return n + equilibrium_insoluble(n, p) - total_tau

    if excess(hi) < 0:
        raise ValueError(f"total tau {total_tau:g} unreachable below the singular density")
    return bisect(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=2000)


def seeded_state(conn: Connectome, seeds, p: EdgeParams, total_tau=0.02, t0=0.0) -> NetworkState:
    """Initial state with ``total_tau`` at each seed region and zero elsewhere."""
    N = np.zeros(conn.h)
    n_seed = seed_soluble_density(total_tau, p)
    for s in np.atleast_1d(seeds):
        idx = conn.index(s) if isinstance(s, str) else int(s)
        N[idx] = n_seed
    return NetworkState.from_soluble(t0, N, p)


class _EdgeSolver:
    """Batched steady-state solves for all edges of a connectome."""

    def __init__(self, conn: Connectome, geom: EdgeGeometry, p: EdgeParams, cfg: IntegratorConfig):
        self.conn = conn
        self.params = p
        self.cfg = cfg
        self.disc = EdgeDiscretization(geom, p)
        self.edges = conn.edges()
        self.src = np.ascontiguousarray(self.edges[:, 0])
        self.dst = np.ascontiguousarray(self.edges[:, 1])
        self.c = conn.weights[self.src, self.dst] if len(self.edges) else np.zeros(0)
        E = len(self.edges)
        self.n_buf = np.zeros((E, geom.K + 1))
        self.J_prev = np.zeros(E)
        self.have_prev = np.zeros(E, dtype=np.bool_)

    def solve(self, N):
        E = len(self.edges)
        d = self.disc
        NL = np.ascontiguousarray(N[self.src], dtype=float)
        NR = np.ascontiguousarray(N[self.dst], dtype=float)
        tols = np.array([shooting_tolerance(a, b, self.cfg.tol, self.cfg.tol_mode) for a, b in zip(NL, NR)])
        J = np.zeros(E)
        Cl = np.zeros(E)
        Cr = np.zeros(E)
        mass = np.zeros(E)
        status = np.zeros(E, dtype=np.int64)
        evals = np.zeros(E, dtype=np.int64)
        use_guess = self.have_prev if self.cfg.warm_start else np.zeros(E, dtype=np.bool_)
        if E:
            _solve_edges(NL, NR, self.J_prev, use_guess, tols, d.dx, d.a, d.axon, d.cleft, d.prm,
                         self.n_buf, J, Cl, Cr, mass, status, evals)
        bad = np.flatnonzero(status != OK)
        if bad.size:
            e = bad[0]
            i, j = self.edges[e]
            lab = self.conn.region_labels
            raise IntegrationError(
                f"edge {lab[i]}->{lab[j]} (N={NL[e]:.6g}, {NR[e]:.6g}): "
                f"{_STATUS_TEXT[int(status[e])]} (last trial J={J[e]:.6g})")
        self.J_prev = J.copy()
        self.have_prev[:] = True
        return J, Cl, Cr, mass

    def profiles(self, N) -> dict:
        """Edge profiles for node densities ``N`` keyed by (source, target)."""
        J, *_ = self.solve(N)
        geom = self.disc.geom
        out = {}
        for e, (i, j) in enumerate(self.edges):
            n = self.n_buf[e].copy()
            tol = shooting_tolerance(N[i], N[j], self.cfg.tol, self.cfg.tol_mode)
            out[(int(i), int(j))] = EdgeProfile(n, insoluble_profile(n, geom, self.params), float(J[e]),
                                                abs(n[-1] - N[j]), float(tol))
        return out


def _node_update(state: NetworkState, solver: _EdgeSolver, cfg: IntegratorConfig, p: EdgeParams):
    """Return the stepped state plus the weighted fluxes and masses at ``state``."""
    conn = solver.conn
    h = conn.h
    N = state.N
    J, Cl, Cr, mass = solver.solve(N)
    cJ = solver.c * J
    flow = np.zeros((h, h))
    coef = np.zeros((h, h))
    flow[solver.src, solver.dst] = cJ
    # coef[i, j]: feedback of edge between i and j on node i
    coef[solver.src, solver.dst] = solver.c * Cl
    coef[solver.dst, solver.src] += solver.c * Cr
    # Correctly rounded sums do not depend on the order of the terms, so
    # relabelling nodes (e.g. swapping mirrored hemispheres) permutes the
    # result exactly.
    net = np.array([math.fsum(np.concatenate((flow[:, i], -flow[i, :]))) for i in range(h)])
    feedback = np.array([math.fsum(coef[i, :]) for i in range(h)])
    wmass = solver.c * mass
    total = math.fsum(conn.volumes * (N + state.M)) + math.fsum(wmass)

    def fail(message):
        exc = IntegrationError(message)
        exc.last_record = (cJ, wmass, total)
        return exc

    denom = conn.volumes * (1.0 + equilibrium_insoluble_derivative(N, p)) + feedback
    bad = np.flatnonzero(~(denom > 0))
    if bad.size:
        i = bad[0]
        raise fail(f"nonpositive update denominator {denom[i]:.6g} at region {conn.region_labels[i]}")
    N_new = N + cfg.dt * cfg.flux_scale * net / denom
    neg = np.flatnonzero(N_new < 0)
    if neg.size:
        i = neg[0]
        raise fail(f"negative soluble density {N_new[i]:.6g} at region {conn.region_labels[i]} "
                   f"(t={state.t + cfg.dt:g}); reduce dt")
    if np.any(N_new > p.n_max):
        i = int(np.argmax(N_new))
        raise fail(f"soluble density {N_new[i]:.6g} at region {conn.region_labels[i]} "
                   "left the admissible domain")
    new_state = NetworkState.from_soluble(state.t + cfg.dt, N_new, p)
    return new_state, cJ, wmass, total


def step(state: NetworkState, conn: Connectome, geom: EdgeGeometry, p: EdgeParams,
         cfg: IntegratorConfig) -> NetworkState:
    """Advance ``state`` by one slow step ``cfg.dt``."""
    solver = _EdgeSolver(conn, geom, p, cfg)
    return _node_update(state, solver, cfg, p)[0]


def run(initial: NetworkState, conn: Connectome, geom: EdgeGeometry, p: EdgeParams,
        cfg: IntegratorConfig, progress=None) -> Trajectory:
    """Integrate from ``initial`` to ``initial.t + cfg.t_end``.

    States, weighted edge fluxes ``c_ij J_ij``, weighted edge masses and the
    total mass are recorded every ``cfg.output_stride`` steps and at the
    final time.  On a solver failure an :class:`IntegrationError` carrying
    the partial trajectory is raised.
    """
    solver = _EdgeSolver(conn, geom, p, cfg)
    traj = Trajectory(conn.region_labels, solver.edges.copy())
    state = initial
    n_steps = cfg.n_steps
    t0 = initial.t
    try:
        for k in range(n_steps):
            new_state, cJ, wmass, total = _node_update(state, solver, cfg, p)
            if k % cfg.output_stride == 0:
                traj.record(state, cJ, wmass, total)
            # re-derive time from the step count to avoid drift
            state = NetworkState(t0 + (k + 1) * cfg.dt, new_state.N, new_state.M)
            if progress is not None:
                progress(k + 1, n_steps)
        J, _, _, mass = solver.solve(state.N)
        wmass = solver.c * mass
        total = math.fsum(conn.volumes * (state.N + state.M)) + math.fsum(wmass)
        traj.record(state, solver.c * J, wmass, total)
    except IntegrationError as exc:
        if exc.last_record is not None and (not traj.times or traj.times[-1] != state.t):
            traj.record(state, *exc.last_record)
        traj.status = "failed"
        traj.message = str(exc)
        exc.trajectory = traj
        raise
    return traj


def edge_profiles(state: NetworkState, conn: Connectome, geom: EdgeGeometry, p: EdgeParams,
                  cfg: IntegratorConfig | None = None) -> dict:
    """Steady profiles of every edge for the node densities of ``state``."""
    return _EdgeSolver(conn, geom, p, cfg or IntegratorConfig()).profiles(state.N)


def total_mass(state: NetworkState, profiles: dict, conn: Connectome, geom: EdgeGeometry,
               p: EdgeParams) -> float:
    """Node mass ``sum V (N + M)`` plus the weighted mass on every edge."""
    node = float(np.sum(conn.volumes * (state.N + state.M)))
    edges = math.fsum(edge_mass(prof, conn.weights[i, j], geom, p) for (i, j), prof in sorted(profiles.items()))
    return node + edges
