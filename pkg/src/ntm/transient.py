"""Time-dependent single-edge solver.

Solves the fast-time system

    phi * m_t = -Gamma(m, n)
    phi * n_t = (a n_x + h)_x + Gamma(m, n)

on the five-compartment mesh of an :class:`~ntm.kinetics.EdgeGeometry`.
The reaction is switched off inside the synaptic cleft, where ``m`` stays
zero.  The spatial scheme is a finite-volume method of lines: trapezoid
control volumes, central differences for diffusion and donor-cell upwinding
of the advective flux ``(1 - f) v n`` on the axon.  When ``v > 0`` the
discrete steady state coincides with the shooting recurrence used by
:mod:`ntm.steady_state`, so this module doubles as its verification oracle.

Two time integrators are provided: explicit Euler under a stability bound,
and implicit Euler with Newton iterations on a tridiagonal Jacobian (the
insoluble density is eliminated node by node).  The implicit scheme takes
growing steps and is what makes runs to full relaxation affordable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .kinetics import EdgeGeometry, EdgeParams

logger = logging.getLogger(__name__)

NEUMANN = "neumann"
DIRICHLET = "dirichlet"
EXPLICIT = "explicit"
IMPLICIT = "implicit"
STABILITY_SAFETY = 0.4


class TransientError(RuntimeError):
    """Invalid input or a failed transient simulation."""


@dataclass(frozen=True)
class TransientConfig:
    """Settings for :func:`simulate_edge`.

    Parameters
    ----------
    phi : float
        Ratio of fast to slow time scales (> 0).
    dt_fast : float
        Time step; for the implicit scheme this is the initial step.
    t_end : float
        Horizon in fast time units.
    bc_kind : {"neumann", "dirichlet"}
        Zero-flux ends or fixed soluble densities ``N_left``/``N_right``.
    scheme : {"implicit", "explicit"}
    relax_tol : float or None
        Implicit scheme only: stop early once the step has reached
        ``dt_max`` and the relative sup-norm change of ``n`` over a step
        drops below this value.
    dt_max : float or None
        Implicit step cap; defaults to ``t_end / 20``.
    growth : float
        Implicit step growth factor after each accepted step.
    record_every : int
        Keep a snapshot every this many accepted steps (the initial and
        final states are always kept).
    """

    phi: float = 1.0
    dt_fast: float = 1e-3
    t_end: float = 1.0
    bc_kind: str = NEUMANN
    N_left: float | None = None
    N_right: float | None = None
    scheme: str = IMPLICIT
    relax_tol: float | None = None
    dt_max: float | None = None
    growth: float = 1.5
    record_every: int = 1

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if not self.dt_fast > 0:
            raise ValueError("dt_fast must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.bc_kind not in (NEUMANN, DIRICHLET):
            raise ValueError(f"unknown boundary condition {self.bc_kind!r}")
        if self.bc_kind == DIRICHLET:
            if self.N_left is None or self.N_right is None:
                raise ValueError("Dirichlet boundaries need N_left and N_right")
            if self.N_left < 0 or self.N_right < 0:
                raise ValueError("boundary densities must be nonnegative")
        if self.scheme not in (EXPLICIT, IMPLICIT):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.growth < 1.0:
            raise ValueError("growth must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def step_cap(self) -> float:
        return self.dt_max if self.dt_max is not None else self.t_end / 20.0


@dataclass
class TransientResult:
    """Snapshots of ``(n, m)`` on the mesh at increasing fast times."""

    times: list = field(default_factory=list)
    n: list = field(default_factory=list)
    m: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    steps: int = 0
    relaxed: bool = False

    def record(self, t, n, m, mass):
        self.times.append(float(t))
        self.n.append(n.copy())
        self.m.append(m.copy())
        self.mass.append(float(mass))

    @property
    def final(self):
        return self.n[-1], self.m[-1]


class _EdgeOperator:
    """Spatial discretization shared by both time integrators."""

    def __init__(self, geom: EdgeGeometry, p: EdgeParams):
        self.p = p
        self.dx = geom.dx
        self.a = geom.interval_diffusivity(p)
        self.axon = geom.axon_intervals()
        cleft = geom.cleft_intervals()
        K = self.dx.size
        self.w = np.zeros(K + 1)
        self.w[:-1] += 0.5 * self.dx
        self.w[1:] += 0.5 * self.dx
        # The reaction acts everywhere except strictly inside the cleft.
        self.react = np.ones(K + 1, dtype=bool)
        self.react[1:-1] = ~(cleft[:-1] & cleft[1:])

    def velocity(self, n, m):
        p = self.p
        return p.v_a * (1.0 + p.delta * n) * (1.0 - p.epsilon * m) - p.v_r

    def reaction(self, n, m):
        p = self.p
        return np.where(self.react, p.beta * m - p.gamma1 * n * n - p.gamma2 * n * m, 0.0)

    def interface_flux(self, n, m):
        """Rightward transport flux ``-(a n_x + h)`` on each interval."""
        F = -self.a * np.diff(n) / self.dx
        v = self.velocity(n, m)
        q = (1.0 - self.p.f) * v * n
        upwind_left = 0.5 * (v[:-1] + v[1:]) >= 0.0
        adv = np.where(upwind_left, q[:-1], q[1:])
        return F + np.where(self.axon, adv, 0.0)

    def divergence(self, F):
        """``F_k - F_{k-1}`` with zero flux through both ends."""
        return np.diff(F, prepend=0.0, append=0.0)

    def mass(self, n, m):
        return float(np.dot(self.w, n + m))

    def insoluble_update(self, n, m_old, s):
        """Implicit Euler update of ``m`` for given ``n`` (node-local)."""
        p = self.p
        m = (m_old + s * p.gamma1 * n * n) / (1.0 + s * (p.beta - p.gamma2 * n))
        return np.where(self.react, m, m_old)


def stability_limit(geom: EdgeGeometry, p: EdgeParams, phi: float, max_speed: float = 0.0) -> float:
    """Largest explicit Euler step allowed by the diffusion and advection bounds."""
    dx = geom.dx
    a_max = float(geom.interval_diffusivity(p).max())
    limit = STABILITY_SAFETY * phi * float(np.min(dx * dx)) / (2.0 * a_max)
    if max_speed > 0.0:
        limit = min(limit, STABILITY_SAFETY * phi * float(np.min(dx)) / max_speed)
    return limit


def boundary_fluxes(n_values, geom: EdgeGeometry, p: EdgeParams):
    """One-sided second-order estimates of ``-a n_x`` at both ends of the edge."""
    n = np.asarray(n_values, dtype=float)
    if n.size != geom.K + 1:
        raise ValueError(f"profile has {n.size} values, mesh has {geom.K + 1} nodes")
    a = geom.interval_diffusivity(p)
    if n.size < 3:
        d = (n[1] - n[0]) / geom.dx[0]
        return -a[0] * d, -a[-1] * d

    def one_sided(y0, y1, y2, h1, h2):
        # derivative at the first point from values at offsets 0, h1, h1 + h2
        # written in differences so constants give exactly zero
        H = h1 + h2
        return H / (h1 * h2) * (y1 - y0) - h1 / (h2 * H) * (y2 - y0)

    dx = geom.dx
    d_left = one_sided(n[0], n[1], n[2], dx[0], dx[1])
    d_right = -one_sided(n[-1], n[-2], n[-3], dx[-1], dx[-2])
    return float(-a[0] * d_left), float(-a[-1] * d_right)


def _validate_initial(n0, m0, op: _EdgeOperator, K):
    n = np.array(n0, dtype=float)
    m = np.array(m0, dtype=float)
    if n.shape != (K + 1,) or m.shape != (K + 1,):
        raise TransientError(f"initial data must have {K + 1} mesh values")
    if not (np.all(np.isfinite(n)) and np.all(np.isfinite(m))):
        raise TransientError("initial data contain non-finite values")
    if np.any(n < 0) or np.any(m < 0):
        raise TransientError("initial densities must be nonnegative")
    if np.any(m[~op.react] != 0):
        raise TransientError("insoluble density must vanish inside the synaptic cleft")
    return n, m


def _check_state(n, m, t):
    if not (np.all(np.isfinite(n)) and np.all(np.isfinite(m))):
        raise TransientError(f"non-finite densities at t={t:g}; the time step is unstable")
    if n.min() < 0 or m.min() < 0:
        k = int(np.argmin(np.minimum(n, m)))
        raise TransientError(f"negative density at node {k}, t={t:g} "
                             f"(n={n[k]:.3e}, m={m[k]:.3e}); the time step is unstable")


def _explicit(n, m, op, cfg, result):
    dt = cfg.dt_fast
    s = dt / cfg.phi
    n_steps = int(np.ceil(cfg.t_end / dt - 1e-9))
    dirichlet = cfg.bc_kind == DIRICHLET
    axon_nodes = np.zeros(n.size, dtype=bool)
    axon_nodes[:-1] |= op.axon
    axon_nodes[1:] |= op.axon
    for k in range(n_steps):
        t = (k + 1) * dt
        speed = float(np.max(np.abs((1.0 - op.p.f) * op.velocity(n, m))[axon_nodes], initial=0.0))
        if speed > 0 and dt > STABILITY_SAFETY * cfg.phi * float(op.dx.min()) / speed:
            raise TransientError(f"advective stability bound violated at t={t:g} (speed {speed:.3g})")
        G = op.reaction(n, m)
        n_new = n + s * (op.w * G - op.divergence(op.interface_flux(n, m))) / op.w
        m = m - s * G
        if dirichlet:
            n_new[0], n_new[-1] = cfg.N_left, cfg.N_right
        n = n_new
        _check_state(n, m, t)
        result.steps += 1
        if (k + 1) % cfg.record_every == 0 or k + 1 == n_steps:
            result.record(t, n, m, op.mass(n, m))
    return result


def _residual(n, n_old, m_old, s, op, cfg):
    m = op.insoluble_update(n, m_old, s)
    R = op.w * (n + m - n_old - m_old) + s * op.divergence(op.interface_flux(n, m))
    if cfg.bc_kind == DIRICHLET:
        R[0] = n[0] - cfg.N_left
        R[-1] = n[-1] - cfg.N_right
    return R, m


def _jacobian_bands(n, R0, n_old, m_old, s, op, cfg):
    """Tridiagonal Jacobian by finite differences with three-colour perturbation."""
    size = n.size
    ab = np.zeros((3, size))
    h = 1e-7 * np.maximum(np.abs(n), 1e-7 * max(float(np.abs(n).max()), 1e-300))
    for colour in range(3):
        idx = np.arange(colour, size, 3)
        nn = n.copy()
        nn[idx] += h[idx]
        R1, _ = _residual(nn, n_old, m_old, s, op, cfg)
        dR = (R1 - R0)
        for j in idx:
            col = dR / h[j]
            # solve_banded layout: ab[1 + i - j, j] = A[i, j]
            if j > 0:
                ab[0, j] = col[j - 1]
            ab[1, j] = col[j]
            if j + 1 < size:
                ab[2, j] = col[j + 1]
    return ab


def _newton(n_old, m_old, s, op, cfg, max_iter=30):
    n = n_old.copy()
    scale = max(float(np.abs(n_old).max()), 1e-300)
    for _ in range(max_iter):
        R, _ = _residual(n, n_old, m_old, s, op, cfg)
        ab = _jacobian_bands(n, R, n_old, m_old, s, op, cfg)
        try:
            delta = solve_banded((1, 1), ab, -R)
        except (np.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(delta)):
            return None
        n = n + delta
        if np.abs(delta).max() <= 1e-13 * scale:
            return n
    return None


def _implicit(n, m, op, cfg, result):
    t = 0.0
    dt = cfg.dt_fast
    cap = cfg.step_cap
    k = 0
    while t < cfg.t_end * (1 - 1e-12):
        dt = min(dt, cap, cfg.t_end - t)
        s = dt / cfg.phi
        n_new = _newton(n, m, s, op, cfg)
        if n_new is None or n_new.min() < 0:
            dt *= 0.25
            if dt < 1e-14 * cfg.t_end:
                raise TransientError(f"implicit step failed to converge at t={t:g}")
            continue
        m_new = op.insoluble_update(n_new, m, s)
        change = float(np.abs(n_new - n).max()) / max(float(np.abs(n_new).max()), 1e-300)
        n, m, t = n_new, m_new, t + dt
        _check_state(n, m, t)
        k += 1
        result.steps += 1
        at_cap = dt >= cap * (1 - 1e-12)
        relaxed = cfg.relax_tol is not None and at_cap and change <= cfg.relax_tol
        done = relaxed or t >= cfg.t_end * (1 - 1e-12)
        if k % cfg.record_every == 0 or done:
            result.record(t, n, m, op.mass(n, m))
        if relaxed:
            result.relaxed = True
            logger.info("relaxed after %d steps at t=%g", k, t)
            break
        dt *= cfg.growth
    return result


def simulate_edge(n0, m0, cfg: TransientConfig, geom: EdgeGeometry, p: EdgeParams) -> TransientResult:
    """Integrate the single-edge system from ``(n0, m0)``.

    Raises
    ------
    TransientError
        Invalid initial data, a violated stability bound, or a blow-up
        (non-finite or negative densities).
    """
    op = _EdgeOperator(geom, p)
    n, m = _validate_initial(n0, m0, op, geom.K)
    if cfg.bc_kind == DIRICHLET:
        n[0], n[-1] = cfg.N_left, cfg.N_right
    if cfg.scheme == EXPLICIT:
        limit = stability_limit(geom, p, cfg.phi)
        if cfg.dt_fast > limit:
            raise TransientError(f"dt_fast={cfg.dt_fast:g} exceeds the diffusive stability limit {limit:g}")
    result = TransientResult()
    result.record(0.0, n, m, op.mass(n, m))
    if cfg.scheme == EXPLICIT:
        return _explicit(n, m, op, cfg, result)
    return _implicit(n, m, op, cfg, result)


def bolus(geom: EdgeGeometry, amount: float, compartment: int = 0):
    """Initial data with soluble density ``amount`` on one compartment and ``m = 0``."""
    comp = geom.compartment_of(geom.mesh)
    n0 = np.where(np.asarray(comp) == compartment, float(amount), 0.0)
    return n0, np.zeros_like(n0)
