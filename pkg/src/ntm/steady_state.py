"""Steady-state edge profiles by shooting on the constant flux.

The edge equation ``(a n_x + h(x, n))_x = 0`` is integrated as the explicit
first-order recurrence

    n[k+1] = n[k] + dx[k] / a[k] * (-h(x_k, n[k]) - J)

from the left boundary value, and the scalar flux ``J`` is adjusted by a
bracketed Illinois (regula falsi) iteration until the right boundary value
is met.  The linearized sensitivity problems use the same recurrence, so
the discrete sensitivity ``q`` is the exact derivative of the discrete
profile with respect to the boundary data; the mass-feedback coefficients
built from it are therefore consistent with :func:`edge_mass`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .kinetics import (
    DomainError,
    EdgeGeometry,
    EdgeParams,
    _g,
    _g_prime,
    _h_axon,
    _h_axon_n,
    equilibrium_insoluble,
)

OK = 0
NEGATIVE = -1
OVERFLOW = 1
BRACKET_FAILED = 2
NOT_CONVERGED = 3
DEGENERATE = 4

_STATUS_TEXT = {
    NEGATIVE: "negative density during integration",
    OVERFLOW: "density left the admissible domain",
    BRACKET_FAILED: "could not bracket the flux",
    NOT_CONVERGED: "shooting did not converge",
    DEGENERATE: "degenerate linearized system",
}

MAX_EXPANSIONS = 64
MAX_ITER = 200


class ShootingError(RuntimeError):
    """Raised when the steady-state shooting fails."""

    def __init__(self, message, J=None, status=None):
        super().__init__(message)
        self.J = J
        self.status = status


@dataclass(frozen=True)
class EdgeProfile:
    """Steady soluble/insoluble densities on the mesh and the edge flux.

    ``m_values`` holds ``g(n)`` at every mesh point except the interior of
    the synaptic cleft, where it is zero; the cleft boundary points keep
    ``g(n)``.
    """

    n_values: np.ndarray
    m_values: np.ndarray
    flux_J: float
    residual: float
    tol: float = 0.0
    iterations: int = 0


@dataclass(frozen=True)
class LinearizedProfile:
    """Solution ``q`` of the linearized edge problem and its flux constant ``W``."""

    q_values: np.ndarray
    W: float
    side: str


def shooting_tolerance(N_left, N_right, tol=1e-10, mode="absolute"):
    """Boundary-mismatch tolerance on the right end value.

    ``absolute`` scales ``tol`` by ``max(1, N_left, N_right)``; ``relative``
    by ``max(N_left, N_right)`` alone (with a floor at 1e-300).
    """
    if mode == "absolute":
        return tol * max(1.0, N_left, N_right)
    if mode == "relative":
        return tol * max(N_left, N_right, 1e-300)
    raise ValueError(f"unknown tolerance mode {mode!r}")


def _pack(p: EdgeParams):
    return (p.f, p.v_a, p.v_r, p.beta, p.gamma1, p.gamma2, p.delta, p.epsilon, p.n_max)


# --- compiled kernels -----------------------------------------------------

@njit(cache=True)
def _integrate(N_left, J, dx, a, axon, prm, floor, out):
    """March the flux recurrence; flag interior values below ``-floor``.

    Integration continues through negative values so the end residual
    stays available to the root finder; such trials are never accepted.
    """
    f, v_a, v_r, beta, g1, g2, delta, eps, n_max = prm
    K = dx.size
    out[0] = N_left
    n = N_left
    status = OK
    for k in range(K):
        if axon[k]:
            h = _h_axon(n, f, v_a, v_r, beta, g1, g2, delta, eps)
        else:
            h = 0.0
        n = n + dx[k] / a[k] * (-h - J)
        out[k + 1] = n
        if not np.isfinite(n) or n > n_max:
            return OVERFLOW
        if n < -floor and k + 1 < K:
            status = NEGATIVE
    return status


@njit(cache=True)
def _slope(n, dx, a, axon, prm):
    """d n[K] / d J along a computed profile (the W = 1 sensitivity)."""
    f, v_a, v_r, beta, g1, g2, delta, eps, n_max = prm
    s = 0.0
    for k in range(dx.size):
        if axon[k]:
            hn = _h_axon_n(n[k], f, v_a, v_r, beta, g1, g2, delta, eps)
        else:
            hn = 0.0
        s = s + dx[k] / a[k] * (-hn * s - 1.0)
    return s


@njit(cache=True)
def _residual(N_left, N_right, J, dx, a, axon, prm, tol, out):
    """End mismatch and acceptance flag of one trial flux."""
    st = _integrate(N_left, J, dx, a, axon, prm, tol, out)
    if st == OVERFLOW:
        return np.inf, False
    r = out[-1] - N_right
    if st == NEGATIVE:
        # an interior dip below zero means the flux is too large
        return min(r, -2.0 * tol), False
    return r, abs(r) <= tol


@njit(cache=True)
def _shoot(N_left, N_right, dx, a, axon, prm, J_guess, use_guess, tol, out):
    """Return (J, status, evaluations); ``out`` holds the final profile."""
    R = 0.0
    for k in range(dx.size):
        R += dx[k] / a[k]
    J0 = J_guess if use_guess else (N_left - N_right) / R
    r0, ok = _residual(N_left, N_right, J0, dx, a, axon, prm, tol, out)
    evals = 1
    if ok:
        return J0, OK, evals

    # bracket: walk from J0 in the direction that reduces the mismatch,
    # starting from a slightly overshooting linear prediction
    direction = 1.0 if r0 > 0 else -1.0
    if np.isfinite(r0):
        slope = _slope(out, dx, a, axon, prm)
        if slope < 0.0 and np.isfinite(slope):
            step = 1.1 * abs(r0 / slope)
        else:
            step = 2.0 * abs(r0) / R
    else:
        step = 0.5 * abs(J0) + (max(N_left, N_right) + tol) / R
    step = max(step, tol / R, 1e-12 * abs(J0))
    J1 = J0
    r1 = r0
    found = False
    for _ in range(MAX_EXPANSIONS):
        J1 = J0 + direction * step
        r1, ok = _residual(N_left, N_right, J1, dx, a, axon, prm, tol, out)
        evals += 1
        if ok:
            return J1, OK, evals
        if (r1 > 0) != (r0 > 0):
            found = True
            break
        J0 = J1
        r0 = r1
        step *= 2.0
    if not found:
        return J1, BRACKET_FAILED, evals

    if r0 > 0:
        lo, rlo, hi, rhi = J0, r0, J1, r1
    else:
        lo, rlo, hi, rhi = J1, r1, J0, r0
    last = 0
    for _ in range(MAX_ITER):
        if np.isfinite(rlo) and np.isfinite(rhi):
            Jc = hi - rhi * (hi - lo) / (rhi - rlo)
            if not (min(lo, hi) < Jc < max(lo, hi)):
                Jc = 0.5 * (lo + hi)
        else:
            Jc = 0.5 * (lo + hi)
        rc, ok = _residual(N_left, N_right, Jc, dx, a, axon, prm, tol, out)
        evals += 1
        if ok:
            return Jc, OK, evals
        if rc > 0:
            lo, rlo = Jc, rc
            if last == 1:
                rhi *= 0.5
            last = 1
        else:
            hi, rhi = Jc, rc
            if last == -1:
                rlo *= 0.5
            last = -1
        if abs(hi - lo) <= 4e-16 * max(abs(lo), abs(hi)):
            break
    return Jc, NOT_CONVERGED, evals


@njit(cache=True)
def _linear_march(q0, W, n, dx, a, axon, prm, out):
    f, v_a, v_r, beta, g1, g2, delta, eps, n_max = prm
    q = q0
    out[0] = q
    for k in range(dx.size):
        if axon[k]:
            hn = _h_axon_n(n[k], f, v_a, v_r, beta, g1, g2, delta, eps)
        else:
            hn = 0.0
        q = q + dx[k] / a[k] * (-hn * q - W)
        out[k + 1] = q


@njit(cache=True)
def _linearized(alpha, gamma, n, dx, a, axon, prm, out, work):
    """Solve for q with q[0] = alpha, q[K] = gamma; return (W, status).

    Two trial integrations (W = 0 and W = 1) are combined linearly.
    """
    _linear_march(alpha, 0.0, n, dx, a, axon, prm, out)
    _linear_march(alpha, 1.0, n, dx, a, axon, prm, work)
    slope = work[-1] - out[-1]
    if slope == 0.0 or not np.isfinite(slope):
        return np.nan, DEGENERATE
    W = (gamma - out[-1]) / slope
    for k in range(out.size):
        out[k] = out[k] + W * (work[k] - out[k])
    out[-1] = gamma
    return W, OK


@njit(cache=True)
def _mass_coefficient(n, q, dx, cleft, prm):
    beta, g1, g2 = prm[3], prm[4], prm[5]
    total = 0.0
    for k in range(dx.size):
        if cleft[k]:
            total += 0.5 * dx[k] * (q[k] + q[k + 1])
        else:
            fl = 1.0 + _g_prime(n[k], beta, g1, g2)
            fr = 1.0 + _g_prime(n[k + 1], beta, g1, g2)
            total += 0.5 * dx[k] * (q[k] * fl + q[k + 1] * fr)
    return total


@njit(cache=True)
def _edge_mass(n, dx, cleft, prm):
    beta, g1, g2 = prm[3], prm[4], prm[5]
    total = 0.0
    for k in range(dx.size):
        s = n[k] + n[k + 1]
        if not cleft[k]:
            s += _g(n[k], beta, g1, g2) + _g(n[k + 1], beta, g1, g2)
        total += 0.5 * dx[k] * s
    return total


@njit(cache=True, parallel=True)
def _solve_edges(N_left, N_right, J_guess, use_guess, tols, dx, a, axon, cleft, prm,
                 n_buf, J, C_left, C_right, mass, status, evals):
    """Solve every edge: flux, both feedback integrals (unweighted) and mass."""
    E = N_left.size
    K1 = dx.size + 1
    for e in prange(E):
        prof = n_buf[e]
        if N_left[e] == 0.0 and N_right[e] == 0.0:
            for k in range(K1):
                prof[k] = 0.0
            J[e] = 0.0
            C_left[e] = _zero_state_coefficient(1.0, dx, a, axon, cleft, prm, prof)
            C_right[e] = _zero_state_coefficient(0.0, dx, a, axon, cleft, prm, prof)
            mass[e] = 0.0
            status[e] = OK
            evals[e] = 0
            continue
        Je, st, ev = _shoot(N_left[e], N_right[e], dx, a, axon, prm,
                            J_guess[e], use_guess[e], tols[e], prof)
        J[e] = Je
        evals[e] = ev
        if st != OK:
            status[e] = st
            continue
        q = np.empty(K1)
        work = np.empty(K1)
        W, st = _linearized(1.0, 0.0, prof, dx, a, axon, prm, q, work)
        if st != OK:
            status[e] = st
            continue
        C_left[e] = _mass_coefficient(prof, q, dx, cleft, prm)
        W, st = _linearized(0.0, 1.0, prof, dx, a, axon, prm, q, work)
        if st != OK:
            status[e] = st
            continue
        C_right[e] = _mass_coefficient(prof, q, dx, cleft, prm)
        mass[e] = _edge_mass(prof, dx, cleft, prm)
        status[e] = OK


@njit(cache=True)
def _zero_state_coefficient(alpha, dx, a, axon, cleft, prm, zero_profile):
    q = np.empty(dx.size + 1)
    work = np.empty(dx.size + 1)
    _linearized(alpha, 1.0 - alpha, zero_profile, dx, a, axon, prm, q, work)
    return _mass_coefficient(zero_profile, q, dx, cleft, prm)


# --- public API -----------------------------------------------------------

class EdgeDiscretization:
    """Mesh arrays of one geometry/parameter pair, ready for the kernels."""

    def __init__(self, geom: EdgeGeometry, p: EdgeParams):
        self.geom = geom
        self.params = p
        self.dx = np.ascontiguousarray(geom.dx)
        self.a = np.ascontiguousarray(geom.interval_diffusivity(p))
        self.axon = np.ascontiguousarray(geom.axon_intervals())
        self.cleft = np.ascontiguousarray(geom.cleft_intervals())
        self.prm = _pack(p)
        self.resistance = float(np.sum(self.dx / self.a))

    def series_flux(self, N_left, N_right):
        """Pure-diffusion flux ``(N_left - N_right) / sum(len / a)``."""
        return (N_left - N_right) / self.resistance


def _discretization(geom, p):
    return EdgeDiscretization(geom, p)


def insoluble_profile(n_values, geom: EdgeGeometry, p: EdgeParams):
    """``g(n)`` on the mesh, zero strictly inside the synaptic cleft."""
    m = np.array(equilibrium_insoluble(np.maximum(n_values, 0.0), p), dtype=float)
    k3, k4 = geom.boundary_index[2], geom.boundary_index[3]
    m[k3 + 1:k4] = 0.0
    return m


def flux_residual(n_values, J, geom: EdgeGeometry, p: EdgeParams):
    """Largest defect of ``a n_x + h + J = 0`` over the mesh intervals."""
    disc = _discretization(geom, p)
    n = np.asarray(n_values, float)
    h = np.zeros(disc.dx.size)
    prm = disc.prm
    h[disc.axon] = _h_axon(np.array(n[:-1][disc.axon]), *prm[:8])
    return float(np.max(np.abs(disc.a * np.diff(n) / disc.dx + h + J)))


def solve_profile(N_left, N_right, geom: EdgeGeometry, p: EdgeParams, tol=None,
                  tol_mode="absolute", J_guess=None) -> EdgeProfile:
    """Steady profile on an edge with Dirichlet values ``N_left``, ``N_right``.

    ``tol`` bounds ``|n[K] - N_right|``; by default ``1e-10 * max(1, N_left,
    N_right)``.  A trial flux that drives the profile negative is rejected
    and treated as an upper bracket; the final profile is never clamped.
    """
    N_left, N_right = float(N_left), float(N_right)
    if N_left < 0 or N_right < 0:
        raise DomainError("boundary densities must be nonnegative")
    if N_left > p.n_max or N_right > p.n_max:
        raise DomainError(f"boundary density above the admissible limit {p.n_max:g}")
    if tol is None:
        tol = shooting_tolerance(N_left, N_right, 1e-10, tol_mode)
    disc = _discretization(geom, p)
    out = np.empty(geom.K + 1)
    if N_left == 0.0 and N_right == 0.0:
        out[:] = 0.0
        return EdgeProfile(out, np.zeros_like(out), 0.0, 0.0, tol, 0)
    J, status, evals = _shoot(N_left, N_right, disc.dx, disc.a, disc.axon, disc.prm,
                              0.0 if J_guess is None else float(J_guess),
                              J_guess is not None, float(tol), out)
    if status != OK:
        raise ShootingError(f"{_STATUS_TEXT[status]} (last trial J={J:.6g})", J, status)
    m = insoluble_profile(out, geom, p)
    res = flux_residual(out, J, geom, p)
    return EdgeProfile(out, m, float(J), res, float(tol), int(evals))


def solve_linearized(profile: EdgeProfile, side, geom: EdgeGeometry, p: EdgeParams,
                     tol=None) -> LinearizedProfile:
    """Sensitivity of the profile to one boundary value.

    ``side="left"`` imposes ``q(0) = 1, q(L) = 0``; ``side="right"`` the
    mirror data.  A pair ``(alpha, gamma)`` imposes general boundary values.
    The problem is linear, so two trial integrations suffice.
    """
    if side == "left":
        alpha, gamma = 1.0, 0.0
    elif side == "right":
        alpha, gamma = 0.0, 1.0
    else:
        alpha, gamma = (float(v) for v in side)
        side = "custom"
    disc = _discretization(geom, p)
    q = np.empty(geom.K + 1)
    work = np.empty(geom.K + 1)
    n = np.ascontiguousarray(profile.n_values, dtype=float)
    W, status = _linearized(alpha, gamma, n, disc.dx, disc.a, disc.axon, disc.prm, q, work)
    if status != OK:
        raise ShootingError(_STATUS_TEXT[status], status=status)
    return LinearizedProfile(q, float(W), side)


def mass_coefficient(profile: EdgeProfile, q: LinearizedProfile, c_weight, geom: EdgeGeometry,
                     p: EdgeParams) -> float:
    """Mass-feedback coefficient ``c (int q + int g'(n) q)`` by the trapezoid rule.

    The aggregate term is left out on the synaptic-cleft intervals.
    """
    disc = _discretization(geom, p)
    n = np.ascontiguousarray(profile.n_values, dtype=float)
    qv = np.ascontiguousarray(q.q_values, dtype=float)
    return float(c_weight) * _mass_coefficient(n, qv, disc.dx, disc.cleft, disc.prm)


def edge_mass(profile: EdgeProfile, c_weight, geom: EdgeGeometry, p: EdgeParams | None = None) -> float:
    """Weighted trapezoidal mass ``c * int (n + m) dx`` of an edge profile.

    With ``p`` given the aggregate density is recomputed as ``g(n)`` and
    dropped on the cleft intervals (the form consistent with
    :func:`mass_coefficient`); without it ``m_values`` is integrated as
    stored.
    """
    n = np.asarray(profile.n_values, dtype=float)
    if p is None:
        total = n + np.asarray(profile.m_values, dtype=float)
        return float(c_weight) * float(np.sum(0.5 * geom.dx * (total[:-1] + total[1:])))
    disc = _discretization(geom, p)
    return float(c_weight) * _edge_mass(np.ascontiguousarray(n), disc.dx, disc.cleft, disc.prm)
