"""Constitutive laws of the single-edge transport model.

All functions are pure.  The scalar laws (velocity, reaction, equilibrium
aggregate density and its derivative, advective flux) are compiled with
numba so the same code paths serve the public API and the shooting kernels;
they accept either floats or numpy arrays.

Units are carried in the docstrings only: positions in µm, densities in µM,
times in seconds.  The engine itself treats every quantity as a plain real.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

#: fraction of the singular density beta/gamma2 admitted when gamma2 > 0
SINGULARITY_MARGIN = 0.99

#: compartment names in order along the edge
COMPARTMENTS = ("presynaptic_sd", "ais", "axon", "synaptic_cleft", "postsynaptic_sd")


class DomainError(ValueError):
    """Raised when a density lies outside the domain of the equilibrium law."""


@dataclass(frozen=True)
class EdgeParams:
    """Microscopic constants of one edge.

    Defaults follow the experiment values: diffusivity, diffusing fraction
    and motor speeds from the literature estimates, ``lambda1 = lambda2 =
    0.005``, anterograde bias ``delta = 100, epsilon = 10``,
    ``gamma1 = 0.001`` and ``gamma2 = 0``.  ``beta`` has no published value;
    1e-5 1/s puts the aggregate share of seeded tau near one half.
    """

    D: float = 12.0
    f: float = 0.92
    v_a: float = 0.7
    v_r: float = 0.7
    beta: float = 1e-5
    gamma1: float = 0.001
    gamma2: float = 0.0
    delta: float = 100.0
    epsilon: float = 10.0
    lambda1: float = 0.005
    lambda2: float = 0.005

    def __post_init__(self):
        problems = []
        if not self.D > 0:
            problems.append("D must be positive")
        if not 0.0 <= self.f <= 1.0:
            problems.append("f must lie in [0, 1]")
        if self.v_a < 0 or self.v_r < 0:
            problems.append("v_a and v_r must be nonnegative")
        if not self.beta > 0:
            problems.append("beta must be positive")
        for name in ("gamma1", "gamma2", "delta", "epsilon"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be nonnegative")
        for name in ("lambda1", "lambda2"):
            # lambda = 1 (no barrier) is admitted for analytic test cases
            if not 0.0 < getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in (0, 1]")
        if problems:
            raise ValueError("invalid EdgeParams: " + "; ".join(problems))

    @property
    def n_max(self) -> float:
        """Largest admissible soluble density (inf when gamma2 == 0)."""
        if self.gamma2 == 0.0:
            return np.inf
        return SINGULARITY_MARGIN * self.beta / self.gamma2

    def replace(self, **changes) -> "EdgeParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if "lambda" in changes:
            lam = changes.pop("lambda")
            values["lambda1"] = values["lambda2"] = lam
        values.update(changes)
        return EdgeParams(**values)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class EdgeGeometry:
    """Five-compartment layout of an edge and its spatial mesh.

    ``mesh`` runs from 0 to ``L`` and contains every compartment boundary;
    ``boundary_index[l]`` is the mesh index of the l-th boundary
    (``x1..x4``).
    """

    L: float
    x1: float
    x2: float
    x3: float
    x4: float
    mesh: np.ndarray = field(repr=False)

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        mesh.setflags(write=False)
        object.__setattr__(self, "mesh", mesh)
        if not 0.0 < self.x1 < self.x2 < self.x3 < self.x4 < self.L:
            raise ValueError("compartment boundaries must satisfy 0 < x1 < x2 < x3 < x4 < L")
        if mesh.ndim != 1 or mesh[0] != 0.0 or mesh[-1] != self.L:
            raise ValueError("mesh must start at 0 and end at L")
        if np.any(np.diff(mesh) <= 0):
            raise ValueError("mesh must be strictly increasing")
        idx = []
        for b in self.boundaries[1:-1]:
            hit = np.flatnonzero(mesh == b)
            if hit.size != 1:
                raise ValueError(f"compartment boundary {b} is not a mesh point")
            idx.append(int(hit[0]))
        full = [0, *idx, mesh.size - 1]
        if min(np.diff(full)) < 2:
            raise ValueError("every compartment needs at least 2 mesh intervals")
        object.__setattr__(self, "boundary_index", tuple(idx))

    @classmethod
    def from_counts(cls, boundaries=(20.0, 40.0, 1040.0, 1060.0, 1080.0),
                    counts=(40, 20, 400, 20, 40)) -> "EdgeGeometry":
        """Uniform mesh inside each compartment.

        ``boundaries`` is ``(x1, x2, x3, x4, L)``; ``counts`` the number of
        intervals per compartment.
        """
        x1, x2, x3, x4, L = (float(b) for b in boundaries)
        if len(counts) != 5:
            raise ValueError("need one interval count per compartment")
        edges = [0.0, x1, x2, x3, x4, L]
        parts = [np.linspace(edges[i], edges[i + 1], int(counts[i]) + 1)[:-1] for i in range(5)]
        mesh = np.concatenate(parts + [np.array([L])])
        # linspace may perturb the endpoints by an ulp; pin them
        pos = np.cumsum([0, *counts])
        mesh[pos] = edges
        return cls(L=L, x1=x1, x2=x2, x3=x3, x4=x4, mesh=mesh)

    def refined(self, factor: int = 2) -> "EdgeGeometry":
        """Uniformly subdivide every mesh interval ``factor`` times."""
        m = self.mesh
        fine = [m[:-1, None] + (m[1:] - m[:-1])[:, None] * np.arange(factor)[None, :] / factor]
        mesh = np.append(np.ravel(fine), self.L)
        return EdgeGeometry(self.L, self.x1, self.x2, self.x3, self.x4, mesh)

    @property
    def boundaries(self) -> tuple[float, ...]:
        return (0.0, self.x1, self.x2, self.x3, self.x4, self.L)

    @property
    def K(self) -> int:
        """Number of mesh intervals."""
        return self.mesh.size - 1

    @property
    def dx(self) -> np.ndarray:
        return np.diff(self.mesh)

    @property
    def interval_compartment(self) -> np.ndarray:
        """Compartment index (0..4) of every mesh interval."""
        full = [0, *self.boundary_index, self.K]
        return np.repeat(np.arange(5), np.diff(full))

    def compartment_of(self, x):
        """Right-continuous compartment index of positions ``x``.

        Boundary points belong to the compartment on their right; ``L``
        belongs to the postsynaptic compartment.
        """
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > self.L)):
            raise ValueError(f"position outside [0, {self.L}]")
        return np.minimum(np.searchsorted(self.boundaries[1:-1], x, side="right"), 4)

    def interval_diffusivity(self, p: EdgeParams) -> np.ndarray:
        return _segment_diffusivities(p)[self.interval_compartment]

    def axon_intervals(self) -> np.ndarray:
        return self.interval_compartment == 2

    def cleft_intervals(self) -> np.ndarray:
        return self.interval_compartment == 3

    def as_dict(self) -> dict:
        return {"boundaries": [self.x1, self.x2, self.x3, self.x4, self.L],
                "mesh": self.mesh.tolist()}


def _segment_diffusivities(p: EdgeParams) -> np.ndarray:
    return np.array([p.D, p.lambda1 * p.D, p.f * p.D, p.lambda2 * p.D, p.D])


# --- compiled scalar laws -------------------------------------------------

@njit(cache=True)
def _velocity(m, n, v_a, v_r, delta, epsilon):
    return v_a * (1.0 + delta * n) * (1.0 - epsilon * m) - v_r


@njit(cache=True)
def _reaction(m, n, beta, gamma1, gamma2):
    return beta * m - gamma1 * n * n - gamma2 * n * m


@njit(cache=True)
def _g(n, beta, gamma1, gamma2):
    return gamma1 * n * n / (beta - gamma2 * n)


@njit(cache=True)
def _g_prime(n, beta, gamma1, gamma2):
    d = beta - gamma2 * n
    return gamma1 * n * (2.0 * beta - gamma2 * n) / (d * d)


@njit(cache=True)
def _h_axon(n, f, v_a, v_r, beta, gamma1, gamma2, delta, epsilon):
    m = _g(n, beta, gamma1, gamma2)
    return -(1.0 - f) * _velocity(m, n, v_a, v_r, delta, epsilon) * n


@njit(cache=True)
def _h_axon_n(n, f, v_a, v_r, beta, gamma1, gamma2, delta, epsilon):
    m = _g(n, beta, gamma1, gamma2)
    dm = _g_prime(n, beta, gamma1, gamma2)
    v = _velocity(m, n, v_a, v_r, delta, epsilon)
    dv = v_a * delta * (1.0 - epsilon * m) - v_a * (1.0 + delta * n) * epsilon * dm
    return -(1.0 - f) * (v + n * dv)


# --- public API -----------------------------------------------------------

def _arg(x):
    return float(x) if np.ndim(x) == 0 else np.asarray(x, dtype=float)


def _check_domain(n, p: EdgeParams):
    arr = np.asarray(n, dtype=float)
    if np.any(arr < 0):
        raise DomainError("soluble density must be nonnegative")
    if p.gamma2 > 0 and np.any(arr > p.n_max):
        raise DomainError(
            f"soluble density exceeds {SINGULARITY_MARGIN} * beta/gamma2 = {p.n_max:g}")


def velocity(m, n, p: EdgeParams):
    """Net transport velocity ``v_a (1 + delta n)(1 - epsilon m) - v_r`` (µm/s).

    Negative values mean net retrograde transport.
    """
    return _velocity(_arg(m), _arg(n), p.v_a, p.v_r, p.delta, p.epsilon)


def reaction(m, n, p: EdgeParams):
    """Net fragmentation minus aggregation, ``beta m - gamma1 n^2 - gamma2 n m``."""
    return _reaction(_arg(m), _arg(n), p.beta, p.gamma1, p.gamma2)


def equilibrium_insoluble(n, p: EdgeParams):
    """Aggregate density in equilibrium with soluble density ``n``.

    Solves ``reaction(m, n) = 0`` for ``m``: ``gamma1 n^2 / (beta - gamma2 n)``.
    """
    _check_domain(n, p)
    return _g(_arg(n), p.beta, p.gamma1, p.gamma2)


def equilibrium_insoluble_derivative(n, p: EdgeParams):
    """d/dn of :func:`equilibrium_insoluble`."""
    _check_domain(n, p)
    return _g_prime(_arg(n), p.beta, p.gamma1, p.gamma2)


def diffusivity_at(x, geom: EdgeGeometry, p: EdgeParams):
    """Piecewise-constant diffusivity, right-continuous at compartment boundaries."""
    return _segment_diffusivities(p)[geom.compartment_of(x)][()]


def _axon_mask(x, geom):
    return geom.compartment_of(x) == 2


def advection_at(x, n, geom: EdgeGeometry, p: EdgeParams):
    """Advective flux ``-(1-f) v(g(n), n) n`` inside the axon, zero elsewhere.

    The axon is taken as ``[x2, x3)``, matching the right-continuous
    convention of :func:`diffusivity_at`.
    """
    _check_domain(n, p)
    x, n = np.broadcast_arrays(np.asarray(x, float), np.asarray(n, float))
    h = _h_axon(np.array(n), p.f, p.v_a, p.v_r, p.beta, p.gamma1, p.gamma2, p.delta, p.epsilon)
    return np.where(_axon_mask(x, geom), h, 0.0)[()]


def advection_derivative_at(x, n, geom: EdgeGeometry, p: EdgeParams):
    """Partial derivative of :func:`advection_at` with respect to ``n``."""
    _check_domain(n, p)
    x, n = np.broadcast_arrays(np.asarray(x, float), np.asarray(n, float))
    hn = _h_axon_n(np.array(n), p.f, p.v_a, p.v_r, p.beta, p.gamma1, p.gamma2, p.delta, p.epsilon)
    return np.where(_axon_mask(x, geom), hn, 0.0)[()]
