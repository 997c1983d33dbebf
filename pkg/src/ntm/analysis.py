"""Observables computed from network trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

UNDEFINED = float("nan")


@dataclass(frozen=True)
class StagingReport:
    """Per-region peak burden and arrival time, and the seed decay metric.

    ``ranks[i]`` is the arrival rank (1 = first) of region ``i``.  Regions
    whose series peaks before the final time come first, ordered by peak
    time; regions still rising (``unpeaked``) follow, ordered by descending
    peak value.  Remaining ties go to the larger peak, then the lower index.
    """

    labels: tuple
    peak_values: np.ndarray
    peak_times: np.ndarray
    unpeaked: np.ndarray
    ranks: np.ndarray
    seed_index: int
    half_decay_time: float
    seed_final_fraction: float

    @property
    def order(self) -> np.ndarray:
        """Region indices sorted by arrival rank."""
        return np.argsort(self.ranks, kind="stable")

    def to_dict(self) -> dict:
        return {
            "seed": self.labels[self.seed_index],
            "half_decay_time": None if math.isinf(self.half_decay_time) else self.half_decay_time,
            "seed_final_fraction": self.seed_final_fraction,
            "regions": [
                {"label": lab, "peak_value": float(v), "arrival_time": float(t),
                 "unpeaked": bool(u), "rank": int(r)}
                for lab, v, t, u, r in zip(self.labels, self.peak_values, self.peak_times,
                                           self.unpeaked, self.ranks)
            ],
        }


def total_tau(state) -> np.ndarray:
    """Total burden ``N + M`` per region."""
    return np.asarray(state.N, dtype=float) + np.asarray(state.M, dtype=float)


def _tau_series(traj):
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return np.asarray(traj.times, dtype=float), traj.tau


def half_decay_time(times, seed_series) -> float:
    """First time the seed burden falls to half its initial value (linear interpolation).

    Returns ``inf`` when it never does within the recorded horizon.
    """
    target = 0.5 * seed_series[0]
    below = np.flatnonzero(seed_series <= target)
    if below.size == 0 or seed_series[0] <= 0:
        return math.inf
    k = below[0]
    if k == 0:
        return float(times[0])
    t0, t1 = times[k - 1], times[k]
    y0, y1 = seed_series[k - 1], seed_series[k]
    return float(t0 + (y0 - target) / (y0 - y1) * (t1 - t0))


def arrival_times(traj, seed_index=None) -> StagingReport:
    """Peak values, arrival (peak) times and arrival ranks of every region.

    The seed defaults to the region with the largest initial burden.
    """
    times, tau = _tau_series(traj)
    h = tau.shape[1]
    if seed_index is None:
        seed_index = int(np.argmax(tau[0]))
    arg = np.argmax(tau, axis=0)  # first maximum: ties go to the earliest time
    peak_values = tau[arg, np.arange(h)]
    peak_times = times[arg]
    unpeaked = ~(tau[-1] < peak_values)
    order = sorted(range(h), key=lambda i: (bool(unpeaked[i]),
                                            0.0 if unpeaked[i] else peak_times[i],
                                            -peak_values[i], i))
    ranks = np.empty(h, dtype=int)
    ranks[order] = np.arange(1, h + 1)
    seed = tau[:, seed_index]
    frac = float(seed[-1] / seed[0]) if seed[0] > 0 else UNDEFINED
    return StagingReport(tuple(traj.labels), peak_values, peak_times, unpeaked, ranks,
                         int(seed_index), half_decay_time(times, seed), frac)


def rank_agreement(a: StagingReport, b: StagingReport, exclude_seed=True) -> float:
    """Spearman correlation between the arrival orderings of two runs."""
    keep = np.ones(len(a.ranks), dtype=bool)
    if exclude_seed:
        keep[a.seed_index] = False
        keep[b.seed_index] = False
    return float(stats.spearmanr(a.ranks[keep], b.ranks[keep]).statistic)


def _pearson(x, y) -> float:
    x = x - x.mean()
    y = y - y.mean()
    sx = math.sqrt(float(np.dot(x, x)))
    sy = math.sqrt(float(np.dot(y, y)))
    if sx == 0.0 or sy == 0.0:
        return UNDEFINED
    return float(np.clip(np.dot(x, y) / (sx * sy), -1.0, 1.0))


def _spearman(x, y) -> float:
    return _pearson(stats.rankdata(x), stats.rankdata(y))


def correlation_with_seed(traj, conn, seed_index):
    """Correlation of the unseeded burden with seed out/in connectivity over time.

    Returns a dict of arrays ``pearson_out``, ``pearson_in``,
    ``spearman_out``, ``spearman_in`` (one value per recorded time); an
    undefined correlation (zero variance) is NaN.
    """
    from .connectome import seed_connectivity

    if conn.h < 3:
        raise ValueError("correlations need at least 3 regions")
    times, tau = _tau_series(traj)
    c_out, c_in = seed_connectivity(conn, seed_index)
    keep = np.arange(conn.h) != seed_index
    c_out, c_in = c_out[keep], c_in[keep]
    result = {"times": times}
    for name, fn in (("pearson", _pearson), ("spearman", _spearman)):
        result[f"{name}_out"] = np.array([fn(row[keep], c_out) for row in tau])
        result[f"{name}_in"] = np.array([fn(row[keep], c_in) for row in tau])
    return result


def mass_error_series(traj, conn=None, geom=None, p=None) -> np.ndarray:
    """Relative deviation ``|mass(t) - mass(0)| / mass(0)`` of the total mass.

    Uses the masses recorded during the run; when they are missing they are
    recomputed from fresh edge solves (needs ``conn``, ``geom`` and ``p``).
    """
    masses = np.asarray(traj.total_mass, dtype=float)
    if masses.size != len(traj):
        from .integrator import edge_profiles, total_mass

        masses = np.array([total_mass(traj.state(k), edge_profiles(traj.state(k), conn, geom, p), conn, geom, p)
                           for k in range(len(traj))])
    if masses.size == 0:
        raise ValueError("empty trajectory")
    if masses[0] == 0:
        raise ValueError("initial total mass is zero")
    return np.abs(masses - masses[0]) / masses[0]


def top_flux_edges(flux_table, fraction=0.1):
    """Edges with the largest ``|c_ij J_ij|``: the top ``ceil(fraction * E)``.

    ``flux_table`` maps ``(i, j)`` to the signed weighted flux.  Results are
    sorted by decreasing magnitude (ties by edge), sign kept.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    items = [((int(i), int(j)), float(v)) for (i, j), v in dict(flux_table).items()]
    if not items:
        raise ValueError("empty flux table")
    items.sort(key=lambda kv: (-abs(kv[1]), kv[0]))
    n = math.ceil(fraction * len(items))
    return [(i, j, v) for (i, j), v in items[:n]]


def flux_table(traj, k) -> dict:
    """Weighted fluxes of record ``k`` keyed by (source, target)."""
    return {(int(i), int(j)): float(v) for (i, j), v in zip(traj.edges, traj.flux[k])}
