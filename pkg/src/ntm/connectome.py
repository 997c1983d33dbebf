"""Directed weighted region graphs: loading, validation and synthesis."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class ConnectomeError(ValueError):
    """Invalid connectome data."""


@dataclass(frozen=True)
class Connectome:
    """Brain regions (nodes) with volumes and directed connection weights.

    ``weights[i, j]`` is the density of the tract running from region ``i``
    to region ``j``; zero means no edge.
    """

    region_labels: tuple[str, ...]
    volumes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = tuple(str(s) for s in self.region_labels)
        volumes = np.array(self.volumes, dtype=float)
        weights = np.array(self.weights, dtype=float)
        object.__setattr__(self, "region_labels", labels)
        h = len(labels)
        if weights.shape != (h, h):
            raise ConnectomeError(f"weight matrix has shape {weights.shape}, expected ({h}, {h})")
        if volumes.shape != (h,):
            raise ConnectomeError(f"got {volumes.size} volumes for {h} regions")
        seen = set()
        for lab in labels:
            if lab in seen:
                raise ConnectomeError(f"duplicate label {lab!r}")
            seen.add(lab)
        if not np.all(np.isfinite(weights)):
            i, j = np.argwhere(~np.isfinite(weights))[0]
            raise ConnectomeError(f"non-finite weight at row {labels[i]!r}, column {labels[j]!r}")
        bad = np.argwhere(weights < 0)
        if bad.size:
            i, j = bad[0]
            raise ConnectomeError(f"negative weight {weights[i, j]:g} at row {labels[i]!r}, column {labels[j]!r}")
        diag = np.flatnonzero(np.diag(weights) != 0)
        if diag.size:
            i = diag[0]
            raise ConnectomeError(f"self-loop weight {weights[i, i]:g} at region {labels[i]!r}")
        bad = np.flatnonzero(~(volumes > 0) | ~np.isfinite(volumes))
        if bad.size:
            i = bad[0]
            raise ConnectomeError(f"nonpositive volume {volumes[i]:g} at region {labels[i]!r}")
        volumes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "volumes", volumes)
        object.__setattr__(self, "weights", weights)

    @property
    def h(self) -> int:
        return len(self.region_labels)

    def index(self, label: str) -> int:
        try:
            return self.region_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown region {label!r}") from None

    def edges(self) -> np.ndarray:
        """``(E, 2)`` array of (source, target) pairs with positive weight, row-major."""
        return np.argwhere(self.weights > 0)

    def transpose(self) -> "Connectome":
        return Connectome(self.region_labels, self.volumes, self.weights.T)

    def permuted(self, order) -> "Connectome":
        """Relabel so that new region ``k`` is old region ``order[k]``."""
        order = np.asarray(order)
        return Connectome(tuple(self.region_labels[i] for i in order), self.volumes[order],
                          self.weights[np.ix_(order, order)])

    def scaled(self, weight_factor=1.0, volume_factor=1.0) -> "Connectome":
        return Connectome(self.region_labels, self.volumes * volume_factor, self.weights * weight_factor)

    def __eq__(self, other):
        if not isinstance(other, Connectome):
            return NotImplemented
        return (self.region_labels == other.region_labels
                and np.array_equal(self.volumes, other.volumes)
                and np.array_equal(self.weights, other.weights))

    def to_dict(self) -> dict:
        return {"labels": list(self.region_labels), "volumes": self.volumes.tolist(),
                "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Connectome":
        return cls(tuple(d["labels"]), d["volumes"], d["weights"])


def _read_text(source) -> str:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        return Path(source).read_text(encoding="utf-8")
    return source


def _parse_float(token, where):
    try:
        return float(token)
    except ValueError:
        raise ConnectomeError(f"non-numeric value {token!r} at {where}") from None


def load_connectome(csv_weights, csv_nodes) -> Connectome:
    """Build a :class:`Connectome` from CSV text or file paths.

    The weight file is a labelled square matrix (first row and first column
    hold region labels, top-left cell ignored).  The node file has a
    ``label,volume`` header; regions missing from it get volume 1.0 with a
    warning.
    """
    rows = [r for r in csv.reader(io.StringIO(_read_text(csv_weights))) if r]
    if not rows:
        raise ConnectomeError("empty weight file")
    header = [c.strip() for c in rows[0][1:]]
    h = len(header)
    if len(rows) - 1 != h:
        raise ConnectomeError(f"weight matrix has {len(rows) - 1} data rows but {h} column labels")
    weights = np.zeros((h, h))
    for i, row in enumerate(rows[1:]):
        label = row[0].strip()
        if label != header[i]:
            raise ConnectomeError(f"row {i + 1} label {label!r} does not match column label {header[i]!r}")
        if len(row) - 1 != h:
            raise ConnectomeError(f"row {label!r} has {len(row) - 1} values, expected {h}")
        for j, tok in enumerate(row[1:]):
            weights[i, j] = _parse_float(tok, f"row {label!r}, column {header[j]!r}")

    volumes = {}
    node_rows = [r for r in csv.reader(io.StringIO(_read_text(csv_nodes))) if r]
    if node_rows and [c.strip().lower() for c in node_rows[0][:2]] == ["label", "volume"]:
        node_rows = node_rows[1:]
    for r in node_rows:
        if len(r) < 2:
            raise ConnectomeError(f"malformed node row {r!r}")
        lab = r[0].strip()
        if lab in volumes:
            raise ConnectomeError(f"duplicate label {lab!r} in node table")
        if lab not in header:
            raise ConnectomeError(f"node table lists unknown region {lab!r}")
        volumes[lab] = _parse_float(r[1], f"volume of {lab!r}")
    missing = [lab for lab in header if lab not in volumes]
    if missing:
        logger.warning("no volume for %d region(s) (%s); using 1.0", len(missing), ", ".join(missing))
    return Connectome(tuple(header), [volumes.get(lab, 1.0) for lab in header], weights)


def save_connectome(conn: Connectome, weights_path, nodes_path) -> None:
    """Write the two CSV files read by :func:`load_connectome`.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    with open(weights_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["", *conn.region_labels])
        for lab, row in zip(conn.region_labels, conn.weights):
            w.writerow([lab, *(repr(float(v)) for v in row)])
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "volume"])
        for lab, v in zip(conn.region_labels, conn.volumes):
            w.writerow([lab, repr(float(v))])


def synthesize_graph(n_regions: int, density: float, seed: int, mirrored: bool = False) -> Connectome:
    """Seeded random directed graph for desk-scale experiments.

    Each ordered pair ``(i, j)`` is an edge with probability ``density``;
    weights are uniform on (0, 1] and volumes uniform on [0.5, 2].  With
    ``mirrored=True`` the regions form two hemispheres ``L*``/``R*`` and the
    weight matrix has the block form ``[[A, B], [B, A]]``, so swapping
    hemispheres is an exact automorphism.
    """
    if n_regions < 2:
        raise ValueError("need at least 2 regions")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)

    def block(n, allow_diag):
        mask = rng.random((n, n)) < density
        w = 1.0 - rng.random((n, n))  # (0, 1]
        w = np.where(mask, w, 0.0)
        if not allow_diag:
            np.fill_diagonal(w, 0.0)
        return w

    if not mirrored:
        weights = block(n_regions, False)
        volumes = rng.uniform(0.5, 2.0, n_regions)
        labels = tuple(f"R{i:02d}" for i in range(n_regions))
        return Connectome(labels, volumes, weights)

    if n_regions % 2:
        raise ValueError("mirrored graphs need an even region count")
    half = n_regions // 2
    A = block(half, False)
    B = block(half, True)
    weights = np.block([[A, B], [B, A]])
    v = rng.uniform(0.5, 2.0, half)
    volumes = np.concatenate([v, v])
    labels = tuple(f"L{i:02d}" for i in range(half)) + tuple(f"R{i:02d}" for i in range(half))
    return Connectome(labels, volumes, weights)


def mirror_permutation(h: int) -> np.ndarray:
    """Index map swapping the hemispheres of a mirrored graph."""
    half = h // 2
    return np.concatenate([np.arange(half, h), np.arange(half)])


def seed_connectivity(conn: Connectome, seed_index: int):
    """Outgoing (row) and incoming (column) weights of the seed region."""
    if not 0 <= seed_index < conn.h:
        raise IndexError(f"seed index {seed_index} out of range for {conn.h} regions")
    c_out = conn.weights[seed_index, :].copy()
    c_in = conn.weights[:, seed_index].copy()
    return c_out, c_in
