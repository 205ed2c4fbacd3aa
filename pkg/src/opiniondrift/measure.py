"""Piecewise-constant mass distributions on a bounded opinion interval.

A partition stores sorted cell edges and one mass per cell. Inside a cell of
positive width the mass is spread uniformly; a zero-width cell is an atom.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import AllAtomic

__all__ = [
    "OpinionPartition",
    "MomentTable",
    "ClusterSet",
    "DensityBounds",
    "from_uniform",
    "from_atoms",
    "window_moments",
    "density_bounds",
    "lemma1_bounds",
    "extract_clusters",
    "integrate",
    "refine",
    "write_partition_csv",
    "read_partition_csv",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OpinionPartition:
    """Mass distribution over opinions: ``len(edges) == len(masses) + 1``."""

    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        edges = _frozen(self.edges)
        masses = _frozen(self.masses)
        if edges.ndim != 1 or masses.ndim != 1 or edges.size != masses.size + 1:
            raise ValueError("need len(edges) == len(masses) + 1")
        if masses.size == 0:
            raise ValueError("partition needs at least one cell")
        if not np.all(np.isfinite(edges)) or not np.all(np.isfinite(masses)):
            raise ValueError("edges and masses must be finite")
        if np.any(np.diff(edges) < 0):
            raise ValueError("edges must be non-decreasing")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses)
        if not self.total_mass > 0:
            raise ValueError("total mass must be positive")

    @property
    def n_cells(self) -> int:
        return self.masses.size

    @cached_property
    def total_mass(self) -> float:
        # fsum is order independent, so conservation checks can use ==
        return math.fsum(self.masses.tolist())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def atom_mask(self) -> np.ndarray:
        return (self.widths == 0) & (self.masses > 0)

    @cached_property
    def support(self) -> tuple[float, float]:
        """Closed hull ``(x_min, x_max)`` of the positive-mass cells."""
        idx = np.flatnonzero(self.masses > 0)
        return float(self.edges[idx[0]]), float(self.edges[idx[-1] + 1])

    @property
    def support_width(self) -> float:
        lo, hi = self.support
        return hi - lo

    @property
    def has_gaps(self) -> bool:
        """True if a zero-mass cell of positive width sits inside the support."""
        idx = np.flatnonzero(self.masses > 0)
        inner = slice(idx[0], idx[-1] + 1)
        return bool(np.any((self.masses[inner] == 0) & (self.widths[inner] > 0)))

    @cached_property
    def table(self) -> MomentTable:
        return MomentTable.build(self)

    def trimmed(self) -> OpinionPartition:
        """Drop leading and trailing zero-mass cells."""
        idx = np.flatnonzero(self.masses > 0)
        lo, hi = idx[0], idx[-1] + 1
        if lo == 0 and hi == self.n_cells:
            return self
        return OpinionPartition(self.edges[lo : hi + 1], self.masses[lo:hi])

    def cells(self) -> Iterator[tuple[float, float, float]]:
        for left, right, m in zip(self.edges[:-1], self.edges[1:], self.masses):
            yield float(left), float(right), float(m)

    def is_symmetric(self, center: float | None = None, tol: float = 1e-12) -> bool:
        """Mirror symmetry about ``center`` in transport distance.

        Masses must mirror, and moving each cell onto its mirror image must
        cost at most ``tol`` times support width (per unit mass). Edges of
        nearly empty cells are ill-conditioned, so they are weighted by mass
        rather than compared one by one.
        """
        part = self.trimmed()
        if center is None:
            lo, hi = part.support
            center = 0.5 * (lo + hi)
        scale = max(part.support_width, 1e-300)
        m = part.masses
        if not np.allclose(m, m[::-1], rtol=0.0, atol=tol * part.total_mass):
            return False
        mid = part.midpoints
        cost = float(np.dot(m, np.abs(mid + mid[::-1] - 2.0 * center))) / (2.0 * part.total_mass)
        return cost <= tol * scale


class MomentTable:
    """Prefix sums of cell masses and first moments for window queries.

    ``mass[k]`` and ``moment[k]`` cover the first ``k`` cells.
    """

    def __init__(self, edges: np.ndarray, masses: np.ndarray) -> None:
        self.edges = edges
        self.masses = masses
        cell_moment = masses * 0.5 * (edges[:-1] + edges[1:])
        self.mass = np.concatenate(([0.0], np.cumsum(masses)))
        self.moment = np.concatenate(([0.0], np.cumsum(cell_moment)))

    @classmethod
    def build(cls, part: OpinionPartition) -> MomentTable:
        return cls(part.edges, part.masses)

    def cumulative(self, x, closed: bool):
        """Mass and moment of ``(-inf, x]`` if ``closed`` else ``(-inf, x)``."""
        e, m = self.edges, self.masses
        n = m.size
        x = np.asarray(x, dtype=float)
        j = np.searchsorted(e, x, side="right" if closed else "left")
        full = np.maximum(j - 1, 0)
        mass = self.mass[full]
        moment = self.moment[full]
        k = j - 1
        partial = (k >= 0) & (k < n)
        if np.any(partial):
            kk = np.where(partial, k, 0)
            left = e[kk]
            width = e[kk + 1] - left
            frac = np.where(partial, (x - left) / np.where(partial, width, 1.0), 0.0)
            pm = m[kk] * frac
            mass = mass + pm
            moment = moment + pm * 0.5 * (left + np.where(partial, x, left))
        return mass, moment

    def window(self, a, b):
        """Mass and first moment on the closed window ``[a, b]``."""
        m_hi, z_hi = self.cumulative(b, closed=True)
        m_lo, z_lo = self.cumulative(a, closed=False)
        return m_hi - m_lo, z_hi - z_lo


def from_uniform(lo: float, hi: float, total_mass: float = 1.0, n_cells: int = 1000) -> OpinionPartition:
    """Uniform distribution on ``[lo, hi]`` split into equal cells."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got {lo}, {hi}")
    if not total_mass > 0:
        raise ValueError("total_mass must be positive")
    if int(n_cells) != n_cells or n_cells < 1:
        raise ValueError("n_cells must be a positive integer")
    n_cells = int(n_cells)
    edges = np.linspace(lo, hi, n_cells + 1)
    return OpinionPartition(edges, np.full(n_cells, total_mass / n_cells))


def from_atoms(positions, masses) -> OpinionPartition:
    """Purely atomic measure; positions must be strictly increasing."""
    pos = np.asarray(positions, dtype=float)
    w = np.asarray(masses, dtype=float)
    if pos.size == 0 or pos.size != w.size:
        raise ValueError("need matching nonempty positions and masses")
    if np.any(np.diff(pos) <= 0):
        raise ValueError("atom positions must be strictly increasing")
    edges = np.repeat(pos, 2)
    cell_mass = np.zeros(2 * pos.size - 1)
    cell_mass[::2] = w
    return OpinionPartition(edges, cell_mass)


def window_moments(part: OpinionPartition, a, b):
    """Mass and first moment of ``part`` on the closed window ``[a, b]``.

    Accepts scalars or arrays; atoms on the window boundary are included.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr > b_arr):
        raise ValueError("window needs a <= b")
    mass, moment = part.table.window(a_arr, b_arr)
    if mass.ndim == 0:
        return float(mass), float(moment)
    return mass, moment


class DensityBounds(NamedTuple):
    rho_min: float
    rho_max: float
    has_atoms: bool


def density_bounds(part: OpinionPartition) -> DensityBounds:
    """Min and max density over positive-mass cells of positive width."""
    widths = part.widths
    cont = (part.masses > 0) & (widths > 0)
    if not np.any(cont):
        raise AllAtomic("partition has no absolutely continuous mass")
    rho = part.masses[cont] / widths[cont]
    return DensityBounds(float(rho.min()), float(rho.max()), bool(np.any(part.atom_mask)))


def lemma1_bounds(a: float, b: float, rho_min: float, rho_max: float) -> tuple[float, float]:
    """Range of possible averages over ``[a, b]`` for a density in ``[rho_min, rho_max]``.

    The extremes are attained by two-level step densities; the bounds lie
    strictly inside ``(a, b)``.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not (0 < rho_min <= rho_max < math.inf):
        raise ValueError("need 0 < rho_min <= rho_max < inf")
    s = math.sqrt(rho_max / rho_min)
    return (b + a * s) / (1.0 + s), (a + b * s) / (1.0 + s)


@dataclass(frozen=True)
class ClusterSet:
    """Mass concentrations ordered by position.

    ``residual_mass`` is mass in cells lighter than the dust threshold that
    were left out of the grouping.
    """

    positions: np.ndarray
    masses: np.ndarray
    widths: np.ndarray
    converged: bool
    residual_mass: float = 0.0
    bounds: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return int(self.positions.size)

    def __iter__(self) -> Iterator[tuple[float, float]]:
        for p, m in zip(self.positions, self.masses):
            yield float(p), float(m)

    @property
    def gaps(self) -> np.ndarray:
        if self.bounds.shape[0] < 2:
            return np.zeros(0)
        return self.bounds[1:, 0] - self.bounds[:-1, 1]

    def nearest(self, x: float) -> int:
        return int(np.argmin(np.abs(self.positions - x)))

    def to_list(self) -> list[dict]:
        return [
            {"position": float(p), "mass": float(m), "width": float(w)}
            for p, m, w in zip(self.positions, self.masses, self.widths)
        ]


def extract_clusters(
    part: OpinionPartition, width_tol: float, gap_min: float, dust: float = 0.0
) -> ClusterSet:
    """Group consecutive positive-mass cells separated by gaps ``<= width_tol``.

    Each group is reported at its mass centroid. ``converged`` holds when every
    group is at most ``width_tol`` wide and neighbouring groups are more than
    ``gap_min`` apart. Cells with mass ``<= dust * total_mass`` are ignored.
    """
    if not width_tol > 0 or not gap_min > 0:
        raise ValueError("width_tol and gap_min must be positive")
    heavy = np.flatnonzero(part.masses > dust * part.total_mass)
    if heavy.size == 0:
        return ClusterSet(np.zeros(0), np.zeros(0), np.zeros(0), False, part.total_mass)
    left = part.edges[heavy]
    right = part.edges[heavy + 1]
    m = part.masses[heavy]
    centroid_mass = m * 0.5 * (left + right)
    breaks = np.flatnonzero(left[1:] - right[:-1] > width_tol) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [heavy.size]))
    masses = np.add.reduceat(m, starts)
    positions = np.add.reduceat(centroid_mass, starts) / masses
    # centroids can round just outside their group; clamp for consistency
    lo = left[starts]
    hi = right[ends - 1]
    positions = np.clip(positions, lo, hi)
    widths = hi - lo
    bounds = np.column_stack([lo, hi])
    gaps = lo[1:] - hi[:-1]
    converged = bool(np.all(widths <= width_tol) and np.all(gaps > gap_min))
    residual = part.total_mass - math.fsum(np.asarray(m).tolist())
    return ClusterSet(positions, masses, widths, converged, max(residual, 0.0), bounds)


def integrate(part: OpinionPartition, fn) -> float:
    """Midpoint-rule integral of ``fn`` against ``part``; exact on atoms."""
    return math.fsum((part.masses * fn(part.midpoints)).tolist())


def write_partition_csv(part: OpinionPartition, path: str | Path) -> None:
    """CSV of ``left_edge,right_edge,mass`` preceded by a ``#`` JSON header line."""
    buf = io.StringIO(newline="")
    header = {"total_mass": part.total_mass, "n_cells": part.n_cells}
    buf.write("# " + json.dumps(header) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["left_edge", "right_edge", "mass"])
    for left, right, m in part.cells():
        writer.writerow([repr(left), repr(right), repr(m)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def read_partition_csv(path: str | Path) -> OpinionPartition:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    header = json.loads(lines[0][1:]) if lines and lines[0].startswith("#") else None
    body = lines[1:] if header is not None else lines
    rows = list(csv.DictReader(body))
    left = [float(r["left_edge"]) for r in rows]
    right = [float(r["right_edge"]) for r in rows]
    masses = [float(r["mass"]) for r in rows]
    if any(r != l for r, l in zip(right[:-1], left[1:])):
        raise ValueError("cells must be contiguous")
    part = OpinionPartition(np.array(left + right[-1:]), np.array(masses))
    if header is not None and header.get("n_cells") not in (None, part.n_cells):
        raise ValueError("header n_cells does not match the rows")
    return part


def refine(part: OpinionPartition, max_width: float, dust: float = 0.0) -> OpinionPartition:
    """Split cells wider than ``max_width`` into ``2**k`` equal pieces.

    The represented measure is unchanged, and halving is exact in binary
    floating point, so masses still sum to the same total. Cells with mass
    ``<= dust * total_mass`` are left alone.
    """
    if not max_width > 0:
        raise ValueError("max_width must be positive")
    widths = part.widths
    wide = (widths > max_width) & (part.masses > dust * part.total_mass)
    if not np.any(wide):
        return part
    counts = np.ones(part.n_cells, dtype=np.int64)
    k = np.ceil(np.log2(widths[wide] / max_width)).astype(np.int64)
    counts[wide] = 2 ** np.maximum(k, 1)
    cell = np.repeat(np.arange(part.n_cells), counts)
    offset = np.arange(cell.size) - np.repeat(np.cumsum(counts) - counts, counts)
    left = part.edges[:-1][cell]
    frac = offset / counts[cell]
    new_left = left + frac * widths[cell]
    edges = np.concatenate((new_left, part.edges[-1:]))
    masses = part.masses[cell] / counts[cell]
    return OpinionPartition(edges, masses)
