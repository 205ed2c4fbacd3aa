"""Confidence-window flow map and the edge-transport push-forward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateWindow, MonotonicityViolation
from .inputs import TruncatedGaussianInput
from .measure import OpinionPartition

__all__ = [
    "FlowContext",
    "Transport",
    "BiLipschitz",
    "flow_map",
    "push_forward",
    "transport",
    "bilipschitz_estimate",
    "DEN_REL",
    "MERGE_REL",
]

# window mass below DEN_REL * total mass is treated as empty
DEN_REL = 1e-15
# mapped edges closer than MERGE_REL * |supp mu_0| are fused into atoms
MERGE_REL = 1e-12


@dataclass(frozen=True)
class FlowContext:
    """Current measure, optional input and confidence bound for one step.

    ``merge_tol`` should be fixed from the initial support for a whole run;
    when omitted it is derived from the current support.
    """

    part: OpinionPartition
    input: TruncatedGaussianInput | None
    r: float
    merge_tol: float | None = None

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("confidence bound r must be positive")
        if self.merge_tol is None:
            width = self.part.support_width
            object.__setattr__(self, "merge_tol", MERGE_REL * (width if width > 0 else 1.0))

    @property
    def table(self):
        return self.part.table

    def theorem3_applies(self) -> bool:
        """Hypotheses of the order/bi-Lipschitz result for this step.

        The support must be one interval wider than ``2r`` with no atoms, and
        touch or overlap the input support so their union is an interval.
        """
        part = self.part
        if part.support_width <= 2 * self.r or part.has_gaps or np.any(part.atom_mask):
            return False
        if self.input is None:
            return True
        lo, hi = part.support
        a, b = self.input.support
        return a <= hi and lo <= b


def flow_map(ctx: FlowContext, x):
    """Average of measure plus input over ``[x - r, x + r]``."""
    xs = np.asarray(x, dtype=float)
    m0, m1 = ctx.table.window(xs - ctx.r, xs + ctx.r)
    if ctx.input is not None:
        u0, u1 = ctx.input.window_moments(xs - ctx.r, xs + ctx.r)
        m0 = m0 + u0
        m1 = m1 + u1
    floor = DEN_REL * ctx.part.total_mass
    if np.any(m0 < floor):
        bad = np.atleast_1d(xs)[np.atleast_1d(m0 < floor)][0]
        raise DegenerateWindow(f"window around {bad!r} holds no mass")
    out = m1 / m0
    return float(out) if out.ndim == 0 else out


class Transport(NamedTuple):
    """Result of one push-forward together with what the checks saw."""

    part: OpinionPartition
    mapped_edges: np.ndarray  # before fusing
    strictly_increasing: bool  # over cells of positive width
    min_gap: float  # smallest difference of consecutive mapped edges


def transport(ctx: FlowContext) -> Transport:
    """Map every edge through the flow map and carry cell masses along.

    Edges that land within ``merge_tol`` of each other are fused at the
    midpoint of their group, which turns collapsing cells into atoms.
    """
    part = ctx.part.trimmed()
    y = flow_map(FlowContext(part, ctx.input, ctx.r, ctx.merge_tol), part.edges)
    tol = ctx.merge_tol
    d = np.diff(y)
    # prefix-sum cancellation makes the error of a window average grow like
    # eps * total / window_mass; only flag decreases beyond that floor
    floor = _rounding_floor(FlowContext(part, ctx.input, ctx.r, tol), part.edges)
    slack = tol + floor[:-1] + floor[1:]
    if d.size and np.any(d < -slack):
        i = int(np.argmin(d + slack))
        raise MonotonicityViolation(
            f"edges {part.edges[i]!r} < {part.edges[i + 1]!r} mapped to {y[i]!r} > {y[i + 1]!r}"
        )
    positive = part.widths > 0
    strictly = bool(np.all(d[positive] > 0)) if np.any(positive) else True
    min_gap = float(d.min()) if d.size else 0.0

    group = np.concatenate(([0], np.cumsum(d >= tol)))
    starts = np.flatnonzero(np.diff(np.concatenate(([-1], group))))
    if starts.size < y.size:
        lo = np.minimum.reduceat(y, starts)
        hi = np.maximum.reduceat(y, starts)
        fused = (0.5 * (lo + hi))[group]
    else:
        fused = y
    fused = np.maximum.accumulate(fused)
    # masses copied verbatim: conservation is exact
    new = OpinionPartition(fused, part.masses)
    return Transport(new, y, strictly, min_gap)


def _rounding_floor(ctx: FlowContext, x: np.ndarray) -> np.ndarray:
    m0, _ = ctx.table.window(x - ctx.r, x + ctx.r)
    total = ctx.part.total_mass
    if ctx.input is not None:
        m0 = m0 + ctx.input.window_moments(x - ctx.r, x + ctx.r)[0]
        total += ctx.input.weight
    lo, hi = ctx.part.support
    reach = max(abs(lo), abs(hi)) + ctx.r
    return 64 * np.finfo(float).eps * total * reach / m0


def push_forward(ctx: FlowContext) -> OpinionPartition:
    """Next measure: each cell keeps its mass, edges move by the flow map."""
    return transport(ctx).part


class BiLipschitz(NamedTuple):
    low: float
    high: float
    hypothesis_violated: bool

    @property
    def certificate(self) -> float:
        """Smallest ``L >= 1`` consistent with the sampled ratios."""
        if self.low <= 0:
            return float("inf")
        return max(1.0, self.high, 1.0 / self.low)


def _sample_support(part: OpinionPartition, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = part.support
    pts = rng.uniform(lo, hi, size=4 * n)
    idx = np.clip(np.searchsorted(part.edges, pts, side="right") - 1, 0, part.n_cells - 1)
    pts = pts[part.masses[idx] > 0]
    atoms = part.edges[:-1][part.atom_mask]
    pts = np.concatenate((pts[:n], atoms, [lo, hi]))
    return np.unique(pts)


def bilipschitz_estimate(ctx: FlowContext, n_samples: int = 1000, rng_seed: int = 0) -> BiLipschitz:
    """Min and max difference quotients of the flow map over sampled pairs."""
    if n_samples < 2:
        raise ValueError("need at least two samples")
    part = ctx.part.trimmed()
    if not part.support_width > 0:
        raise ValueError("support must have positive width")
    rng = np.random.default_rng(rng_seed)
    x = _sample_support(part, n_samples, rng)
    g = flow_map(ctx, x)
    # neighbouring pairs probe local slopes, random pairs probe long range
    i = rng.integers(0, x.size, size=n_samples)
    j = rng.integers(0, x.size, size=n_samples)
    a = np.concatenate((np.arange(x.size - 1), np.minimum(i, j)))
    b = np.concatenate((np.arange(1, x.size), np.maximum(i, j)))
    keep = b > a
    a, b = a[keep], b[keep]
    dx = x[b] - x[a]
    dg = g[b] - g[a]
    noise = 8 * np.finfo(float).eps * max(abs(part.support[0]), abs(part.support[1]), 1.0)
    dg = np.where(np.abs(dg) <= noise, 0.0, dg)
    ratio = dg / dx
    return BiLipschitz(float(ratio.min()), float(ratio.max()), not ctx.theorem3_applies())
