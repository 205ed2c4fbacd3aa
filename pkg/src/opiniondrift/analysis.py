"""Attraction ranges, the linear sweep fit and strategy comparison."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientPoints, NoBasin, NotConverged
from .inputs import InputSchedule, TruncatedGaussianInput, make_truncated_gaussian
from .measure import OpinionPartition, from_uniform, window_moments
from .simulate import SimulationConfig, Trajectory, clusters_of, run

__all__ = [
    "AttractionRangeResult",
    "LinearFit",
    "SweepPoint",
    "StrategyArm",
    "StrategyReport",
    "attraction_range",
    "sweep",
    "sweep_fit",
    "fit_linear",
    "positive_mass",
    "attracted_mass",
    "eventual_attraction",
    "compare_strategies",
    "sweep_csv",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class AttractionRangeResult:
    y: float
    z: float
    attracted_mass: float
    converged_center: float
    tol_used: float
    steps: int
    resolution: float

    @property
    def length(self) -> float:
        return self.z - self.y

    @property
    def interval(self) -> tuple[float, float]:
        return self.y, self.z


def _basin(x0: np.ndarray, final: np.ndarray, center: float, tol: float) -> tuple[int, int]:
    near = np.abs(final - center) <= tol
    if not np.any(near):
        raise NoBasin(f"no initial opinion ends within {tol:g} of {center:g}")
    # contiguous run of attracted edges around the one that starts nearest the center
    idx = np.flatnonzero(near)
    seed = idx[np.argmin(np.abs(x0[idx] - center))]
    lo = hi = seed
    while lo > 0 and near[lo - 1]:
        lo -= 1
    while hi < near.size - 1 and near[hi + 1]:
        hi += 1
    return int(lo), int(hi)


def _refine_around(part: OpinionPartition, points: Sequence[float], k: int) -> OpinionPartition:
    """Split the cells holding ``points`` (and their neighbours) into ``2**k`` pieces."""
    edges, masses = part.edges, part.masses
    pieces = np.ones(part.n_cells, dtype=np.int64)
    for p in points:
        j = int(np.clip(np.searchsorted(edges, p, side="right") - 1, 0, part.n_cells - 1))
        pieces[max(j - 1, 0) : j + 2] = 2**k
    cell = np.repeat(np.arange(part.n_cells), pieces)
    offset = np.arange(cell.size) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    widths = np.diff(edges)
    new_edges = np.concatenate((edges[:-1][cell] + offset / pieces[cell] * widths[cell], edges[-1:]))
    return OpinionPartition(new_edges, masses[cell] / pieces[cell])


def attraction_range(
    mu0: OpinionPartition,
    u: TruncatedGaussianInput,
    cfg: SimulationConfig,
    tol: float | None = None,
    refine_levels: int = 0,
) -> AttractionRangeResult:
    """Interval of initial opinions that end at the input center.

    Runs the constant-input system to convergence while transporting every
    initial edge. The basin is the contiguous block of edges whose final
    position is within ``tol`` of the center (default ``10 * eps_cluster``).
    With ``refine_levels > 0`` the run is repeated with the cells around the
    basin boundary split into ``2**refine_levels`` pieces.
    """
    lo, hi = mu0.support
    if not lo <= u.mean <= hi:
        raise ValueError("input center must lie in the initial support")
    cfg = cfg.resolved(mu0.support_width)
    tol = 10 * cfg.eps_cluster if tol is None else tol
    sched = InputSchedule.constant_input(u)
    part = mu0.trimmed()
    while True:
        traj = run(part, cfg, sched, tracers=part.edges)
        if traj.reason == "error":
            raise NotConverged(traj.error)
        if not traj.converged:
            raise NotConverged(f"no clustered state within {cfg.max_steps} steps")
        i, j = _basin(part.edges, traj.tracers, u.mean, tol)
        if refine_levels <= 0:
            break
        part = _refine_around(part, [part.edges[i], part.edges[j]], refine_levels)
        refine_levels = 0
    y, z = float(part.edges[i]), float(part.edges[j])
    mass = window_moments(mu0, y, z)[0]
    center = float(np.mean(traj.tracers[i : j + 1]))
    resolution = float(max(np.diff(part.edges)[max(i - 1, 0) : i + 1].max(), np.diff(part.edges)[j - 1 : j + 1].max()))
    return AttractionRangeResult(y, z, mass, center, tol, traj.steps, resolution)


@dataclass(frozen=True)
class LinearFit:
    """Least-squares fit of ``length = a*sigma + b*r + c``.

    A coefficient is ``None`` when its variable is constant over the points.
    """

    a: float | None
    b: float | None
    c: float
    r_squared: float
    n_points: int
    filtered_out: int
    domain: dict = field(default_factory=dict)

    def predict(self, sigma, r):
        return (self.a or 0.0) * np.asarray(sigma) + (self.b or 0.0) * np.asarray(r) + self.c

    def to_dict(self) -> dict:
        return asdict(self)


def fit_linear(sigma, r, length, filtered_out: int = 0) -> LinearFit:
    sigma = np.asarray(sigma, dtype=float)
    r = np.asarray(r, dtype=float)
    length = np.asarray(length, dtype=float)
    if length.size < 3:
        raise InsufficientPoints(f"need at least 3 points, have {length.size}")
    cols, names = [], []
    for name, v in (("a", sigma), ("b", r)):
        if np.ptp(v) > 0:
            cols.append(v)
            names.append(name)
    if not cols:
        raise InsufficientPoints("sigma and r are both constant")
    design = np.column_stack(cols + [np.ones_like(length)])
    coef, *_ = np.linalg.lstsq(design, length, rcond=None)
    resid = length - design @ coef
    ss_tot = float(np.sum((length - length.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    fitted = dict(zip(names, map(float, coef[:-1])))
    domain = {
        "sigma": [float(sigma.min()), float(sigma.max())],
        "r": [float(r.min()), float(r.max())],
    }
    return LinearFit(fitted.get("a"), fitted.get("b"), float(coef[-1]), float(min(max(r2, 0.0), 1.0)), int(length.size), filtered_out, domain)


@dataclass(frozen=True)
class SweepPoint:
    sigma: float
    r: float
    range_length: float
    attracted_mass: float
    converged: bool


def _sweep_one(args) -> SweepPoint:
    x0, sigma, r, cfg, tol, levels = args
    mu0 = from_uniform(-x0, x0, 1.0, cfg.n_cells)
    try:
        res = attraction_range(mu0, make_truncated_gaussian(0.0, sigma), replace(cfg, r=r), tol, levels)
    except (NotConverged, NoBasin):
        return SweepPoint(sigma, r, math.nan, math.nan, False)
    return SweepPoint(sigma, r, res.length, res.attracted_mass, True)


def sweep(
    grid: Iterable[tuple[float, float]],
    cfg: SimulationConfig,
    x0: float = 1.0,
    tol: float | None = None,
    refine_levels: int = 0,
    jobs: int = 1,
) -> list[SweepPoint]:
    """Attraction-range length for each ``(sigma, r)`` with ``mu0 = U(-x0, x0)``."""
    tasks = [(x0, float(s), float(r), cfg, tol, refine_levels) for s, r in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, tasks))
    return [_sweep_one(t) for t in tasks]


def sweep_fit(points: Sequence[SweepPoint], support_width: float, keep_below: float = 0.6) -> LinearFit:
    """OLS over converged points with ``length < keep_below * support_width``."""
    kept = [
        p
        for p in points
        if p.converged and math.isfinite(p.range_length) and p.range_length < keep_below * support_width
    ]
    fit = fit_linear(
        [p.sigma for p in kept], [p.r for p in kept], [p.range_length for p in kept], len(points) - len(kept)
    )
    return fit


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma", "r", "range_length", "attracted_mass", "converged"])
    for p in points:
        w.writerow([repr(p.sigma), repr(p.r), repr(p.range_length), repr(p.attracted_mass), str(p.converged).lower()])
    return buf.getvalue()


def write_sweep_csv(points: Sequence[SweepPoint], path: str | Path) -> None:
    Path(path).write_text(sweep_csv(points), encoding="utf-8", newline="")


def positive_mass(part: OpinionPartition) -> float:
    """Population mass holding opinions in ``[0, 1]``."""
    return window_moments(part, 0.0, 1.0)[0]


def attracted_mass(part: OpinionPartition, center: float, tol: float) -> float:
    """Mass within ``tol`` of ``center``."""
    return window_moments(part, center - tol, center + tol)[0]


@dataclass
class StrategyArm:
    name: str
    objective: float
    attracted_at_horizon: float
    attracted: float
    final_mean: float | None
    trajectory: Trajectory
    settled: Trajectory | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "objective": self.objective,
            "attracted_at_horizon": self.attracted_at_horizon,
            "attracted": self.attracted,
            "final_mean": self.final_mean,
            "termination": self.trajectory.reason,
            "settle_termination": self.settled.reason if self.settled is not None else None,
        }


@dataclass
class StrategyReport:
    arms: list[StrategyArm]

    @property
    def winner(self) -> str:
        best = max(a.objective for a in self.arms)
        leaders = [a.name for a in self.arms if a.objective == best]
        return leaders[0] if len(leaders) == 1 else "tie"

    @property
    def winner_by_attraction(self) -> str:
        best = max(a.attracted for a in self.arms)
        leaders = [a.name for a in self.arms if a.attracted == best]
        return leaders[0] if len(leaders) == 1 else "tie"

    def arm(self, name: str) -> StrategyArm:
        return next(a for a in self.arms if a.name == name)

    def to_dict(self) -> dict:
        return {
            "arms": [a.to_dict() for a in self.arms],
            "winner": self.winner,
            "winner_by_attraction": self.winner_by_attraction,
        }


def _run_arm(name: str, mu0: OpinionPartition, cfg: SimulationConfig, sched: InputSchedule) -> StrategyArm:
    cfg = cfg.resolved(mu0.support_width)
    traj = run(mu0, cfg, sched, stop_on_convergence=False)
    if traj.reason == "error":
        raise NotConverged(f"{name} arm failed: {traj.error}")
    final = traj.final
    u = traj.last_input
    at_t = attracted_mass(final, u.mean, cfg.eps_consensus) if u is not None else 0.0
    attracted, settled = eventual_attraction(final, u, cfg) if u is not None else (0.0, None)
    return StrategyArm(name, positive_mass(final), at_t, attracted, u.mean if u else None, traj, settled)


def eventual_attraction(
    part: OpinionPartition, u: TruncatedGaussianInput, cfg: SimulationConfig
) -> tuple[float, Trajectory]:
    """Mass that ends at ``u.mean`` if ``u`` keeps being broadcast from ``part``.

    Counts mass within ``10 * eps_cluster`` of the mean once the continued run
    has converged; also returns that continuation.
    """
    cfg = cfg.resolved(part.support_width) if cfg.eps_cluster is None else cfg
    settled = run(part, cfg, InputSchedule.constant_input(u))
    return attracted_mass(settled.final, u.mean, 10 * cfg.eps_cluster), settled


def compare_strategies(
    mu0: OpinionPartition,
    cfg: SimulationConfig,
    direct: InputSchedule,
    distracting: InputSchedule,
) -> StrategyReport:
    """Run both schedules to their common horizon and score them.

    The objective is the mass in ``[0, 1]`` at the horizon. ``attracted`` is
    the mass that ends at the final input mean once that input is held fixed
    until convergence; ``attracted_at_horizon`` counts only mass already
    within ``eps_consensus`` of it at the horizon.
    """
    for s in (direct, distracting):
        if s.kind != "phased":
            raise ValueError("strategies must be phased schedules with a horizon")
    if direct.horizon != distracting.horizon:
        raise ValueError("both strategies need the same horizon")
    sigmas = {p.sigma for s in (direct, distracting) for p in s.phases}
    if len(sigmas) != 1:
        raise ValueError("both strategies must share one sigma")
    sigma = sigmas.pop()
    if not sigma < mu0.support_width / 12:
        raise ValueError("sigma must be below |supp mu0| / 12")
    return StrategyReport(
        [_run_arm("direct", mu0, cfg, direct), _run_arm("distracting", mu0, cfg, distracting)]
    )


def dumps_fit(fit: LinearFit) -> str:
    return json.dumps(fit.to_dict(), indent=2, sort_keys=True)
