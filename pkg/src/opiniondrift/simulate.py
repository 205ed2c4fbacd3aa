"""Step loop, trajectory recording, convergence detection and diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import AllAtomic, OpinionDriftError, StepError
from .flow import MERGE_REL, BiLipschitz, FlowContext, bilipschitz_estimate, flow_map, transport
from .inputs import InputSchedule, TruncatedGaussianInput, assumption2_check, schedule_at
from .measure import ClusterSet, OpinionPartition, density_bounds, extract_clusters, integrate, refine

__all__ = [
    "SimulationConfig",
    "StepDiagnostics",
    "Trajectory",
    "step",
    "run",
    "is_converged",
    "clusters_of",
    "consensus_sufficient",
    "weak_star_diagnostic",
    "DEFAULT_TEST_FUNCTIONS",
    "final_weak_star",
    "total_mass_exact",
    "cluster_gap_ok",
]

log = logging.getLogger(__name__)

DEFAULT_TEST_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "z": lambda z: z,
    "z2": lambda z: z * z,
    "sin": np.sin,
}


@dataclass(frozen=True)
class SimulationConfig:
    """Run parameters.

    Tolerances left as ``None`` are resolved against the initial support width
    by :meth:`resolved`: ``eps_cluster = 1e-6 |supp|`` and
    ``eps_consensus = 1e-9 |supp|``. Cells wider than ``refine_factor`` times
    the initial cell width are split before each step; cells lighter than
    ``dust`` (relative to total mass) are neither split nor clustered.
    """

    r: float
    n_cells: int = 4000
    max_steps: int = 10_000
    eps_cluster: float | None = None
    eps_consensus: float | None = None
    record_every: int = 100
    refine_factor: float = 4.0
    dust: float = 1e-12
    check_bilipschitz: bool = False
    bilipschitz_samples: int = 200
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.n_cells < 16:
            raise ValueError("n_cells must be at least 16")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        for name in ("eps_cluster", "eps_consensus"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if not self.refine_factor > 1:
            raise ValueError("refine_factor must exceed 1")
        if not 0 <= self.dust < 1:
            raise ValueError("dust must lie in [0, 1)")

    def resolved(self, support_width: float) -> SimulationConfig:
        """Copy with default tolerances filled in from ``support_width``."""
        return replace(
            self,
            eps_cluster=self.eps_cluster or 1e-6 * support_width,
            eps_consensus=self.eps_consensus or 1e-9 * support_width,
        )


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    support: tuple[float, float]
    support_width: float
    n_cells: int
    rho_min: float | None
    rho_max: float | None
    has_atoms: bool
    input_mean: float | None
    assumption2: bool
    theorem3_applicable: bool
    strictly_increasing: bool
    min_gap: float
    order_ok: bool | None
    lemma4_ok: bool | None
    snap_shift: float
    mass_conserved: bool
    weak_star: dict[str, float]
    bilipschitz: BiLipschitz | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "bilipschitz"}
        d["support"] = list(self.support)
        if self.bilipschitz is not None:
            d["bilipschitz"] = {
                "low": self.bilipschitz.low,
                "high": self.bilipschitz.high,
                "hypothesis_violated": self.bilipschitz.hypothesis_violated,
            }
        return d


@dataclass
class Trajectory:
    """Recorded snapshots plus per-step diagnostics of one run.

    ``snapshots`` holds ``(step, partition)`` pairs at ``record_every``
    intervals plus the first, the last and the one before the last.
    """

    config: SimulationConfig
    snapshots: list[tuple[int, OpinionPartition]] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    reason: str = "running"
    error: str | None = None
    error_step: int | None = None
    clusters: ClusterSet | None = None
    tracers: np.ndarray | None = None
    last_input: TruncatedGaussianInput | None = None
    # first step count at which the clustered state was reached
    converged_at: int | None = None

    @property
    def initial(self) -> OpinionPartition:
        return self.snapshots[0][1]

    @property
    def final(self) -> OpinionPartition:
        return self.snapshots[-1][1]

    @property
    def steps(self) -> int:
        return self.snapshots[-1][0]

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    def summary(self) -> dict:
        return {
            "termination": self.reason,
            "steps": self.steps,
            "error": self.error,
            "error_step": self.error_step,
            "converged_at": self.converged_at,
            "total_mass": self.final.total_mass,
            "clusters": self.clusters.to_list() if self.clusters is not None else [],
            "residual_mass": self.clusters.residual_mass if self.clusters is not None else None,
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


def _scale(part: OpinionPartition) -> float:
    w = part.support_width
    return w if w > 0 else 1.0


def step(
    part: OpinionPartition,
    cfg: SimulationConfig,
    sched: InputSchedule,
    t: int,
    scale: float | None = None,
    tracers: np.ndarray | None = None,
):
    """Advance ``part`` by one push-forward.

    ``scale`` is the initial support width (sets merge and refinement
    lengths); it defaults to the current width. Returns the new partition,
    the step diagnostics and, if given, the moved ``tracers``.
    """
    part = part.trimmed()
    scale = scale or _scale(part)
    u = schedule_at(sched, t, part.support)
    fine = refine(part, cfg.refine_factor * scale / cfg.n_cells, cfg.dust)
    ctx = FlowContext(fine, u, cfg.r, MERGE_REL * scale)
    applicable = ctx.theorem3_applies()
    a2 = assumption2_check(u, part)
    moved = transport(ctx)
    new = moved.part.trimmed()

    try:
        rho_min, rho_max, has_atoms = density_bounds(new)
    except AllAtomic:
        rho_min = rho_max = None
        has_atoms = True

    # support check on the exact push-forward, before merge snapping; only
    # meaningful while the measure has no atoms
    y = moved.mapped_edges
    edges_ok = None
    if a2 and part.support_width > 2 * cfg.r and not np.any(fine.atom_mask):
        lo, hi = part.support
        tol = 1e-12 * scale
        mapped = abs(y.min() - y[0]) <= tol and abs(y.max() - y[-1]) <= tol
        shrunk = lo <= y[0] and y[-1] <= hi and (lo < y[0] or y[-1] < hi)
        edges_ok = bool(mapped and shrunk)
    snap = float(max(abs(new.support[0] - y[0]), abs(new.support[1] - y[-1])))

    # cells correspond one to one across the transport, so difference per cell
    before, after = fine.trimmed().midpoints, moved.part.midpoints
    weak = {
        name: abs(float(np.dot(fine.trimmed().masses, fn(after) - fn(before))))
        for name, fn in DEFAULT_TEST_FUNCTIONS.items()
    }
    bl = None
    if cfg.check_bilipschitz and applicable:
        bl = bilipschitz_estimate(ctx, cfg.bilipschitz_samples, cfg.rng_seed + t)
    diag = StepDiagnostics(
        step=t,
        support=new.support,
        support_width=new.support_width,
        n_cells=new.n_cells,
        rho_min=rho_min,
        rho_max=rho_max,
        has_atoms=has_atoms,
        input_mean=u.mean if u is not None else None,
        assumption2=a2,
        theorem3_applicable=applicable,
        strictly_increasing=moved.strictly_increasing,
        min_gap=moved.min_gap,
        order_ok=moved.strictly_increasing if applicable else None,
        lemma4_ok=edges_ok,
        snap_shift=snap,
        mass_conserved=new.total_mass == part.total_mass,
        weak_star=weak,
        bilipschitz=bl,
    )
    if not a2:
        log.debug("step %d: input support %s leaves the population support %s", t, u.support, part.support)
    if tracers is not None:
        tracers = flow_map(ctx, tracers)
    return new, diag, tracers, u


def clusters_of(part: OpinionPartition, cfg: SimulationConfig) -> ClusterSet:
    eps = cfg.eps_cluster or 1e-6 * _scale(part)
    return extract_clusters(part, eps, cfg.r, cfg.dust)


def is_converged(part: OpinionPartition, cfg: SimulationConfig) -> bool:
    """Clusters narrower than ``eps_cluster`` and pairwise more than ``r`` apart."""
    return clusters_of(part, cfg).converged


def _schedule_fixed(sched: InputSchedule, t: int) -> bool:
    # a later phase could still move a clustered state
    return sched.kind != "phased" or len(sched.phases) == 1 or t > sched.phases[-2].until_step


def _input_settled(cs: ClusterSet, u: TruncatedGaussianInput | None, cfg) -> bool:
    # a cluster that sees the input but is not at its mean keeps moving toward it
    if u is None or len(cs) == 0:
        return True
    a, b = u.support
    at_mean = np.abs(cs.positions - u.mean) <= cfg.eps_cluster
    sees = (cs.positions - cfg.r <= b) & (cs.positions + cfg.r >= a)
    return bool(np.all(at_mean | ~sees))


def run(
    mu0: OpinionPartition,
    cfg: SimulationConfig,
    sched: InputSchedule | None = None,
    tracers=None,
    stop_on_convergence: bool = True,
) -> Trajectory:
    """Iterate :func:`step` until converged, the step limit, or the schedule horizon.

    ``tracers`` are opinions in ``supp mu0`` whose images are carried along
    (used to read off attraction basins). Errors end the run with reason
    ``error``; the failing step index is kept on the trajectory.
    """
    sched = sched or InputSchedule.none()
    mu0 = mu0.trimmed()
    scale = _scale(mu0)
    cfg = cfg.resolved(scale)
    traj = Trajectory(cfg)
    traj.snapshots.append((0, mu0))
    tr = None if tracers is None else np.asarray(tracers, dtype=float)
    horizon = sched.horizon
    limit = cfg.max_steps if horizon is None else min(cfg.max_steps, horizon)
    part = mu0
    prev: tuple[int, OpinionPartition] | None = None
    u = None
    traj.reason = "max_steps"
    clustered = False
    for t in range(limit):
        try:
            new, diag, tr, u = step(part, cfg, sched, t, scale, tr)
        except OpinionDriftError as exc:
            traj.reason = "error"
            traj.error = str(StepError(t, exc))
            traj.error_step = t
            log.warning("run stopped: %s", traj.error)
            break
        traj.diagnostics.append(diag)
        prev = (t, part)
        part = new
        if (t + 1) % cfg.record_every == 0:
            traj.snapshots.append((t + 1, part))
        if stop_on_convergence:
            cs = clusters_of(part, cfg)
            done = (
                cs.converged
                and _schedule_fixed(sched, t + 1)
                and _input_settled(cs, schedule_at(sched, t, part.support), cfg)
            )
            # stop only after a full step taken from a clustered state, so the
            # last recorded deltas describe the fixed point and not a merge
            if done and clustered:
                traj.reason = "converged"
                break
            clustered = done
            traj.converged_at = t + 1 if done else None
    else:
        if horizon is not None and limit == horizon:
            traj.reason = "horizon"
    if prev is not None:
        recorded = {s for s, _ in traj.snapshots}
        extra = [snap for snap in (prev, (prev[0] + 1, part)) if snap[0] not in recorded]
        traj.snapshots = sorted(traj.snapshots + extra, key=lambda snap: snap[0])
    traj.clusters = clusters_of(part, cfg)
    traj.tracers = tr
    traj.last_input = u
    return traj


def consensus_sufficient(mu0: OpinionPartition, sched: InputSchedule | None, r: float) -> bool:
    """Sufficient condition for finite-time consensus.

    Requires ``|supp mu0| < 2r``, ``mu0`` mirror symmetric about its support
    center, and every scheduled input centered there with support inside
    ``supp mu0``.
    """
    mu0 = mu0.trimmed()
    if not mu0.support_width < 2 * r:
        return False
    lo, hi = mu0.support
    center = 0.5 * (lo + hi)
    if not mu0.is_symmetric(center, 1e-12):
        return False
    sched = sched or InputSchedule.none()
    if sched.kind == "none":
        return True
    inputs = [sched.constant] if sched.kind == "constant" else list(sched.phases)
    tol = 1e-12 * max(mu0.support_width, 1.0)
    for item in inputs:
        if getattr(item, "tracking_range", None) is not None:
            # tracking means move with x_min(t); not a fixed symmetric input
            return False
        mean = item.mean
        half = 3.0 * item.sigma
        if abs(mean - center) > tol or mean - half < lo or mean + half > hi:
            return False
    return True


def weak_star_diagnostic(
    traj: Trajectory, test_fns: Mapping[str, Callable] | Sequence[Callable] | None = None
) -> dict[str, np.ndarray]:
    """``|int eta d mu_next - int eta d mu|`` between consecutive recorded snapshots."""
    fns = DEFAULT_TEST_FUNCTIONS if test_fns is None else test_fns
    if not isinstance(fns, Mapping):
        fns = {getattr(f, "__name__", f"eta{i}"): f for i, f in enumerate(fns)}
    if not fns:
        raise ValueError("need at least one test function")
    out = {}
    for name, fn in fns.items():
        vals = np.array([integrate(p, fn) for _, p in traj.snapshots])
        out[name] = np.abs(np.diff(vals))
    return out


def final_weak_star(traj: Trajectory) -> float:
    """Largest default test-function delta at the last step."""
    if not traj.diagnostics:
        return 0.0
    return max(traj.diagnostics[-1].weak_star.values())


def total_mass_exact(traj: Trajectory) -> bool:
    m = traj.initial.total_mass
    return all(p.total_mass == m for _, p in traj.snapshots) and all(
        d.mass_conserved for d in traj.diagnostics
    )


def cluster_gap_ok(cs: ClusterSet, r: float) -> bool:
    return bool(np.all(np.diff(cs.positions) > r)) if len(cs) > 1 else True
