"""Finite-agent bounded-confidence model used to cross-check the mass engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConverged
from .inputs import InputSchedule, TruncatedGaussianInput, schedule_at
from .measure import OpinionPartition

__all__ = ["AgentPopulation", "AgentRun", "sample_agents", "agent_step", "agent_run", "cluster_agents"]


@dataclass(frozen=True)
class AgentPopulation:
    """Sorted agent opinions, each carrying the same mass."""

    opinions: np.ndarray
    mass: float

    def __post_init__(self) -> None:
        x = np.array(self.opinions, dtype=float)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("need at least one agent")
        if not self.mass > 0:
            raise ValueError("agent mass must be positive")
        x.sort()
        x.setflags(write=False)
        object.__setattr__(self, "opinions", x)

    @property
    def n(self) -> int:
        return self.opinions.size

    @property
    def total_mass(self) -> float:
        return self.n * self.mass

    @property
    def support(self) -> tuple[float, float]:
        return float(self.opinions[0]), float(self.opinions[-1])


def sample_agents(part: OpinionPartition, n: int) -> AgentPopulation:
    """Place agent ``i`` at the ``(i - 1/2)/n`` mass quantile of ``part``."""
    if int(n) != n or n < 1:
        raise ValueError("need a positive number of agents")
    n = int(n)
    total = part.total_mass
    targets = (np.arange(n) + 0.5) / n * total
    cum = part.table.mass
    # first cell whose cumulative mass reaches the target
    k = np.clip(np.searchsorted(cum, targets, side="left") - 1, 0, part.n_cells - 1)
    # skip zero-mass cells that share the cumulative value
    while True:
        empty = part.masses[k] == 0
        if not np.any(empty):
            break
        k = np.where(empty, np.minimum(k + 1, part.n_cells - 1), k)
    frac = (targets - cum[k]) / part.masses[k]
    left = part.edges[k]
    x = left + np.clip(frac, 0.0, 1.0) * (part.edges[k + 1] - left)
    return AgentPopulation(x, total / n)


def agent_step(pop: AgentPopulation, u: TruncatedGaussianInput | None, r: float) -> AgentPopulation:
    """Synchronous update: each agent moves to its window average plus input."""
    x = pop.opinions
    lo = np.searchsorted(x, x - r, side="left")
    hi = np.searchsorted(x, x + r, side="right")
    csum = np.concatenate(([0.0], np.cumsum(x)))
    m0 = pop.mass * (hi - lo)
    m1 = pop.mass * (csum[hi] - csum[lo])
    if u is not None:
        u0, u1 = u.window_moments(x - r, x + r)
        m0 = m0 + u0
        m1 = m1 + u1
    return AgentPopulation(m1 / m0, pop.mass)


def cluster_agents(pop: AgentPopulation, gap: float) -> tuple[np.ndarray, np.ndarray]:
    """Split sorted agents wherever neighbours are more than ``gap`` apart."""
    x = pop.opinions
    breaks = np.flatnonzero(np.diff(x) > gap) + 1
    starts = np.concatenate(([0], breaks))
    counts = np.diff(np.concatenate((starts, [x.size])))
    positions = np.add.reduceat(x, starts) / counts
    return positions, counts * pop.mass


@dataclass(frozen=True)
class AgentRun:
    population: AgentPopulation
    steps: int
    positions: np.ndarray
    masses: np.ndarray


def agent_run(
    pop: AgentPopulation,
    sched: InputSchedule | None,
    r: float,
    max_steps: int = 10_000,
    tol: float = 1e-12,
) -> AgentRun:
    """Iterate until no agent moves more than ``tol``, then cluster by ``r``.

    A phased schedule stops the run at its horizon instead.
    """
    sched = sched or InputSchedule.none()
    horizon = sched.horizon
    limit = max_steps if horizon is None else min(max_steps, horizon)
    for t in range(limit):
        u = schedule_at(sched, t, pop.support)
        nxt = agent_step(pop, u, r)
        moved = float(np.max(np.abs(nxt.opinions - pop.opinions)))
        pop = nxt
        if moved < tol or t + 1 == horizon:
            positions, masses = cluster_agents(pop, r)
            return AgentRun(pop, t + 1, positions, masses)
    raise NotConverged(f"agents still moving after {max_steps} steps")

