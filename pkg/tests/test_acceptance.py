"""Acceptance checks, one per criterion.

Each test prints a single PASS/FAIL line with the measured values (visible
with ``pytest -s`` or in the ``-v`` log) and then asserts the same condition.
"""

import time

import numpy as np
import pytest

from opiniondrift.analysis import compare_strategies, sweep, sweep_fit
from opiniondrift.flow import MERGE_REL
from opiniondrift.inputs import InputSchedule
from opiniondrift.measure import OpinionPartition, from_uniform, lemma1_bounds, window_moments
from opiniondrift.oracle import agent_run, sample_agents
from opiniondrift.simulate import SimulationConfig, cluster_gap_ok, final_weak_star, run, total_mass_exact

N_CELLS = 4000


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")


@pytest.fixture(scope="module")
def benchmark():
    t0 = time.perf_counter()
    traj = run(from_uniform(-1, 1, 1, N_CELLS), SimulationConfig(r=0.1, n_cells=N_CELLS, check_bilipschitz=True))
    return traj, time.perf_counter() - t0


@pytest.fixture(scope="module")
def strategies():
    t0 = time.perf_counter()
    rep = compare_strategies(
        from_uniform(-1, 1, 1, N_CELLS),
        SimulationConfig(r=0.3, n_cells=N_CELLS),
        InputSchedule.direct(0.2, 0.1, 25),
        InputSchedule.distracting(-0.2, 0.2, 0.1, 25, 0.5),
    )
    return rep, (time.perf_counter() - t0) / 2


def test_criterion_1_strategy_comparison(capsys, strategies):
    rep, per_arm = strategies
    arms = {a.name: a for a in rep.arms}
    direct, distracting = arms["direct"].attracted, arms["distracting"].attracted
    checks = {
        "direct": abs(direct - 0.6525) <= 0.02,
        "distracting": abs(distracting - 0.8675) <= 0.02,
        "ordering": distracting > direct,
        "runtime": per_arm < 30,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    report(
        capsys,
        "criterion 1 direct vs distracting",
        ok,
        f"direct={direct:.4f} (0.6525+-0.02) distracting={distracting:.4f} (0.8675+-0.02) "
        f"{per_arm:.1f}s/arm" + (f" failed={failed}" if failed else ""),
    )
    assert ok, failed


def test_criterion_2_consensus(capsys):
    t0 = time.perf_counter()
    wide = run(from_uniform(-0.4, 0.4, 1, N_CELLS), SimulationConfig(r=0.5, n_cells=N_CELLS))
    narrow = run(from_uniform(-0.2, 0.2, 1, N_CELLS), SimulationConfig(r=0.5, n_cells=N_CELLS))
    elapsed = time.perf_counter() - t0
    pos = wide.clusters.positions
    ok = (
        wide.converged
        and wide.steps <= 50
        and pos.size == 1
        and abs(pos[0]) <= 1e-9
        and narrow.converged_at == 1
        and len(narrow.clusters) == 1
        and elapsed < 1
    )
    report(
        capsys,
        "criterion 2 consensus",
        ok,
        f"clusters={pos.tolist()} steps={wide.steps} collapse_step={narrow.converged_at} {elapsed:.2f}s",
    )
    assert ok


def test_criterion_3_clustering_benchmark(capsys, benchmark):
    traj, elapsed = benchmark
    fine = run(from_uniform(-1, 1, 1, 2 * N_CELLS), SimulationConfig(r=0.1, n_cells=2 * N_CELLS))
    coarse_width = 2.0 / N_CELLS
    same_count = len(fine.clusters) == len(traj.clusters)
    shift = float(np.max(np.abs(fine.clusters.positions - traj.clusters.positions))) if same_count else np.inf
    weak = final_weak_star(traj)
    ok = (
        traj.converged
        and cluster_gap_ok(traj.clusters, 0.1)
        and weak < 1e-8
        and shift <= 10 * coarse_width
        and elapsed < 60
    )
    report(
        capsys,
        "criterion 3 clustering benchmark",
        ok,
        f"{len(traj.clusters)} clusters min_gap={np.diff(traj.clusters.positions).min():.4f} "
        f"weak*={weak:.2e} doubling_shift={shift:.2e} (<= {10 * coarse_width:.3f}) {elapsed:.1f}s",
    )
    assert ok


def test_criterion_4_range_sweep(capsys):
    cfg = SimulationConfig(r=0.1, n_cells=N_CELLS)
    t0 = time.perf_counter()
    by_sigma = sweep([(round(0.01 * i, 2), 0.1) for i in range(1, 18)], cfg, jobs=4)
    by_r = sweep([(0.04, round(0.03 * i, 2)) for i in range(1, 16)], cfg, jobs=4)
    elapsed = time.perf_counter() - t0
    fs, fr = sweep_fit(by_sigma, 2.0), sweep_fit(by_r, 2.0)
    ok = fs.a > 0 and fs.r_squared >= 0.95 and fr.b > 0 and fr.r_squared >= 0.95 and elapsed < 600
    report(
        capsys,
        "criterion 4 range sweep",
        ok,
        f"a={fs.a:.3f} R2={fs.r_squared:.4f} (n={fs.n_points}); "
        f"b={fr.b:.3f} R2={fr.r_squared:.4f} (n={fr.n_points}) {elapsed:.0f}s",
    )
    assert ok


def _window_cases(n, seed=2024):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(1, 40))
        edges = np.cumsum(np.concatenate(([rng.uniform(-1, 1)], rng.uniform(0.01, 0.3, k))))
        rho = rng.uniform(0.05, 5.0, k)
        a, b = np.sort(rng.uniform(edges[0], edges[-1], 2))
        yield OpinionPartition(edges, rho * np.diff(edges)), rho, a, b


def test_criterion_5_invariants(capsys, benchmark, strategies):
    traj, _ = benchmark
    runs = [traj] + [arm.trajectory for arm in strategies[0].arms]
    mass_ok = all(total_mass_exact(t) for t in runs)

    # edge order wherever the current support is wider than 2r and the input sits inside it:
    # never reversed by more than the merge length, strictly increasing while there are no atoms
    order_ok, order_checked = True, 0
    for t in runs:
        merge = MERGE_REL * t.initial.support_width
        width, atoms = t.initial.support_width, False
        for d in t.diagnostics:
            if width > 2 * t.config.r and d.assumption2:
                order_checked += 1
                order_ok &= d.min_gap >= -merge and (atoms or d.strictly_increasing)
            width, atoms = d.support_width, d.has_atoms

    cases = inside = 0
    for part, rho, a, b in _window_cases(10_000):
        if b - a <= 1e-9 * (part.support_width):
            continue
        m, z = window_moments(part, a, b)
        lo, hi = lemma1_bounds(a, b, rho.min(), rho.max())
        avg = z / m
        cases += 1
        inside += lo - 1e-12 <= avg <= hi + 1e-12 and a < avg < b

    edge_flags = [d.lemma4_ok for t in runs for d in t.diagnostics if d.lemma4_ok is not None]
    lows = [d.bilipschitz.low for d in traj.diagnostics if d.theorem3_applicable]
    ok = (
        mass_ok
        and order_ok
        and order_checked > 0
        and inside == cases
        and all(edge_flags)
        and len(edge_flags) > 0
        and len(lows) > 0
        and min(lows) > 0
    )
    report(
        capsys,
        "criterion 5 invariants",
        ok,
        f"mass_exact={mass_ok} order={order_ok} ({order_checked} steps) "
        f"window_bounds={inside}/{cases} support_map={sum(edge_flags)}/{len(edge_flags)} "
        f"L_low_min={min(lows) if lows else float('nan'):.2e} over {len(lows)} steps",
    )
    assert ok


def test_criterion_6_agent_oracle(capsys, benchmark):
    traj, _ = benchmark
    t0 = time.perf_counter()
    res = agent_run(sample_agents(from_uniform(-1, 1, 1, N_CELLS), 20000), None, 0.1)
    elapsed = time.perf_counter() - t0
    cs = traj.clusters
    same = res.positions.size == len(cs)
    dpos = float(np.max(np.abs(res.positions - cs.positions))) if same else np.inf
    dmass = float(np.max(np.abs(res.masses - cs.masses))) if same else np.inf
    ok = same and dpos <= 0.01 and dmass <= 0.02 and elapsed < 120
    report(
        capsys,
        "criterion 6 agent oracle",
        ok,
        f"agents={res.positions.size} clusters vs cells={len(cs)} clusters "
        f"dpos={dpos:.2e} dmass={dmass:.2e} {elapsed:.1f}s",
    )
    assert ok
