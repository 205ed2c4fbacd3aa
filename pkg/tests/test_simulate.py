import numpy as np
import pytest

from opiniondrift.errors import HorizonExceeded
from opiniondrift.inputs import InputSchedule, make_truncated_gaussian
from opiniondrift.measure import from_atoms, from_uniform
from opiniondrift.simulate import (
    SimulationConfig,
    consensus_sufficient,
    is_converged,
    run,
    step,
    total_mass_exact,
    weak_star_diagnostic,
)

NONE = InputSchedule.none()


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(r=0)
    with pytest.raises(ValueError):
        SimulationConfig(r=0.1, n_cells=4)
    cfg = SimulationConfig(r=0.1).resolved(2.0)
    assert cfg.eps_cluster == pytest.approx(2e-6)
    assert cfg.eps_consensus == pytest.approx(2e-9)


def test_step_uniform_support():
    new, diag, _, u = step(from_uniform(-1, 1, 1, 2000), SimulationConfig(r=0.1, n_cells=2000), NONE, 0)
    assert new.support == pytest.approx((-0.95, 0.95), abs=1e-12)
    assert u is None
    assert diag.mass_conserved
    assert diag.lemma4_ok
    assert diag.order_ok


def test_step_single_atom_fixed():
    p = from_atoms([0.25], [1.0])
    new, diag, _, _ = step(p, SimulationConfig(r=0.1), NONE, 0)
    assert new.support == (0.25, 0.25)
    assert diag.rho_min is None


def test_step_tiny_input_close_to_none():
    p = from_uniform(-1, 1, 1, 1000)
    cfg = SimulationConfig(r=0.1, n_cells=1000)
    a = step(p, cfg, NONE, 0)[0]
    b = step(p, cfg, InputSchedule.constant_input(make_truncated_gaussian(0.1, 0.05, 1e-9)), 0)[0]
    assert a.support == pytest.approx(b.support, abs=1e-6)


def test_step_past_horizon():
    with pytest.raises(HorizonExceeded):
        step(from_uniform(-1, 1), SimulationConfig(r=0.1), InputSchedule.direct(0.2, 0.1, 5), 6)


def test_narrow_support_collapses_in_one_step():
    tr = run(from_uniform(-0.2, 0.2, 1, 1000), SimulationConfig(r=0.5, n_cells=1000))
    assert tr.converged
    assert tr.converged_at == 1
    after_one = dict(tr.snapshots)[1]
    assert after_one.support == pytest.approx((0.0, 0.0), abs=1e-15)


def test_symmetric_consensus():
    tr = run(from_uniform(-0.4, 0.4, 1, 2000), SimulationConfig(r=0.5, n_cells=2000))
    assert tr.converged
    assert len(tr.clusters) == 1
    assert abs(tr.clusters.positions[0]) <= 1e-9


def test_uniform_benchmark_clusters():
    tr = run(from_uniform(-1, 1, 1, 1000), SimulationConfig(r=0.1, n_cells=1000))
    assert tr.converged
    assert len(tr.clusters) >= 2
    assert np.all(np.diff(tr.clusters.positions) > 0.1)
    assert total_mass_exact(tr)


def test_symmetry_propagates():
    cfg = SimulationConfig(r=0.15, n_cells=1000)
    u = InputSchedule.constant_input(make_truncated_gaussian(0.0, 0.05))
    p = from_uniform(-1, 1, 1, 1000)
    for t in range(15):
        p = step(p, cfg, u, t, 2.0)[0]
        assert p.is_symmetric(0.0, tol=1e-10)


def test_max_steps_reason():
    tr = run(from_uniform(-1, 1, 1, 500), SimulationConfig(r=0.1, n_cells=500, max_steps=5))
    assert tr.reason == "max_steps"
    assert tr.steps == 5


def test_horizon_reason_and_input_record():
    tr = run(from_uniform(-1, 1, 1, 500), SimulationConfig(r=0.3, n_cells=500), InputSchedule.direct(0.2, 0.1, 4))
    assert tr.reason in ("horizon", "converged")
    assert tr.last_input.mean == 0.2


def test_phased_run_does_not_stop_before_last_phase():
    # the first phase clusters everything quickly; the run must still reach the switch
    s = InputSchedule.distracting(-0.2, 0.2, 0.1, 60, 0.5)
    tr = run(from_uniform(-1, 1, 1, 500), SimulationConfig(r=0.3, n_cells=500), s)
    assert tr.steps > 30


def test_snapshots_record_first_and_last():
    tr = run(from_uniform(-1, 1, 1, 500), SimulationConfig(r=0.1, n_cells=500, max_steps=250, record_every=100))
    steps = [s for s, _ in tr.snapshots]
    assert steps == [0, 100, 200, 249, 250]


def test_weak_star_constant_function():
    tr = run(from_uniform(-1, 1, 1, 500), SimulationConfig(r=0.1, n_cells=500, max_steps=30, record_every=1))
    d = weak_star_diagnostic(tr, {"one": np.ones_like})
    assert np.all(d["one"] == 0)
    with pytest.raises(ValueError):
        weak_star_diagnostic(tr, {})


def test_weak_star_single_atom():
    tr = run(from_atoms([0.1], [1.0]), SimulationConfig(r=0.1, record_every=1))
    for deltas in weak_star_diagnostic(tr).values():
        assert np.all(deltas == 0)


def test_is_converged():
    cfg = SimulationConfig(r=0.1)
    assert is_converged(from_atoms([-0.3, 0.4], [0.5, 0.5]), cfg)
    assert not is_converged(from_atoms([0.0, 0.05], [0.5, 0.5]), cfg)
    assert not is_converged(from_uniform(-1, 1), cfg)


def test_consensus_sufficient():
    p = from_uniform(-0.4, 0.4, 1, 100)
    assert consensus_sufficient(p, NONE, 0.5)
    off = InputSchedule.constant_input(make_truncated_gaussian(0.1, 0.05))
    assert not consensus_sufficient(p, off, 0.5)
    assert not consensus_sufficient(from_uniform(-1, 1, 1, 100), NONE, 0.1)


def test_summary_is_plain_data():
    tr = run(from_uniform(-0.4, 0.4, 1, 200), SimulationConfig(r=0.5, n_cells=200))
    s = tr.summary()
    assert s["termination"] == "converged"
    assert s["clusters"][0]["mass"] == pytest.approx(1.0)
