"""Command-line entry point.

Every subcommand reads one JSON config, validates all of it, runs, and only
then writes its outputs (CSV tables and JSON summaries) into the output
directory. ``OPINIONDRIFT_OUT`` overrides ``--out``.

Exit codes: 0 converged (or a schedule horizon reached), 2 step limit hit,
1 any error including a failed oracle check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .analysis import attraction_range, compare_strategies, eventual_attraction, sweep, sweep_csv, sweep_fit
from .errors import ConfigError, InsufficientPoints, NoBasin, NotConverged, OpinionDriftError
from .inputs import InputSchedule, make_truncated_gaussian
from .measure import OpinionPartition, from_uniform, window_moments
from .oracle import agent_run, sample_agents
from .simulate import SimulationConfig, Trajectory, consensus_sufficient, run

log = logging.getLogger("opiniondrift")

EXIT_OK, EXIT_ERROR, EXIT_MAX_STEPS = 0, 1, 2


def _number(d: dict, key: str, prefix: str, default: Any = ..., kind: Callable = float, allow_none=False):
    name = f"{prefix}{key}"
    if key not in d:
        if default is ...:
            raise ConfigError(name, "required")
        return default
    v = d[key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(name, f"expected an integer, got {v!r}")
    v = kind(v)
    if not math.isfinite(v):
        raise ConfigError(name, "must be finite")
    return v


def _section(d: dict, key: str, required: bool) -> dict | None:
    s = d.get(key)
    if s is None:
        if required:
            raise ConfigError(key, "section required for this command")
        return None
    if not isinstance(s, dict):
        raise ConfigError(key, "expected an object")
    return s


def _schedule(spec, name: str) -> InputSchedule:
    if spec is not None and not isinstance(spec, dict):
        raise ConfigError(name, "expected an object")
    try:
        return InputSchedule.from_dict(spec)
    except ConfigError as exc:
        # re-root "schedule..." field names under the section being read
        raise ConfigError(name + exc.field.removeprefix("schedule"), str(exc).split(": ", 1)[-1]) from None


def _values(v, name: str) -> list[float]:
    vals = v if isinstance(v, list) else [v]
    if not vals or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in vals):
        raise ConfigError(name, "expected a number or a non-empty list of numbers")
    return [float(x) for x in vals]


@dataclass
class RunConfig:
    """Validated contents of a JSON config file."""

    lo: float
    hi: float
    mass: float
    sim: SimulationConfig
    schedule: InputSchedule
    raw: dict = field(repr=False)
    attraction: dict | None = None
    sweep: dict | None = None
    compare: tuple[InputSchedule, InputSchedule] | None = None
    oracle: dict | None = None

    @property
    def mu0(self) -> OpinionPartition:
        return from_uniform(self.lo, self.hi, self.mass, self.sim.n_cells)

    @classmethod
    def from_dict(cls, d: Any, command: str) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("<root>", "expected a JSON object")
        init = _section(d, "initial", True)
        if init.get("type", "uniform") != "uniform":
            raise ConfigError("initial.type", "only 'uniform' is supported")
        lo = _number(init, "lo", "initial.")
        hi = _number(init, "hi", "initial.")
        mass = _number(init, "mass", "initial.", 1.0)
        if not lo < hi:
            raise ConfigError("initial", "need lo < hi")
        if not mass > 0:
            raise ConfigError("initial.mass", "must be positive")

        kw = {
            "r": _number(d, "r", "", None if command == "sweep" else ..., allow_none=True),
            "n_cells": _number(d, "n_cells", "", 4000, int),
            "max_steps": _number(d, "max_steps", "", 10_000, int),
            "eps_cluster": _number(d, "eps_cluster", "", None, allow_none=True),
            "eps_consensus": _number(d, "eps_consensus", "", None, allow_none=True),
            "record_every": _number(d, "record_every", "", 100, int),
            "refine_factor": _number(d, "refine_factor", "", 4.0),
            "dust": _number(d, "dust", "", 1e-12),
            "bilipschitz_samples": _number(d, "bilipschitz_samples", "", 200, int),
            "rng_seed": _number(d, "rng_seed", "", 0, int),
        }
        check = d.get("check_bilipschitz", False)
        if not isinstance(check, bool):
            raise ConfigError("check_bilipschitz", "expected true or false")
        kw["check_bilipschitz"] = check
        if kw["r"] is None:
            kw["r"] = 1.0  # placeholder, every sweep point sets its own r
        try:
            sim = SimulationConfig(**kw)
        except ValueError as exc:
            msg = str(exc)
            raise ConfigError(msg.split()[0], msg) from None

        cfg = cls(lo, hi, mass, sim, _schedule(d.get("schedule"), "schedule"), d)

        if (s := _section(d, "attraction_range", command == "attraction-range")) is not None:
            cfg.attraction = {
                "mean": _number(s, "mean", "attraction_range."),
                "sigma": _number(s, "sigma", "attraction_range."),
                "weight": _number(s, "weight", "attraction_range.", 1.0),
                "tol": _number(s, "tol", "attraction_range.", None, allow_none=True),
                "refine_levels": _number(s, "refine_levels", "attraction_range.", 0, int),
            }
            try:
                make_truncated_gaussian(cfg.attraction["mean"], cfg.attraction["sigma"], cfg.attraction["weight"])
            except ValueError as exc:
                raise ConfigError("attraction_range", str(exc)) from None
            if not lo <= cfg.attraction["mean"] <= hi:
                raise ConfigError("attraction_range.mean", "must lie in the initial support")

        if (s := _section(d, "sweep", command == "sweep")) is not None:
            if "sigma" not in s or "r" not in s:
                raise ConfigError("sweep", "needs 'sigma' and 'r'")
            sig = _values(s["sigma"], "sweep.sigma")
            rs = _values(s["r"], "sweep.r")
            pairing = s.get("pairing", "product")
            if pairing == "product":
                grid = list(product(sig, rs))
            elif pairing == "zip":
                if len(sig) != len(rs):
                    raise ConfigError("sweep.pairing", "zip needs equally long sigma and r lists")
                grid = list(zip(sig, rs))
            else:
                raise ConfigError("sweep.pairing", f"expected 'product' or 'zip', got {pairing!r}")
            if any(x <= 0 for pt in grid for x in pt):
                raise ConfigError("sweep", "sigma and r values must be positive")
            if lo != -hi:
                raise ConfigError("initial", "sweeps use a symmetric support U(-x0, x0)")
            cfg.sweep = {
                "grid": grid,
                "tol": _number(s, "tol", "sweep.", None, allow_none=True),
                "refine_levels": _number(s, "refine_levels", "sweep.", 0, int),
                "keep_below": _number(s, "keep_below", "sweep.", 0.6),
            }

        if (s := _section(d, "compare", command == "compare")) is not None:
            cfg.compare = (_schedule(s.get("direct"), "compare.direct"), _schedule(s.get("distracting"), "compare.distracting"))
            for name, sch in zip(("direct", "distracting"), cfg.compare):
                if sch.kind != "phased":
                    raise ConfigError(f"compare.{name}", "must be a phased schedule")

        if (s := _section(d, "oracle", False)) is not None or command == "oracle-check":
            s = s or {}
            cfg.oracle = {
                "n_agents": _number(s, "n_agents", "oracle.", 20_000, int),
                "position_tol": _number(s, "position_tol", "oracle.", 0.01),
                "mass_tol": _number(s, "mass_tol", "oracle.", 0.02),
                "max_steps": _number(s, "max_steps", "oracle.", 10_000, int),
            }
            if cfg.oracle["n_agents"] < 1:
                raise ConfigError("oracle.n_agents", "must be at least 1")
        return cfg


def load_config(path: str | Path, command: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None
    return RunConfig.from_dict(data, command)


# -- output formatting ------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def trajectory_csv(snapshots: Sequence[tuple[int, OpinionPartition]]) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "cell_left", "cell_right", "mass"])
    for t, part in snapshots:
        for left, right, m in part.cells():
            w.writerow([t, repr(float(left)), repr(float(right)), repr(float(m))])
    return buf.getvalue()


def _exit_for(reason: str) -> int:
    return {"converged": EXIT_OK, "horizon": EXIT_OK, "max_steps": EXIT_MAX_STEPS}.get(reason, EXIT_ERROR)


def _trajectory_summary(traj: Trajectory, cfg: RunConfig) -> dict:
    out = traj.summary()
    out["engine"] = "eulerian"
    out["consensus"] = traj.converged and len(traj.clusters) == 1
    u = traj.last_input
    if u is not None:
        final = traj.final
        eps = traj.config.eps_consensus
        out["final_input_mean"] = u.mean
        out["attracted_at_horizon"] = window_moments(final, u.mean - eps, u.mean + eps)[0]
        out["attracted"], settled = eventual_attraction(final, u, traj.config)
        out["attracted_termination"] = settled.reason
        if len(traj.clusters):
            k = traj.clusters.nearest(u.mean)
            out["cluster_at_input"] = {
                "position": traj.clusters.positions[k],
                "mass": traj.clusters.masses[k],
            }
    out["consensus_sufficient"] = consensus_sufficient(traj.initial, cfg.schedule, cfg.sim.r)
    return out


# -- subcommands ------------------------------------------------------------
# Each returns (exit code, {filename: text}); files are written by main.


def cmd_simulate(cfg: RunConfig) -> tuple[int, dict[str, str]]:
    traj = run(cfg.mu0, cfg.sim, cfg.schedule)
    summary = _trajectory_summary(traj, cfg)
    summary["config"] = cfg.raw
    print(f"{traj.reason} after {traj.steps} steps, {len(traj.clusters)} clusters")
    return _exit_for(traj.reason), {
        "trajectory.csv": trajectory_csv(traj.snapshots),
        "summary.json": dumps_json(summary),
    }


def cmd_attraction_range(cfg: RunConfig) -> tuple[int, dict[str, str]]:
    a = cfg.attraction
    u = make_truncated_gaussian(a["mean"], a["sigma"], a["weight"])
    try:
        res = attraction_range(cfg.mu0, u, cfg.sim, a["tol"], a["refine_levels"])
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_MAX_STEPS, {"attraction_range.json": dumps_json({"termination": "max_steps", "error": str(exc)})}
    except NoBasin as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR, {"attraction_range.json": dumps_json({"termination": "error", "error": str(exc)})}
    out = {
        "termination": "converged",
        "interval": [res.y, res.z],
        "length": res.length,
        "attracted_mass": res.attracted_mass,
        "converged_center": res.converged_center,
        "tol_used": res.tol_used,
        "resolution": res.resolution,
        "steps": res.steps,
        "input": u.to_dict(),
    }
    print(f"R(u) = [{res.y:.6g}, {res.z:.6g}], length {res.length:.6g}, mass {res.attracted_mass:.6g}")
    return EXIT_OK, {"attraction_range.json": dumps_json(out)}


def cmd_sweep(cfg: RunConfig, jobs: int) -> tuple[int, dict[str, str]]:
    s = cfg.sweep
    x0 = cfg.hi
    points = sweep(s["grid"], cfg.sim, x0, s["tol"], s["refine_levels"], jobs)
    files = {"sweep.csv": sweep_csv(points)}
    try:
        fit = sweep_fit(points, 2 * x0, s["keep_below"])
    except InsufficientPoints as exc:
        print(f"error: {exc}", file=sys.stderr)
        files["fit.json"] = dumps_json({"error": str(exc)})
        return EXIT_ERROR, files
    files["fit.json"] = dumps_json(fit.to_dict())
    fmt = lambda v: "n/a" if v is None else f"{v:.6g}"  # noqa: E731
    print(f"a = {fmt(fit.a)}  b = {fmt(fit.b)}  c = {fmt(fit.c)}  R^2 = {fit.r_squared:.6g}")
    failed = sum(not p.converged for p in points)
    return (EXIT_MAX_STEPS if failed else EXIT_OK), files


def cmd_compare(cfg: RunConfig) -> tuple[int, dict[str, str]]:
    direct, distracting = cfg.compare
    try:
        rep = compare_strategies(cfg.mu0, cfg.sim, direct, distracting)
    except ValueError as exc:
        raise ConfigError("compare", str(exc)) from None
    files = {f"{a.name}_trajectory.csv": trajectory_csv(a.trajectory.snapshots) for a in rep.arms}
    files["compare.json"] = dumps_json(rep.to_dict())
    for a in rep.arms:
        print(f"{a.name}: objective {a.objective:.6g}, attracted {a.attracted:.6g}")
    print(f"winner: {rep.winner}")
    return EXIT_OK, files


def cmd_oracle_check(cfg: RunConfig) -> tuple[int, dict[str, str]]:
    o = cfg.oracle
    mu0 = cfg.mu0
    traj = run(mu0, cfg.sim, cfg.schedule)
    pop0 = sample_agents(mu0, o["n_agents"])
    try:
        agents = agent_run(pop0, cfg.schedule, cfg.sim.r, o["max_steps"])
    except NotConverged as exc:
        print(f"oracle not converged: {exc}", file=sys.stderr)
        return EXIT_MAX_STEPS, {}
    ep, em = traj.clusters.positions, traj.clusters.masses
    same_count = ep.size == agents.positions.size
    out = {
        "engine": "lagrangian",
        "n_agents": pop0.n,
        "steps": agents.steps,
        "clusters": [{"position": p, "mass": m} for p, m in zip(agents.positions, agents.masses)],
        "eulerian_clusters": traj.clusters.to_list(),
        "eulerian_termination": traj.reason,
        "same_count": same_count,
    }
    ok = same_count and traj.converged
    if same_count:
        dpos = float(np.max(np.abs(ep - agents.positions))) if ep.size else 0.0
        dmass = float(np.max(np.abs(em - agents.masses))) if ep.size else 0.0
        ok = ok and dpos <= o["position_tol"] and dmass <= o["mass_tol"]
        out.update(max_position_discrepancy=dpos, max_mass_discrepancy=dmass)
        print(f"max cluster position discrepancy {dpos:.3g} (tol {o['position_tol']:g}), "
              f"mass {dmass:.3g} (tol {o['mass_tol']:g})")
    else:
        print(f"cluster counts differ: eulerian {ep.size}, lagrangian {agents.positions.size}")
    out["pass"] = ok
    print("PASS" if ok else "FAIL")
    rows = [(0, pop0.opinions), (agents.steps, agents.population.opinions)]
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "cell_left", "cell_right", "mass"])
    for t, x in rows:
        for v in x:
            w.writerow([t, repr(float(v)), repr(float(v)), repr(pop0.mass)])
    return (EXIT_OK if ok else EXIT_ERROR), {"oracle_trajectory.csv": buf.getvalue(), "oracle_summary.json": dumps_json(out)}


COMMANDS = {
    "simulate": cmd_simulate,
    "attraction-range": cmd_attraction_range,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "oracle-check": cmd_oracle_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opiniondrift", description="Eulerian bounded-confidence opinion dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (OPINIONDRIFT_OUT overrides)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    out_dir = Path(os.environ.get("OPINIONDRIFT_OUT") or args.out)
    try:
        cfg = load_config(args.config, args.command)
        fn = COMMANDS[args.command]
        code, files = fn(cfg, args.jobs) if args.command == "sweep" else fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OpinionDriftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text, encoding="utf-8", newline="")
        log.info("wrote %s", out_dir / name)
    return code


if __name__ == "__main__":
    sys.exit(main())
