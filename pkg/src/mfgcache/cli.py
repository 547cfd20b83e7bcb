"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage,
3 solver did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig
from .experiments import (SWEEP_COLUMNS, Scenario, fig1_sweep, fig2_periods, solve_catalog_cached,
                          write_rows_csv)
from .simulator import write_meanfield_csv, write_metrics_csv, write_summary_json
from .solver import write_fields_csv, write_residuals_csv

log = logging.getLogger("mfgcache")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3


@contextmanager
def atomic_path(path: Path):
    """Yield a temporary sibling path that replaces ``path`` only on success."""
    tmp = path.with_name(path.name + ".tmp")
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig.defaults()
    sim: dict = {}
    if args.seed is not None:
        sim["seed"] = args.seed
        sim["seeds"] = [args.seed + s for s in cfg["simulation"]["seeds"]]
    if args.policy:
        sim["policies"] = [p.strip() for p in args.policy.split(",") if p.strip()]
    return cfg.with_overrides(simulation=sim) if sim else cfg


def _write_metadata(out: Path, verb: str, cfg: ExperimentConfig, started: float, **extra) -> None:
    meta = {"verb": verb, "version": __version__, "config_hash": cfg.content_hash(),
            "started_unix": started, "finished_unix": time.time(), **extra}
    with atomic_path(out / "metadata.json") as tmp:
        write_summary_json(tmp, meta)


def cmd_solve(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Solve the mean-field equilibrium of every file for one scenario."""
    sim = cfg["simulation"]
    sc = Scenario(cfg, sim["seed"], float(cfg["topology"]["ifd"]), float(cfg["popularity"]["beta"]))
    config = sc.solver_config()
    q = sc.q_profile(config)
    grid = config.grid(sc.params)
    m0 = grid.spike(float(cfg["solver"]["initial_state"]) * sc.params.S)
    sols = solve_catalog_cached(config, sc.params, q, m0)
    tag = {"config_hash": cfg.content_hash()}
    for name in ("v", "m", "c"):
        with atomic_path(out / f"{name}.csv") as tmp:
            write_fields_csv(tmp, [getattr(s, name) for s in sols], tag)
    with atomic_path(out / "residuals.csv") as tmp:
        write_residuals_csv(tmp, sols, tag)
    converged = all(s.converged for s in sols)
    summary = {
        "config_hash": cfg.content_hash(),
        "config": cfg.tree,
        "converged": converged,
        "iterations": [s.iterations for s in sols],
        "final_residual": [s.residuals[-1] if s.residuals else 0.0 for s in sols],
        "own_rate": config.own_rate,
        "alt_rate": config.alt_rate,
    }
    with atomic_path(out / "summary.json") as tmp:
        write_summary_json(tmp, summary)
    if not converged:
        bad = [n for n, s in enumerate(sols) if not s.converged]
        print(f"solver did not converge for files {bad}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Run every configured policy on one scenario and write per-slot metrics."""
    sim = cfg["simulation"]
    sc = Scenario(cfg, sim["seed"], float(cfg["topology"]["ifd"]), float(cfg["popularity"]["beta"]))
    results, summaries = [], {}
    converged = True
    for name in sim["policies"]:
        res = sc.run(name, meanfield_files=[int(n) for n in sim["meanfield_files"]])
        results.append(res)
        summaries[name] = res.summary(sc.topology.n_faps)
    if "mfg" in sim["policies"]:
        converged = all(s.converged for s in sc.last_solutions)
    tag = {"config_hash": cfg.content_hash()}
    with atomic_path(out / "metrics.csv") as tmp:
        write_metrics_csv(tmp, results, tag)
    with atomic_path(out / "meanfield.csv") as tmp:
        write_meanfield_csv(tmp, results, tag)
    with atomic_path(out / "summary.json") as tmp:
        write_summary_json(tmp, {"config_hash": cfg.content_hash(), "config": cfg.tree,
                                 "n_faps": sc.topology.n_faps, "solver_converged": converged,
                                 "policies": summaries})
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


def cmd_fig1(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Average delay and load versus IFD for every beta and policy."""
    if not {"mfg", "mpc"} <= set(cfg["simulation"]["policies"]):
        raise ConfigError("fig1 needs at least the mfg and mpc policies", "simulation.policies")
    rows, medians = fig1_sweep(cfg, threads)
    tag = {"config_hash": cfg.content_hash()}
    with atomic_path(out / "sweep.csv") as tmp:
        write_rows_csv(tmp, rows + medians, SWEEP_COLUMNS, tag)
    with atomic_path(out / "summary.json") as tmp:
        write_summary_json(tmp, {"config_hash": cfg.content_hash(), "config": cfg.tree,
                                 "medians": medians})
    return EXIT_OK


def cmd_fig2(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    """Per-period average total cost of every policy under time-variant popularity."""
    pop, sim = cfg["popularity"], cfg["simulation"]
    if -(-sim["slots"] // pop["period"]) < 2:
        raise ConfigError("fig2 needs at least two popularity periods", "simulation.slots")
    rows, summary = fig2_periods(cfg, threads)
    for name, cost in summary["overall_avg_cost"].items():
        rows.append({"policy": name, "period": "overall", "avg_cost": cost,
                     "mfg_reduction": summary["reduction_vs"].get(name, "")})
    tag = {"config_hash": cfg.content_hash()}
    with atomic_path(out / "periods.csv") as tmp:
        write_rows_csv(tmp, rows, ["policy", "period", "avg_cost", "mfg_reduction"], tag)
    with atomic_path(out / "summary.json") as tmp:
        write_summary_json(tmp, {"config_hash": cfg.content_hash(), "config": cfg.tree, **summary})
    for name, red in summary["reduction_vs"].items():
        print(f"mfg cost reduction vs {name}: {100 * red:.1f}%")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "fig1": cmd_fig1, "fig2": cmd_fig2}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgcache", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in (*COMMANDS, "validate-config"):
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="TOML experiment config (default: packaged defaults)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="master seed; shifts the seed list of sweeps")
        p.add_argument("--policy", help="comma-separated policy names")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "--seed")
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.verb == "validate-config":
        print(f"ok {cfg.content_hash()}")
        return EXIT_OK
    args.out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        code = COMMANDS[args.verb](cfg, args.out, max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # report with run context, keep the traceback in the log
        log.debug("failure", exc_info=True)
        print(f"{args.verb} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    _write_metadata(args.out, args.verb, cfg, started, exit_code=code)
    return code


if __name__ == "__main__":
    sys.exit(main())
