"""Command-line interface: ``mfgmajor <subcommand> --config C ...``.

Exit status: 0 on success, 1 when a check fails or a run aborts, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import rng
from .config import load_config, write_outputs
from .errors import ConfigError, MfgError
from .harness import ConvergenceAborted, config_failure_report, fit_rate, run_convergence, verify_all
from .master import solve_master
from .nash import solve_nash
from .simulator import simulate_coupled_particles, simulate_equilibrium_flow

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="mfgmajor", description="Major-minor mean field game solvers.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, nt=2000):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--nt", type=int, default=nt, help="backward RK4 steps")
        return sp

    sp = common(sub.add_parser("solve-master", help="solve the reduced master system"))
    sp.add_argument("--out", required=True)

    sp = common(sub.add_parser("solve-nash", help="solve the N+1 player Nash system"))
    sp.add_argument("-N", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = common(sub.add_parser("converge", help="N-player vs master convergence sweep"), nt=1000)
    sp.add_argument("--Ns", type=_int_list, default=[2, 4, 8, 16, 32, 64])
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--t0", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = common(sub.add_parser("verify", help="run the verification battery"), nt=4000)
    sp.add_argument("-N", type=int, default=8)
    sp.add_argument("--seed", type=int, default=7, help="seed of the random evaluation points")
    sp.add_argument("--report", required=True)

    sp = common(sub.add_parser("simulate", help="simulate paths to CSV"))
    sp.add_argument("--mode", choices=("nash", "equilibrium"), default="equilibrium")
    sp.add_argument("-N", type=int, default=8, help="minor players (nash mode)")
    sp.add_argument("--paths", type=int, default=None, help="override the configured path count")
    sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
    sp.add_argument("--stride", type=int, default=1, help="write every stride-th time step")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    return p


def _cmd_solve_master(a, spec, cfg):
    write_outputs(solve_master(spec, nt=a.nt), a.out)
    return EXIT_OK


def _cmd_solve_nash(a, spec, cfg):
    write_outputs(solve_nash(spec, a.N, nt=a.nt), a.out)
    return EXIT_OK


def _cmd_converge(a, spec, cfg):
    try:
        table = run_convergence(spec, a.Ns, a.samples, t0=a.t0, seed=a.seed, mu0=cfg.mu0, nt=a.nt,
                                workers=a.workers)
    except ConvergenceAborted as exc:
        write_outputs(exc.table, a.out)
        print(f"aborted after {len(exc.table)} rows: {exc.cause}", file=sys.stderr)
        return EXIT_FAIL
    write_outputs(table, a.out)
    summary = {"per_N": table.summary()}
    if len(table.Ns) >= 3:
        summary["fit"] = fit_rate(table).to_dict()
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_verify(a, spec, cfg):
    rep = verify_all(spec, nt=a.nt, N_check=a.N, seed=a.seed, cfg=cfg)
    write_outputs(rep, a.report)
    for c in rep.checks:
        status = "SKIP" if c.passed is None else ("PASS" if c.passed else "FAIL")
        print(f"{status} {c.name} value={c.value} tol={c.tolerance} {c.detail}".rstrip())
    return EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_simulate(a, spec, cfg):
    if a.stride < 1:
        raise ConfigError("must be >= 1", key="stride")
    over = {}
    if a.paths is not None:
        over["paths"] = a.paths
    if a.seed is not None:
        over["seed"] = a.seed
    cfg = cfg.replace(**over)
    if a.mode == "nash":
        sol = solve_nash(spec, a.N, nt=a.nt)
        ids = np.arange(cfg.paths)
        minors = cfg.mu0.sample(cfg.seed, rng.INIT, ids, spec.d, count=a.N).reshape(cfg.paths, -1)
        x0 = np.broadcast_to(cfg.x0(spec.d0), (cfg.paths, spec.d0))
        bundle = simulate_coupled_particles(sol, np.concatenate([x0, minors], axis=1), cfg, workers=a.workers)
    else:
        bundle = simulate_equilibrium_flow(solve_master(spec, nt=a.nt), cfg, workers=a.workers)
    write_outputs(bundle, a.out, stride=a.stride)
    return EXIT_OK


_COMMANDS = {
    "solve-master": _cmd_solve_master,
    "solve-nash": _cmd_solve_nash,
    "converge": _cmd_converge,
    "verify": _cmd_verify,
    "simulate": _cmd_simulate,
}


def main(argv=None):
    a = build_parser().parse_args(argv)
    try:
        spec, cfg = load_config(a.config)
    except ConfigError as exc:
        if a.command == "verify":
            write_outputs(config_failure_report(exc), a.report)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[a.command](a, spec, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MfgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
