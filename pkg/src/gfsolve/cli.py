"""Command-line front end.

Subcommands: ``solve`` (one instance, choice of solver), ``mc`` (Monte-Carlo
batch), ``check`` (cycle-structure assumptions), ``oracle`` (single-cycle
reference solution for pinning golden data).

Exit codes: 0 solved/complete, 2 infeasible, 3 inexact, 4 timeout or
non-convergence, 1 usage or data error. Set GFSOLVE_LOG=DEBUG|INFO|... for
diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .graphs import check_assumptions
from .harness import McConfig, emit_report, run_monte_carlo
from .misocp import solve_gf
from .network import (GasNetwork, NetworkError, load_network, load_scenario,
                      residuals)
from .newton import NrFailure, nr_solve
from .oracles import OracleError, brute_force_single_cycle
from .relaxation import build_relaxation
from .tolerances import DEFAULT_BIG_M
from .tree_solver import TreeSolveError, NotATreeError, solve_tree

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INEXACT = 3
EXIT_TIMEOUT = 4


def _setup_logging():
    level = os.environ.get("GFSOLVE_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _emit(payload: dict, path: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_inputs(args) -> tuple[GasNetwork, np.ndarray]:
    net = load_network(args.network)
    if getattr(args, "scenario", None):
        q = load_scenario(args.scenario, net)
    else:
        q = np.zeros(net.n_nodes)
    return net, q


def _state_payload(net, q, state) -> dict:
    return {
        "phi": {net.edge_names[i]: float(v) for i, v in enumerate(state.phi)},
        "psi": {net.node_names[i]: float(v) for i, v in enumerate(state.psi)},
        "max_residual": residuals(net, q, state).max_violation,
    }


def _cmd_solve(args) -> int:
    net, q = _load_inputs(args)
    if args.method == "tree":
        try:
            state = solve_tree(net, q)
        except NotATreeError as exc:
            raise NetworkError(str(exc)) from exc
        except TreeSolveError as exc:
            _emit({"status": "infeasible", "reason": str(exc)}, args.out)
            return EXIT_INFEASIBLE
        _emit({"status": "solved", **_state_payload(net, q, state)}, args.out)
        return EXIT_OK

    if args.method == "nr":
        psi_init = None
        if args.init not in (None, "flat"):
            with open(args.init, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            psi_init = np.full(net.n_nodes, net.psi_ref)
            for name, val in doc.get("psi", {}).items():
                psi_init[net.node_id(str(name))] = float(val)
        try:
            state = nr_solve(net, q, psi_init)
        except NrFailure as exc:
            _emit({"status": "nonconvergence", "reason": exc.reason}, args.out)
            return EXIT_TIMEOUT
        _emit({"status": "solved", **_state_payload(net, q, state)}, args.out)
        return EXIT_OK

    if args.dump_program:
        prog = build_relaxation(net, q, args.big_m)
        with open(args.dump_program, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(prog.dump() + "\n")
    result = solve_gf(net, q, big_m=args.big_m, time_limit=args.time_limit)
    _emit(result.to_dict(net), args.out)
    return {"solved": EXIT_OK, "infeasible": EXIT_INFEASIBLE,
            "inexact": EXIT_INEXACT, "timeout": EXIT_TIMEOUT}[result.status]


def _cmd_mc(args) -> int:
    net, q0 = _load_inputs(args)
    if args.balancing_node is not None:
        balancing = net.node_id(args.balancing_node)
    else:
        balancing = net.n_nodes - 1   # last node in file order
    cfg = McConfig(
        q0=q0, n_samples=args.samples, balancing_node=balancing,
        sigma=args.sigma, seed=args.seed, big_m=args.big_m,
        time_limit=args.time_limit, jobs=args.jobs,
        measure_runtime=not args.no_runtime)
    report = run_monte_carlo(net, cfg)
    emit_report(report, args.format, args.out)
    return EXIT_OK


def _cmd_check(args) -> int:
    net = load_network(args.network)
    _emit(check_assumptions(net).to_dict(net), args.out)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    net, q = _load_inputs(args)
    try:
        oracle = brute_force_single_cycle(net, q)
    except OracleError as exc:
        _emit({"status": "error", "reason": str(exc)}, args.out)
        return EXIT_INFEASIBLE
    _emit({"status": "solved", **oracle.to_dict(net)}, args.out)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfsolve",
        description="Steady-state gas network flow solvers and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        p.add_argument("--network", required=True, help="network JSON file")
        if scenario:
            p.add_argument("--scenario", help="injection scenario JSON file")
        p.add_argument("--out", help="write JSON output here instead of stdout")

    p = sub.add_parser("solve", help="solve one instance")
    common(p)
    p.add_argument("--method", choices=["tree", "nr", "misocp"],
                   default="misocp")
    p.add_argument("--big-m", type=float, default=DEFAULT_BIG_M)
    p.add_argument("--time-limit", type=float, default=None,
                   help="wall-clock limit in seconds")
    p.add_argument("--dump-program", help="write the built relaxation here")
    p.add_argument("--init", default="flat",
                   help="nr start: 'flat' or a JSON file with a 'psi' map")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("mc", help="Monte-Carlo batch over random injections")
    common(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--balancing-node",
                   help="node absorbing the imbalance (default: last node)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--big-m", type=float, default=DEFAULT_BIG_M)
    p.add_argument("--time-limit", type=float, default=None)
    p.add_argument("--no-runtime", action="store_true",
                   help="record runtime_ms as 0 for byte-reproducible output")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_mc)
    # mc requires an output path: the report is the product.
    p.add_argument("--out-required", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("check", help="report cycle-structure assumptions")
    common(p, scenario=False)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("oracle", help="single-cycle bisection reference solution")
    common(p)
    p.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command == "mc" and not args.out:
        parser.error("mc requires --out PATH")
    try:
        return args.func(args)
    except (NetworkError, OSError, ValueError) as exc:
        print(f"gfsolve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
