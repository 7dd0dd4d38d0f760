"""Command line: ``mot-envelope {solve,simulate,compare,oracle,schema}``.

Exit codes: 0 success, 1 other errors, 2 invalid config, 3 solver did not
converge, 4 unreliable Monte Carlo estimate, 5 a comparison tolerance was
exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io as mio
from .envelope import face_consistency, query_many, solve_recursive
from .exceptions import ConvergenceError, MOTError, ValidationError
from .measures import AtomGrid
from .oracle import SpreadParams, call_spread_strategy, spread_case, spread_value, surface
from .payoff import CostFunction, ModifiedCost
from .simulator import RandomPolicy, simulate_paths, traces_to_csv
from .strategy import STOP, EnvelopePolicy, optimal_direction

logger = logging.getLogger("mot_envelope")

EXIT_OK, EXIT_ERROR, EXIT_SCHEMA, EXIT_CONVERGENCE, EXIT_UNRELIABLE, EXIT_TOLERANCE = 0, 1, 2, 3, 4, 5


def _problem(cfg):
    grid = AtomGrid(tuple(cfg["atoms"]))
    cost = CostFunction.from_json(cfg["payoff"])
    return grid, cost


def _solve(cfg, method: str):
    grid, cost = _problem(cfg)
    tol = cfg["tolerances"]
    opts = {k: tol[k] for k in ("tol_contact", "tol_fp", "max_sweeps") if tol.get(k) is not None}
    sol = solve_recursive(grid, cost, cfg["m"], method, **opts)
    return sol, sol[grid.full_face()], ModifiedCost(grid, grid.full_face(), cost)


def _meta(cfg) -> dict:
    return {"config": cfg, "seed": cfg["mc"]["master_seed"]}


def _out(cfg, suffix: str) -> Path:
    return Path(cfg["output"]["dir"]) / f"{cfg['output']['prefix']}_{suffix}"


def _oracle_applies(cfg) -> bool:
    p = cfg["payoff"]
    if p["type"] != "call_spread" or [float(a) for a in cfg["atoms"]] != [-1.0, 0.0, 1.0]:
        return False
    return -1 < p["k1"] < 1 and 0 < p["k2"] < 1 and p["k1"] < p["k2"]


def _oracle_at(cfg, z) -> float:
    p = cfg["payoff"]
    return float(spread_value(p["k1"], p["k2"], z[1], z[2]))


def _points(cfg) -> np.ndarray:
    if cfg.get("points"):
        pts = np.asarray(cfg["points"], dtype=float)
    elif "initial" in cfg:
        pts = np.asarray([cfg["initial"]], dtype=float)
    else:
        n = len(cfg["atoms"])
        pts = np.full((1, n), 1.0 / n)
    if np.any(np.abs(pts.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("config points must sum to one")
    return pts


def cmd_solve(cfg) -> int:
    """Solve the envelope; write the CSV surface(s) and a JSON report."""
    methods = ["hull", "obstacle"] if cfg["method"] == "both" else [cfg["method"]]
    meta = _meta(cfg)
    report = {"faces": {}, "files": []}
    fields = {}
    for method in methods:
        sol, full, fbar = _solve(cfg, method)
        fields[method] = full
        report["faces"][method] = {
            ",".join(map(str, face.indices)): {
                k: v for k, v in fld.info.items() if isinstance(v, (int, float, str))
            }
            for face, fld in sol.items()
        }
        report.setdefault("face_consistency", {})[method] = face_consistency(sol)
        header, rows = mio.envelope_rows(full)
        suffix = "envelope.csv" if len(methods) == 1 else f"envelope_{method}.csv"
        report["files"].append(str(mio.write_csv(_out(cfg, suffix), header, rows, meta)))
        if full.grid.order == 1:
            report["value"] = float(full.values[0])
    if len(methods) == 2:
        diff = np.abs(fields["hull"].values - fields["obstacle"].values)
        report["max_discrepancy"] = float(diff.max())
    ref = fields[methods[0]]
    if _oracle_applies(cfg):
        nodes = ref.grid.nodes
        orc = spread_value(cfg["payoff"]["k1"], cfg["payoff"]["k2"], nodes[:, 1], nodes[:, 2])
        rows = [
            [nodes[i, 1], nodes[i, 2], ref.fbar[i]] + [fields[m].values[i] for m in methods] + [orc[i]]
            for i in range(len(nodes))
        ]
        header = ["beta", "gamma", "fbar"] + [f"value_{m}" for m in methods] + ["oracle"]
        report["files"].append(str(mio.write_csv(_out(cfg, "surface.csv"), header, rows, meta)))
        report["max_error_vs_oracle"] = {m: float(np.max(np.abs(fields[m].values - orc))) for m in methods}
    if "initial" in cfg:
        z = np.asarray(cfg["initial"], dtype=float)
        report["initial_value"] = float(query_many(ref, z[None, :])[0])
        plan = optimal_direction(ref, fbar, z)
        strategy = {"stop": True, "z": z.tolist()} if plan is STOP else plan.to_json()
        report["files"].append(str(mio.write_json(_out(cfg, "strategy.json"), {"strategy": strategy}, meta)))
    mio.write_json(_out(cfg, "solve.json"), report, meta)
    print(mio.dumps(report), end="")
    return EXIT_OK


def _policy(cfg, full, fbar):
    if cfg["mc"]["policy"] == "random":
        return RandomPolicy(fbar, seed=cfg["mc"]["policy_seed"])
    return EnvelopePolicy(full, fbar)


def _simulate(cfg, full, fbar, z, record=False):
    mc = cfg["mc"]
    return simulate_paths(
        _policy(cfg, full, fbar),
        z,
        mc["n_paths"],
        mc["master_seed"],
        mc["dt"],
        max_steps=mc["max_steps"],
        record=record,
        n_jobs=mc["n_jobs"],
    )


def cmd_simulate(cfg) -> int:
    """Monte Carlo value of the configured policy from ``initial``."""
    if "initial" not in cfg:
        raise ValidationError("simulate needs an 'initial' measure in the config")
    method = "hull" if cfg["method"] == "both" else cfg["method"]
    _sol, full, fbar = _solve(cfg, method)
    z = np.asarray(cfg["initial"], dtype=float)
    batch = _simulate(cfg, full, fbar, z, record=cfg["mc"]["traces"])
    est = batch.estimate()
    meta = _meta(cfg)
    result = {"estimate": est.to_json(), "envelope": float(query_many(full, z[None, :])[0])}
    if _oracle_applies(cfg):
        result["oracle"] = _oracle_at(cfg, z)
    if cfg["mc"]["traces"]:
        text = "# " + json.dumps(meta, sort_keys=True) + "\n" + traces_to_csv(batch)
        result["traces"] = str(mio.atomic_write_text(_out(cfg, "traces.csv"), text))
    mio.write_json(_out(cfg, "mc.json"), result, meta)
    print(mio.dumps(result), end="")
    if not est.reliable:
        logger.error("%d of %d paths hit the maximum length", est.n_rejected, est.n_paths)
        return EXIT_UNRELIABLE
    return EXIT_OK


def cmd_compare(cfg) -> int:
    """Hull, obstacle, oracle and Monte Carlo at the configured points."""
    pts = _points(cfg)
    _s, hull, fbar = _solve(cfg, "hull")
    _s, obst, _ = _solve(cfg, "obstacle")
    tol = cfg["tolerances"]
    have_oracle = _oracle_applies(cfg)
    rows, failures = [], []
    for z in pts:
        vh = float(query_many(hull, z[None, :])[0])
        vo = float(query_many(obst, z[None, :])[0])
        orc = _oracle_at(cfg, z) if have_oracle else math.nan
        est = _simulate(cfg, hull, fbar, z).estimate()
        rows.append([*z.tolist(), vh, vo, orc, est.mean, est.std_error])
        ref = orc if have_oracle else vh
        gap = est.mean - ref
        if cfg["mc"]["policy"] == "random":
            # a suboptimal policy only has to stay below the envelope
            gap = max(gap, 0.0)
        if abs(gap) > 3 * est.std_error + tol["mc_bias"]:
            failures.append(f"mc at {z.tolist()}: {est.mean:.6f} vs {ref:.6f} (se {est.std_error:.2e})")
        if not est.reliable:
            failures.append(f"mc at {z.tolist()}: unreliable")
    errors = {"hull_vs_obstacle": float(np.max(np.abs(hull.values - obst.values)))}
    if errors["hull_vs_obstacle"] > tol["solver_agreement"]:
        failures.append("hull vs obstacle discrepancy")
    if have_oracle:
        nodes = hull.grid.nodes
        orc = spread_value(cfg["payoff"]["k1"], cfg["payoff"]["k2"], nodes[:, 1], nodes[:, 2])
        errors["hull_vs_oracle"] = float(np.max(np.abs(hull.values - orc)))
        errors["obstacle_vs_oracle"] = float(np.max(np.abs(obst.values - orc)))
        for key in ("hull_vs_oracle", "obstacle_vs_oracle"):
            if errors[key] > tol["grid"]:
                failures.append(key)
    n = pts.shape[1]
    header = [f"w{i}" for i in range(n)] + ["hull", "obstacle", "oracle", "mc", "mc_se"]
    meta = _meta(cfg)
    mio.write_csv(_out(cfg, "compare.csv"), header, rows, meta)
    result = {"max_errors": errors, "failures": failures, "passed": not failures}
    mio.write_json(_out(cfg, "compare.json"), {"table": rows, "header": header, **result}, meta)
    print(",".join(header))
    for r in rows:
        print(",".join(f"{x:.6g}" for x in r))
    print(mio.dumps(result), end="")
    return EXIT_OK if not failures else EXIT_TOLERANCE


def cmd_oracle(cfg) -> int:
    """Closed-form call-spread surface and, at ``initial``, the strategy."""
    if not _oracle_applies(cfg):
        raise ValidationError("the oracle needs atoms [-1, 0, 1] and a call_spread payoff with valid strikes")
    k1, k2 = cfg["payoff"]["k1"], cfg["payoff"]["k2"]
    beta, gamma, fbar, value, case = surface(k1, k2, cfg["m"])
    rows = [[b, g, f, v, c] for b, g, f, v, c in zip(beta, gamma, fbar, value, case)]
    meta = _meta(cfg)
    out = {"surface": str(mio.write_csv(_out(cfg, "oracle_surface.csv"), ["beta", "gamma", "fbar", "value", "case"], rows, meta))}
    if "initial" in cfg:
        z = cfg["initial"]
        p = SpreadParams(k1, k2, z[1], z[2])
        s = call_spread_strategy(p)
        out["initial"] = {
            "value": s.value,
            "case": str(spread_case(k1, k2, z[1], z[2])),
            "eta": s.eta,
            "control": s.control,
            "exit_intervals": s.exit_intervals,
            "splits": [{"probability": sm.probability, "weights": sm.weights} for sm in s.splits],
        }
    mio.write_json(_out(cfg, "oracle.json"), out, meta)
    print(mio.dumps(out), end="")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "compare": cmd_compare, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mot-envelope", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--m", type=int, help="grid resolution")
        p.add_argument("--seed", type=int, help="Monte Carlo master seed")
        p.add_argument("--n-paths", type=int, help="Monte Carlo path count")
        p.add_argument("--method", choices=["hull", "obstacle", "both"])
        p.add_argument("--out-dir", help="output directory")
    sub.add_parser("schema", help="print the config JSON schema")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "schema":
        print(json.dumps(cfgmod.CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    try:
        raw = cfgmod.load(args.config)
        cfg = cfgmod.resolve(
            raw, {"m": args.m, "seed": args.seed, "n_paths": args.n_paths, "method": args.method}
        )
        if args.out_dir:
            cfg["output"]["dir"] = args.out_dir
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        return COMMANDS[args.command](cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except MOTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
