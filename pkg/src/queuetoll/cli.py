"""``queuetoll`` command-line interface.

Exit codes: 0 success, 1 invalid input, 2 solver did not converge or a
verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import continuum as cont
from .model import InfeasibleError, social_cost
from .pricing import certify_prices, pigouvian_prices
from .scenario import Scenario, ScenarioError
from .simulator import SimConfig, compare_to_analytic, simulate
from .social_opt import GRID_EVAL_LIMIT, check_optimal_structure, grid_oracle, solve_social_optimum
from .wardrop import solve_equilibrium, wardrop_residual

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2
CONTINUUM_TOL = 1e-8


class Report:
    """Scalar summary plus one per-queue (or per-class) table."""

    def __init__(self, command: str):
        self.command = command
        self.summary: dict = {}
        self.tables: dict[str, list[dict]] = {}

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "summary": self.summary, "tables": self.tables}, indent=2, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.summary.items():
            buf.write(f"# {k}={json.dumps(v, default=_jsonable)}\n")
        for name, rows in self.tables.items():
            if not rows:
                continue
            buf.write(f"# table={name}\n")
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"[{self.command}]"]
        for k, v in self.summary.items():
            lines.append(f"  {k}: {_fmt(v)}")
        for name, rows in self.tables.items():
            if not rows:
                continue
            lines.append(f"  {name}:")
            cols = list(rows[0])
            cells = [[_fmt(r[c]) for c in cols] for r in rows]
            widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(cols)]
            lines.append("    " + "  ".join(c.rjust(w) for c, w in zip(cols, widths)))
            for row in cells:
                lines.append("    " + "  ".join(x.rjust(w) for x, w in zip(row, widths)))
        return "\n".join(lines)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if v is None:
        return "-"
    return str(v)


def _queue_label(j: int) -> str:
    return f"Q{j + 1}"


def _rank_map(order) -> dict[int, int]:
    return {q: r + 1 for r, q in enumerate(order)}


class UsageError(ValueError):
    pass


# -- commands ----------------------------------------------------------------


def _solver_opts(sc: Scenario, key: str) -> dict:
    return dict(sc.solver.get(key, {}))


def cmd_optimize(sc: Scenario, args) -> tuple[Report, int]:
    rep = Report("optimize")
    if sc.is_continuum:
        opts = _solver_opts(sc, "continuum")
        res = cont.solve_continuum_optimum(sc.system, **opts)
        alloc = res.allocation
        viol = cont.ordering_violations(sc.system, alloc)
        rep.summary.update(
            U=res.cost,
            kkt_residual=res.kkt_residual,
            orderings_tried=res.orderings_tried,
            used_queue_order=[_queue_label(j) for j in alloc.used_queue_order],
            thresholds=list(alloc.thresholds),
            structure_consistent=not viol,
        )
        rep.tables["queues"] = _continuum_rows(sc.system, alloc)
        ok = res.kkt_residual <= CONTINUUM_TOL
        return rep, EXIT_OK if ok else EXIT_NONCONVERGED

    spec = sc.system
    opts = _solver_opts(sc, "social_opt")
    if args.seed is not None:
        opts["seed"] = args.seed
    elif sc.seed is not None:
        opts.setdefault("seed", sc.seed)
    res = solve_social_optimum(spec, **opts)
    report = check_optimal_structure(spec, res.P_star)
    rank = _rank_map(report.queue_order)
    D = spec.delays(res.gamma_star)
    rep.summary.update(
        U=res.U_star,
        kkt_residual=res.kkt_residual,
        converged=res.converged,
        restarts=res.restarts_used,
        sorted_queue_order=[_queue_label(j) for j in report.queue_order],
        block_bounds=report.block_bounds,
        structure_consistent=report.is_consistent,
        violations=[str(v) for v in report.violations],
        routing=res.P_star.tolist(),
    )
    rep.tables["queues"] = [
        {"queue": _queue_label(j), "sorted_rank": rank[j], "gamma": float(res.gamma_star[j]), "delay": float(D[j])}
        for j in range(spec.N)
    ]
    if args.oracle:
        resolution = sc.solver.get("oracle_resolution") or _auto_resolution(spec.M, spec.N)
        orc = grid_oracle(spec, resolution)
        rep.summary.update(oracle_U=orc.U_star, oracle_resolution=resolution, oracle_delta=res.U_star - orc.U_star)
    return rep, EXIT_OK if res.converged else EXIT_NONCONVERGED


def _auto_resolution(M: int, N: int) -> float:
    # finest grid whose size stays well inside the oracle's evaluation budget
    budget = min(GRID_EVAL_LIMIT, 2 * 10**6)
    steps = 500
    while steps > 2 and math.comb(steps + N - 1, N - 1) ** M > budget:
        steps = int(steps * 0.8)
    return 1.0 / steps


def _continuum_rows(cspec, alloc) -> list[dict]:
    rows = []
    pos = {j: k for k, j in enumerate(alloc.used_queue_order)}
    for j in range(cspec.N):
        if j in pos:
            _, lower, upper = alloc.intervals[pos[j]]
        else:
            lower = upper = None
        g = float(alloc.flows[j])
        rows.append(
            {
                "queue": _queue_label(j),
                "position": pos[j] + 1 if j in pos else None,
                "beta_lower": lower,
                "beta_upper": upper,
                "gamma": g,
                "delay": float(cspec.queues[j].value(g)),
            }
        )
    return rows


def _require_prices(sc: Scenario) -> np.ndarray:
    if sc.prices is None:
        raise UsageError("scenario has no prices")
    return np.array(sc.prices)


def cmd_equilibrium(sc: Scenario, args) -> tuple[Report, int]:
    rep = Report("equilibrium")
    c = _require_prices(sc)
    if sc.is_continuum:
        alloc = cont.solve_continuum_equilibrium(sc.system, c)
        res = cont.indifference_residual(sc.system, c, alloc)
        rep.summary.update(
            residual=res,
            used_queue_order=[_queue_label(j) for j in alloc.used_queue_order],
            thresholds=list(alloc.thresholds),
        )
        rep.tables["queues"] = _continuum_rows(sc.system, alloc)
        return rep, EXIT_OK if res <= CONTINUUM_TOL else EXIT_NONCONVERGED
    spec = sc.system
    opts = _solver_opts(sc, "wardrop")
    seed = args.seed if args.seed is not None else sc.seed
    if seed is not None:
        opts.setdefault("seed", seed)
    res = solve_equilibrium(spec, c, **opts)
    price_rank = _rank_map(np.argsort(-c, kind="stable"))
    rep.summary.update(
        residual=res.residual,
        converged=res.converged,
        iterations=res.iterations,
        per_class_cost=res.per_class_cost.tolist(),
        routing=res.P_w.tolist(),
    )
    rep.tables["queues"] = [
        {"queue": _queue_label(j), "price_rank": price_rank[j], "price": float(c[j]), "gamma": float(res.gamma_w[j])}
        for j in range(spec.N)
    ]
    return rep, EXIT_OK if res.converged else EXIT_NONCONVERGED


def _routing_or_solve(sc: Scenario, args, what: str):
    if sc.routing is not None:
        return sc.routing if sc.is_continuum else sc.routing_matrix()
    if not getattr(args, "solve", False):
        raise UsageError(f"{what} needs routing in the scenario or --solve")
    if sc.is_continuum:
        return cont.solve_continuum_optimum(sc.system, **_solver_opts(sc, "continuum")).allocation
    opts = _solver_opts(sc, "social_opt")
    if args.seed is not None:
        opts["seed"] = args.seed
    return solve_social_optimum(sc.system, **opts).P_star


def cmd_prices(sc: Scenario, args) -> tuple[Report, int]:
    rep = Report("prices")
    routing = _routing_or_solve(sc, args, "prices")
    tol = float(sc.solver.get("certify_tol", 1e-6))
    if sc.is_continuum:
        pr = cont.continuum_pigouvian_prices(sc.system, routing)
        eq = cont.solve_continuum_equilibrium(sc.system, pr.by_queue)
        # unused queues may legitimately stay unused; compare the used part
        gap = np.max(np.abs(eq.flows - routing.flows)) if eq.used_queue_order == routing.used_queue_order else math.inf
        rep.summary.update(certified=bool(gap <= tol), flow_gap=gap)
    else:
        pr = pigouvian_prices(sc.system, routing)
        cert = certify_prices(sc.system, routing, pr.by_queue, tol)
        rep.summary.update(certified=cert.certified, residual=cert.residual)
    rank = _rank_map(pr.order)
    rep.summary.update(
        prices_by_queue=pr.by_queue.tolist(),
        prices_sorted=pr.sorted.tolist(),
        sorted_queue_order=[_queue_label(j) for j in pr.order],
        unused=[_queue_label(j) for j in pr.unused],
        certify_tol=tol,
    )
    rep.tables["queues"] = [
        {"queue": _queue_label(j), "sorted_rank": rank[j], "price": float(pr.by_queue[j])} for j in range(len(pr.by_queue))
    ]
    return rep, EXIT_OK


def cmd_verify(sc: Scenario, args) -> tuple[Report, int]:
    rep = Report("verify")
    if sc.routing is None:
        raise UsageError("verify needs routing in the scenario")
    tol = float(sc.solver.get("verify_tol", 1e-6))
    checks = {}
    if sc.is_continuum:
        alloc = sc.routing
        viol = cont.ordering_violations(sc.system, alloc)
        checks["ordering"] = not viol
        rep.summary["violations"] = [f"{_queue_label(a)} !< {_queue_label(b)}" for a, b in viol]
        if sc.prices is not None:
            env = cont.envelope_violation(sc.system, np.array(sc.prices), alloc)
            rep.summary["equilibrium_violation"] = env
            checks["equilibrium"] = env <= tol
    else:
        P = sc.routing_matrix()
        report = check_optimal_structure(sc.system, P, tol)
        checks["structure"] = report.is_consistent
        rep.summary.update(
            U=social_cost(sc.system, P),
            sorted_queue_order=[_queue_label(j) for j in report.queue_order],
            block_bounds=report.block_bounds,
            violations=[str(v) for v in report.violations],
        )
        if sc.prices is not None:
            try:
                res = wardrop_residual(sc.system, sc.prices, P)
            except InfeasibleError:
                res = math.inf
            rep.summary["wardrop_residual"] = res
            checks["equilibrium"] = res <= tol
    rep.summary["tol"] = tol
    rep.summary["checks"] = checks
    rep.summary["passed"] = all(checks.values())
    return rep, EXIT_OK if all(checks.values()) else EXIT_NONCONVERGED


def cmd_simulate(sc: Scenario, args) -> tuple[Report, int]:
    rep = Report("simulate")
    if sc.is_continuum:
        raise UsageError("simulation needs a discrete-class system")
    if sc.sim is None:
        raise UsageError("scenario has no sim configuration")
    cfg = sc.sim
    seed = args.seed if args.seed is not None else (sc.seed if sc.seed is not None else cfg.seed)
    cfg = SimConfig.from_dict({**cfg.to_dict(), "seed": seed})
    P = _routing_or_solve(sc, args, "simulate")
    r = simulate(sc.system, P, cfg)
    cmp = compare_to_analytic(sc.system, P, cfg, report=r)
    lz = r.littles_law_z()
    rep.summary.update(
        U=r.U, U_ci=r.U_ci, U_analytic=social_cost(sc.system, P), events_processed=r.events_processed, backend=r.backend, seed=seed
    )
    rep.tables["queues"] = [
        {
            "queue": _queue_label(c.queue),
            "analytic": c.analytic,
            "empirical": c.empirical if c.empirical is not None else "no samples",
            "z": c.z,
            "mean_sojourn": float(r.queue_mean_sojourn[c.queue]),
            "sojourn_ci": float(r.queue_sojourn_ci[c.queue]),
            "tail": float(r.queue_tail[c.queue]),
            "tail_ci": float(r.queue_tail_ci[c.queue]),
            "arrival_rate": float(r.queue_arrival_rate[c.queue]),
            "little_z": float(lz[c.queue]),
            "note": c.note,
        }
        for c in cmp
    ]
    rep.tables["classes"] = [
        {
            "class": i + 1,
            "mean_sojourn": float(r.class_mean_sojourn[i]),
            "sojourn_ci": float(r.class_sojourn_ci[i]),
            "mean_cost": float(r.class_mean_cost[i]),
            "cost_ci": float(r.class_cost_ci[i]),
        }
        for i in range(sc.system.M)
    ]
    return rep, EXIT_OK


COMMANDS = {
    "optimize": cmd_optimize,
    "equilibrium": cmd_equilibrium,
    "prices": cmd_prices,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="queuetoll", description="Optimal routing, equilibria and admission prices for parallel queues.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", help="write the machine-readable report here")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="format for --out (default json)")
    p.add_argument("--seed", type=int, help="overrides the scenario seed")
    p.add_argument("--oracle", action="store_true", help="optimize: also run the exhaustive grid oracle")
    p.add_argument("--solve", action="store_true", help="prices/simulate: compute the optimal routing first")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        sc = Scenario.load(args.scenario)
        report, code = COMMANDS[args.command](sc, args)
    except (ScenarioError, UsageError, ValueError, OSError) as exc:
        # InfeasibleError and every validation error are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(report.to_text())
    if args.out:
        text = report.to_json() if args.format == "json" else report.to_csv()
        Path(args.out).write_text(text + ("\n" if not text.endswith("\n") else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
