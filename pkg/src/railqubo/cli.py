"""Command-line front end: ``railqubo solve | export-qubo | validate``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

from .fileio import InstanceFileError, iteration_records, load_instance, schedule_record, write_qubo
from .hybrid import DispatchConfig, annealing_constants, run, solve_routing
from .linear import EnumerationCapError, build_linear_model, count_variables
from .model import DispatchError, DispatchInstance, Routing, unavoidable_departures
from .qubo import PenaltyConstants, assemble, default_constants, index_variables
from .solvers import AnnealParams, BetaSchedule, SolverError

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2
MODES = {"linear": "linear-oracle", "qubo-brute": "qubo-brute", "qubo-anneal": "qubo-anneal"}


@dataclass
class RunReport:
    mode: str
    instance: dict
    schedule: list[dict]
    objective: float
    feasible: bool
    violations: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    iterations: Optional[list[dict]] = None
    terminated_by: Optional[str] = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if v is not None}
        return out

    def render(self) -> str:
        inst = self.instance
        lines = [
            f"instance {inst['name'] or '-'}: {inst['trains']} trains, {inst['stations']} stations",
            f"variables: #t = {inst['num_time']}, #y = {inst['num_precedence']} "
            f"(raw {inst['num_precedence_raw']}), #x = {inst['num_x']}, #aux = {inst['num_aux']}",
            f"mode: {self.mode}",
            "",
        ]
        header = ("train", "station", "scheduled", "realized", "d_U", "d_s")
        rows = [header] + [tuple(_fmt(r[k]) for k in ("train", "station", "scheduled", "realized", "d_U", "d_s"))
                           for r in self.schedule]
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        for n, row in enumerate(rows):
            lines.append("  ".join(c.rjust(w) if n and i > 1 else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))))
        lines.append("")
        status = "feasible" if self.feasible else "INFEASIBLE"
        lines.append(f"objective: {_fmt(self.objective)} ({status})")
        lines.extend(f"  violation: {v}" for v in self.violations)
        if self.iterations:
            lines.append("")
            lines.append("iterations:")
            for rec in self.iterations:
                lines.append(f"  {rec['iteration']}: objective {_fmt(rec['objective'])}"
                             f"{'' if rec['feasible'] else ' (infeasible)'}"
                             + (f", routing {'; '.join(rec['routing_delta'])}" if rec["routing_delta"] else "")
                             + (f", conflict {rec['conflict']}" if rec["conflict"] else "")
                             + (f", move {rec['move']}" if rec["move"] else ""))
            lines.append(f"terminated: {self.terminated_by}")
        if self.stats:
            lines.append("stats: " + ", ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items()))
        return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def instance_summary(instance: DispatchInstance, routing: Routing, num_aux: Optional[int] = None) -> dict:
    counts = count_variables(build_linear_model(instance, routing))
    if num_aux is None:
        num_aux = len(assemble(instance, routing).index.aux)
    return {
        "name": instance.name,
        "trains": len(instance.trains),
        "stations": len(instance.stations),
        "num_time": counts.num_time,
        "num_precedence": counts.num_precedence,
        "num_precedence_raw": counts.num_precedence_raw,
        "num_x": index_variables(instance, routing).num_x,
        "num_aux": num_aux,
    }


def schedule_table(instance: DispatchInstance, schedule) -> list[dict]:
    earliest = unavoidable_departures(instance)
    rows = []
    for train in instance.trains:
        for s in train.departures():
            key = (train.id, s)
            planned = train.schedule[(s, "out")]
            rows.append({
                "train": train.id,
                "station": s,
                "scheduled": planned,
                "realized": schedule.departure.get(key),
                "d_U": instance.minutes(earliest[key] - instance.units(planned)),
                "d_s": schedule.secondary_delay.get(key),
            })
    return rows


def _constants(args, instance, routing, mode) -> Optional[PenaltyConstants]:
    given = {k: getattr(args, k) for k in ("p_sum", "p_pair", "p_qubic")}
    if all(v is None for v in given.values()):
        return None
    if mode == "qubo-anneal":
        base = annealing_constants(instance, build_linear_model(instance, routing))
    else:
        base = default_constants(instance)
    return PenaltyConstants(*(given[k] if given[k] is not None else getattr(base, k)
                              for k in ("p_sum", "p_pair", "p_qubic")))


def _anneal(args) -> AnnealParams:
    return AnnealParams(args.sweeps, args.restarts, BetaSchedule(args.beta_min, args.beta_max, args.beta_shape), args.seed)


def cmd_solve(args) -> int:
    instance, routing = load_instance(args.instance, args.resolution)
    if args.mode == "hybrid":
        inner = MODES[args.solver]
        config = DispatchConfig(args.threshold, args.max_iter, inner, _anneal(args),
                                _constants(args, instance, routing, inner))
        result = run(instance, routing, config)
        sched, final = result.best_schedule, result.best_routing
        iterations, terminated = iteration_records(result), result.terminated_by
        stats = {"inner_solver": inner}
    else:
        mode = MODES[args.mode]
        config = DispatchConfig(solver_mode=mode, anneal=_anneal(args),
                                constants=_constants(args, instance, routing, mode))
        sched, _, stats = solve_routing(instance, routing, config)
        final, iterations, terminated = routing, None, None
    report = RunReport(
        mode=args.mode,
        instance=instance_summary(instance, final),
        schedule=schedule_table(instance, sched),
        objective=sched.objective,
        feasible=sched.feasible,
        violations=[str(v) for v in sched.violations],
        stats=stats,
        iterations=iterations,
        terminated_by=terminated,
    )
    if args.structured:
        print(json.dumps(report.to_dict(), indent=1, default=str))
    else:
        print(report.render())
    return EXIT_OK if sched.feasible else EXIT_INFEASIBLE


def cmd_export(args) -> int:
    instance, routing = load_instance(args.instance, args.resolution)
    constants = _constants(args, instance, routing, "qubo-brute")
    model = assemble(instance, routing, constants)
    path, sidecar = write_qubo(model, args.out)
    summary = {"out": str(path), "sidecar": str(sidecar), "n": model.n, "num_x": model.index.num_x,
               "num_aux": len(model.index.aux), "linear_terms": len(model.linear),
               "quadratic_terms": len(model.quadratic), "floor": model.floor}
    if args.structured:
        print(json.dumps(summary, indent=1))
    else:
        print(f"wrote {path} ({model.index.num_x} time-indexed + {len(model.index.aux)} auxiliary variables, "
              f"{len(model.linear)} linear and {len(model.quadratic)} quadratic terms); map in {sidecar}")
    return EXIT_OK


def cmd_validate(args) -> int:
    instance, routing = load_instance(args.instance, args.resolution)
    summary = instance_summary(instance, routing)
    if args.structured:
        print(json.dumps({"valid": True, **summary}, indent=1))
    else:
        print(f"{args.instance}: valid; {summary['trains']} trains, {summary['stations']} stations, "
              f"#t = {summary['num_time']}, #y = {summary['num_precedence']}, #x = {summary['num_x']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="railqubo", description="Train dispatching as linear and QUBO models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--instance", required=True, help="instance file (TOML)")
        p.add_argument("--resolution", type=int, default=None, help="grid steps per minute (overrides the file)")
        p.add_argument("--structured", action="store_true", help="emit JSON instead of a table")

    def penalties(p):
        p.add_argument("--p-sum", type=float, default=None)
        p.add_argument("--p-pair", type=float, default=None)
        p.add_argument("--p-qubic", type=float, default=None)

    solve = sub.add_parser("solve", help="solve an instance")
    common(solve)
    penalties(solve)
    solve.add_argument("--mode", required=True, choices=["linear", "qubo-brute", "qubo-anneal", "hybrid"])
    solve.add_argument("--solver", default="linear", choices=list(MODES), help="inner solver of the hybrid loop")
    solve.add_argument("--threshold", type=float, default=0.0, help="satisfactory objective (hybrid)")
    solve.add_argument("--max-iter", type=int, default=10)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--sweeps", type=int, default=AnnealParams.sweeps)
    solve.add_argument("--restarts", type=int, default=AnnealParams.restarts)
    solve.add_argument("--beta-min", type=float, default=BetaSchedule.beta_min)
    solve.add_argument("--beta-max", type=float, default=BetaSchedule.beta_max)
    solve.add_argument("--beta-shape", default=BetaSchedule.shape, choices=["geometric", "linear"])
    solve.set_defaults(func=cmd_solve)

    export = sub.add_parser("export-qubo", help="write the QUBO of the instance's routing")
    common(export)
    penalties(export)
    export.add_argument("--out", required=True)
    export.set_defaults(func=cmd_export)

    validate = sub.add_parser("validate", help="check an instance file")
    common(validate)
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InstanceFileError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    except (EnumerationCapError, SolverError, DispatchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
