"""Command line entry point.

Exit codes: 0 ok, 1 usage or bad input, 2 infeasible result, 3 oracle mismatch.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, padd, scenarios
from .allocation import InfeasibleError as AllocationInfeasible
from .association import InfeasibleError as BackhaulInfeasible
from .model import ConfigError, RngStream, SystemConfig, check_feasibility, config_to_dict, load_config

OK, USAGE, INFEASIBLE, MISMATCH = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 means "infeasible" here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def _config(path) -> SystemConfig:
    return load_config(path) if path else SystemConfig()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    data = json.loads(Path(args.spec).read_text())
    if args.workers is not None:
        data["workers"] = args.workers
    spec = harness.ExperimentSpec.from_dict(data)
    cfg = load_config(args.config) if args.config else None
    report = harness.run_experiment(spec, cfg)
    out = report.write(args.out)
    print(f"{len(report.rows)} runs -> {out}")
    for e in report.errors:
        print(f"infeasible: {e['run']}: {e['diagnostics']}", file=sys.stderr)
    return OK if report.feasible else INFEASIBLE


def cmd_oracle(args) -> int:
    from .allocation import fuzz
    recs = fuzz.fuzz(args.n, args.seed)
    bad = 0
    for case in fuzz.CASES:
        for alpha in fuzz.ALPHAS:
            cell = [r for r in recs if r.case == case and r.alpha == alpha]
            nbad = sum(not r.ok(args.rtol, args.residual_tol) for r in cell)
            bad += nbad
            print(f"{case:13s} alpha={harness.alpha_name(alpha):4s} n={len(cell)} "
                  f"max_rel={max(r.rel_diff for r in cell):.2e} "
                  f"max_res={max(r.residual for r in cell):.2e} mismatches={nbad}")
    return MISMATCH if bad else OK


def cmd_mc(args) -> int:
    cfg = _config(args.config)
    inst = scenarios.build_instance(args.scenario, args.seed, args.kind, cfg, n_drones=args.fleet)
    alphas = [harness.parse_alpha(a) for a in args.alpha]
    res = harness.monte_carlo_search(inst.topology, cfg, args.runs, RngStream(args.seed, "mc"), alphas,
                                     inst.n_drones, inst.shadows)
    out, status = {}, OK
    for a in alphas:
        r = res[a]
        feasible = bool(check_feasibility(r.state, r.best.budget, cfg))
        status = status if feasible else INFEASIBLE
        out[harness.alpha_name(a)] = {"utility": harness._json_num(r.best.utility), "best_run": r.best_run,
                                      "positions": r.positions.tolist(), "feasible": feasible}
        print(f"alpha={harness.alpha_name(a)} best utility {r.best.utility:.6g} at sample {r.best_run}")
    if args.out:
        _write_json(args.out, {"scenario": args.scenario, "seed": args.seed, "runs": args.runs,
                               "fleet": inst.n_drones, "best": out})
    return status


def cmd_trace(args) -> int:
    cfg = _config(args.config)
    alpha = harness.parse_alpha(args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario == "event":
        summ, traj, traces = harness.run_event(cfg, args.seed, args.epochs, args.fleet or 5, alpha,
                                               max_iter=args.max_iter, workers=args.workers)
        with open(out / "trace.jsonl", "w") as fh:
            for ep, tr in enumerate(traces):
                for r in tr.records():
                    fh.write(json.dumps({"epoch": ep, **r}) + "\n")
        harness.write_trajectories(out / "trajectories.csv", traj)
        _write_json(out / "summary.json", {"epochs": summ})
        feasible = all(s["feasible"] for s in summ)
        print(f"{len(summ)} epochs -> {out}")
    else:
        if args.scenario not in scenarios.PRESETS:
            print(f"unknown scenario {args.scenario!r}; choose event or one of {sorted(scenarios.PRESETS)}",
                  file=sys.stderr)
            return USAGE
        inst = scenarios.build_instance(args.scenario, args.seed, args.kind, cfg, n_drones=args.fleet)
        state, tr = padd.optimize(inst.topology, cfg, RngStream(args.seed, "trace"), args.max_iter, alpha,
                                  inst.shadows, workers=args.workers, n_drones=inst.n_drones)
        tr.to_jsonl(out / "trace.jsonl")
        harness.write_trajectories(out / "trajectories.csv",
                                   [(args.scenario, step, a, *map(float, p))
                                    for step, fl in enumerate(tr.positions) for a, p in enumerate(fl)])
        _write_json(out / "summary.json", tr.summary())
        feasible = bool(check_feasibility(state, tr.evaluation.budget, cfg))
        print(f"{tr.n_moves} moves, utility {tr.initial_utility:.6g} -> {tr.final_utility:.6g} ({tr.reason})")
    return OK if feasible else INFEASIBLE


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    if args.print:
        print(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    else:
        print("ok")
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dronerelay", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment grid from a JSON spec")
    r.add_argument("spec")
    r.add_argument("--out", default="results")
    r.add_argument("--config", help="system config JSON (overrides the experiment spec's config block)")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="fuzz the exact allocator against the numeric oracle")
    o.add_argument("--n", type=int, default=100, help="instances per structural case and alpha")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--rtol", type=float, default=1e-5)
    o.add_argument("--residual-tol", type=float, default=1e-9)
    o.set_defaults(func=cmd_oracle)

    m = sub.add_parser("mc", help="Monte-Carlo baseline on a preset instance")
    m.add_argument("--scenario", default="tiny", choices=sorted(scenarios.PRESETS))
    m.add_argument("--kind", default="ppp", choices=["ppp", "stadium"])
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--runs", type=int, default=1000)
    m.add_argument("--fleet", type=int)
    m.add_argument("--alpha", nargs="+", default=["1"])
    m.add_argument("--config")
    m.add_argument("--out", help="write the best fleets as JSON")
    m.set_defaults(func=cmd_mc)

    t = sub.add_parser("trace", help="PADD iteration trace and drone trajectories")
    t.add_argument("scenario", help="preset name or 'event'")
    t.add_argument("--kind", default="ppp", choices=["ppp", "stadium"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--alpha", default="1")
    t.add_argument("--fleet", type=int)
    t.add_argument("--max-iter", type=int, default=100)
    t.add_argument("--epochs", type=int, default=15, help="event only")
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--config")
    t.add_argument("--out", default="trace")
    t.set_defaults(func=cmd_trace)

    v = sub.add_parser("validate", help="check a system config file")
    v.add_argument("config")
    v.add_argument("--print", action="store_true", help="print the config with defaults filled in")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BackhaulInfeasible, AllocationInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return INFEASIBLE
    except (ConfigError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
