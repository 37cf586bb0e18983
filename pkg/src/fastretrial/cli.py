"""Command-line entry point: ``fastretrial {analyze,simulate,design,sweep,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from fastretrial import analytic, experiments, oracles, simulator
from fastretrial.lambertw import lambert_grid, lambert_w0
from fastretrial.errors import (
    BoundExceededError,
    InfeasibleRateError,
    InvalidConfigError,
    LambertDomainError,
    NoPositiveRootError,
    UnachievableTargetError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_NO_ROOT = 4
EXIT_DIVERGED = 5

logger = logging.getLogger("fastretrial")


def _text_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _emit(report: dict, fmt: str, out) -> None:
    if fmt == "json":
        out.write(json.dumps(_round(report), indent=1) + "\n")
    elif fmt == "csv":
        out.write(experiments.to_csv([_flatten(report)]))
    else:
        for k, v in _flatten(report).items():
            out.write(f"{k:<28} {_text_value(v)}\n")


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return experiments.fmt_number(obj)


def _flatten(obj, prefix: str = "") -> dict:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            for i, item in enumerate(v, 1):
                out[f"{key}.{i}"] = item
        else:
            out[key] = v
    return out


def _system(args) -> analytic.SystemConfig:
    return analytic.SystemConfig(args.devices, args.preambles, args.rate)


def _mode(args):
    return "asymptotic" if args.asymptotic else args.mode


def _stability_message(cfg: analytic.SystemConfig) -> str:
    return (f"lambda = {cfg.arrival_rate:.6g} >= lambda_max = {analytic.lambda_max(cfg):.4f} "
            "(stability condition violated)")


def cmd_analyze(args, out) -> int:
    cfg = _system(args)
    if not analytic.is_stable(cfg):
        raise InfeasibleRateError(_stability_message(cfg))
    sol = analytic.analyze(cfg, _mode(args))
    report = sol.to_dict()
    report["tail"] = {str(t): sol.tail(t) for t in range(1, args.max_tau + 1)}
    _emit(report, args.format, out)
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    cfg = _system(args)
    runs = experiments.PAPER_RUNS if args.paper_scale else args.runs
    sim = simulator.SimConfig(cfg, total_slots=args.slots, warmup_slots=args.warmup,
                              num_runs=runs, master_seed=args.seed, max_tau=args.max_tau)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            simulator.write_trace(sim, args.trace_run, fh)
    est = simulator.run_simulation(sim, threads=args.threads)
    report = {"config": sim.to_dict(), "estimate": est.to_dict()}
    try:
        report["estimate"]["empirical_p"] = simulator.empirical_success_prob(est)
    except ValueError:
        report["estimate"]["empirical_p"] = None
    try:
        sol = analytic.analyze(cfg, _mode(args))
        report["analytic"] = sol.to_dict()
        report["analytic"]["tail"] = [sol.tail(t) for t in range(1, args.max_tau + 1)]
    except (InfeasibleRateError, NoPositiveRootError, LambertDomainError) as exc:
        report["analytic"] = {"error": str(exc)}
    _emit(report, args.format, out)
    if est.diverged_runs:
        logger.error("%d of %d runs diverged (queue above %d)", est.diverged_runs, runs,
                     simulator.DIVERGENCE_GUARD)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_design(args, out) -> int:
    target = analytic.QosTarget(args.tau, args.epsilon)
    need = analytic.required_exponent(target)
    lam_star = analytic.max_arrival_rate(args.devices, args.preambles, target, _mode(args))
    sol = analytic.analyze(analytic.SystemConfig(args.devices, args.preambles, lam_star), _mode(args))
    report = {
        "n_devices": args.devices,
        "n_preambles": args.preambles,
        "tau": args.tau,
        "epsilon": args.epsilon,
        "required_theta": need,
        "max_arrival_rate": lam_star,
        "theta_star_at_max": sol.theta_star,
        "tail_at_max": sol.tail(args.tau),
        "lambda_max": sol.lambda_max,
        "max_devices_stable": analytic.max_devices(args.preambles, lam_star),
        "min_preambles_stable": analytic.min_preambles(args.devices, lam_star),
    }
    _emit(report, args.format, out)
    return EXIT_OK


def cmd_sweep(args, out) -> int:
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            specs = [experiments.SweepSpec.load(fh)]
    elif args.figure == "all":
        specs = [experiments.load_figure(n) for n in experiments.figure_names()]
    else:
        specs = [experiments.load_figure(args.figure)]
    status = EXIT_OK
    for spec in specs:
        rows = experiments.run_spec(spec, paper_scale=args.paper_scale)
        text = experiments.to_json(rows) + "\n" if args.format == "json" else experiments.to_csv(rows)
        if args.outdir:
            path = Path(args.outdir) / experiments.output_name(spec, args.format)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8", newline="")
            logger.info("wrote %s", path)
        else:
            out.write(text)
        if any(r.get("status") == "diverged" for r in rows):
            status = EXIT_DIVERGED
    return status


def cmd_selftest(args, out) -> int:
    results = []

    worst = 0.0
    for L in (2, 3, 5):
        for N in range(L, 13):
            for i in range(1, 10):
                a = i / 10
                cfg = analytic.SystemConfig(N, L, 0.01)
                worst = max(worst,
                            abs(oracles.binomial_success_sum(N, L, a) - analytic.success_prob(a, cfg)),
                            abs(oracles.binomial_throughput_sum(N, L, a) - analytic.total_throughput(a, cfg)))
    results.append(("binomial identity", worst <= 1e-12, f"max abs error {worst:.3g}"))

    worst = 0.0
    grid = lambert_grid()
    for x in grid:
        w = lambert_w0(x)
        worst = max(worst, abs(w * math.exp(w) - x) / max(1.0, abs(x)))
    bis = max(abs(lambert_w0(x) - oracles.bisect_product_log(x)) for x in grid[::50])
    results.append(("W0 inverse identity", worst <= 1e-12 and bis <= 1e-9,
                    f"max residual {worst:.3g}, max gap to bisection {bis:.3g}"))

    chk = oracles.saturated_collision_check()
    results.append(("saturated collision rate", chk.relative_error <= 0.01,
                    f"{chk.rate:.6f} vs {chk.expected:.6f} over {chk.attempts} attempts"))

    for name, ok, detail in results:
        out.write(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}\n")
    return EXIT_OK if all(ok for _, ok, _ in results) else 1


def _add_system(p: argparse.ArgumentParser, rate: bool = True) -> None:
    p.add_argument("--devices", "-N", type=int, required=True, help="number of devices N")
    p.add_argument("--preambles", "-L", type=int, required=True, help="number of preambles L")
    if rate:
        p.add_argument("--rate", type=float, required=True, help="Poisson arrival rate per device per slot")
    p.add_argument("--mode", choices=("finite", "asymptotic"), default=None,
                   help="finite-N or Lambert W formulas (default: finite up to 10^4 devices)")
    p.add_argument("--asymptotic", action="store_true", help="shorthand for --mode asymptotic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastretrial",
        description="QoS exponent analysis and simulation of 2-step random access with fast retrial.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="write the report to this file instead of stdout")
    common.add_argument("--format", choices=("text", "json", "csv"), default="text")
    common.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="steady-state analysis of one configuration")
    _add_system(p)
    p.add_argument("--max-tau", type=int, default=4)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo simulation with analytic comparison")
    _add_system(p)
    p.add_argument("--slots", type=int, default=4000)
    p.add_argument("--warmup", type=int, default=2000)
    p.add_argument("--runs", type=int, default=experiments.DESK_RUNS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-tau", type=int, default=4)
    p.add_argument("--paper-scale", action="store_true", help=f"use {experiments.PAPER_RUNS} runs")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $FAST_RETRIAL_THREADS, 0 = all cores)")
    p.add_argument("--trace", help="also dump a per-device trace of one run to this file")
    p.add_argument("--trace-run", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design", parents=[common], help="largest arrival rate meeting Pr(q >= tau) <= epsilon")
    _add_system(p, rate=False)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("sweep", parents=[common], help="regenerate a figure table")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec", help="JSON sweep spec file")
    g.add_argument("--figure", help="built-in figure name, or 'all'")
    p.add_argument("--outdir", help="write fig<k>_<var>.<fmt> files here")
    p.add_argument("--paper-scale", action="store_true", help=f"use {experiments.PAPER_RUNS} runs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", parents=[common], help="run brute-force oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep" and args.format == "text":
        args.format = "csv"
    out = open(args.output, "w", encoding="utf-8", newline="") if args.output else sys.stdout
    try:
        return args.func(args, out)
    except InfeasibleRateError as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UnachievableTargetError, BoundExceededError, LambertDomainError) as exc:
        print(f"error: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NoPositiveRootError as exc:
        print(f"error: no positive QoS exponent: {exc}", file=sys.stderr)
        return EXIT_NO_ROOT
    except InvalidConfigError as exc:
        print(f"error: invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if out is not sys.stdout:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
