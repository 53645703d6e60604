"""Command-line entry point.

Every command writes into a run directory: ``--out`` if given, otherwise
``$ZONAL_MARKET_OUT/<command>-<timestamp>`` (default root ``./runs``).
Each run directory gets a ``manifest.json`` listing the files written with
their SHA-256; the manifest carries no timestamps, so reruns with the same
arguments and seed produce byte-identical files.

Exit codes: 0 success, 2 usage or config error, 3 infeasible scenario,
4 non-convergence (the partial report is still written).

Settings come from the scenario file; command-line flags override them.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .equilibrium import PenaltySchedule, gauss_seidel_run, potential_solve
from .errors import InfeasibleError, NoFeasiblePointError, ParseError
from .lp_clearing import check_slater, clear_market, kkt_residual
from .marl import evaluate_policy, load_checkpoint, save_checkpoint, train_run
from .metrics import Outcome, emit_plot_data, summarize_run
from .scenario import (ScenarioConfig, benchmark_config, coupling_grid, load_scenario,
                       scenario_demand, scenario_template)

OUT_ENV = "ZONAL_MARKET_OUT"
EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4

log = logging.getLogger("zonal_market")


class UsageError(Exception):
    pass


# Helpers ---------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _clearing_dict(instance, res) -> dict:
    return {
        "total_cost": res.total_cost,
        "revenue": res.revenue.tolist(),
        "clearing_prices": res.demand_duals.tolist(),
        "export_duals": res.export_duals.tolist(),
        "core_duals": res.core_duals.tolist(),
        "capacity_duals": res.capacity_duals.tolist(),
        "fractions": res.fractions.tolist(),
        "ladders": [[list(p) for p in l.pairs] for l in instance.ladders],
        "kkt": vars(kkt_residual(instance, res)),
    }


def _range(spec: str) -> tuple[float, float, int]:
    """Parse ``lo:hi:steps``."""
    try:
        lo, hi, n = spec.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise UsageError(f"expected lo:hi:steps, got {spec!r}") from None


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, args, command: str):
        if args.out is not None:
            self.dir = Path(args.out)
        else:
            root = Path(os.environ.get(OUT_ENV, "runs"))
            stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S")
            self.dir = root / f"{command}-{stamp}"
            i = 1
            while self.dir.exists():
                self.dir = root / f"{command}-{stamp}-{i}"
                i += 1
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.argv = list(args.argv)
        self.files: list[Path] = []

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.files.append(path)
        return path

    def add(self, path: Path) -> None:
        self.files.append(Path(path))

    def finish(self, seed: int, config: ScenarioConfig, status: str) -> None:
        files = {}
        for p in sorted(set(self.files)):
            files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "seed": seed,
            "status": status,
            "version": __version__,
            "config_sha256": hashlib.sha256(
                config.model_dump_json().encode()).hexdigest(),
            "files": files,
        }
        (self.dir / "manifest.json").write_text(_dump(manifest))


def _load_config(args) -> ScenarioConfig:
    cfg = benchmark_config() if args.scenario is None else load_scenario(args.scenario)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _days(args, series) -> list[int]:
    spec = getattr(args, "day", None)
    if spec is None:
        return [0]
    if spec == "all":
        return list(range(len(series)))
    out = []
    for part in spec.split(","):
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b)))
        elif "-" in part:
            out.append(series.day(part))
        else:
            out.append(int(part))
    for t in out:
        if not 0 <= t < len(series):
            raise UsageError(f"day index {t} outside series of {len(series)} days")
    return out


def _marl_config(cfg: ScenarioConfig, args):
    m = cfg.marl
    upd = {}
    if getattr(args, "agents", None):
        upd["learning_agents"] = (None if args.agents == "all"
                                  else tuple(int(a) for a in args.agents.split(",")))
    if upd:
        m = m.model_copy(update=upd)
    return m.marl_config()


# Commands --------------------------------------------------------------------

def cmd_clear(args, cfg, run) -> int:
    series = scenario_demand(cfg)
    template = scenario_template(cfg, series)
    out = []
    for t in _days(args, series):
        inst = template.with_demand(series.values[t])
        res = clear_market(inst)
        out.append({"date": series.dates[t].isoformat(), **_clearing_dict(inst, res)})
    run.write("clearing.json", _dump(out[0] if len(out) == 1 else out))
    return EXIT_OK


def cmd_slater(args, cfg, run) -> int:
    series = scenario_demand(cfg)
    template = scenario_template(cfg, series)
    inst = template.with_demand(series.values.max(axis=0)) if args.peak else template
    v = check_slater(inst)
    run.write("slater.json", _dump({
        "demand": inst.demand.tolist(), "condition_i": list(v.condition_i),
        "condition_ii": list(v.condition_ii), "overall": v.overall}))
    return EXIT_OK


def _equilibrium_days(args, cfg, run, method: str) -> int:
    series = scenario_demand(cfg)
    template = scenario_template(cfg, series)
    eq = cfg.equilibrium
    reports, results, instances = [], [], []
    status = EXIT_OK
    for t in _days(args, series):
        inst = template.with_demand(series.values[t])
        if method == "br":
            rep = gauss_seidel_run(
                inst, eps=args.eps if args.eps is not None else eq.eps,
                tau0=eq.tau0, tau_min=eq.tau_min,
                max_sweeps=args.max_sweeps if args.max_sweeps is not None else eq.max_sweeps,
                lower_level=args.lower_level or eq.lower_level, seed=cfg.seed,
                compute_gaps=not args.no_gaps)
        else:
            sched = PenaltySchedule(eq.penalty_start, eq.penalty_stop, eq.penalty_rounds)
            rep = potential_solve(inst, starts=args.starts or eq.starts, schedule=sched,
                                  seed=cfg.seed, jobs=args.jobs, compute_gaps=not args.no_gaps)
        if not rep.converged:
            status = EXIT_NONCONVERGED
        d = rep.to_dict()
        d["date"] = series.dates[t].isoformat()
        reports.append(d)
        cleared = rep.profile.instance(inst)
        instances.append(cleared)
        results.append(Outcome.from_fractions(cleared, rep.profile.fractions))
    name = "equilibrium.json" if method == "br" else "potential.json"
    run.write(name, _dump(reports[0] if len(reports) == 1 else reports))
    tag = "best_response" if method == "br" else "potential"
    summary = summarize_run(results, tag, instances)
    for p in emit_plot_data([summary], None, run.dir):
        run.add(p)
    return status


def cmd_br(args, cfg, run) -> int:
    return _equilibrium_days(args, cfg, run, "br")


def cmd_potential(args, cfg, run) -> int:
    return _equilibrium_days(args, cfg, run, "potential")


def cmd_train(args, cfg, run) -> int:
    series = scenario_demand(cfg)
    template = scenario_template(cfg, series)
    episodes = args.episodes if args.episodes is not None else cfg.marl.episodes
    bundle, trace = train_run(template, series, _marl_config(cfg, args), episodes, cfg.seed)
    run.add(save_checkpoint(bundle, run.dir / "checkpoint.npz"))
    run.add(trace.write_csv(run.dir / "trace.csv"))
    ev = evaluate_policy(bundle, template, series)
    summaries = []
    if ev.results:
        insts = [template.with_demand(series.values[t]).with_ladders(ev.ladders[t])
                 for t in range(len(ev.results))]
        summaries.append(summarize_run(ev.results, args.tag, insts))
    for p in emit_plot_data(summaries, {args.tag: trace}, run.dir):
        run.add(p)
    return EXIT_OK


def cmd_evaluate(args, cfg, run) -> int:
    series = scenario_demand(cfg)
    template = scenario_template(cfg, series)
    bundle = load_checkpoint(args.policy, template)
    ev = evaluate_policy(bundle, template, series)
    run.write("evaluation.json", _dump({
        **ev.summary(), "costs": ev.costs.tolist(), "prices": ev.prices.tolist(),
        "profits": ev.profits.tolist()}))
    summaries = []
    if ev.results:
        insts = [template.with_demand(series.values[t]).with_ladders(ev.ladders[t])
                 for t in range(len(ev.results))]
        summaries.append(summarize_run(ev.results, args.tag, insts))
    for p in emit_plot_data(summaries, None, run.dir):
        run.add(p)
    return EXIT_OK


def _sweep_point(policy: str, template, series, c0: float, c1: float) -> dict:
    bundle = load_checkpoint(policy, template)
    ev = evaluate_policy(bundle, template, series)
    return {"c0": c0, "c1": c1, "export": template.export_limit.tolist(),
            "zone_cost": ev.zone_costs.mean(axis=0).tolist(), "mean_cost": float(ev.costs.mean())}


def cmd_sweep(args, cfg, run) -> int:
    series = scenario_demand(cfg)
    base = scenario_template(cfg, series)
    g0, g1 = _range(args.cg), _range(args.ca)
    steps = (g0[2], g1[2])
    grid = coupling_grid(g0[:2], g1[:2], steps, series, base, mode=args.mode)
    jobs = [(args.policy, inst, series.values, c0, c1) for c0, c1, inst in grid]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            points = list(pool.map(_sweep_point, *zip(*jobs)))
    else:
        points = [_sweep_point(*j) for j in jobs]
    for pt in points:
        pt["algorithm"] = args.tag
    run.write("sweep.json", _dump(points))
    for p in emit_plot_data([], None, run.dir, sweep=points):
        run.add(p)
    return EXIT_OK


def cmd_report(args, cfg, run) -> int:
    """Merge the summaries and sweeps of earlier run directories."""
    from .metrics import RunSummary
    from .marl.training import TraceRow, TrainingTrace
    summaries, traces, sweep = [], {}, []
    for d in map(Path, args.runs):
        s = d / "summary.json"
        if s.exists():
            for item in json.loads(s.read_text()):
                zg = [np.nan if g is None else g for g in item["zone_gini"]]
                summaries.append(RunSummary(
                    item["tag"], item["days"], item["mean_cost"], np.array(item["zone_cost"]),
                    np.array(item["mean_profit"]), item["gini"], np.array(zg),
                    item["attribution"], item.get("meta", {})))
        tr = d / "trace.csv"
        if tr.exists():
            rows = []
            for line in tr.read_text().splitlines()[1:]:
                e, a, z, m, sd, c = line.split(",")
                rows.append(TraceRow(int(e), int(a), int(z), float(m), float(sd), float(c)))
            tag = summaries[-1].tag if summaries else d.name
            traces[f"{tag}:{d.name}"] = TrainingTrace(rows)
        sw = d / "sweep.json"
        if sw.exists():
            sweep.extend(json.loads(sw.read_text()))
    if not (summaries or traces or sweep):
        raise UsageError("no summary.json, trace.csv or sweep.json found in the given runs")
    for p in emit_plot_data(summaries, traces, run.dir, sweep=sweep):
        run.add(p)
    return EXIT_OK


# Parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario TOML file (default: built-in benchmark)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", help=f"run directory (default: ${OUT_ENV}/<command>-<time>)")
    common.add_argument("--log-level", default="WARNING")

    day = argparse.ArgumentParser(add_help=False)
    day.add_argument("--day", help="ISO date, index, a:b index range, comma list or 'all' "
                                   "(default: first day)")

    p = argparse.ArgumentParser(prog="zonal-market", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    epilog = ("Every run also writes manifest.json (file hashes, argv, seed). "
              "Exit codes: 0 ok, 2 usage, 3 infeasible, 4 not converged.")

    def command(name, parents, text):
        return sub.add_parser(name, parents=parents, help=text,
                              description=text[0].upper() + text[1:] + ".", epilog=epilog)

    s = command("clear", [common, day],
                "clear the market at marginal bids; writes clearing.json")
    s.set_defaults(func=cmd_clear)

    s = command("slater", [common], "strict-feasibility check per zone; writes slater.json")
    s.add_argument("--peak", action="store_true", help="use the series' peak demand per zone")
    s.set_defaults(func=cmd_slater)

    eq_common = argparse.ArgumentParser(add_help=False)
    eq_common.add_argument("--no-gaps", action="store_true",
                           help="skip the post-hoc best-response gap check")
    s = command("br", [common, day, eq_common],
                "Gauss-Seidel best response; writes equilibrium.json, fig3_costs.csv "
                "and summary.json")
    s.add_argument("--eps", type=float, help="stopping distance on normalized ladders")
    s.add_argument("--max-sweeps", type=int)
    s.add_argument("--lower-level", choices=["residual", "market"])
    s.set_defaults(func=cmd_br)

    s = command("potential", [common, day, eq_common],
                "integrated potential program; writes potential.json, fig3_costs.csv "
                "and summary.json")
    s.add_argument("--starts", type=int, help="number of multi-start points")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for the starts")
    s.set_defaults(func=cmd_potential)

    s = command("train", [common],
                "train MARL agents; writes checkpoint.npz, trace.csv, fig2_rewards.csv, "
                "fig3_costs.csv and summary.json")
    s.add_argument("--episodes", type=int)
    s.add_argument("--agents", help="learning producer ids, comma separated, or 'all'")
    s.add_argument("--tag", default="marl", help="algorithm label in the CSVs")
    s.set_defaults(func=cmd_train)

    s = command("evaluate", [common],
                "greedy rollout of a checkpoint; writes evaluation.json, fig3_costs.csv "
                "and summary.json")
    s.add_argument("--policy", required=True, help="checkpoint.npz from train")
    s.add_argument("--tag", default="marl", help="algorithm label in the CSVs")
    s.set_defaults(func=cmd_evaluate)

    s = command("sweep", [common],
                "evaluate a checkpoint over export-coupling factors; writes sweep.json "
                "and fig4_coupling.csv")
    s.add_argument("--cg", required=True, help="factor range for zone 0 as lo:hi:steps")
    s.add_argument("--ca", required=True, help="factor range for zone 1 as lo:hi:steps")
    s.add_argument("--policy", required=True, help="checkpoint.npz from train")
    s.add_argument("--mode", choices=["zip", "product"], default="zip",
                   help="pair the two ranges point by point, or take every combination")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for grid points")
    s.add_argument("--tag", default="marl", help="algorithm label in the CSVs")
    s.set_defaults(func=cmd_sweep)

    s = command("report", [common],
                "merge earlier runs; writes fig2/fig3/fig4 CSVs and summary.json")
    s.add_argument("runs", nargs="+", help="run directories")
    s.set_defaults(func=cmd_report)
    return p


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    args.argv = argv
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run = Run(args, args.command)
    try:
        code = args.func(args, cfg, run)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except (InfeasibleError, NoFeasiblePointError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except (ParseError, ValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    status = {EXIT_OK: "ok", EXIT_NONCONVERGED: "not_converged",
              EXIT_INFEASIBLE: "infeasible"}.get(code, "error")
    run.finish(cfg.seed, cfg, status)
    return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
