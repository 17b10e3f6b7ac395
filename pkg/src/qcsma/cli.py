"""Command-line entry point: ``qcsma <subcommand>``.

Exit status is 0 on success, 2 for configuration errors and 1 for anything
that goes wrong while running. Set ``QCSMA_LOG`` (DEBUG, INFO, ...) for
progress messages on stderr.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .chain_analysis import (
    build_chain,
    check_detailed_balance,
    check_irreducibility,
    is_aperiodic,
    qcsma_decision_distribution,
    stationarity_residual,
)
from .conflict_graph import TopologyError, mask_to_links
from .config import (
    EPS_GRID,
    RHO_GRID,
    ConfigFileError,
    LabConfig,
    dump_config,
    load_config,
    paper_defaults,
)
from .schedulers import ConfigError
from .sim_engine import ExperimentConfig, Metrics, run_many
from .traffic import TrafficError
from .verify import fixture_p, run_suite, small_fixtures

log = logging.getLogger("qcsma")

METRIC_FIELDS = ("algorithm", "rho_or_eps", "seed", "horizon", "avg_queue", "slope", "unstable_flag")
PATH_FIELDS = ("algorithm", "rho_or_eps", "t", "mean_queue")


class UsageError(ConfigError):
    pass


def _num(v) -> str:
    return repr(float(v))


def _overrides(cfg: LabConfig, args) -> LabConfig:
    run = cfg.run
    for key in ("seed", "runs", "horizon"):
        v = getattr(args, key, None)
        if v is not None:
            run = replace(run, **{key: v})
    for key in ("runs", "horizon"):
        if getattr(run, key) < 1:
            raise UsageError(f"--{key} must be at least 1")
    return replace(cfg, run=run)


def _experiments(cfg: LabConfig, points) -> list[ExperimentConfig]:
    g = cfg.graph()
    out = []
    for value in points:
        spec = cfg.traffic.at(value)
        traffic = spec.build(g)
        for sc in cfg.schedulers:
            out.append(ExperimentConfig(
                graph=g, scheduler=sc, traffic=traffic, horizon=cfg.run.horizon,
                seed=cfg.run.seed, runs=cfg.run.runs, record_every=cfg.run.record_every,
                label=sc.algorithm, point=float(spec.point),
            ))
    return out


def write_metrics(path: Path, metrics: list[Metrics], horizon: int):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for m in metrics:
            for run, fit in zip(m.runs, m.run_fits):
                w.writerow([m.algorithm, _num(m.point), run.seed, horizon, _num(run.avg_queue),
                            _num(fit.slope), int(fit.unstable)])


def write_sample_paths(path: Path, metrics: list[Metrics]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_FIELDS)
        for m in metrics:
            for t, v in zip(m.mean_trace.t, m.mean_trace.mean_queue):
                w.writerow([m.algorithm, _num(m.point), int(t), _num(v)])


def _execute(cfg: LabConfig, points, args, sweep: bool) -> int:
    exps = _experiments(cfg, points)
    metrics = run_many(exps, jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", metrics, cfg.run.horizon)
    write_sample_paths(out / "samplepath.csv", metrics)
    for m in metrics:
        verdict = "UNSTABLE" if m.unstable else "stable"
        print(f"{m.algorithm:8s} {m.point:<6g} avg queue {m.avg_queue:12.3f} "
              f"(sd {m.std_queue:.3f})  slope {m.fit.slope: .3e}  {verdict}")
    if args.svg:
        from . import plotting

        xlabel = "epsilon" if cfg.traffic.kind == "ring-adversarial" else "traffic intensity"
        if sweep:
            plotting.plot_sweep(metrics, out / "sweep.svg", xlabel)
        plotting.plot_sample_paths(metrics if not sweep else
                                   [m for m in metrics if m.point == max(points)],
                                   out / "samplepath.svg")
    print(f"wrote {out / 'metrics.csv'} and {out / 'samplepath.csv'}")
    return 0


def cmd_run(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    return _execute(cfg, [cfg.traffic.point], args, sweep=False)


def _parse_grid(text: str) -> list[float]:
    try:
        vals = [float(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"bad --grid value {text!r}") from None
    if not vals:
        raise UsageError("--grid is empty")
    return vals


def cmd_sweep(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    if args.grid is not None:
        points = _parse_grid(args.grid)
    else:
        points = list(EPS_GRID if cfg.traffic.kind == "ring-adversarial" else RHO_GRID)
    return _execute(cfg, points, args, sweep=True)


def cmd_verify(args) -> int:
    checks = run_suite(slots=args.slots, trials=args.trials, perturb=args.perturb)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 1 if failed else 0


def cmd_scenario(args) -> int:
    from .node_protocol import scenario_exposed_terminal, scenario_hidden_terminal

    if min(args.t1, args.t2) < 0:
        raise UsageError("backoffs must be nonnegative")
    fn = scenario_hidden_terminal if args.kind == "hidden" else scenario_exposed_terminal
    m = fn(args.t1, args.t2)
    print("m={" + ",".join(str(i) for i in sorted(m)) + "}")
    return 0


def cmd_analyze_chain(args) -> int:
    if args.config:
        g = load_config(args.config).graph()
    else:
        named = {g.name: g for g in small_fixtures()}
        if args.fixture not in named:
            raise UsageError(f"unknown fixture {args.fixture!r}; choose from {', '.join(named)}")
        g = named[args.fixture]
    if args.p:
        p = np.array(_parse_grid(args.p))
        if p.size == 1:
            p = np.full(g.link_count, p[0])
    else:
        p = fixture_p(g.link_count)
    if p.shape != (g.link_count,):
        raise UsageError(f"--p needs 1 or {g.link_count} values")
    if np.any(p <= 0) or np.any(p >= 1):
        raise UsageError("--p values must lie strictly between 0 and 1")
    dd = qcsma_decision_distribution(g, args.window)
    cm = build_chain(g, dd, p)
    print(f"topology {g.name or '(custom)'}: {g.link_count} links, {len(cm.states)} feasible schedules")
    print(f"decision schedules: {len(dd.support)}, cover all links: {check_irreducibility(dd, g)}")
    print(f"aperiodic: {is_aperiodic(cm)}")
    print(f"stationarity residual: {stationarity_residual(cm):.3e}")
    print(f"detailed-balance residual: {check_detailed_balance(cm):.3e}")
    print(f"log Z: {cm.log_Z:.6f}")
    order = np.argsort(-cm.pi, kind="stable")[: args.top]
    for k in order:
        links = sorted(mask_to_links(cm.states[k]))
        print(f"  pi({{{','.join(map(str, links))}}}) = {cm.pi[k]:.6f}")
    return 0


def cmd_paper_defaults(args) -> int:
    text = dump_config(paper_defaults(args.experiment))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcsma", description="Q-CSMA link-scheduling laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    def sim_flags(p):
        p.add_argument("--config", required=True, help="experiment configuration file")
        p.add_argument("--out-dir", default=".", help="directory for metrics.csv and samplepath.csv")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--runs", type=int, help="override [run] runs")
        p.add_argument("--horizon", type=int, help="override [run] horizon")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--svg", action="store_true", help="also render SVG charts")

    p = sub.add_parser("run", help="run one configuration")
    sim_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep traffic intensity (rho) or epsilon")
    sim_flags(p)
    p.add_argument("--grid", help="comma-separated parameter values (default: the published grid)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the small-graph oracle suite")
    p.add_argument("--slots", type=int, default=10**6)
    p.add_argument("--trials", type=int, default=10**6)
    p.add_argument("--perturb", type=float, default=0.0,
                   help="corrupt one transition-matrix row (negative control)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scenario", help="replay a hidden/exposed-terminal control slot")
    p.add_argument("kind", choices=("hidden", "exposed"))
    p.add_argument("t1", type=int)
    p.add_argument("t2", type=int)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("analyze-chain", help="exact chain and product form on a small topology")
    p.add_argument("--fixture", default="pair", help="single, pair, path3, ring5 or ring9")
    p.add_argument("--config", help="take the topology from a configuration file instead")
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--p", help="activation probabilities (one value or one per link)")
    p.add_argument("--top", type=int, default=10, help="number of schedules to list")
    p.set_defaults(func=cmd_analyze_chain)

    p = sub.add_parser("paper-defaults", help="print the published experiment settings")
    p.add_argument("experiment", choices=("grid", "ring"))
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_paper_defaults)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("QCSMA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TrafficError, TopologyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
