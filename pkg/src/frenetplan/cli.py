"""Command-line entry point: ``frenetplan {bench,train,collect-expert,project-demo,plot}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import FactorizationError, FrenetPlanError, OptimizationError, ParameterError, SpawnError, TrainingError

log = logging.getLogger("frenetplan")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _parse_planner(spec: str, args):
    """``grid`` | ``mppi`` | ``supervised:WEIGHTS`` | ``self_supervised:WEIGHTS`` with optional ``@K``."""
    from .harness import PlannerKind
    from .learn.persist import load_policy

    name, _, k = spec.partition("@")
    kind, _, path = name.partition(":")
    kind = kind.replace("-", "_")
    kw = {"K_proj": int(k) if k else args.k_proj, "n_samples": args.samples}
    if kind in ("supervised", "self_supervised"):
        if not path:
            raise ParameterError(f"planner {kind} needs a weights path: {kind}:PATH")
        if not Path(path).exists():
            raise ParameterError(f"weights file {path} does not exist")
        kw["policy"] = load_policy(path)
        kw["name"] = f"{kind}_K{kw['K_proj']}" if not k else f"{kind}_K{k}"
    elif path:
        raise ParameterError(f"planner {kind} takes no weights path")
    return PlannerKind(kind, **kw)


def _scenario_base(args):
    from .sim import ScenarioConfig, load_scenario_config

    return load_scenario_config(args.config) if getattr(args, "config", None) else ScenarioConfig()


def cmd_bench(args) -> int:
    from .context import PlanningConfig, PlanningContext
    from .harness import RunConfig, export_episodes_csv, export_report_csv, export_report_json, plot_report, \
        read_report_csv, run_benchmark

    base = _scenario_base(args)
    planners = [_parse_planner(s, args) for s in args.planners.split(",") if s]
    if not planners:
        raise ParameterError("no planners given")
    lanes = _int_list(args.lanes) if args.lanes else [base.n_lanes]
    densities = _float_list(args.density) if args.density else None
    ctx = PlanningContext(PlanningConfig(v_max=base.v_max))
    run = RunConfig(replan_stride=args.stride, seed=args.seed)
    seeds = range(args.seed, args.seed + args.episodes)

    def progress(n_l, d, name, r):
        log.info("lanes=%d density=%g %s seed=%d collided=%s speed=%.2f", n_l, d, name, r.seed, r.collided,
                 r.mean_speed)

    report = run_benchmark(planners, lanes=lanes, densities=densities, seeds=seeds, ctx=ctx, base=base, run=run,
                           progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_report_csv(report, out / "report.csv")
    export_report_json(report, out / "report.json")
    export_episodes_csv(report, out / "episodes.csv")
    plot_report(read_report_csv(out / "report.csv"), out / "report.svg")
    for r in report.rows:
        print(f"{r.n_lanes} lanes  density {r.density:g}  {r.planner:<22s} collisions {r.collision_rate:5.1f}%  "
              f"speed {r.avg_speed:.2f} +- {r.speed_std:.2f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .context import PlanningConfig, PlanningContext
    from .learn import CvaePolicy, MlpPolicy, OutputSpec, TrainConfig, save_policy, train
    from .samplers import read_expert_dataset

    mode = args.mode.replace("-", "_")
    obs, tau = read_expert_dataset(args.data)
    ctx = PlanningContext(PlanningConfig())
    spec = OutputSpec(m_seg=ctx.cfg.m_seg, n_xi=ctx.n_xi, v_max=ctx.cfg.v_max)
    hidden = tuple(_int_list(args.hidden))
    if mode == "supervised":
        policy = CvaePolicy(spec, n_steps=ctx.basis.n_steps, latent_dim=args.latent, hidden=hidden, seed=args.seed)
    else:
        policy = MlpPolicy(spec, hidden=hidden, seed=args.seed)
        tau = None
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, unroll=args.unroll,
                      seed=args.seed, beta_kl=args.beta, ss_weight=args.ss_weight, project=not args.no_projection)
    res = train(mode, (obs, tau), policy, ctx, cfg)
    save_policy(policy, args.out, seed=args.seed,
                extra={"mode": mode, "unroll": args.unroll, "projection_in_training": not args.no_projection,
                       "epoch_losses": res.epoch_losses})
    for e, v in enumerate(res.epoch_losses):
        print(f"epoch {e}: loss {v:.6g}")
    return EXIT_OK


def cmd_collect_expert(args) -> int:
    from dataclasses import replace

    from .context import PlanningConfig, PlanningContext
    from .harness import RunConfig, collect_observations, label_expert
    from .samplers import write_expert_dataset

    base = _scenario_base(args)
    if args.lanes:
        base = replace(base, n_lanes=args.lanes)
    if args.density:
        base = replace(base, density=args.density)
    cfgs = [replace(base, seed=args.seed + i) for i in range(args.episodes)]
    ctx = PlanningContext(PlanningConfig(v_max=base.v_max))
    obs = collect_observations(cfgs, ctx, run=RunConfig(replan_stride=args.stride, seed=args.seed),
                               max_cycles=args.max_cycles)
    if args.no_label:
        tau = np.zeros((obs.shape[0], 2 * ctx.basis.n_steps))
    else:
        tau, _ = label_expert(obs, ctx, cem_batch=args.cem_batch, cem_iters=args.cem_iters, K_proj=args.k_proj,
                              seed=args.seed)
    write_expert_dataset(args.out, obs, tau)
    print(f"wrote {obs.shape[0]} records to {args.out}")
    return EXIT_OK


def cmd_project_demo(args) -> int:
    from .context import PlanningConfig, PlanningContext
    from .harness import demo_scene, plot_residual_trace, plot_trajectories
    from .metacost import meta_cost, select_best
    from .projection import residuals, write_residual_trace

    ctx = PlanningContext(PlanningConfig())
    scene, p, b0 = demo_scene(ctx, args.obstacles, args.batch, args.seed)
    xi_star = ctx.plan(p, b0)
    xi_bar, state = ctx.project(xi_star, b0, scene, iters=args.iters, trace=True)
    res = residuals(xi_bar, scene).max
    frac = float(np.mean(res <= args.tol))
    print(f"{frac * 100:.1f}% of {args.batch} samples reach residual <= {args.tol:g} within {args.iters} iterations")
    if args.trace:
        write_residual_trace(args.trace, state.residual_trace)
        plot_residual_trace(state.residual_trace, Path(args.trace).with_suffix(".svg"))
    if args.svg:
        j, _ = select_best(xi_bar, meta_cost(xi_bar, scene, ctx.cfg.metacost()))
        plot_trajectories(xi_bar[: min(50, len(xi_bar))], ctx, scene, args.svg, highlight=j if j < 50 else None)
    return EXIT_OK


def cmd_plot(args) -> int:
    import csv

    from .harness import plot_report, plot_residual_trace, read_report_csv

    with open(args.csv, newline="") as fh:
        header = next(csv.reader(fh), [])
    out = args.out or str(Path(args.csv).with_suffix(".svg"))
    if header[:3] == ["iteration", "sample_index", "residual"]:
        data = np.loadtxt(args.csv, delimiter=",", skiprows=1, ndmin=2)
        n_it = int(data[:, 0].max())
        n_s = int(data[:, 1].max()) + 1
        trace = np.zeros((n_it, n_s))
        trace[data[:, 0].astype(int) - 1, data[:, 1].astype(int)] = data[:, 2]
        plot_residual_trace(trace, out)
    elif "collision_rate" in header:
        plot_report(read_report_csv(args.csv), out)
    else:
        raise ParameterError(f"{args.csv}: unrecognised CSV header {header}")
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="single source of all randomness")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = argparse.ArgumentParser(prog="frenetplan", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", parents=[common], help="closed-loop benchmark")
    b.add_argument("config", nargs="?", help="scenario JSON (ScenarioConfig fields)")
    b.add_argument("--planners", default="grid,mppi",
                   help="comma list of grid | mppi | supervised:W | self_supervised:W, each optionally @K")
    b.add_argument("--lanes", default="", help="comma list of lane counts")
    b.add_argument("--density", default="", help="comma list of densities")
    b.add_argument("--episodes", type=int, default=50)
    b.add_argument("--stride", type=int, default=1, help="simulator steps executed per plan")
    b.add_argument("--k-proj", type=int, default=100)
    b.add_argument("--samples", type=int, default=16)
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", parents=[common], help="train a policy through the unrolled optimizer")
    t.add_argument("--mode", choices=["supervised", "self-supervised", "self_supervised"], required=True)
    t.add_argument("--data", required=True, help="JSONL dataset from collect-expert")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--unroll", type=int, default=25)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--hidden", default="256,256")
    t.add_argument("--latent", type=int, default=8)
    t.add_argument("--beta", type=float, default=1.0)
    t.add_argument("--ss-weight", type=float, default=0.0)
    t.add_argument("--no-projection", action="store_true", help="ablation: identity instead of projection")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("collect-expert", parents=[common], help="drive with MPC-Grid and label observations with CEM")
    c.add_argument("config", nargs="?")
    c.add_argument("--episodes", type=int, default=10)
    c.add_argument("--lanes", type=int, default=0)
    c.add_argument("--density", type=float, default=0.0)
    c.add_argument("--stride", type=int, default=10)
    c.add_argument("--max-cycles", type=int, default=None)
    c.add_argument("--cem-batch", type=int, default=5000)
    c.add_argument("--cem-iters", type=int, default=5)
    c.add_argument("--k-proj", type=int, default=100)
    c.add_argument("--no-label", action="store_true", help="observations only (self-supervised data)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_collect_expert)

    d = sub.add_parser("project-demo", parents=[common], help="projection convergence on a seeded static scene")
    d.add_argument("--obstacles", type=int, default=4)
    d.add_argument("--batch", type=int, default=400)
    d.add_argument("--iters", type=int, default=100)
    d.add_argument("--tol", type=float, default=1e-3)
    d.add_argument("--trace", default=None, help="residual trace CSV (an SVG is written next to it)")
    d.add_argument("--svg", default=None, help="trajectory overlay SVG")
    d.set_defaults(func=cmd_project_demo)

    p = sub.add_parser("plot", parents=[common], help="render a report or residual-trace CSV as SVG")
    p.add_argument("csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FactorizationError, OptimizationError, TrainingError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ParameterError, SpawnError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FrenetPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
