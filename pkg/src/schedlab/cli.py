"""Command-line front end: ``schedlab <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import nn
from .evaluation import ExperimentConfig, emit_plotdata, runtime_schedulability, summary
from .model import ContractError, InvalidInput, Platform, hyperperiod, load_taskset, save_taskset
from .schedulers import GEDF, GRM, NeuralScheduler, ScheduleTable, generate_static_table, replay_table
from .simulator import PERIODIC, RANDOM_OFFSET, STRICT_SPORADIC, run_trajectory, write_trace
from .taskgen import experiment_grid
from .training import TrainConfig, policy_iteration, read_config, training_sets

log = logging.getLogger("schedlab")

EXIT_CONTRACT = 3
EXIT_FAILED = 1


def _platform(args) -> Platform:
    make = Platform.heterogeneous if args.hetero else Platform.homogeneous
    return make(args.m, not args.nonpreemptive)


def _platform_flags(p, m_default=2):
    p.add_argument("--m", type=int, default=m_default, help="processor count")
    p.add_argument("--nonpreemptive", action="store_true")
    p.add_argument("--hetero", action="store_true", help="half the processors at speed 1/2")


def cmd_gen_tasksets(args) -> int:
    out_dir = Path(args.out_dir or args.out or "tasksets")
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = experiment_grid(args.m, not args.nonpreemptive, args.hetero, args.cls, args.points, args.sets,
                           args.seed, args.lo_frac, args.hi_frac)
    for point, ts in grid:
        name = f"m{args.m}_{args.cls}_u{point.util_over_m:.4f}_s{point.set_index:03d}.txt"
        save_taskset(ts, out_dir / name)
    print(f"wrote {len(grid)} task sets to {out_dir}")
    return 0


def cmd_train(args) -> int:
    values = read_config(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = TrainConfig.from_mapping(values)
    out = Path(args.out or "checkpoints")
    train, val = training_sets(cfg)
    progress = []
    ckpts = policy_iteration(train, None, cfg, validation=val, out_dir=out, progress=progress)
    for e in progress:
        print(f"iteration {e.iteration:3d}  loss {e.mean_loss:.4f}  validation {e.validation_schedulability:.3f}")
    print(f"{len(ckpts) - 1} iterations; checkpoints in {out}")
    return 0


def cmd_evaluate(args) -> int:
    values = read_config(args.config) if args.config else {}
    for key in ("m", "cls", "points", "sets", "trials", "schedulers", "checkpoint", "overhead", "workers",
                "horizon_cap"):
        v = getattr(args, key, None)
        if v is not None:
            name = {"points": "sweep_points", "sets": "sets_per_point", "trials": "trials_per_set"}.get(key, key)
            values[name] = str(v)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.nonpreemptive:
        values["preemptive"] = "false"
    if args.hetero:
        values["heterogeneous"] = "true"
    cfg = ExperimentConfig.from_mapping(values)
    res = runtime_schedulability(cfg)
    text = emit_plotdata(res, args.out)
    if not args.out:
        sys.stdout.write(text)
    print(summary(res))
    return 0


def cmd_schedule_table(args) -> int:
    ts = load_taskset(args.taskset)
    platform = _platform(args)
    if args.checkpoint:
        params = nn.load(args.checkpoint)
    else:
        mode = ("preemptive" if platform.preemptive else "nonpreemptive") + ("-hetero" if args.hetero else "-homo")
        params = nn.init_params(nn.NetConfig(m=args.m, mode=mode), seed=args.seed or 0)
    res = generate_static_table(ts, platform, params, args.rollouts, seed=args.seed or 0)
    if not res.ok:
        print(f"no table after {res.rollouts} rollouts: {res.reason}")
        return EXIT_FAILED
    if args.out:
        res.table.save(args.out)
    else:
        sys.stdout.write(res.table.to_text())
    print(f"table found after {res.rollouts} rollouts; {res.table.busy_slots()} busy processor-slots",
          file=sys.stderr if not args.out else sys.stdout)
    return 0


def cmd_replay(args) -> int:
    table = ScheduleTable.load(args.table)
    v = replay_table(table, load_taskset(args.taskset))
    print(v.summary())
    if v.error:
        return EXIT_CONTRACT
    return 0 if v.feasible else EXIT_FAILED


def cmd_simulate(args) -> int:
    ts = load_taskset(args.taskset)
    name = args.scheduler.lower()
    if name == "gedf":
        sched = GEDF
    elif name == "grm":
        sched = GRM
    else:
        if not args.checkpoint:
            print("the neural scheduler needs --checkpoint", file=sys.stderr)
            return 2
        sched = NeuralScheduler(nn.load(args.checkpoint))
    trace = [] if args.out else None
    horizon = args.horizon or hyperperiod(ts)
    v = run_trajectory(ts, _platform(args), sched, horizon, args.seed or 0, args.release_mode, trace=trace)
    if args.out:
        write_trace(trace, args.out)
    print(v.summary())
    return EXIT_CONTRACT if v.error else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value file")
    common.add_argument("--out", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="schedlab", description="Neural-guided real-time scheduling experiments")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasksets", parents=[common], help="generate task sets over a utilization sweep")
    _platform_flags(p)
    p.add_argument("--class", dest="cls", default="mixed", choices=["light", "medium", "heavy", "mixed"])
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--sets", type=int, default=50)
    p.add_argument("--lo-frac", type=float, default=0.5)
    p.add_argument("--hi-frac", type=float, default=1.0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_gen_tasksets)

    p = sub.add_parser("train", parents=[common], help="policy iteration; --out is the checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="runtime schedulability sweep to CSV")
    p.add_argument("--m", type=int)
    p.add_argument("--nonpreemptive", action="store_true")
    p.add_argument("--hetero", action="store_true")
    p.add_argument("--class", dest="cls", choices=["light", "medium", "heavy", "mixed"])
    p.add_argument("--points", type=int)
    p.add_argument("--sets", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--schedulers", help="comma list, e.g. GEDF,GRM,neural")
    p.add_argument("--checkpoint", help="checkpoint for the neural scheduler")
    p.add_argument("--overhead", type=int)
    p.add_argument("--horizon-cap", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("schedule-table", parents=[common], help="search for a static hyperperiod table")
    _platform_flags(p, 1)
    p.add_argument("--taskset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--rollouts", type=int, default=5000)
    p.set_defaults(func=cmd_schedule_table)

    p = sub.add_parser("replay", parents=[common], help="replay a static table against its task set")
    p.add_argument("--table", required=True)
    p.add_argument("--taskset", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", parents=[common], help="run one trajectory and report the verdict")
    _platform_flags(p)
    p.add_argument("--taskset", required=True)
    p.add_argument("--scheduler", default="gedf", choices=["gedf", "grm", "neural"])
    p.add_argument("--checkpoint")
    p.add_argument("--release-mode", default=STRICT_SPORADIC, choices=[STRICT_SPORADIC, PERIODIC, RANDOM_OFFSET])
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (InvalidInput, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
