"""Command-line entry point: ``lmdc train | sweep | export | config``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, apply, dump_config, load_config, parse_assignment, parse_lines, to_flat
from .evaluation import (CONTROLLERS, Controller, EnvConfig, export_trajectory, improvement,
                         read_rounds_csv, run_sweep, worker_count, write_improvement_csv, write_rounds_csv,
                         write_summary_csv)
from .training import run_training

log = logging.getLogger("lmdc")


class UsageError(Exception):
    pass


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        k, v = parse_assignment(item)
        out[k] = v
    return out


def _env(run: RunConfig) -> EnvConfig:
    return EnvConfig(run.world, run.rays, run.reward)


def _metadata(run: RunConfig, step: int) -> dict:
    return {"config": to_flat(run), "step": step, "master_seed": run.train.master_seed,
            "observe_rays": run.train.observe_rays, "lmdc_version": __version__}


def cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.seed is not None:
        overrides["master_seed"] = str(args.seed)
    if args.steps is not None:
        overrides["total_steps"] = str(args.steps)
    if args.blind:
        overrides["observe_rays"] = "false"
    run = load_config(args.config, overrides)
    out = Path(args.out)

    def on_checkpoint(agent, step):
        save_checkpoint(agent, _metadata(run, step), out)
        log.info("checkpoint at step %d -> %s", step, out)

    metrics_fh = open(args.metrics, "w") if args.metrics else None
    try:
        sink = (lambda rec: metrics_fh.write(json.dumps(rec) + "\n")) if metrics_fh else None
        _, metrics = run_training(run.train, sink=sink, on_checkpoint=on_checkpoint)
    finally:
        if metrics_fh:
            metrics_fh.close()
    n_success = sum(e["status"] == "success" for e in metrics.episodes)
    log.info("trained %d steps, %d episodes (%d successes) in %.1fs", metrics.steps, len(metrics.episodes),
             n_success, metrics.wall_seconds)
    return 0


def _load_controller(name: str, checkpoint_path) -> tuple[Controller, dict | None]:
    if name == "lmc":
        return Controller("lmc"), None
    if not checkpoint_path:
        raise UsageError(f"--checkpoint is required for controller {name!r}")
    ckpt = load_checkpoint(checkpoint_path)
    if name == "blind-ddpg" and ckpt.observe_rays:
        log.warning("checkpoint was trained with ray inputs; blind-ddpg will zero them at evaluation only")
    if name == "situation-aware" and not ckpt.observe_rays:
        log.warning("checkpoint was trained without ray inputs")
    return Controller(name, ckpt.networks["actor"]), ckpt.meta


def _run_for_checkpoint(args, meta: dict | None) -> RunConfig:
    """Environment settings come from the checkpoint, then --config, then --set."""
    run = apply(RunConfig(), meta["config"]) if meta and "config" in meta else RunConfig()
    if args.config:
        run = apply(run, parse_lines(Path(args.config).read_text(), args.config))
    return apply(run, _overrides(args))


def _parse_densities(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"--densities must be comma-separated numbers, got {text!r}")
    for d in values:
        if not 0.0 <= d <= 1.0:
            raise UsageError(f"density {d} is outside the valid range [0, 1]")
    return values


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def cmd_sweep(args) -> int:
    controller, meta = _load_controller(args.controller, args.checkpoint)
    run = _run_for_checkpoint(args, meta)
    changes = {"controller": args.controller, "workers": worker_count()}
    if args.densities is not None:
        changes["densities"] = _parse_densities(args.densities)
    if args.rounds is not None:
        changes["rounds"] = args.rounds
    if args.trials is not None:
        changes["trials_per_round"] = args.trials
    if args.seed is not None:
        changes["eval_seed"] = args.seed
    sweep = replace(run.sweep, **changes)

    out = Path(args.out)
    if not out.parent.exists():
        raise UsageError(f"output directory {out.parent} does not exist")
    baseline = read_rounds_csv(args.baseline_csv) if args.baseline_csv else None
    result = run_sweep(sweep, controller, _env(run))
    # everything that can fail happens before the first file is written
    table = improvement(result, baseline) if baseline is not None else None
    write_rounds_csv(result, out)
    write_summary_csv(result, _sibling(out, ".summary.csv"))
    if table is not None:
        write_improvement_csv(table, _sibling(out, ".improvement.csv"))
    for d, avg in zip(result.densities, result.summary()["avg"]):
        log.info("density %.2f: %.2f / %d", d, avg, result.trials)
    return 0


def cmd_export(args) -> int:
    if not 0.0 <= args.density <= 1.0:
        raise UsageError(f"--density {args.density} is outside the valid range [0, 1]")
    controller, meta = _load_controller(args.controller, args.checkpoint)
    run = _run_for_checkpoint(args, meta)
    out = Path(args.out)
    records = export_trajectory(controller, args.density, args.seed, out, _env(run),
                                rewards_path=_sibling(out, ".rewards.csv"))
    log.info("%d steps, final status %s", len(records) - 2, records[-1]["status"])
    return 0


def cmd_config(args) -> int:
    run = load_config(args.config, _overrides(args))
    sys.stdout.write(dump_config(run))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmdc", description="Ray-aware DDPG drone control: train, sweep, export.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")

    t = sub.add_parser("train", help="train a DDPG agent and write a checkpoint")
    common(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="shorthand for --set total_steps=N")
    t.add_argument("--blind", action="store_true", help="zero the ray inputs (blind-ddpg baseline)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="JSON-lines metrics stream path")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="density sweep of rounds x trials")
    common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--controller", choices=CONTROLLERS, default="situation-aware")
    s.add_argument("--densities", help="comma-separated, e.g. 0,0.5,1")
    s.add_argument("--rounds", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--baseline-csv", help="per-round CSV of a baseline sweep; writes the improvement table")
    s.add_argument("--out", required=True, help="per-round CSV path")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export", help="write one episode trajectory as JSON lines")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--controller", choices=CONTROLLERS, default="situation-aware")
    e.add_argument("--density", type=float, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)

    c = sub.add_parser("config", help="print the effective configuration")
    common(c)
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, UsageError, FileNotFoundError, ValueError) as e:
        print(f"lmdc {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
