"""Benchmark protocol: density sweeps of rounds x trials, summary statistics, improvement tables."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ddpg import select_action
from .environment import REL, RAYS, RewardConfig, Status, WorldConfig, generate_world, observe, rollout
from .geometry import RayConfig
from .neuralnet import Mlp

CONTROLLERS = ("situation-aware", "blind-ddpg", "lmc")
STATS = ("max", "avg", "median", "min")


def lmc_action(x, gain: float = 1.0) -> np.ndarray:
    """Straight-line pursuit: unit vector toward the target, rays ignored."""
    rel = np.asarray(x, dtype=float)[REL]
    n = float(np.linalg.norm(rel))
    if n == 0.0:
        return np.zeros(3)
    return np.clip(rel / n * gain, -1.0, 1.0)


class Controller:
    """A frozen policy mapping observations to actions.

    Learned controllers hold their own copy of the actor, so one instance can
    be shipped to worker processes and shared read-only.
    """

    def __init__(self, name: str, actor: Mlp | None = None):
        if name not in CONTROLLERS:
            raise ValueError(f"unknown controller {name!r}; choose from {', '.join(CONTROLLERS)}")
        if name != "lmc" and actor is None:
            raise ValueError(f"controller {name!r} needs a trained actor (checkpoint)")
        self.name = name
        self.actor = actor.clone() if actor is not None else None

    @property
    def uses_rays(self) -> bool:
        return self.name == "situation-aware"

    def __call__(self, x) -> np.ndarray:
        if self.name == "lmc":
            return lmc_action(x)
        if not self.uses_rays:
            x = np.array(x, dtype=float)
            x[RAYS] = 0.0
        return select_action(self.actor, x, 0.0)


@dataclass(frozen=True)
class EnvConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    rays: RayConfig = field(default_factory=RayConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)


def run_trial(controller, density: float, seed, env: EnvConfig = EnvConfig()) -> bool:
    """One greedy episode in a fresh world; True iff it ends in success."""
    w = generate_world(density, env.world, seed=seed)
    _, status, _ = rollout(controller, w, env.world, env.rays, env.reward)
    return status is Status.SUCCESS


def trial_seed(eval_seed: int, density: float, rnd: int, trial: int) -> list[int]:
    return [int(eval_seed), int(round(density * 1000)), int(rnd), int(trial)]


@dataclass(frozen=True)
class SweepConfig:
    densities: tuple[float, ...] = tuple(round(0.1 * i, 1) for i in range(11))
    rounds: int = 10
    trials_per_round: int = 20
    eval_seed: int = 0
    controller: str = "situation-aware"
    workers: int = 1

    def __post_init__(self):
        if self.rounds < 1 or self.trials_per_round < 1:
            raise ValueError("rounds and trials_per_round must be >= 1")
        if not self.densities:
            raise ValueError("need at least one density")
        for d in self.densities:
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"density {d} outside [0, 1]")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")


@dataclass
class SweepResult:
    densities: list[float]
    successes: np.ndarray  # (n_densities, rounds)
    trials: int
    controller: str = ""

    def __post_init__(self):
        self.successes = np.asarray(self.successes, dtype=int)
        if self.successes.shape[0] != len(self.densities):
            raise ValueError("one row of round counts per density")
        if self.successes.min(initial=0) < 0 or self.successes.max(initial=0) > self.trials:
            raise ValueError("success counts must lie in [0, trials]")

    @property
    def rounds(self) -> int:
        return self.successes.shape[1]

    def summary(self) -> dict[str, np.ndarray]:
        s = self.successes.astype(float)
        return {"max": s.max(axis=1), "avg": s.mean(axis=1), "median": np.median(s, axis=1), "min": s.min(axis=1)}

    def average(self, density: float) -> float:
        return float(self.summary()["avg"][self._index(density)])

    def _index(self, density: float) -> int:
        for i, d in enumerate(self.densities):
            if abs(d - density) < 1e-9:
                return i
        raise KeyError(density)


def _round_counts(args) -> list[int]:
    controller, density, eval_seed, rnd, trials, env = args
    return [int(run_trial(controller, density, trial_seed(eval_seed, density, rnd, t), env)) for t in range(trials)]


def run_sweep(cfg: SweepConfig, controller, env: EnvConfig = EnvConfig()) -> SweepResult:
    """Success counts per (density, round). Output order never depends on ``cfg.workers``."""
    jobs = [(controller, d, cfg.eval_seed, r, cfg.trials_per_round, env)
            for d in cfg.densities for r in range(cfg.rounds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_round = list(pool.map(_round_counts, jobs))
    else:
        per_round = [_round_counts(j) for j in jobs]
    counts = np.array([sum(r) for r in per_round]).reshape(len(cfg.densities), cfg.rounds)
    return SweepResult(list(cfg.densities), counts, cfg.trials_per_round, getattr(controller, "name", ""))


def worker_count(env_value: str | None = None) -> int:
    """Sweep workers from ``LMDC_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("LMDC_THREADS", "0") if env_value is None else env_value
    n = int(raw)
    if n < 0:
        raise ValueError("LMDC_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


@dataclass
class ImprovementTable:
    densities: list[float]
    # per statistic, one percentage per density; None where the baseline is zero
    percent: dict[str, list[float | None]]

    def get(self, stat: str, density: float) -> float | None:
        for d, v in zip(self.densities, self.percent[stat]):
            if abs(d - density) < 1e-9:
                return v
        raise KeyError(density)


def improvement(proposed: SweepResult, baseline: SweepResult) -> ImprovementTable:
    """Relative gain ``100 * (proposed - baseline) / baseline`` for every summary statistic."""
    if len(proposed.densities) != len(baseline.densities) or any(
            abs(a - b) > 1e-9 for a, b in zip(proposed.densities, baseline.densities)):
        raise ValueError("proposed and baseline sweeps cover different densities")
    p, b = proposed.summary(), baseline.summary()
    table = {}
    for stat in STATS:
        row = []
        for pv, bv in zip(p[stat], b[stat]):
            row.append(None if bv == 0 else float(100.0 * (pv - bv) / bv))
        table[stat] = row
    return ImprovementTable(list(proposed.densities), table)


def export_trajectory(controller, density: float, seed, out_path, env: EnvConfig = EnvConfig(),
                      rewards_path=None) -> list[dict]:
    """Roll out one greedy episode and write it as JSON lines.

    The first line is a ``meta`` record (density, seed, controller); each
    following ``step`` record carries positions, action, reward, rays and
    status. Step 0 is the initial state. ``rewards_path`` optionally gets a
    CSV of per-step reward components.
    """
    out_path = Path(out_path)
    if not out_path.parent.exists():
        raise FileNotFoundError(f"cannot write trajectory: directory {out_path.parent} does not exist")
    w = generate_world(density, env.world, seed=seed)
    x0 = observe(w, env.world, env.rays)
    records = [{"kind": "meta", "density": density, "seed": seed, "controller": getattr(controller, "name", "custom"),
                "n_obstacles": len(w.obstacles)},
               _step_record(0, w, None, 0.0, x0, env, Status.RUNNING)]
    terms_rows = []

    def on_step(world, u, outcome, terms):
        records.append(_step_record(world.step_count, world, u, outcome.reward, outcome.next_state, env,
                                    outcome.status))
        terms_rows.append((world.step_count, terms, outcome.reward))

    rollout(controller, w, env.world, env.rays, env.reward, on_step=on_step)
    _atomic_write(out_path, "".join(json.dumps(r) + "\n" for r in records))
    if rewards_path is not None:
        lines = ["step,step_penalty,progress,proximity,terminal,total\n"]
        for k, t, total in terms_rows:
            lines.append(f"{k},{t['step']:.6g},{t['progress']:.6g},{t['proximity']:.6g},{t['terminal']:.6g},{total:.6g}\n")
        _atomic_write(Path(rewards_path), "".join(lines))
    return records


def _step_record(k, w, u, reward, x, env, status) -> dict:
    return {"kind": "step", "step": k, "agent": w.agent_pos.tolist(), "target": w.target_pos.tolist(),
            "action": None if u is None else [float(v) for v in u], "reward": float(reward),
            "rays": [float(v * env.rays.max_range) for v in x[RAYS]], "status": Status(status).value}


def replay_trajectory(records, env: EnvConfig = EnvConfig()) -> bool:
    """Re-run logged actions in a regenerated world; True iff every logged position is reproduced."""
    from .environment import step as env_step

    meta, steps = records[0], records[1:]
    seed = meta["seed"]
    w = generate_world(meta["density"], env.world, seed=seed)
    if not (np.array_equal(w.agent_pos, steps[0]["agent"]) and np.array_equal(w.target_pos, steps[0]["target"])):
        return False
    for rec in steps[1:]:
        out = env_step(w, rec["action"], env.world, env.rays, env.reward)
        if not (np.array_equal(w.agent_pos, rec["agent"]) and np.array_equal(w.target_pos, rec["target"])
                and out.reward == rec["reward"] and out.status.value == rec["status"]):
            return False
    return True


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_rounds_csv(result: SweepResult, path) -> None:
    lines = ["density,round,successes,trials\n"]
    for d, row in zip(result.densities, result.successes):
        for r, s in enumerate(row):
            lines.append(f"{d:.6g},{r + 1},{int(s)},{result.trials}\n")
    _atomic_write(Path(path), "".join(lines))


def write_summary_csv(result: SweepResult, path) -> None:
    s = result.summary()
    lines = ["density,max,avg,median,min\n"]
    for i, d in enumerate(result.densities):
        lines.append(f"{d:.6g}," + ",".join(f"{s[k][i]:.6g}" for k in STATS) + "\n")
    _atomic_write(Path(path), "".join(lines))


def write_improvement_csv(table: ImprovementTable, path) -> None:
    lines = ["statistic," + ",".join(f"{d:.6g}" for d in table.densities) + "\n"]
    for stat in STATS:
        cells = ["-" if v is None else f"{v:.6g}" for v in table.percent[stat]]
        lines.append(stat + "," + ",".join(cells) + "\n")
    _atomic_write(Path(path), "".join(lines))


def read_rounds_csv(path) -> SweepResult:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["density", "round", "successes", "trials"]:
            raise ValueError(f"{path}: not a per-round sweep CSV")
        for line in fh:
            d, r, s, t = line.strip().split(",")
            rows.append((float(d), int(r), int(s), int(t)))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    densities = sorted({d for d, *_ in rows})
    trials = {t for *_, t in rows}
    if len(trials) != 1:
        raise ValueError(f"{path}: mixed trial counts")
    n_rounds = max(r for _, r, _, _ in rows)
    counts = np.zeros((len(densities), n_rounds), dtype=int)
    for d, r, s, _ in rows:
        counts[densities.index(d), r - 1] = s
    return SweepResult(densities, counts, trials.pop())
