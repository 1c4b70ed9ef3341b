"""Training loop: rollouts with ray observations, replay filling, periodic DDPG updates."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ddpg import AgentParams, OrnsteinUhlenbeck, ReplayBuffer, Transition, select_action
from .environment import RAYS, RewardConfig, Status, WorldConfig, generate_world, observe, rollout, step
from .geometry import RayConfig

log = logging.getLogger(__name__)

DEFAULT_DENSITIES = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 100_000
    warmup_transitions: int = 1_000
    update_period: int = 1
    batch_size: int = 128
    buffer_capacity: int = 100_000
    # None draws a density per episode uniformly from DEFAULT_DENSITIES
    density: float | None = None
    master_seed: int = 0
    checkpoint_every: int = 10_000
    probe_every: int = 2_000
    probe_episodes: int = 5
    probe_density: float = 0.5
    observe_rays: bool = True
    gamma: float = 0.9
    tau: float = 0.005
    noise: str = "gaussian"
    noise_sigma_start: float = 0.3
    noise_sigma_end: float = 0.05
    # 0 means decay over total_steps
    noise_decay_steps: int = 0
    optimizer: str = "adam"
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden: tuple[int, ...] = (128, 128)
    world: WorldConfig = field(default_factory=WorldConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    rays: RayConfig = field(default_factory=RayConfig)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.warmup_transitions > self.total_steps:
            raise ValueError("warmup_transitions must not exceed total_steps")
        if self.batch_size < 1 or self.batch_size > self.warmup_transitions:
            raise ValueError("batch_size must be in [1, warmup_transitions]")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must hold at least one batch")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if self.density is not None and not 0.0 <= self.density <= 1.0:
            raise ValueError("density must be in [0, 1]")
        if not 0.0 <= self.probe_density <= 1.0:
            raise ValueError("probe_density must be in [0, 1]")
        if self.noise not in ("gaussian", "ou"):
            raise ValueError("noise must be 'gaussian' or 'ou'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if min(self.noise_sigma_start, self.noise_sigma_end) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("learning rates must be > 0")
        if self.checkpoint_every < 0 or self.probe_every < 0 or self.probe_episodes < 1:
            raise ValueError("checkpoint_every/probe_every must be >= 0 and probe_episodes >= 1")

    @property
    def state_dim(self) -> int:
        return 6 + self.rays.n_rays


@dataclass
class TrainMetrics:
    episodes: list[dict] = field(default_factory=list)
    update_steps: list[int] = field(default_factory=list)
    critic_loss: list[float] = field(default_factory=list)
    actor_loss: list[float] = field(default_factory=list)
    probes: list[dict] = field(default_factory=list)
    steps: int = 0
    wall_seconds: float = 0.0

    def __eq__(self, other):
        # wall-clock is excluded on purpose
        if not isinstance(other, TrainMetrics):
            return NotImplemented
        return (self.episodes == other.episodes and self.update_steps == other.update_steps
                and self.critic_loss == other.critic_loss and self.actor_loss == other.actor_loss
                and self.probes == other.probes and self.steps == other.steps)


def mask_rays(x: np.ndarray, observe_rays: bool) -> np.ndarray:
    if observe_rays:
        return x
    x = x.copy()
    x[RAYS] = 0.0
    return x


def seed_streams(master_seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for each consumer of randomness."""
    names = ("init", "world", "noise", "sample", "probe")
    children = np.random.SeedSequence(master_seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def make_agent(cfg: TrainConfig, rng: np.random.Generator) -> AgentParams:
    return AgentParams.create(
        rng, hidden=cfg.hidden, state_dim=cfg.state_dim, optimizer=cfg.optimizer,
        actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr, gamma=cfg.gamma, tau=cfg.tau,
        noise_sigma_start=cfg.noise_sigma_start, noise_sigma_end=cfg.noise_sigma_end,
        noise_decay_steps=cfg.noise_decay_steps or cfg.total_steps)


def greedy_policy(agent: AgentParams, observe_rays: bool = True) -> Callable[[np.ndarray], np.ndarray]:
    actor = agent.actor.clone()
    return lambda x: select_action(actor, mask_rays(x, observe_rays), 0.0)


def evaluate_greedy_return(agent: AgentParams, density: float, n_episodes: int, seed: int,
                           world: WorldConfig = WorldConfig(), rays: RayConfig = RayConfig(),
                           reward: RewardConfig = RewardConfig(), observe_rays: bool = True) -> float:
    """Mean undiscounted return of the noise-free policy over ``n_episodes`` fresh worlds."""
    policy = greedy_policy(agent, observe_rays)
    returns = []
    for ep in range(n_episodes):
        w = generate_world(density, world, seed=[seed, ep])
        ret, _, _ = rollout(policy, w, world, rays, reward)
        returns.append(ret)
    return float(np.mean(returns))


def run_training(cfg: TrainConfig, sink: Callable[[dict], None] | None = None,
                 on_checkpoint: Callable[[AgentParams, int], None] | None = None,
                 agent: AgentParams | None = None) -> tuple[AgentParams, TrainMetrics]:
    """Train a DDPG agent for exactly ``cfg.total_steps`` environment steps.

    ``sink`` receives every metrics record in order; ``on_checkpoint`` is
    called every ``checkpoint_every`` steps and once more at the end.
    """
    rngs = seed_streams(cfg.master_seed)
    if agent is None:
        agent = make_agent(cfg, rngs["init"])
    buf = ReplayBuffer(cfg.buffer_capacity, cfg.state_dim)
    noise = OrnsteinUhlenbeck() if cfg.noise == "ou" else None
    metrics = TrainMetrics()
    emit = sink or (lambda rec: None)
    started = time.perf_counter()
    # same probe worlds every time so the learning curve is comparable across steps
    probe_seed = int(rngs["probe"].integers(2 ** 63))

    n_step = 0
    episode = 0
    while n_step < cfg.total_steps:
        density = cfg.density if cfg.density is not None else float(rngs["world"].choice(DEFAULT_DENSITIES))
        w = generate_world(density, cfg.world, seed=int(rngs["world"].integers(2 ** 63)))
        if noise is not None:
            noise.reset()
        x = mask_rays(observe(w, cfg.world, cfg.rays), cfg.observe_rays)
        ep_return = 0.0
        status = Status.RUNNING
        while not status.done and n_step < cfg.total_steps:
            u = select_action(agent.actor, x, agent.sigma(n_step), rngs["noise"], noise)
            out = step(w, u, cfg.world, cfg.rays, cfg.reward)
            status = out.status
            x2 = mask_rays(out.next_state, cfg.observe_rays)
            buf.push(Transition(x, u, out.reward, x2, status.terminal))
            ep_return += out.reward
            n_step += 1
            x = x2

            if n_step > cfg.warmup_transitions and n_step % cfg.update_period == 0 and len(buf) >= cfg.batch_size:
                batch = buf.sample(cfg.batch_size, rngs["sample"])
                c_loss, a_loss = agent.update(batch)
                metrics.update_steps.append(n_step)
                metrics.critic_loss.append(c_loss)
                metrics.actor_loss.append(a_loss)
                emit({"kind": "update", "step": n_step, "episode": episode,
                      "critic_loss": c_loss, "actor_loss": a_loss})

            if cfg.probe_every and n_step % cfg.probe_every == 0:
                mean_ret = evaluate_greedy_return(agent, cfg.probe_density, cfg.probe_episodes,
                                                  probe_seed,
                                                  cfg.world, cfg.rays, cfg.reward, cfg.observe_rays)
                rec = {"kind": "probe", "step": n_step, "density": cfg.probe_density, "return": mean_ret}
                metrics.probes.append(rec)
                emit(rec)
                log.info("step %d probe return %.3f", n_step, mean_ret)

            if on_checkpoint is not None and cfg.checkpoint_every and n_step % cfg.checkpoint_every == 0:
                on_checkpoint(agent, n_step)

        if status.done:
            rec = {"kind": "episode", "step": n_step, "episode": episode, "return": ep_return,
                   "length": w.step_count, "status": status.value, "density": density}
            metrics.episodes.append(rec)
            emit(rec)
            episode += 1

    metrics.steps = n_step
    metrics.wall_seconds = time.perf_counter() - started
    if on_checkpoint is not None and not (cfg.checkpoint_every and n_step % cfg.checkpoint_every == 0):
        on_checkpoint(agent, n_step)
    return agent, metrics
