"""DDPG pieces: replay buffer, exploration noise, TD targets, actor/critic steps, soft updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neuralnet import GradientBundle, Mlp, OptimizerState, apply_update

STATE_DIM = 15
ACTION_DIM = 3


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class Minibatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    indices: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    @classmethod
    def from_transitions(cls, ts) -> "Minibatch":
        ts = list(ts)
        return cls(np.array([t.state for t in ts], dtype=float), np.array([t.action for t in ts], dtype=float),
                   np.array([t.reward for t in ts], dtype=float), np.array([t.next_state for t in ts], dtype=float),
                   np.array([t.terminal for t in ts], dtype=bool))

    def transitions(self) -> list[Transition]:
        return [Transition(s, a, float(r), s2, bool(d)) for s, a, r, s2, d in
                zip(self.states, self.actions, self.rewards, self.next_states, self.terminals)]


class ReplayBuffer:
    """Fixed-capacity ring of transitions, stored column-wise."""

    def __init__(self, capacity: int = 100_000, state_dim: int = STATE_DIM, action_dim: int = ACTION_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __getitem__(self, i: int) -> Transition:
        """``i``-th oldest stored transition."""
        if not -self.size <= i < self.size:
            raise IndexError(i)
        i %= self.size
        j = (self.cursor - self.size + i) % self.capacity
        return Transition(self.states[j].copy(), self.actions[j].copy(), float(self.rewards[j]),
                          self.next_states[j].copy(), bool(self.terminals[j]))

    def sample(self, k: int, rng: np.random.Generator) -> Minibatch:
        """``k`` distinct stored transitions, uniformly without replacement."""
        if k > self.size:
            raise ValueError(f"cannot sample {k} transitions from a buffer holding {self.size}")
        idx = rng.choice(self.size, size=k, replace=False)
        return Minibatch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
                         self.terminals[idx], idx)


def push(buf: ReplayBuffer, t: Transition) -> None:
    buf.push(t)


def sample(buf: ReplayBuffer, k: int, rng: np.random.Generator) -> Minibatch:
    return buf.sample(k, rng)


class OrnsteinUhlenbeck:
    """Temporally correlated noise, dx = theta*(mu - x)*dt + sigma*sqrt(dt)*N(0, 1)."""

    def __init__(self, size: int = ACTION_DIM, theta: float = 0.15, dt: float = 1.0, mu: float = 0.0):
        self.theta, self.dt, self.mu = theta, dt, mu
        self.x = np.full(size, mu)

    def reset(self) -> None:
        self.x[:] = self.mu

    def __call__(self, sigma: float, rng: np.random.Generator) -> np.ndarray:
        self.x = (self.x + self.theta * (self.mu - self.x) * self.dt
                  + sigma * np.sqrt(self.dt) * rng.standard_normal(self.x.shape))
        return self.x.copy()


def linear_sigma(step: int, start: float, end: float, decay_steps: int) -> float:
    if decay_steps <= 0 or step >= decay_steps:
        return end
    frac = max(step / decay_steps, 0.0)
    return start + frac * (end - start)


def select_action(actor: Mlp, x, sigma: float, rng: np.random.Generator | None = None, noise=None) -> np.ndarray:
    """Greedy action plus noise, clamped to [-1, 1].

    With ``sigma == 0`` no random numbers are drawn. ``noise`` may be an
    :class:`OrnsteinUhlenbeck` process; otherwise Gaussian noise is used.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    x = np.asarray(x, dtype=float)
    out, _ = actor.forward_cached(x[None, :])
    u = out[0]
    if sigma > 0:
        eps = noise(sigma, rng) if noise is not None else sigma * rng.standard_normal(u.shape)
        u = u + eps
    return np.clip(u, -1.0, 1.0)


def _q_input(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([states, actions], axis=1)


def td_targets(batch: Minibatch, target_actor: Mlp, target_critic: Mlp, gamma: float) -> np.ndarray:
    """Bootstrapped critic targets; terminal transitions keep only the reward."""
    u2, _ = target_actor.forward_cached(batch.next_states)
    q2, _ = target_critic.forward_cached(_q_input(batch.next_states, u2))
    not_done = 1.0 - batch.terminals.astype(float)
    return batch.rewards + gamma * not_done * q2[:, 0]


def critic_loss_grad(critic: Mlp, batch: Minibatch, targets: np.ndarray) -> tuple[float, GradientBundle]:
    """``(1 / 2k) * sum (y - Q(x, u))^2`` and its parameter gradient, on the stored actions."""
    k = len(batch)
    q, cache = critic.forward_cached(_q_input(batch.states, batch.actions))
    err = q[:, 0] - targets
    loss = 0.5 * float(err @ err) / k
    g = critic.backward_cached(cache, (err / k)[:, None], need_input=False)
    return loss, g


def critic_update(critic: Mlp, batch: Minibatch, targets, opt: OptimizerState) -> float:
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (len(batch),):
        raise ValueError("one target per transition")
    loss, g = critic_loss_grad(critic, batch, targets)
    apply_update(critic, g, opt, "descent")
    return loss


def policy_objective_grad(actor: Mlp, critic: Mlp, states: np.ndarray) -> tuple[float, GradientBundle]:
    """Mean ``Q(x, mu(x))`` and its gradient w.r.t. the actor parameters.

    The critic's input gradient at the action slot is pushed back through the actor.
    """
    states = np.atleast_2d(states)
    k, n_state = states.shape
    u, a_cache = actor.forward_cached(states)
    q, c_cache = critic.forward_cached(_q_input(states, u))
    c_grad = critic.backward_cached(c_cache, np.full((k, 1), 1.0 / k), need_input=True)
    dq_du = c_grad.input[:, n_state:]
    return float(q.mean()), actor.backward_cached(a_cache, dq_du, need_input=False)


def actor_update(actor: Mlp, critic: Mlp, batch: Minibatch, opt: OptimizerState) -> float:
    """One ascent step on mean Q through the actor; returns the pre-update loss ``-mean Q``."""
    objective, g = policy_objective_grad(actor, critic, batch.states)
    apply_update(actor, g, opt, "ascent")
    return -objective


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """Blend ``target <- tau * online + (1 - tau) * target`` in place."""
    if not target.same_shape(online):
        raise ValueError(f"shape mismatch: {target.layer_dims} vs {online.layer_dims}")
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must be in (0, 1]")
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o


@dataclass
class AgentParams:
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    gamma: float = 0.9
    tau: float = 0.005
    noise_sigma_start: float = 0.3
    noise_sigma_end: float = 0.05
    noise_decay_steps: int = 100_000
    actor_opt: OptimizerState = field(default_factory=lambda: OptimizerState("adam", 1e-4))
    critic_opt: OptimizerState = field(default_factory=lambda: OptimizerState("adam", 1e-3))

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")

    @classmethod
    def create(cls, rng: np.random.Generator, hidden=(128, 128), state_dim=STATE_DIM, action_dim=ACTION_DIM,
               optimizer="adam", actor_lr=1e-4, critic_lr=1e-3, **kw) -> "AgentParams":
        """Fresh networks with the target copies equal to the online ones."""
        actor = Mlp.init([state_dim, *hidden, action_dim], rng, output_activation="tanh")
        critic = Mlp.init([state_dim + action_dim, *hidden, 1], rng)
        return cls(actor, critic, actor.clone(), critic.clone(),
                   actor_opt=OptimizerState(optimizer, actor_lr), critic_opt=OptimizerState(optimizer, critic_lr),
                   **kw)

    def sigma(self, step: int) -> float:
        return linear_sigma(step, self.noise_sigma_start, self.noise_sigma_end, self.noise_decay_steps)

    def networks(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "critic": self.critic,
                "target_actor": self.target_actor, "target_critic": self.target_critic}

    def update(self, batch: Minibatch) -> tuple[float, float]:
        """Critic step, actor step, then both soft updates. Returns ``(critic_loss, actor_loss)``."""
        y = td_targets(batch, self.target_actor, self.target_critic, self.gamma)
        c_loss = critic_update(self.critic, batch, y, self.critic_opt)
        a_loss = actor_update(self.actor, self.critic, batch, self.actor_opt)
        soft_update(self.target_critic, self.critic, self.tau)
        soft_update(self.target_actor, self.actor, self.tau)
        return c_loss, a_loss
