"""Battlefield world: random obstacle layouts, point-mass drone, moving ground target.

The observation is a flat 15-vector::

    [0:3]   target minus agent, each component divided by the world diagonal
    [3:6]   agent velocity divided by agent_max_speed
    [6:15]  ray distances divided by max_range (8 horizontal azimuths, then down)

There is no attitude state; actions are per-axis velocity commands in [-1, 1].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Aabb, RayConfig, RayReading, cast_fan_distances, point_in_any_box

REL = slice(0, 3)
VEL = slice(3, 6)
RAYS = slice(6, None)


class Status(str, enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    COLLISION = "collision"
    OUT_OF_RANGE = "out_of_range"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        """True where the next state is absorbing (no bootstrap)."""
        return self in (Status.SUCCESS, Status.COLLISION, Status.OUT_OF_RANGE)

    @property
    def done(self) -> bool:
        return self is not Status.RUNNING


@dataclass(frozen=True)
class WorldConfig:
    extent_x: float = 100.0
    extent_y: float = 40.0
    extent_z: float = 100.0
    ground_height: float = 0.0
    site_grid_x: int = 10
    site_grid_z: int = 10
    band_x_min: float = 25.0
    band_x_max: float = 75.0
    obstacle_width_min: float = 2.0
    obstacle_width_max: float = 5.0
    obstacle_height_min: float = 5.0
    obstacle_height_max: float = 30.0
    agent_spawn_x: tuple[float, float] = (5.0, 20.0)
    agent_spawn_y: tuple[float, float] = (5.0, 15.0)
    agent_spawn_z: tuple[float, float] = (5.0, 95.0)
    target_spawn_x: tuple[float, float] = (80.0, 95.0)
    target_spawn_z: tuple[float, float] = (5.0, 95.0)
    # reference point of the target body, above the ground plane
    target_altitude: float = 1.0
    agent_max_speed: float = 2.0
    target_speed: float = 0.2
    success_radius: float = 2.0
    far_limit: float = 300.0
    max_steps: int = 500
    agent_radius: float = 0.5

    def __post_init__(self):
        for name in ("extent_x", "extent_y", "extent_z", "agent_max_speed", "success_radius",
                     "far_limit", "obstacle_width_min", "obstacle_height_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.target_speed < 0 or self.agent_radius < 0:
            raise ValueError("target_speed and agent_radius must be >= 0")
        if self.site_grid_x < 1 or self.site_grid_z < 1:
            raise ValueError("site grid must be at least 1x1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.obstacle_width_max < self.obstacle_width_min or self.obstacle_height_max < self.obstacle_height_min:
            raise ValueError("obstacle size ranges are inverted")
        if not 0 <= self.band_x_min < self.band_x_max <= self.extent_x:
            raise ValueError("obstacle band must lie inside the world")
        if not self.success_radius < self.far_limit:
            raise ValueError("success_radius must be < far_limit")
        for name, hi in (("agent_spawn_x", self.extent_x), ("agent_spawn_y", self.extent_y),
                         ("agent_spawn_z", self.extent_z), ("target_spawn_x", self.extent_x),
                         ("target_spawn_z", self.extent_z)):
            a, b = getattr(self, name)
            if not 0 <= a <= b <= hi:
                raise ValueError(f"{name} must be an interval inside the world")
        for name in ("agent_spawn_x", "target_spawn_x"):
            a, b = getattr(self, name)
            if b > self.band_x_min and a < self.band_x_max:
                raise ValueError(f"{name} overlaps the obstacle band")
        if not self.ground_height <= self.target_altitude <= self.extent_y:
            raise ValueError("target_altitude must be inside the world")

    @property
    def n_sites(self) -> int:
        return self.site_grid_x * self.site_grid_z

    @property
    def extents(self) -> np.ndarray:
        return np.array([self.extent_x, self.extent_y, self.extent_z])

    @property
    def diagonal(self) -> float:
        return math.sqrt(self.extent_x ** 2 + self.extent_y ** 2 + self.extent_z ** 2)


@dataclass(frozen=True)
class RewardConfig:
    step_penalty: float = -0.01
    progress_gain: float = 0.1
    success_reward: float = 1.0
    failure_reward: float = -1.0
    obstacle_gain: float = 0.01
    obstacle_distance_floor: float = 0.5

    def __post_init__(self):
        if not self.step_penalty < 0:
            raise ValueError("step_penalty must be < 0")
        if not self.progress_gain > 0:
            raise ValueError("progress_gain must be > 0")
        if self.obstacle_gain < 0:
            raise ValueError("obstacle_gain must be >= 0")
        if not self.obstacle_distance_floor > 0:
            raise ValueError("obstacle_distance_floor must be > 0")


@dataclass
class WorldInstance:
    obstacles: list[Aabb]
    agent_pos: np.ndarray
    agent_vel: np.ndarray
    target_pos: np.ndarray
    target_heading: np.ndarray
    step_count: int = 0
    prev_target_distance: float = 0.0
    status: Status = Status.RUNNING
    box_lo: np.ndarray = field(default=None, repr=False)
    box_hi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.box_lo is None:
            if self.obstacles:
                self.box_lo = np.array([b.min.as_array() for b in self.obstacles])
                self.box_hi = np.array([b.max.as_array() for b in self.obstacles])
            else:
                self.box_lo = np.zeros((0, 3))
                self.box_hi = np.zeros((0, 3))
        if not self.prev_target_distance:
            self.prev_target_distance = self.target_distance()

    @property
    def boxes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.box_lo, self.box_hi

    def target_distance(self) -> float:
        return float(np.linalg.norm(self.target_pos - self.agent_pos))

    def copy(self) -> "WorldInstance":
        return WorldInstance(
            obstacles=list(self.obstacles),
            agent_pos=self.agent_pos.copy(),
            agent_vel=self.agent_vel.copy(),
            target_pos=self.target_pos.copy(),
            target_heading=self.target_heading.copy(),
            step_count=self.step_count,
            prev_target_distance=self.prev_target_distance,
            status=self.status,
            box_lo=self.box_lo.copy(),
            box_hi=self.box_hi.copy(),
        )


@dataclass
class StepOutcome:
    next_state: np.ndarray
    reward: float
    status: Status


def generate_world(density: float, cfg: WorldConfig = WorldConfig(), seed=0) -> WorldInstance:
    """Random battlefield with ``round(density * n_sites)`` boxes on the site grid.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.
    """
    if not (0.0 <= density <= 1.0):
        raise ValueError(f"density must be in [0, 1], got {density!r}")
    rng = np.random.default_rng(seed)
    n_boxes = int(round(density * cfg.n_sites))
    sites = rng.choice(cfg.n_sites, size=n_boxes, replace=False)
    sites.sort()

    cell_x = (cfg.band_x_max - cfg.band_x_min) / cfg.site_grid_x
    cell_z = cfg.extent_z / cfg.site_grid_z
    obstacles = []
    for s in sites:
        i, j = divmod(int(s), cfg.site_grid_z)
        cx = cfg.band_x_min + (i + 0.5) * cell_x
        cz = (j + 0.5) * cell_z
        w = rng.uniform(cfg.obstacle_width_min, cfg.obstacle_width_max)
        d = rng.uniform(cfg.obstacle_width_min, cfg.obstacle_width_max)
        h = rng.uniform(cfg.obstacle_height_min, cfg.obstacle_height_max)
        # a box never spills out of its own footprint
        w = min(w, cell_x)
        d = min(d, cell_z)
        obstacles.append(Aabb.of((cx - w / 2, cfg.ground_height, cz - d / 2),
                                 (cx + w / 2, cfg.ground_height + h, cz + d / 2)))

    agent = np.array([rng.uniform(*cfg.agent_spawn_x), rng.uniform(*cfg.agent_spawn_y),
                      rng.uniform(*cfg.agent_spawn_z)])
    target = np.array([rng.uniform(*cfg.target_spawn_x), cfg.target_altitude,
                       rng.uniform(*cfg.target_spawn_z)])
    theta = rng.uniform(0.0, 2.0 * np.pi)
    heading = np.array([math.cos(theta), 0.0, math.sin(theta)])
    return WorldInstance(obstacles=obstacles, agent_pos=agent, agent_vel=np.zeros(3),
                         target_pos=target, target_heading=heading)


def observe(w: WorldInstance, cfg: WorldConfig = WorldConfig(), rcfg: RayConfig = RayConfig()) -> np.ndarray:
    dist, _ = cast_fan_distances(w.agent_pos, w.boxes, cfg.ground_height, rcfg)
    return _state(w, cfg, rcfg, dist)


def _state(w: WorldInstance, cfg: WorldConfig, rcfg: RayConfig, dist: np.ndarray) -> np.ndarray:
    x = np.empty(6 + len(dist))
    x[REL] = (w.target_pos - w.agent_pos) / cfg.diagonal
    x[VEL] = w.agent_vel / cfg.agent_max_speed
    x[RAYS] = dist / rcfg.max_range
    return x


def compute_reward(prev_dist: float, curr_dist: float, rays, status: Status,
                   rc: RewardConfig = RewardConfig()) -> float:
    """Shaped reward for one transition.

    ``rays`` is a sequence of :class:`RayReading` (or ``(distance, hit)`` pairs).
    """
    if prev_dist < 0 or curr_dist < 0:
        raise ValueError("distances must be >= 0")
    r = rc.step_penalty + rc.progress_gain * (prev_dist - curr_dist)
    proximity = sum(1.0 / max(d, rc.obstacle_distance_floor) for d, hit in rays if hit)
    r -= rc.obstacle_gain * proximity
    status = Status(status)
    if status is Status.SUCCESS:
        r += rc.success_reward
    elif status in (Status.COLLISION, Status.OUT_OF_RANGE):
        r += rc.failure_reward
    return float(r)


def _reward_terms(prev_dist, curr_dist, dist, hits, status, rc) -> dict[str, float]:
    progress = rc.progress_gain * (prev_dist - curr_dist)
    proximity = -rc.obstacle_gain * float(np.sum(1.0 / np.maximum(dist[hits], rc.obstacle_distance_floor)))
    terminal = 0.0
    if status is Status.SUCCESS:
        terminal = rc.success_reward
    elif status in (Status.COLLISION, Status.OUT_OF_RANGE):
        terminal = rc.failure_reward
    return {"step": rc.step_penalty, "progress": progress, "proximity": proximity, "terminal": terminal}


def step(w: WorldInstance, action, cfg: WorldConfig = WorldConfig(), rcfg: RayConfig = RayConfig(),
         rc: RewardConfig = RewardConfig(), terms: dict | None = None) -> StepOutcome:
    """Advance ``w`` in place by one control step.

    If ``terms`` is given it is filled with the reward components.
    """
    if w.status.done:
        raise RuntimeError(f"episode already finished ({w.status.value})")
    a = np.asarray(action, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    a = np.clip(a, -1.0, 1.0)

    lo = np.array([0.0, cfg.ground_height, 0.0])
    old = w.agent_pos
    new = np.clip(old + a * cfg.agent_max_speed, lo, cfg.extents)
    w.agent_vel = new - old
    w.agent_pos = new

    h = w.target_heading
    nxt = w.target_pos + cfg.target_speed * h
    for ax, ext in ((0, cfg.extent_x), (2, cfg.extent_z)):
        if nxt[ax] < 0.0 or nxt[ax] > ext:
            h = h.copy()
            h[ax] = -h[ax]
    w.target_heading = h
    w.target_pos = w.target_pos + cfg.target_speed * h
    w.step_count += 1

    curr = w.target_distance()
    if curr <= cfg.success_radius:
        status = Status.SUCCESS
    elif point_in_any_box(w.agent_pos, w.boxes, cfg.agent_radius, cfg.ground_height):
        status = Status.COLLISION
    elif curr > cfg.far_limit:
        status = Status.OUT_OF_RANGE
    elif w.step_count >= cfg.max_steps:
        status = Status.TIMEOUT
    else:
        status = Status.RUNNING

    dist, hits = cast_fan_distances(w.agent_pos, w.boxes, cfg.ground_height, rcfg)
    reward = compute_reward(w.prev_target_distance, curr, zip(dist, hits), status, rc)
    if terms is not None:
        terms.update(_reward_terms(w.prev_target_distance, curr, dist, hits, status, rc))
    w.prev_target_distance = curr
    w.status = status
    return StepOutcome(_state(w, cfg, rcfg, dist), reward, status)


def ray_readings(w: WorldInstance, cfg: WorldConfig = WorldConfig(), rcfg: RayConfig = RayConfig()) -> list[RayReading]:
    dist, hits = cast_fan_distances(w.agent_pos, w.boxes, cfg.ground_height, rcfg)
    return [RayReading(float(d), bool(hh)) for d, hh in zip(dist, hits)]


def make_world(obstacles: Sequence[Aabb], agent, target, heading=(1.0, 0.0, 0.0)) -> WorldInstance:
    """Hand-built world, mostly for tests and replays."""
    return WorldInstance(obstacles=list(obstacles), agent_pos=np.asarray(agent, dtype=float),
                         agent_vel=np.zeros(3), target_pos=np.asarray(target, dtype=float),
                         target_heading=np.asarray(heading, dtype=float))


def rollout(policy, w: WorldInstance, cfg: WorldConfig = WorldConfig(), rcfg: RayConfig = RayConfig(),
            rc: RewardConfig = RewardConfig(), on_step=None) -> tuple[float, Status, int]:
    """Run ``policy(state) -> action`` until the episode ends.

    ``on_step(world, action, outcome, terms)`` is called after every step.
    Returns ``(undiscounted return, final status, steps)``.
    """
    x = observe(w, cfg, rcfg)
    total = 0.0
    while True:
        u = np.clip(np.asarray(policy(x), dtype=float), -1.0, 1.0)
        terms = {} if on_step is not None else None
        out = step(w, u, cfg, rcfg, rc, terms)
        total += out.reward
        if on_step is not None:
            on_step(w, u, out, terms)
        if out.status.done:
            return total, out.status, w.step_count
        x = out.next_state
