"""Axis-aligned boxes, slab-method ray casting and the sensor ray fan.

World convention: ``y`` is vertical and the ground plane sits at ``y = ground``.
Boxes can be passed either as a sequence of :class:`Aabb` or as a pair of
``(n, 3)`` arrays ``(lo, hi)``; the environment keeps the array form around
because the fan is cast every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite Vec3 {self}")

    def __iter__(self):
        return iter((self.x, self.y, self.z))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def of(cls, v) -> "Vec3":
        x, y, z = (float(c) for c in v)
        return cls(x, y, z)


@dataclass(frozen=True)
class Aabb:
    min: Vec3
    max: Vec3

    def __post_init__(self):
        if self.min.x > self.max.x or self.min.y > self.max.y or self.min.z > self.max.z:
            raise ValueError(f"inverted box {self.min} .. {self.max}")

    @classmethod
    def of(cls, lo, hi) -> "Aabb":
        return cls(Vec3.of(lo), Vec3.of(hi))


@dataclass(frozen=True)
class RayConfig:
    n_horizontal: int = 8
    include_down_ray: bool = True
    max_range: float = 20.0

    def __post_init__(self):
        if self.n_horizontal < 1:
            raise ValueError("n_horizontal must be >= 1")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")

    @property
    def n_rays(self) -> int:
        return self.n_horizontal + int(self.include_down_ray)


class RayReading(NamedTuple):
    distance: float
    hit: bool


Boxes = Union[Sequence[Aabb], tuple]


def as_box_arrays(boxes: Boxes) -> tuple[np.ndarray, np.ndarray]:
    """Normalise ``boxes`` to ``(lo, hi)`` float arrays of shape ``(n, 3)``."""
    if isinstance(boxes, tuple) and len(boxes) == 2 and isinstance(boxes[0], np.ndarray):
        return boxes
    boxes = list(boxes)
    if not boxes:
        empty = np.zeros((0, 3))
        return empty, empty.copy()
    lo = np.array([b.min.as_array() for b in boxes])
    hi = np.array([b.max.as_array() for b in boxes])
    return lo, hi


def _check_unit(direction: np.ndarray) -> None:
    if not np.all(np.isfinite(direction)):
        raise ValueError("non-finite ray direction")
    if abs(float(np.linalg.norm(direction)) - 1.0) > 1e-9:
        raise ValueError(f"ray direction must be unit length, got |d|={np.linalg.norm(direction)!r}")


def ray_aabb_intersect(origin, direction, box: Aabb, max_range: float) -> float | None:
    """Smallest ``t`` in ``[0, max_range)`` where the ray touches ``box``.

    Origins inside (or on) the box give ``0.0``. Returns ``None`` on a miss.
    """
    o = np.asarray(tuple(origin), dtype=float)
    d = np.asarray(tuple(direction), dtype=float)
    if not np.all(np.isfinite(o)):
        raise ValueError("non-finite ray origin")
    _check_unit(d)
    if not (math.isfinite(max_range) and max_range > 0):
        raise ValueError("max_range must be finite and > 0")

    lo = box.min.as_array()
    hi = box.max.as_array()
    t_enter, t_exit = 0.0, math.inf
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return None
            continue
        t0 = (lo[a] - o[a]) / d[a]
        t1 = (hi[a] - o[a]) / d[a]
        if t0 > t1:
            t0, t1 = t1, t0
        t_enter = max(t_enter, t0)
        t_exit = min(t_exit, t1)
        if t_enter > t_exit:
            return None
    if t_enter >= max_range:
        return None
    return float(t_enter)


def _slab_entry(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Entry distance for every (ray, box) pair, ``inf`` on a miss. Shape ``(r, n)``."""
    o = origin[None, None, :]
    d = dirs[:, None, :]
    zero = d == 0.0
    safe = np.where(zero, 1.0, d)
    t0 = (lo[None] - o) / safe
    t1 = (hi[None] - o) / safe
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    inside_slab = (o >= lo[None]) & (o <= hi[None])
    # axis parallel to the ray: either the whole line is within the slab or none of it is
    tmin = np.where(zero, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(zero, np.where(inside_slab, np.inf, -np.inf), tmax)
    t_enter = np.maximum(tmin.max(axis=2), 0.0)
    t_exit = tmax.min(axis=2)
    return np.where(t_enter <= t_exit, t_enter, np.inf)


def fan_directions(cfg: RayConfig) -> np.ndarray:
    """Unit directions of the fan: horizontal azimuths first, then the down ray."""
    k = np.arange(cfg.n_horizontal)
    az = 2.0 * np.pi * k / cfg.n_horizontal
    dirs = np.stack([np.cos(az), np.zeros_like(az), np.sin(az)], axis=1)
    # exact zeros keep axis-aligned rays on the parallel-slab branch
    dirs[np.abs(dirs) < 1e-12] = 0.0
    if cfg.include_down_ray:
        dirs = np.vstack([dirs, [0.0, -1.0, 0.0]])
    return dirs


def cast_fan_distances(position, boxes: Boxes, ground_height: float, cfg: RayConfig) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`cast_ray_fan`: ``(distances, hits)``."""
    p = np.asarray(tuple(position) if isinstance(position, Vec3) else position, dtype=float)
    if p[1] < ground_height:
        raise ValueError("ray fan origin below ground")
    lo, hi = as_box_arrays(boxes)
    dirs = fan_directions(cfg)
    if len(lo):
        t = _slab_entry(p, dirs, lo, hi).min(axis=1)
    else:
        t = np.full(len(dirs), np.inf)
    if cfg.include_down_ray:
        t[-1] = min(t[-1], p[1] - ground_height)
    hits = t < cfg.max_range
    dist = np.where(hits, t, cfg.max_range)
    return dist, hits


def cast_ray_fan(position, boxes: Boxes, ground_height: float, cfg: RayConfig) -> list[RayReading]:
    """Readings of the horizontal fan (world-frame azimuths ``2*pi*k/n``) plus the down ray."""
    dist, hits = cast_fan_distances(position, boxes, ground_height, cfg)
    return [RayReading(float(d), bool(h)) for d, h in zip(dist, hits)]


def point_in_any_box(p, boxes: Boxes, inflate: float, ground_height: float = 0.0) -> bool:
    """Collision predicate for a sphere of radius ``inflate`` centred at ``p``.

    True when the sphere overlaps any box (Euclidean distance to the box
    ``<= inflate``) or dips below ``ground_height``.
    """
    if inflate < 0:
        raise ValueError("inflate must be >= 0")
    q = np.asarray(tuple(p) if isinstance(p, Vec3) else p, dtype=float)
    if q[1] - inflate < ground_height:
        return True
    lo, hi = as_box_arrays(boxes)
    if not len(lo):
        return False
    gap = q - np.clip(q, lo, hi)
    return bool((np.einsum("ij,ij->i", gap, gap) <= inflate * inflate).any())
