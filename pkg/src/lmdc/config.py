"""Flat ``key = value`` run configuration.

Every tunable default of the world, reward, ray, training and sweep configs
has one key here. Precedence is built-in defaults < config file < command-line
overrides. Unknown keys are errors.
"""

from __future__ import annotations

import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .environment import RewardConfig, WorldConfig
from .evaluation import SweepConfig
from .geometry import RayConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


# flat key -> (section, field name)
_SECTIONS = {"world": WorldConfig, "reward": RewardConfig, "rays": RayConfig}
_RENAMES = {("train", "density"): "train_density"}
_SWEEP_FIELDS = ("densities", "rounds", "trials_per_round", "eval_seed", "controller")


def _build_keymap() -> dict[str, tuple[str, str]]:
    keys = {}
    for f in fields(TrainConfig):
        if f.name in _SECTIONS:
            continue
        keys[_RENAMES.get(("train", f.name), f.name)] = ("train", f.name)
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name in keys:
                raise AssertionError(f"duplicate config key {f.name}")
            keys[f.name] = (section, f.name)
    for name in _SWEEP_FIELDS:
        keys[name] = ("sweep", name)
    return keys


KEYS = _build_keymap()


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def world(self) -> WorldConfig:
        return self.train.world

    @property
    def rays(self) -> RayConfig:
        return self.train.rays

    @property
    def reward(self) -> RewardConfig:
        return self.train.reward


def _section_obj(run: RunConfig, section: str):
    if section == "train":
        return run.train
    if section == "sweep":
        return run.sweep
    return getattr(run.train, section)


def _field_types(cls) -> dict[str, object]:
    return typing.get_type_hints(cls)


def format_value(v) -> str:
    if v is None:
        return "random"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, typ):
    if typ is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    return text


def parse_value(text: str, typ):
    text = text.strip()
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union or origin is types.UnionType:
        inner = [a for a in args if a is not type(None)]
        if text.lower() in ("random", "none", ""):
            return None
        return parse_value(text, inner[0])
    if origin is tuple:
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        elem = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_parse_scalar(p, elem) for p in parts)
        if len(parts) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values, got {len(parts)}")
        return tuple(_parse_scalar(p, a) for p, a in zip(parts, args))
    return _parse_scalar(text, typ)


def to_flat(run: RunConfig) -> dict[str, str]:
    return {key: format_value(getattr(_section_obj(run, sec), name)) for key, (sec, name) in KEYS.items()}


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` pairs from config text; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def apply(run: RunConfig, values: dict[str, object]) -> RunConfig:
    """Return ``run`` with flat-key overrides applied. String values are parsed."""
    grouped: dict[str, dict[str, object]] = {}
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        sec, name = KEYS[key]
        if isinstance(value, str):
            cls = type(_section_obj(run, sec))
            try:
                value = parse_value(value, _field_types(cls)[name])
            except ValueError as e:
                raise ConfigError(f"bad value for {key!r}: {e}") from e
        grouped.setdefault(sec, {})[name] = value

    try:
        sub = {}
        for sec in _SECTIONS:
            if sec in grouped:
                sub[sec] = replace(getattr(run.train, sec), **grouped[sec])
        train = replace(run.train, **grouped.get("train", {}), **sub) if ("train" in grouped or sub) else run.train
        sweep = replace(run.sweep, **grouped["sweep"]) if "sweep" in grouped else run.sweep
    except (ValueError, TypeError) as e:
        keys = ", ".join(sorted(values))
        raise ConfigError(f"invalid configuration ({keys}): {e}") from e
    return RunConfig(train, sweep)


def load_config(path=None, overrides: dict[str, object] | None = None) -> RunConfig:
    run = RunConfig()
    if path is not None:
        p = Path(path)
        run = apply(run, parse_lines(p.read_text(), str(p)))
    if overrides:
        run = apply(run, overrides)
    return run


def dump_config(run: RunConfig = RunConfig()) -> str:
    lines = ["# lmdc run configuration; unknown keys are rejected"]
    current = None
    for key, (sec, _) in KEYS.items():
        if sec != current:
            lines.append(f"\n# [{sec}]")
            current = sec
        lines.append(f"{key} = {format_value(getattr(_section_obj(run, sec), KEYS[key][1]))}")
    return "\n".join(lines) + "\n"


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


__all__ = ["ConfigError", "KEYS", "RunConfig", "apply", "dump_config", "load_config", "parse_lines",
           "to_flat", "parse_assignment"]
