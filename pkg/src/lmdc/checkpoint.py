"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LMDC"                 magic
    uint32 version
    uint32 metadata length  (bytes)
    metadata                UTF-8 JSON text, sorted keys
    payload                 float32 parameters

The payload holds actor, critic, target_actor, target_critic in that order;
within a network, layers in order, each layer's weight matrix row-major
(shape ``(fan_in, fan_out)``) followed by its bias. The metadata records the
layer dims of every network and a SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ddpg import AgentParams
from .neuralnet import Mlp

MAGIC = b"LMDC"
VERSION = 1
NETWORK_ORDER = ("actor", "critic", "target_actor", "target_critic")
_HEADER = struct.Struct("<4sII")


class CheckpointError(Exception):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class HashMismatch(CheckpointError):
    pass


class CorruptMetadata(CheckpointError):
    pass


@dataclass
class Checkpoint:
    networks: dict[str, Mlp]
    meta: dict

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    @property
    def observe_rays(self) -> bool:
        return bool(self.meta.get("observe_rays", True))

    def agent(self, **kw) -> AgentParams:
        cfg = self.meta.get("config", {})
        params = {k: float(cfg[k]) for k in ("gamma", "tau") if k in cfg}
        params.update(kw)
        n = self.networks
        return AgentParams(n["actor"], n["critic"], n["target_actor"], n["target_critic"], **params)


def encode(agent: AgentParams | dict[str, Mlp], meta: dict | None = None) -> bytes:
    nets = agent.networks() if isinstance(agent, AgentParams) else agent
    payload = b"".join(nets[name].flatten().astype("<f4").tobytes() for name in NETWORK_ORDER)
    meta = dict(meta or {})
    meta["networks"] = {
        name: {"layer_dims": nets[name].layer_dims, "hidden_activation": nets[name].hidden_activation,
               "output_activation": nets[name].output_activation, "n_params": nets[name].n_params}
        for name in NETWORK_ORDER
    }
    meta["payload_bytes"] = len(payload)
    meta["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    text = json.dumps(meta, sort_keys=True, indent=1).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(text)) + text + payload


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise TruncatedCheckpoint(f"file is {len(blob)} bytes, shorter than the {_HEADER.size}-byte header")
    magic, version, meta_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, this build reads version {VERSION}")
    end = _HEADER.size + meta_len
    if len(blob) < end:
        raise TruncatedCheckpoint("file ends inside the metadata block")
    try:
        meta = json.loads(blob[_HEADER.size:end].decode("utf-8"))
        specs = meta["networks"]
        expected = int(meta["payload_bytes"])
        digest = meta["payload_sha256"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CorruptMetadata(f"unreadable metadata: {e}") from e

    payload = blob[end:]
    if len(payload) < expected:
        raise TruncatedCheckpoint(f"payload is {len(payload)} bytes, metadata promises {expected}")
    if len(payload) > expected:
        raise CorruptMetadata(f"{len(payload) - expected} trailing bytes after the payload")
    declared = sum(4 * _n_params(specs[name]["layer_dims"]) for name in NETWORK_ORDER)
    if declared != expected:
        raise CorruptMetadata(f"layer dims imply {declared} payload bytes, metadata says {expected}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise HashMismatch("payload hash does not match metadata; the file is corrupt")

    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    nets, pos = {}, 0
    for name in NETWORK_ORDER:
        spec = specs[name]
        net = Mlp.zeros(spec["layer_dims"], spec["hidden_activation"], spec["output_activation"])
        n = net.n_params
        net.load_flat(values[pos:pos + n])
        pos += n
        nets[name] = net
    return Checkpoint(nets, meta)


def _n_params(dims) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def save_checkpoint(agent: AgentParams | dict[str, Mlp], meta: dict | None, path) -> None:
    """Write atomically: a crash mid-write leaves any previous file intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(agent, meta))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
