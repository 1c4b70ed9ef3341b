"""Shared fixtures: default-length trained agents (cached on disk) and the acceptance report."""

import hashlib
import json
import time
from pathlib import Path

import pytest

from lmdc.cli import main

SRC = Path(__file__).resolve().parents[1] / "src" / "lmdc"
TRAIN_SEED = 0

_criteria: dict[int, str] = {}


def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _train(out_dir: Path, name: str, extra: list[str]) -> dict:
    ckpt, metrics = out_dir / f"{name}.ckpt", out_dir / f"{name}.metrics.jsonl"
    started = time.perf_counter()
    assert main(["train", "--seed", str(TRAIN_SEED), "--out", str(ckpt), "--metrics", str(metrics), *extra]) == 0
    return {"checkpoint": str(ckpt), "metrics": str(metrics), "train_seconds": time.perf_counter() - started}


def _sweep(out_dir: Path, name: str, ckpt: str, controller: str) -> dict:
    csv = out_dir / f"{name}.rounds.csv"
    started = time.perf_counter()
    assert main(["sweep", "--checkpoint", ckpt, "--controller", controller, "--out", str(csv)]) == 0
    return {"rounds_csv": str(csv), "sweep_seconds": time.perf_counter() - started}


@pytest.fixture(scope="session")
def trained(request) -> dict:
    """Situation-aware and blind agents trained with default settings, plus their full sweeps.

    Training takes several minutes per agent, so results are kept in the
    pytest cache keyed by a digest of the package source; any source change
    retrains.
    """
    out_dir = Path(request.config.cache.mkdir("lmdc-trained")) / f"{source_digest()}-seed{TRAIN_SEED}"
    done = out_dir / "done.json"
    if done.exists():
        return json.loads(done.read_text())
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = {"aware": _train(out_dir, "aware", []), "blind": _train(out_dir, "blind", ["--blind"])}
    runs["aware"].update(_sweep(out_dir, "aware", runs["aware"]["checkpoint"], "situation-aware"))
    runs["blind"].update(_sweep(out_dir, "blind", runs["blind"]["checkpoint"], "blind-ddpg"))
    done.write_text(json.dumps(runs, indent=1))
    return runs


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        _criteria[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_criteria):
            terminalreporter.write_line(_criteria[n])
