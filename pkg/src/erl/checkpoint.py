"""Versioned JSON checkpoints written with write-then-rename."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .trainer.memory import MemoryState

VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    env: str
    backend: str
    iteration: int
    memory: MemoryState = field(default_factory=MemoryState)
    policy: Optional[dict] = None  # TabularPolicy.state_dict(); None for remote runs
    wall_clock_s: float = 0.0
    rng_state: Optional[dict] = None
    config: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"version": VERSION, "env": self.env, "backend": self.backend,
                "iteration": self.iteration, "memory": self.memory.to_json(),
                "policy": self.policy, "wall_clock_s": self.wall_clock_s,
                "rng_state": self.rng_state, "config": self.config}

    @classmethod
    def from_json(cls, d: dict) -> Checkpoint:
        if d.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
        return cls(d["env"], d["backend"], int(d["iteration"]),
                   MemoryState.from_json(d.get("memory") or {}), d.get("policy"),
                   float(d.get("wall_clock_s", 0.0)), d.get("rng_state"), d.get("config") or {})


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write to a temp file in the same directory, fsync, then rename over
    ``path``, so a crash leaves either the old or the new file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(ckpt.to_json(), fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc.msg})") from None
    return Checkpoint.from_json(data)
