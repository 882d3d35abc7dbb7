"""Metrics rows, the CSV stream they are written to, and curve smoothing."""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

SPLITS = ("train", "eval")
PHASES = ("attempt1", "attempt2", "deploy")
_PHASE_RANK = {p: i for i, p in enumerate(PHASES)}


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    wall_clock_s: float
    split: str
    phase: str
    mean_reward: float
    group_count: int
    memory_changed: bool = False

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if not 0.0 <= self.mean_reward <= 1.0:
            raise ValueError(f"mean_reward must lie in [0, 1], got {self.mean_reward!r}")

    @property
    def order(self) -> tuple[int, int]:
        return self.iteration, _PHASE_RANK[self.phase]


HEADER = tuple(f.name for f in fields(MetricsRow))


class MetricsWriter:
    """Append-only CSV writer that enforces row order and a monotone clock."""

    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        self._last_order = None
        self._last_clock = -math.inf
        if append and self.path.exists():
            for row in read_metrics(self.path):
                self._last_order, self._last_clock = row.order, row.wall_clock_s
        else:
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(HEADER)

    def write(self, row: MetricsRow) -> None:
        if self._last_order is not None and row.order <= self._last_order:
            raise ValueError(f"row {row.order} does not follow {self._last_order}")
        if row.wall_clock_s < self._last_clock:
            raise ValueError("wall_clock_s went backwards")
        with open(self.path, "a", newline="") as fh:
            values = list(astuple(row))
            values[-1] = str(row.memory_changed).lower()
            csv.writer(fh).writerow(values)
        self._last_order, self._last_clock = row.order, row.wall_clock_s


def read_metrics(path: str | Path) -> Iterator[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            yield MetricsRow(int(r["iteration"]), float(r["wall_clock_s"]), r["split"],
                             r["phase"], float(r["mean_reward"]), int(r["group_count"]),
                             r["memory_changed"] == "true")


def smooth(series: Sequence[float], window: int = 5) -> list[float]:
    """Trailing moving average; early points average over what exists.

    Each mean is computed exactly and rounded once, so a constant stretch
    stays bit-identical and no output leaves its window's [min, max].
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    exact = [Fraction(x) for x in series]
    out = []
    for i in range(len(exact)):
        chunk = exact[max(0, i - window + 1):i + 1]
        out.append(float(sum(chunk) / len(chunk)))
    return out
