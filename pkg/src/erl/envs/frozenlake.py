"""Procedural FrozenLake with abstract tile symbols.

Cells use ``A`` agent, ``B`` goal, ``C`` hole and ``D`` frozen floor. The
instance stores the start tile as ``A``; once the agent walks away the
tile renders as ``D``.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

from .core import (MAX_STEP_FEEDBACK, EnvInstance, GenerationError, StepOutcome,
                   TerminalStateError, parse_action)

GOAL_FEEDBACK = "The agent reached the goal"
HOLE_FEEDBACK = "The agent fell into the hole"
INVALID_FEEDBACK = "No valid actions were recorded."
# a plain move onto frozen floor emits no message
MOVE_FEEDBACK = ""
FEEDBACK = frozenset({GOAL_FEEDBACK, HOLE_FEEDBACK, MAX_STEP_FEEDBACK, INVALID_FEEDBACK,
                      MOVE_FEEDBACK})

ACTIONS = ("Up", "Down", "Left", "Right")
MOVES = {"Up": (-1, 0), "Down": (1, 0), "Left": (0, -1), "Right": (0, 1)}
BUDGET = 8
MAX_ATTEMPTS = 10_000

Pos = tuple[int, int]


@dataclass(frozen=True)
class LakeInstance:
    n: int
    cells: str
    start: Pos
    goal: Pos
    frozen_prob: float = 0.0

    def __post_init__(self):
        if len(self.cells) != self.n * self.n:
            raise ValueError("cells must hold n*n codes")
        if set(self.cells) - set("ABCD"):
            raise ValueError("cells may only contain A, B, C, D")
        if self.cells.count("A") != 1 or self.cells.count("B") != 1:
            raise ValueError("exactly one A and one B required")
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if self.tile(self.start) != "A" or self.tile(self.goal) != "B":
            raise ValueError("start/goal do not match the A/B cells")

    def tile(self, pos: Pos) -> str:
        return self.cells[pos[0] * self.n + pos[1]]

    def in_bounds(self, pos: Pos) -> bool:
        return 0 <= pos[0] < self.n and 0 <= pos[1] < self.n

    def to_payload(self) -> dict:
        return {"n": self.n, "cells": self.cells, "start": list(self.start),
                "goal": list(self.goal), "frozen_prob": self.frozen_prob}

    @classmethod
    def from_payload(cls, p: dict) -> LakeInstance:
        return cls(int(p["n"]), p["cells"], tuple(p["start"]), tuple(p["goal"]),
                   float(p.get("frozen_prob", 0.0)))

    @classmethod
    def from_rows(cls, rows: list[str], frozen_prob: float = 0.0) -> LakeInstance:
        """Build from rendered rows such as ``["A D", "D B"]``."""
        grid = [r.split() for r in rows]
        n = len(grid)
        cells = "".join("".join(r) for r in grid)
        start = divmod(cells.index("A"), n)
        goal = divmod(cells.index("B"), n)
        return cls(n, cells, start, goal, frozen_prob)


@dataclass(frozen=True)
class LakeState:
    instance: LakeInstance
    agent: Pos
    steps_taken: int = 0
    done: bool = False
    budget: int = BUDGET


def lake_has_path(instance: LakeInstance) -> bool:
    """Breadth-first search from start to goal over non-hole cells."""
    seen = {instance.start}
    queue = deque([instance.start])
    while queue:
        pos = queue.popleft()
        if pos == instance.goal:
            return True
        for dr, dc in MOVES.values():
            nxt = (pos[0] + dr, pos[1] + dc)
            if instance.in_bounds(nxt) and nxt not in seen and instance.tile(nxt) != "C":
                seen.add(nxt)
                queue.append(nxt)
    return False


def generate_lake(seed: int, n_range: tuple[int, int] = (2, 9),
                  p_range: tuple[float, float] = (0.6, 0.85)) -> LakeInstance:
    if not (2 <= n_range[0] <= n_range[1] <= 9):
        raise ValueError(f"n_range must lie within [2, 9], got {n_range}")
    if not (0.6 <= p_range[0] <= p_range[1] <= 0.85):
        raise ValueError(f"p_range must lie within [0.6, 0.85), got {p_range}")
    rng = random.Random(seed)
    n = rng.randint(*n_range)
    p = p_range[0] + (p_range[1] - p_range[0]) * rng.random()
    start_idx, goal_idx = rng.sample(range(n * n), 2)
    for _ in range(MAX_ATTEMPTS):
        codes = []
        for idx in range(n * n):
            if idx == start_idx:
                codes.append("A")
            elif idx == goal_idx:
                codes.append("B")
            else:
                codes.append("D" if rng.random() < p else "C")
        inst = LakeInstance(n, "".join(codes), divmod(start_idx, n), divmod(goal_idx, n), p)
        if lake_has_path(inst):
            return inst
    raise GenerationError(seed, f"no solvable lake after {MAX_ATTEMPTS} layouts")


def render_lake(state: LakeState) -> str:
    inst = state.instance
    rows = []
    for r in range(inst.n):
        row = []
        for c in range(inst.n):
            if (r, c) == state.agent:
                row.append("A")
            else:
                code = inst.tile((r, c))
                row.append("D" if code == "A" else code)
        rows.append(" ".join(row))
    return "\n".join(rows)


def lake_step(state: LakeState, action: Optional[str]) -> tuple[LakeState, StepOutcome]:
    if state.done:
        raise TerminalStateError("episode already ended")
    inst = state.instance
    steps = state.steps_taken + 1
    target = None
    if action in MOVES:
        dr, dc = MOVES[action]
        target = (state.agent[0] + dr, state.agent[1] + dc)
        if not inst.in_bounds(target):
            target = None

    if target is None:
        new = replace(state, steps_taken=steps)
        feedback, reward, terminal = INVALID_FEEDBACK, 0.0, False
    else:
        new = replace(state, agent=target, steps_taken=steps)
        tile = inst.tile(target)
        if tile == "B":
            feedback, reward, terminal = GOAL_FEEDBACK, 1.0, True
        elif tile == "C":
            feedback, reward, terminal = HOLE_FEEDBACK, 0.0, True
        else:
            feedback, reward, terminal = MOVE_FEEDBACK, 0.0, False
    if not terminal and steps >= state.budget:
        feedback, terminal = MAX_STEP_FEEDBACK, True
    new = replace(new, done=terminal)
    return new, StepOutcome(render_lake(new), feedback, reward, terminal)


class FrozenLakeEnv:
    name = "frozenlake"
    action_space = ACTIONS
    budget = BUDGET
    feedback_set = FEEDBACK

    def __init__(self):
        from ..prompts import load_prompt

        self.system_prompt = load_prompt("grid_system")
        self._task = load_prompt("frozenlake_task")

    def reset(self, instance: EnvInstance, budget: Optional[int] = None) -> LakeState:
        lake = LakeInstance.from_payload(instance.payload)
        return LakeState(lake, lake.start, budget=self.budget if budget is None else budget)

    def observe(self, state: LakeState) -> str:
        return self._task.format(step=state.steps_taken, board=render_lake(state))

    def step(self, state: LakeState, output: str):
        action = parse_action(output, self.action_space)
        new, outcome = lake_step(state, action)
        return new, outcome, action
