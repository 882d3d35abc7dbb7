"""Single-box Sokoban on a walled board.

Render codes: ``A`` player, ``a`` player standing on the goal, ``B`` box,
``b`` box on the goal, ``C`` empty goal, ``E`` wall, ``D`` floor.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, replace
from typing import Optional

from .core import (MAX_STEP_FEEDBACK, EnvInstance, GenerationError, StepOutcome,
                   TerminalStateError, parse_action)

SOLVED_FEEDBACK = "The agent solved the puzzle (all boxes on goals)."
MOVED_FEEDBACK = "The agent moved or pushed a box; puzzle not solved yet."
BLOCKED_FEEDBACK = ("The agent did not move (likely hit a wall or tried to push into a "
                    "blocked space).")
FEEDBACK = frozenset({SOLVED_FEEDBACK, MOVED_FEEDBACK, BLOCKED_FEEDBACK, MAX_STEP_FEEDBACK})

ACTIONS = ("Up", "Down", "Left", "Right")
MOVES = {"Up": (-1, 0), "Down": (1, 0), "Left": (0, -1), "Right": (0, 1)}
BUDGET = 8
MAX_SOLUTION = 8
MAX_ATTEMPTS = 10_000

Pos = tuple[int, int]


@dataclass(frozen=True)
class SokobanInstance:
    rows: int
    cols: int
    goal: Pos
    box: Pos
    player: Pos
    min_solution: Optional[int] = None

    def __post_init__(self):
        if len({self.goal, self.box, self.player}) != 3:
            raise ValueError("goal, box and player must be pairwise distinct")
        for p in (self.goal, self.box, self.player):
            if not self.interior(p):
                raise ValueError(f"{p} is not an interior cell")

    @property
    def n(self) -> int:
        return self.rows

    def interior(self, pos: Pos) -> bool:
        return 0 < pos[0] < self.rows - 1 and 0 < pos[1] < self.cols - 1

    def to_payload(self) -> dict:
        p = {"goal": list(self.goal), "box": list(self.box), "player": list(self.player),
             "min_solution": self.min_solution}
        if self.rows == self.cols:
            p["n"] = self.rows
        else:
            p["rows"], p["cols"] = self.rows, self.cols
        return p

    @classmethod
    def from_payload(cls, p: dict) -> SokobanInstance:
        rows = int(p.get("rows", p.get("n")))
        cols = int(p.get("cols", p.get("n")))
        return cls(rows, cols, tuple(p["goal"]), tuple(p["box"]), tuple(p["player"]),
                   p.get("min_solution"))


@dataclass(frozen=True)
class SokobanState:
    instance: SokobanInstance
    player: Pos
    box: Pos
    steps_taken: int = 0
    done: bool = False
    budget: int = BUDGET


def _advance(inst: SokobanInstance, player: Pos, box: Pos, action: str):
    """Apply one move; returns the new (player, box) or None when blocked."""
    dr, dc = MOVES[action]
    target = (player[0] + dr, player[1] + dc)
    if not inst.interior(target):
        return None
    if target == box:
        beyond = (box[0] + dr, box[1] + dc)
        if not inst.interior(beyond):
            return None
        return target, beyond
    return target, box


def sokoban_solve(inst: SokobanInstance) -> Optional[list[str]]:
    """Shortest move sequence putting the box on the goal, or None."""
    start = (inst.player, inst.box)
    if inst.box == inst.goal:
        return []
    parent: dict = {start: None}
    queue = deque([start])
    while queue:
        state = queue.popleft()
        for action in ACTIONS:
            nxt = _advance(inst, state[0], state[1], action)
            if nxt is None or nxt in parent:
                continue
            parent[nxt] = (state, action)
            if nxt[1] == inst.goal:
                plan = []
                node = nxt
                while parent[node] is not None:
                    node, act = parent[node]
                    plan.append(act)
                return plan[::-1]
            queue.append(nxt)
    return None


def sokoban_min_solution(inst: SokobanInstance) -> Optional[int]:
    plan = sokoban_solve(inst)
    return None if plan is None else len(plan)


def generate_sokoban(seed: int, size_range: tuple[int, int] = (6, 8),
                     max_solution: int = MAX_SOLUTION) -> SokobanInstance:
    rng = random.Random(seed)
    n = rng.randint(*size_range)
    interior = [(r, c) for r in range(1, n - 1) for c in range(1, n - 1)]
    for _ in range(MAX_ATTEMPTS):
        goal, box, player = rng.sample(interior, 3)
        inst = SokobanInstance(n, n, goal, box, player)
        moves = sokoban_min_solution(inst)
        if moves is not None and 1 <= moves <= max_solution:
            return replace(inst, min_solution=moves)
    raise GenerationError(seed, f"no layout with a <= {max_solution}-move solution "
                                f"after {MAX_ATTEMPTS} samples")


def render_sokoban(state: SokobanState) -> str:
    inst = state.instance
    rows = []
    for r in range(inst.rows):
        row = []
        for c in range(inst.cols):
            pos = (r, c)
            on_goal = pos == inst.goal
            if not inst.interior(pos):
                row.append("E")
            elif pos == state.player:
                row.append("a" if on_goal else "A")
            elif pos == state.box:
                row.append("b" if on_goal else "B")
            else:
                row.append("C" if on_goal else "D")
        rows.append(" ".join(row))
    return "\n".join(rows)


def sokoban_step(state: SokobanState, action: Optional[str]) -> tuple[SokobanState, StepOutcome]:
    if state.done:
        raise TerminalStateError("episode already ended")
    steps = state.steps_taken + 1
    moved = None if action not in MOVES else _advance(state.instance, state.player,
                                                      state.box, action)
    if moved is None:
        new = replace(state, steps_taken=steps)
        feedback, reward, terminal = BLOCKED_FEEDBACK, 0.0, False
    else:
        new = replace(state, player=moved[0], box=moved[1], steps_taken=steps)
        if moved[1] == state.instance.goal:
            feedback, reward, terminal = SOLVED_FEEDBACK, 1.0, True
        else:
            feedback, reward, terminal = MOVED_FEEDBACK, 0.0, False
    if not terminal and steps >= state.budget:
        feedback, terminal = MAX_STEP_FEEDBACK, True
    new = replace(new, done=terminal)
    return new, StepOutcome(render_sokoban(new), feedback, reward, terminal)


class SokobanEnv:
    name = "sokoban"
    action_space = ACTIONS
    budget = BUDGET
    feedback_set = FEEDBACK

    def __init__(self):
        from ..prompts import load_prompt

        self.system_prompt = load_prompt("grid_system")
        self._task = load_prompt("sokoban_task")

    def reset(self, instance: EnvInstance, budget: Optional[int] = None) -> SokobanState:
        inst = SokobanInstance.from_payload(instance.payload)
        return SokobanState(inst, inst.player, inst.box,
                            budget=self.budget if budget is None else budget)

    def observe(self, state: SokobanState) -> str:
        return self._task.format(step=state.steps_taken, board=render_sokoban(state))

    def step(self, state: SokobanState, output: str):
        action = parse_action(output, self.action_space)
        new, outcome = sokoban_step(state, action)
        return new, outcome, action
