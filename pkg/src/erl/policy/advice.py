"""Structured advice lines exchanged between reflector and tabular policy.

Three line kinds exist:

``AVOID:(r,c)``
    never step onto cell (r, c).
``AVOID:<symbol>``
    never step onto a cell showing <symbol>.
``BLOCKED:<action>@(r,c)``
    <action> taken while standing on (r, c) changes nothing.

``RETRY:EXPLORE`` is the sentinel for a reflection with nothing specific to
say. Grid observations are located by their rows of single-letter codes.
"""

from __future__ import annotations

import re
from typing import Optional

RETRY_SENTINEL = "RETRY:EXPLORE"
MOVES = {"Up": (-1, 0), "Down": (1, 0), "Left": (0, -1), "Right": (0, 1)}

_GRID_ROW = re.compile(r"^[A-Ea-e]( [A-Ea-e])*$")
_AVOID = re.compile(r"^AVOID:\((\d+),(\d+)\)$")
_AVOID_SYMBOL = re.compile(r"^AVOID:([A-Ea-e])$")
_BLOCKED = re.compile(r"^BLOCKED:(\w+)@\((\d+),(\d+)\)$")


def grid_rows(observation: str) -> list[list[str]]:
    """First contiguous block of grid rows found in ``observation``."""
    rows: list[list[str]] = []
    for line in observation.splitlines():
        line = line.strip()
        if _GRID_ROW.match(line):
            rows.append(line.split())
        elif rows:
            break
    return rows


def find_agent(observation: str) -> Optional[tuple[int, int]]:
    for r, row in enumerate(grid_rows(observation)):
        for c, code in enumerate(row):
            if code in ("A", "a"):
                return r, c
    return None


def avoid_line(pos: tuple[int, int]) -> str:
    return f"AVOID:({pos[0]},{pos[1]})"


def avoid_symbol_line(symbol: str) -> str:
    return f"AVOID:{symbol}"


def symbol_at(observation: str, pos: tuple[int, int]) -> Optional[str]:
    rows = grid_rows(observation)
    if 0 <= pos[0] < len(rows) and 0 <= pos[1] < len(rows[pos[0]]):
        return rows[pos[0]][pos[1]]
    return None


def blocked_line(action: str, pos: tuple[int, int]) -> str:
    return f"BLOCKED:{action}@({pos[0]},{pos[1]})"


def parse_advice(text: Optional[str]) -> list[tuple]:
    """Recognised advice lines as ("avoid", pos), ("avoid_symbol", symbol) or
    ("blocked", action, pos)."""
    out = []
    for line in (text or "").splitlines():
        line = line.strip()
        if m := _AVOID.match(line):
            out.append(("avoid", (int(m[1]), int(m[2]))))
        elif m := _AVOID_SYMBOL.match(line):
            out.append(("avoid_symbol", m[1]))
        elif m := _BLOCKED.match(line):
            out.append(("blocked", m[1], (int(m[2]), int(m[3]))))
    return out


def transferable_lines(text: Optional[str]) -> list[str]:
    """Lines worth carrying to other instances.

    Symbol rules and BLOCKED facts about board edges hold on every board of
    the same size; AVOID cells are specific to one layout.
    """
    out = []
    for item in parse_advice(text):
        if item[0] == "avoid_symbol":
            out.append(avoid_symbol_line(item[1]))
        elif item[0] == "blocked":
            out.append(blocked_line(item[1], item[2]))
    return out


def action_penalties(observation: str, advice: Optional[str], actions) -> dict[str, int]:
    """How many advice lines argue against each action in this observation."""
    hits = dict.fromkeys(actions, 0)
    items = parse_advice(advice)
    if not items:
        return hits
    rows = grid_rows(observation)
    pos = find_agent(observation)
    if pos is None:
        return hits

    def symbol(p):
        if 0 <= p[0] < len(rows) and 0 <= p[1] < len(rows[p[0]]):
            return rows[p[0]][p[1]]
        return None

    for item in items:
        if item[0] == "blocked":
            if item[2] == pos and item[1] in hits:
                hits[item[1]] += 1
            continue
        for action in actions:
            d = MOVES.get(action)
            if d is None:
                continue
            target = (pos[0] + d[0], pos[1] + d[1])
            if item[0] == "avoid" and target == item[1]:
                hits[action] += 1
            elif item[0] == "avoid_symbol" and symbol(target) == item[1]:
                hits[action] += 1
    return hits
