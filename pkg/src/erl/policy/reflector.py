"""Deterministic stand-in for model-written reflections on grid tasks."""

from __future__ import annotations

from ..envs.core import EpisodeTrace
from ..envs.frozenlake import HOLE_FEEDBACK, INVALID_FEEDBACK
from ..envs.sokoban import BLOCKED_FEEDBACK
from .advice import MOVES, RETRY_SENTINEL, avoid_line, blocked_line, find_agent

_NO_OP = {INVALID_FEEDBACK, BLOCKED_FEEDBACK}


def scripted_reflector(trace: EpisodeTrace) -> str:
    """Advice lines for a failed attempt, in the order the events happened.

    A hole entered yields ``AVOID:(r,c)``; an action that changed nothing
    yields ``BLOCKED:<action>@(r,c)`` at the agent's cell. A trace without
    either event gets ``RETRY:EXPLORE``.
    """
    lines: list[str] = []
    for step in trace.steps:
        if step.action is None:
            continue
        pos = find_agent(step.observation)
        if pos is None:
            continue
        if step.feedback in _NO_OP:
            line = blocked_line(step.action, pos)
        elif step.feedback == HOLE_FEEDBACK:
            dr, dc = MOVES[step.action]
            line = avoid_line((pos[0] + dr, pos[1] + dc))
        else:
            continue
        if line not in lines:
            lines.append(line)
    return "\n".join(lines) if lines else RETRY_SENTINEL
