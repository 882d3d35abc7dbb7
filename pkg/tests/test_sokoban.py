from __future__ import annotations

import random

import pytest

from erl.envs import EnvInstance, SokobanEnv, TerminalStateError
from erl.envs.sokoban import (BLOCKED_FEEDBACK, FEEDBACK, MAX_STEP_FEEDBACK, MOVED_FEEDBACK,
                              SOLVED_FEEDBACK, SokobanInstance, SokobanState, generate_sokoban,
                              render_sokoban, sokoban_min_solution, sokoban_solve, sokoban_step)


def start(inst: SokobanInstance) -> SokobanState:
    return SokobanState(inst, inst.player, inst.box)


TABLE7 = SokobanInstance(4, 6, goal=(1, 4), box=(1, 3), player=(1, 1))


def test_feedback_strings_are_exact():
    assert SOLVED_FEEDBACK == "The agent solved the puzzle (all boxes on goals)."
    assert MOVED_FEEDBACK == "The agent moved or pushed a box; puzzle not solved yet."
    assert BLOCKED_FEEDBACK == ("The agent did not move (likely hit a wall or tried to push "
                                "into a blocked space).")
    assert MAX_STEP_FEEDBACK == "Hit the max step limit"


def test_table7_render():
    assert render_sokoban(start(TABLE7)) == "\n".join([
        "E E E E E E",
        "E A D B C E",
        "E D D D D E",
        "E E E E E E",
    ])
    assert SokobanEnv().observe(start(TABLE7)).startswith("Current Board (0):\nE E E E E E\n")


def test_one_push_layout():
    inst = SokobanInstance(6, 6, goal=(2, 4), box=(2, 3), player=(2, 2))
    assert sokoban_min_solution(inst) == 1
    new, out = sokoban_step(start(inst), "Right")
    assert (out.reward, out.terminal, out.feedback) == (1.0, True, SOLVED_FEEDBACK)
    assert "b" in out.observation and "C" not in out.observation


def test_wall_and_blocked_push_are_no_ops():
    inst = SokobanInstance(6, 6, goal=(2, 2), box=(1, 3), player=(1, 1))
    s = start(inst)
    new, out = sokoban_step(s, "Up")
    assert out.feedback == BLOCKED_FEEDBACK and (new.player, new.box) == (s.player, s.box)
    inst = SokobanInstance(6, 6, goal=(2, 2), box=(1, 4), player=(1, 3))
    s = start(inst)
    new, out = sokoban_step(s, "Right")
    assert out.feedback == BLOCKED_FEEDBACK and (new.player, new.box) == (s.player, s.box)


def test_player_on_goal_renders_lowercase():
    inst = SokobanInstance(6, 6, goal=(2, 2), box=(3, 3), player=(1, 2))
    new, out = sokoban_step(start(inst), "Down")
    assert out.feedback == MOVED_FEEDBACK
    assert render_sokoban(new).splitlines()[2].split()[2] == "a"


def test_corner_box_is_deadlocked():
    inst = SokobanInstance(6, 6, goal=(3, 3), box=(1, 1), player=(2, 2))
    assert sokoban_min_solution(inst) is None


def test_box_on_goal_rejected():
    with pytest.raises(ValueError):
        SokobanInstance(6, 6, goal=(2, 2), box=(2, 2), player=(3, 3))


def test_budget_and_terminal_contract():
    inst = SokobanInstance(6, 6, goal=(4, 4), box=(2, 2), player=(3, 3))
    s = start(inst)
    for _ in range(7):
        s, out = sokoban_step(s, "Up" if s.player[0] > 1 else "Down")
        assert not out.terminal
    s, out = sokoban_step(s, None)
    assert out.terminal and out.feedback == MAX_STEP_FEEDBACK
    with pytest.raises(TerminalStateError):
        sokoban_step(s, "Up")


def test_generator_draws():
    for seed in range(500):
        inst = generate_sokoban(seed)
        assert 6 <= inst.rows <= 8 and inst.rows == inst.cols
        assert 1 <= inst.min_solution <= 8
        assert inst.min_solution == sokoban_min_solution(inst)


def test_plans_replay_to_success():
    for seed in range(100):
        inst = generate_sokoban(seed)
        s = start(inst)
        plan = sokoban_solve(inst)
        assert len(plan) == inst.min_solution
        for i, action in enumerate(plan):
            s, out = sokoban_step(s, action)
            frame = out.observation.split()
            assert sum(c in "Aa" for c in frame) == 1 and sum(c in "Bb" for c in frame) == 1
        assert out.feedback == SOLVED_FEEDBACK


def test_generator_deterministic():
    assert generate_sokoban(5) == generate_sokoban(5)


def test_payload_roundtrip():
    inst = generate_sokoban(11)
    env = SokobanEnv()
    state = env.reset(EnvInstance("s", 11, inst.to_payload()))
    assert state.instance == inst
    assert set(inst.to_payload()) == {"n", "goal", "box", "player", "min_solution"}


def test_feedback_closed_over_random_play():
    rng = random.Random(0)
    for seed in range(50):
        s = start(generate_sokoban(seed))
        while True:
            s, out = sokoban_step(s, rng.choice(["Up", "Down", "Left", "Right", None]))
            assert out.feedback in FEEDBACK
            if out.terminal:
                break
