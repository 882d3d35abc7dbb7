from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erl.envs import Context, EpisodeTrace, Step
from erl.envs.frozenlake import HOLE_FEEDBACK, INVALID_FEEDBACK, MAX_STEP_FEEDBACK
from erl.envs.sokoban import BLOCKED_FEEDBACK, MOVED_FEEDBACK
from erl.policy import (RETRY_SENTINEL, SamplingParams, ScoringError, TabularPolicy,
                        action_penalties, parse_advice, scripted_reflector)
from erl.policy.advice import transferable_lines
from erl.policy.tabular import truncate

from oracles import central_difference, relative_error

ACTIONS = ("Up", "Down", "Left", "Right")
BOARD = "Current Observation (0):\nD D C D\nA D D C\nD C D D\nD D B D\nPlease act."


def test_uniform_start():
    pol = TabularPolicy(ACTIONS)
    ctx = Context("s", "o")
    assert np.allclose(pol.probs(ctx), 0.25)
    assert pol.score(ctx, ["Left"])[0] == pytest.approx(math.log(0.25))


def test_greedy_limit():
    pol = TabularPolicy(ACTIONS)
    ctx = Context("s", "o")
    pol.table[ctx.key()] = np.array([2.0, 0, 0, 0])
    assert pol.probs(ctx, temperature=1e-3)[0] == pytest.approx(1.0)


def test_unknown_token_faults():
    with pytest.raises(ScoringError):
        TabularPolicy(ACTIONS).score(Context("s", "o"), ["Jump"])


def test_generate_logprob_matches_score(rng):
    pol = TabularPolicy(ACTIONS, temperature=0.7)
    ctx = Context("s", "o")
    pol.table[ctx.key()] = rng.normal(size=4)
    for _ in range(20):
        c = pol.generate(ctx, SamplingParams(0.7), rng)
        assert c.tokens[0] in ACTIONS and c.text == f"```{c.tokens[0]}```"
        assert pol.score(ctx, c.tokens, 0.7) == pytest.approx(list(c.logprobs))


def test_sampling_is_seedable():
    pol = TabularPolicy(ACTIONS)
    ctx = Context("s", "o")
    a = [pol.generate(ctx, rng=np.random.default_rng(4)).tokens for _ in range(5)]
    b = [pol.generate(ctx, rng=np.random.default_rng(4)).tokens for _ in range(5)]
    assert a == b


def test_nucleus_and_top_k():
    p = np.array([0.5, 0.3, 0.15, 0.05])
    assert truncate(p, 0.8, 0) == pytest.approx([0.5 / 0.8, 0.3 / 0.8, 0, 0])
    assert truncate(p, 1.0, 1) == pytest.approx([1, 0, 0, 0])
    assert truncate(p, 1.0, 20) == pytest.approx(p)
    with pytest.raises(ValueError):
        SamplingParams(top_p=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=4, max_size=4), st.floats(0.05, 5))
def test_probabilities_normalized(logits, temp):
    pol = TabularPolicy(ACTIONS)
    ctx = Context("s", "o")
    pol.table[ctx.key()] = np.array(logits)
    assert abs(pol.probs(ctx, temp).sum() - 1) < 1e-12


def test_score_gradient_finite_differences():
    rng = np.random.default_rng(1)
    pol = TabularPolicy(ACTIONS, temperature=0.7)
    for k in range(100):
        ctx = Context("s", f"obs {k}")
        if k % 2:
            ctx = ctx.with_reflection(f"note {k}")
        for key in pol.row_keys(ctx):
            pol.table[key] = rng.normal(size=4)
        tok = ACTIONS[k % 4]
        analytic = pol.grad_log_prob(ctx, tok)
        numeric = central_difference(lambda: pol.score(ctx, [tok])[0], pol.table,
                                     pol.row_keys(ctx))
        assert relative_error(analytic, numeric) < 1e-6


def test_conditioned_context_shares_deploy_row():
    pol = TabularPolicy(ACTIONS, advice_strength=0)
    plain = Context("s", "o")
    cond = plain.with_reflection("hint")
    pol.apply_gradients({plain.key(): np.array([-1.0, 0, 0, 0])}, 1.0)
    assert pol.probs(cond)[0] == pytest.approx(pol.probs(plain)[0])
    pol.apply_gradients({cond.key(): np.array([0, -1.0, 0, 0])}, 1.0)
    assert pol.probs(cond)[1] > pol.probs(plain)[1]


def test_state_roundtrip():
    pol = TabularPolicy(ACTIONS, 0.9, 2.0)
    pol.table["k"] = np.array([1.0, 2, 3, 4])
    other = TabularPolicy.from_state_dict(pol.state_dict())
    assert other.table["k"].tolist() == [1, 2, 3, 4] and other.advice_strength == 2.0


# ------------------------------------------------------------------ advice

def test_advice_offsets():
    pol = TabularPolicy(ACTIONS, advice_strength=4.0)
    ctx = Context("s", BOARD)
    assert not pol.offsets(ctx).any()
    # agent at (1,0): Up -> (0,0) D, Down -> (2,0) D, Right -> (1,1) D
    assert pol.offsets(ctx.with_reflection("AVOID:(2,0)")).tolist() == [0, -4, 0, 0]
    assert pol.offsets(ctx.with_reflection("BLOCKED:Left@(1,0)")).tolist() == [0, 0, -4, 0]
    assert pol.offsets(ctx.with_reflection("BLOCKED:Left@(3,3)")).tolist() == [0, 0, 0, 0]
    assert pol.offsets(ctx.with_reflection(RETRY_SENTINEL)).tolist() == [0, 0, 0, 0]


def test_symbol_advice():
    board = "A C\nC B"
    hits = action_penalties(board, "AVOID:C", ACTIONS)
    assert hits == {"Up": 0, "Down": 1, "Left": 0, "Right": 1}
    assert parse_advice("AVOID:C\njunk\nAVOID:(1,2)") == [("avoid_symbol", "C"),
                                                          ("avoid", (1, 2))]


def test_transferable_lines_drop_cells():
    text = "AVOID:(1,2)\nAVOID:C\nBLOCKED:Up@(0,0)"
    assert transferable_lines(text) == ["AVOID:C", "BLOCKED:Up@(0,0)"]


# --------------------------------------------------------------- reflector

def _trace(obs_feedback_actions):
    steps = [Step(o, f"```{a}```", a, f, 0.0, Context("s", o)) for o, f, a in obs_feedback_actions]
    return EpisodeTrace("t", steps)


def test_reflector_hole():
    obs = "D D D D\nD D A D\nD D D C\nD D D B"
    assert scripted_reflector(_trace([(obs, HOLE_FEEDBACK, "Right")])) == "AVOID:(1,3)"
    obs = "D D D D\nD D A C\nD D D D\nD D D B"
    assert scripted_reflector(_trace([(obs, HOLE_FEEDBACK, "Down")])) == "AVOID:(2,2)"


def test_reflector_hole_at_2_3():
    obs = "D D D D\nD D D A\nD D D C\nD D D B"
    assert scripted_reflector(_trace([(obs, HOLE_FEEDBACK, "Down")])) == "AVOID:(2,3)"


def test_reflector_sokoban_noop_push():
    frames = [
        ("E E E E E E\nE D D D D E\nE D D D D E\nE D A D D E\nE B D D C E\nE E E E E E",
         MOVED_FEEDBACK, "Up"),
        ("E E E E E E\nE D D D D E\nE D A D D E\nE D D D D E\nE B D D C E\nE E E E E E",
         MOVED_FEEDBACK, "Up"),
        ("E E E E E E\nE D A D D E\nE D D D D E\nE D D D D E\nE B D D C E\nE E E E E E",
         MOVED_FEEDBACK, "Right"),
        # the reflector reads the reported outcome: step 4 is a no-op push
        ("E E E E E E\nE D D A D E\nE D D D D E\nE D D D D E\nE B D D C E\nE E E E E E",
         BLOCKED_FEEDBACK, "Left"),
    ]
    assert scripted_reflector(_trace(frames)) == "BLOCKED:Left@(1,3)"


def test_reflector_sentinel_and_invalid():
    obs = "A D\nD B"
    truncated = _trace([(obs, "", "Right")] * 7 + [(obs, MAX_STEP_FEEDBACK, "Left")])
    assert scripted_reflector(truncated) == RETRY_SENTINEL
    assert scripted_reflector(_trace([(obs, INVALID_FEEDBACK, "Up")] * 2)) == "BLOCKED:Up@(0,0)"
