from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import pytest

from erl.envs import Completion, Context, EnvInstance, FrozenLakeEnv
from erl.envs.frozenlake import LakeInstance
from erl.policy import TabularPolicy


class ScriptedPolicy:
    """Plays a fixed action list, one per call; no scores, no logprobs."""

    backend = "scripted"

    def __init__(self, actions):
        self.actions = list(actions)
        self.calls = 0

    def generate(self, context, sampling=None, rng=None) -> Completion:
        action = self.actions[min(self.calls, len(self.actions) - 1)]
        self.calls += 1
        return Completion(f"<reason>scripted</reason>\n```{action}```", (action,))


class RuleTabular(TabularPolicy):
    """Tabular policy whose sampling is replaced by a rule on the context.

    Scoring and gradients still come from the table, so the trainer can
    update it normally.
    """

    def __init__(self, actions, rule: Callable[[Context], str], **kw):
        super().__init__(actions, **kw)
        self.rule = rule

    def generate(self, context, sampling=None, rng=None) -> Completion:
        action = self.rule(context)
        lp = self.score(context, [action])[0]
        return Completion(self.render(action), (action,), (min(lp, 0.0),), self.backend)


def lake_instance(rows: list[str], iid: str = "lake", split: str = "train") -> EnvInstance:
    return EnvInstance(iid, 0, LakeInstance.from_rows(rows).to_payload(), split)


@pytest.fixture
def lake_env() -> FrozenLakeEnv:
    return FrozenLakeEnv()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
