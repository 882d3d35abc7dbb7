"""Episode protocol shared by every environment.

An environment turns an immutable :class:`EnvInstance` into an initial state,
renders states as prompt text, and maps raw model output to a
:class:`StepOutcome`. :func:`run_episode` drives the observe, generate, parse,
step loop and records an :class:`EpisodeTrace`.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Protocol, Sequence

MAX_STEP_FEEDBACK = "Hit the max step limit"

# parse_action returns this for output without a usable fenced action
PARSE_FAILURE = None

_FENCE_RE = re.compile(r"```(.*?)```", re.DOTALL)


class TerminalStateError(RuntimeError):
    """Raised when a caller steps an episode that has already ended."""


class GenerationError(RuntimeError):
    """Procedural generation gave up; carries the seed that failed."""

    def __init__(self, seed: int, message: str):
        super().__init__(f"seed {seed}: {message}")
        self.seed = seed


class BackendError(RuntimeError):
    """A policy backend could not produce a completion.

    ``retryable`` is True for transport-level failures; the episode that hit
    it is discarded, never scored.
    """

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


@dataclass(frozen=True)
class EnvInstance:
    id: str
    seed: int
    payload: dict
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "eval"):
            raise ValueError(f"split must be train or eval, got {self.split!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed out of 64-bit unsigned range: {self.seed}")

    def to_json(self) -> dict:
        return {"id": self.id, "seed": self.seed, "split": self.split, "payload": self.payload}

    @classmethod
    def from_json(cls, row: dict) -> EnvInstance:
        return cls(id=str(row["id"]), seed=int(row["seed"]), payload=dict(row["payload"]),
                   split=row.get("split", "train"))


@dataclass(frozen=True)
class StepOutcome:
    observation: str
    feedback: str
    reward: float
    terminal: bool


@dataclass(frozen=True)
class Context:
    """Everything a policy conditions on for one decision.

    ``memory`` and ``reflection`` are the optional extras; with both absent
    this is the deployment form of the context.
    """

    system: str
    observation: str
    history: tuple[str, ...] = ()
    memory: Optional[str] = None
    reflection: Optional[str] = None

    def __post_init__(self):
        # empty text and absence are the same conditioning
        if not self.memory:
            object.__setattr__(self, "memory", None)
        if not self.reflection:
            object.__setattr__(self, "reflection", None)

    @property
    def conditioned(self) -> bool:
        return self.memory is not None or self.reflection is not None

    def key(self) -> str:
        cached = self.__dict__.get("_key")
        if cached is None:
            blob = json.dumps([self.system, self.memory, self.reflection, list(self.history),
                               self.observation], ensure_ascii=False)
            cached = hashlib.sha1(blob.encode("utf-8")).hexdigest()
            # frozen dataclass: bypass __setattr__ for the memo
            object.__setattr__(self, "_key", cached)
        return cached

    def deploy(self) -> Context:
        return Context(self.system, self.observation, self.history)

    def with_reflection(self, reflection: Optional[str]) -> Context:
        return Context(self.system, self.observation, self.history, self.memory, reflection)

    def system_text(self) -> str:
        parts = [self.system]
        if self.memory:
            parts.append("## Reflection memory\n" + self.memory)
        if self.reflection:
            parts.append(self.reflection)
        return "\n\n".join(parts)

    def messages(self) -> list[dict]:
        user = "\n\n".join([*self.history, self.observation])
        return [{"role": "system", "content": self.system_text()},
                {"role": "user", "content": user}]

    def to_json(self) -> dict:
        return {"system": self.system, "observation": self.observation,
                "history": list(self.history), "memory": self.memory,
                "reflection": self.reflection}

    @classmethod
    def from_json(cls, d: dict) -> Context:
        return cls(d["system"], d["observation"], tuple(d.get("history", ())),
                   d.get("memory"), d.get("reflection"))


@dataclass(frozen=True)
class Completion:
    text: str
    tokens: tuple[str, ...] = ()
    logprobs: Optional[tuple[float, ...]] = None
    backend: str = "scripted"
    tool_calls: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.logprobs is not None:
            if len(self.logprobs) != len(self.tokens):
                raise ValueError("tokens and logprobs differ in length")
            if any(lp > 0 for lp in self.logprobs):
                raise ValueError("log-probabilities must be <= 0")


@dataclass
class Step:
    observation: str
    output: str
    action: Optional[str]
    feedback: str
    reward: float
    context: Context
    tokens: tuple[str, ...] = ()
    logprobs: Optional[tuple[float, ...]] = None

    def to_json(self) -> dict:
        return {"observation": self.observation, "output": self.output, "action": self.action,
                "feedback": self.feedback, "reward": self.reward,
                "context": self.context.to_json(), "tokens": list(self.tokens),
                "logprobs": None if self.logprobs is None else list(self.logprobs)}

    @classmethod
    def from_json(cls, d: dict) -> Step:
        lps = d.get("logprobs")
        return cls(d["observation"], d["output"], d["action"], d["feedback"], d["reward"],
                   Context.from_json(d["context"]), tuple(d.get("tokens", ())),
                   None if lps is None else tuple(lps))


@dataclass
class EpisodeTrace:
    instance_id: str
    steps: list[Step] = field(default_factory=list)
    final_reward: float = 0.0
    truncated: bool = False
    attempt_index: int = 1

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def feedback(self) -> str:
        """Feedback of the final step, the f of the attempt."""
        return self.steps[-1].feedback if self.steps else ""

    @property
    def tokens(self) -> list[str]:
        return [t for s in self.steps for t in s.tokens]

    @property
    def has_logprobs(self) -> bool:
        return all(s.logprobs is not None for s in self.steps)

    def transcript(self) -> str:
        lines = []
        for i, s in enumerate(self.steps):
            lines += [f"[step {i + 1}] observation:", s.observation, "model output:", s.output,
                      f"feedback: {s.feedback}", f"reward: {s.reward}"]
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"instance_id": self.instance_id, "attempt_index": self.attempt_index,
                "final_reward": self.final_reward, "truncated": self.truncated,
                "steps": [s.to_json() for s in self.steps]}

    @classmethod
    def from_json(cls, d: dict) -> EpisodeTrace:
        return cls(d["instance_id"], [Step.from_json(s) for s in d["steps"]],
                   d["final_reward"], d["truncated"], d["attempt_index"])


class Environment(Protocol):
    name: str
    action_space: tuple[str, ...]
    budget: int
    feedback_set: frozenset[str]
    system_prompt: str

    def reset(self, instance: EnvInstance, budget: Optional[int] = None) -> Any: ...

    def observe(self, state: Any) -> str: ...

    def step(self, state: Any, output: str) -> tuple[Any, StepOutcome, Optional[str]]: ...


class Policy(Protocol):
    def generate(self, context: Context, sampling: Any = None, rng: Any = None) -> Completion: ...


def parse_action(model_output: str, action_space: Sequence[str]) -> Optional[str]:
    """Return the action named in the last triple-backtick block, else None."""
    if not action_space:
        raise ValueError("action_space must be non-empty")
    blocks = _FENCE_RE.findall(model_output)
    if not blocks:
        return PARSE_FAILURE
    content = blocks[-1].strip().lower()
    for name in action_space:
        if name.lower() == content:
            return name
    return PARSE_FAILURE


def run_episode(env: Environment, instance: EnvInstance, policy: Policy, context: Context,
                budget: Optional[int] = None, *, sampling: Any = None, rng: Any = None,
                attempt_index: int = 1) -> EpisodeTrace:
    """Roll one attempt of ``policy`` on ``instance``.

    ``context`` supplies the system text, memory and reflection; its
    observation and history are replaced as the episode unfolds. Backend
    failures propagate as :class:`BackendError`.
    """
    budget = env.budget if budget is None else budget
    if budget < 1:
        raise ValueError("budget must be >= 1")
    state = env.reset(instance, budget=budget)
    observation = env.observe(state)
    history: list[str] = []
    trace = EpisodeTrace(instance.id, attempt_index=attempt_index)
    while True:
        ctx = Context(context.system, observation, tuple(history), context.memory,
                      context.reflection)
        completion = policy.generate(ctx, sampling, rng)
        state, outcome, action = env.step(state, completion.text)
        trace.steps.append(Step(observation, completion.text, action, outcome.feedback,
                                outcome.reward, ctx, completion.tokens, completion.logprobs))
        history += [observation, completion.text]
        if outcome.feedback:
            history.append(f"Feedback: {outcome.feedback}")
        observation = env.observe(state)
        if outcome.terminal:
            trace.final_reward = outcome.reward
            trace.truncated = outcome.feedback == MAX_STEP_FEEDBACK
            return trace
        if len(trace.steps) >= budget:
            # env budgets normally end the episode themselves; guard anyway
            trace.final_reward = 0.0
            trace.truncated = True
            return trace


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_instances(path: str | Path) -> list[EnvInstance]:
    rows = list(read_jsonl(path))
    if rows and "payload" not in rows[0]:
        # flat QA schema {id, question, gold_answer, split}
        return [EnvInstance(str(r["id"]), int(r.get("seed", 0)),
                            {"question": r["question"], "gold_answer": r["gold_answer"]},
                            r.get("split", "train")) for r in rows]
    instances = [EnvInstance.from_json(r) for r in rows]
    ids = [i.id for i in instances]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate instance ids in {path}")
    return instances
