"""Tabular softmax policy with exact log-probability gradients.

Parameters are logits rows keyed by context digest. A deployment context
(no memory, no reflection) reads one row. A conditioned context reads its
deployment row plus a residual row under its own digest, so whatever the
policy learns for x carries over to (x, reflection) the way shared weights
would, while the conditioning can still shift the distribution. Rows that
were never touched read as zeros, i.e. the uniform distribution.

When a reflection is present the policy also reads its advice lines: each
line that argues against an action lowers that action's logit by
``advice_strength``. This offset is fixed, not learned.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..envs.core import Completion, Context
from .advice import action_penalties


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.7
    top_p: float = 1.0
    top_k: int = 0
    max_tokens: int = 8196

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0 (0 disables it)")


def fenced(action: str) -> str:
    return f"```{action}```"


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def truncate(probs: np.ndarray, top_p: float, top_k: int) -> np.ndarray:
    """Renormalised nucleus / top-k restriction of ``probs``."""
    order = np.argsort(-probs, kind="stable")
    keep = np.zeros(len(probs), dtype=bool)
    limit = len(probs) if top_k <= 0 else min(top_k, len(probs))
    mass = 0.0
    for rank, idx in enumerate(order[:limit]):
        keep[idx] = True
        mass += probs[idx]
        if mass >= top_p:
            break
    out = np.where(keep, probs, 0.0)
    return out / out.sum()


class ScoringError(KeyError):
    """Token outside the policy vocabulary."""


class TabularPolicy:
    backend = "tabular"

    def __init__(self, actions: Sequence[str], temperature: float = 1.0,
                 advice_strength: float = 4.0, render: Callable[[str], str] = fenced,
                 seed: Optional[int] = None):
        if not actions:
            raise ValueError("actions must be non-empty")
        self.actions = tuple(actions)
        self.index = {a: i for i, a in enumerate(self.actions)}
        self.temperature = temperature
        self.advice_strength = advice_strength
        self.render = render
        self.table: dict[str, np.ndarray] = {}
        self.rng = np.random.default_rng(seed)

    def copy(self) -> TabularPolicy:
        other = copy.copy(self)
        other.table = {k: v.copy() for k, v in self.table.items()}
        other.rng = np.random.default_rng()
        return other

    def offsets(self, context: Context) -> np.ndarray:
        if not context.reflection or not self.advice_strength:
            return np.zeros(len(self.actions))
        hits = action_penalties(context.observation, context.reflection, self.actions)
        return -self.advice_strength * np.array([hits[a] for a in self.actions], dtype=float)

    @staticmethod
    def row_keys(context: Context) -> list[str]:
        if context.conditioned:
            return [context.deploy().key(), context.key()]
        return [context.key()]

    def logits(self, context: Context) -> np.ndarray:
        z = self.offsets(context)
        for key in self.row_keys(context):
            row = self.table.get(key)
            if row is not None:
                z = z + row
        return z

    def log_probs(self, context: Context, temperature: Optional[float] = None) -> np.ndarray:
        t = self.temperature if temperature is None else temperature
        return log_softmax(self.logits(context) / t)

    def probs(self, context: Context, temperature: Optional[float] = None) -> np.ndarray:
        return np.exp(self.log_probs(context, temperature))

    def generate(self, context: Context, sampling: Optional[SamplingParams] = None,
                 rng: Optional[np.random.Generator] = None) -> Completion:
        if sampling is None:
            sampling = SamplingParams(temperature=self.temperature)
        rng = self.rng if rng is None else rng
        logp = self.log_probs(context, sampling.temperature)
        sample_probs = truncate(np.exp(logp), sampling.top_p, sampling.top_k)
        idx = int(rng.choice(len(self.actions), p=sample_probs))
        action = self.actions[idx]
        # recorded log-probs come from the full tempered softmax so that
        # score() reproduces them
        return Completion(self.render(action), (action,), (float(min(logp[idx], 0.0)),),
                          self.backend)

    def _idx(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise ScoringError(f"token {token!r} not in vocabulary") from None

    def score(self, context: Context, tokens: Iterable[str],
              temperature: Optional[float] = None) -> list[float]:
        logp = self.log_probs(context, temperature)
        return [float(logp[self._idx(t)]) for t in tokens]

    def grad_log_prob(self, context: Context, token: str,
                      temperature: Optional[float] = None) -> dict[str, np.ndarray]:
        """d log pi(token | context) / d row, for every row the context reads."""
        t = self.temperature if temperature is None else temperature
        p = np.exp(log_softmax(self.logits(context) / t))
        g = -p
        g[self._idx(token)] += 1.0
        g /= t
        return {key: g for key in self.row_keys(context)}

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for key, g in grads.items():
            row = self.table.get(key)
            if row is None:
                row = self.table[key] = np.zeros(len(self.actions))
            row -= lr * g

    def state_dict(self) -> dict:
        return {"actions": list(self.actions), "temperature": self.temperature,
                "advice_strength": self.advice_strength,
                "table": {k: v.tolist() for k, v in self.table.items()}}

    @classmethod
    def from_state_dict(cls, state: dict, render: Callable[[str], str] = fenced,
                        seed: Optional[int] = None) -> TabularPolicy:
        pol = cls(state["actions"], state["temperature"], state["advice_strength"], render, seed)
        pol.table = {k: np.asarray(v, dtype=float) for k, v in state["table"].items()}
        return pol
