"""Grouped advantages and the clipped, KL-regularised objectives.

All gradients are taken with respect to the tabular policy's logits rows and
returned as ``{context_key: d loss / d row}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..envs.core import Context, EpisodeTrace

KINDS = ("attempt1", "reflection", "attempt2", "distill")


class BatchError(ValueError):
    pass


def group_advantages(rewards: Sequence[float], eps: float = 1e-6) -> list[float]:
    """(r - mean) / (population std + eps); identical rewards give zeros."""
    if len(rewards) < 2:
        raise BatchError("a group needs at least two rewards")
    r = np.asarray(rewards, dtype=float)
    if np.all(r == r[0]):
        return [0.0] * len(r)
    return list((r - r.mean()) / (r.std() + eps))


@dataclass
class Sample:
    contexts: list[Context]
    tokens: list[str]
    old_logprobs: Optional[list[float]]
    reward: float
    ref_logprobs: Optional[list[float]] = None
    advantage: float = 0.0

    @classmethod
    def from_trace(cls, trace: EpisodeTrace) -> Sample:
        contexts, tokens, old = [], [], []
        for step in trace.steps:
            for t in step.tokens:
                contexts.append(step.context)
                tokens.append(t)
            if step.logprobs is not None:
                old.extend(step.logprobs)
        return cls(contexts, tokens, old if trace.has_logprobs else None, trace.final_reward)


@dataclass
class Group:
    kind: str
    instance_id: str
    samples: list[Sample]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BatchError(f"unknown update kind {self.kind!r}")


@dataclass
class UpdateBatch:
    groups: list[Group] = field(default_factory=list)

    def normalize(self, eps: float = 1e-6) -> int:
        """Assign group-normalised advantages; drop groups under 2 samples.

        Returns the number of dropped groups.
        """
        kept, dropped = [], 0
        for g in self.groups:
            if len(g.samples) < 2:
                dropped += 1
                continue
            for s, a in zip(g.samples, group_advantages([s.reward for s in g.samples], eps)):
                s.advantage = a
            kept.append(g)
        self.groups = kept
        return dropped

    def samples(self):
        for g in self.groups:
            yield from g.samples


@dataclass
class LossResult:
    loss: float
    grads: dict[str, np.ndarray]
    n_tokens: int = 0
    n_masked: int = 0
    n_unscored: int = 0
    n_clipped: int = 0
    skipped: bool = False


def _accumulate(grads: dict, rows: dict[str, np.ndarray], weight: float) -> None:
    for key, vec in rows.items():
        if key in grads:
            grads[key] += weight * vec
        else:
            grads[key] = weight * vec


def policy_loss(policy, batch: UpdateBatch, clip_lower: float = 0.2, clip_upper: float = 0.28,
                kl_coef: float = 0.001) -> LossResult:
    """Token-mean clipped surrogate plus k3 KL to the reference.

    per token: -min(rho*A, clip(rho, 1-clip_lower, 1+clip_upper)*A)
               + kl_coef * (exp(ref-new) - (ref-new) - 1)
    Samples without recorded logprobs use the current ones as old (rho = 1),
    i.e. plain REINFORCE weighting. Samples the policy cannot score at all
    are counted in ``n_unscored`` and skipped.
    """
    terms = []  # (context, token, dloss/dnew, loss value)
    masked = unscored = clipped = 0
    for s in batch.samples():
        if not s.tokens:
            continue
        try:
            new = [policy.score(c, [t])[0] for c, t in zip(s.contexts, s.tokens)]
        except (AttributeError, NotImplementedError, KeyError):
            unscored += len(s.tokens)
            continue
        old = s.old_logprobs if s.old_logprobs is not None else new
        for i, (ctx, tok) in enumerate(zip(s.contexts, s.tokens)):
            diff = new[i] - old[i]
            rho = math.exp(diff) if diff < 700 else math.inf
            if not math.isfinite(rho) or not math.isfinite(s.advantage):
                masked += 1
                continue
            a = s.advantage
            unclipped = rho * a
            clipped_val = min(max(rho, 1 - clip_lower), 1 + clip_upper) * a
            if unclipped <= clipped_val:
                surr, dsurr = unclipped, rho * a
            else:
                surr, dsurr = clipped_val, 0.0
                clipped += 1
            value, dnew = -surr, -dsurr
            if kl_coef and s.ref_logprobs is not None:
                diff = s.ref_logprobs[i] - new[i]
                value += kl_coef * (math.exp(diff) - diff - 1)
                dnew += kl_coef * (1 - math.exp(diff))
            terms.append((ctx, tok, dnew, value))
    n = len(terms)
    if n == 0:
        return LossResult(0.0, {}, 0, masked, unscored, clipped, skipped=True)
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    for ctx, tok, dnew, value in terms:
        total += value
        if dnew:
            _accumulate(grads, policy.grad_log_prob(ctx, tok), dnew / n)
    return LossResult(total / n, grads, n, masked, unscored, clipped)


@dataclass
class DistillSample:
    """A second attempt re-expressed in deployment contexts (no reflection,
    no memory). ``behavior_logprobs`` are what the reflection-conditioned
    policy assigned when it generated the tokens."""

    contexts: list[Context]
    tokens: list[str]
    reward: float
    behavior_logprobs: Optional[list[float]] = None


def distill_loss(policy, samples: Sequence[DistillSample],
                 clip_upper: float = 0.28) -> LossResult:
    """-mean_i 1(r_i > 0) * mean_t logp(y_t | x) over the given samples.

    Tokens whose importance ratio against the behaviour policy exceeds
    1 + clip_upper are left out (the trust region of the positive-advantage
    branch of the clipped surrogate).
    """
    if not samples:
        return LossResult(0.0, {}, skipped=True)
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    n_tokens = masked = clipped = 0
    m = len(samples)
    for s in samples:
        if s.reward <= 0 or not s.tokens:
            continue
        k = len(s.tokens)
        for i, (ctx, tok) in enumerate(zip(s.contexts, s.tokens)):
            assert ctx.reflection is None and ctx.memory is None, "distill needs deploy contexts"
            lp = policy.score(ctx, [tok])[0]
            if s.behavior_logprobs is not None:
                diff = lp - s.behavior_logprobs[i]
                if not math.isfinite(diff):
                    masked += 1
                    continue
                if diff > math.log1p(clip_upper):
                    clipped += 1
                    continue
            n_tokens += 1
            total += -lp / (k * m)
            _accumulate(grads, policy.grad_log_prob(ctx, tok), -1.0 / (k * m))
    return LossResult(total, grads, n_tokens, masked, 0, clipped, skipped=not grads)


def od_loss(policy, pairs: Sequence[tuple[Context, Context]], r2: float,
            floor: float = 1e-300) -> LossResult:
    """1(r2 > 0) * mean over visited states of KL(pi(.|x, reflection) || pi(.|x)).

    ``pairs`` hold (deployment context, reflection context) for states
    visited by sampling from the deployment policy. The reflection side is a
    fixed teacher; gradients flow into the deployment rows only, and the
    deployment contexts must carry neither memory nor reflection.
    Zero-probability mismatches are clamped at ``floor`` and counted in
    ``n_masked``.
    """
    if r2 <= 0 or not pairs:
        return LossResult(0.0, {}, skipped=True)
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    mismatch = 0
    t = policy.temperature
    for student_ctx, teacher_ctx in pairs:
        assert not student_ctx.conditioned, "student side must be a deployment context"
        q = policy.probs(teacher_ctx)
        p = policy.probs(student_ctx)
        support = q > 0
        bad = support & (p <= 0)
        mismatch += int(bad.sum())
        p_safe = np.maximum(p, floor)
        total += float(np.sum(q[support] * (np.log(q[support]) - np.log(p_safe[support]))))
        _accumulate(grads, {student_ctx.key(): -(q - p) / t}, 1.0 / len(pairs))
    return LossResult(total / len(pairs), grads, len(pairs), mismatch)
