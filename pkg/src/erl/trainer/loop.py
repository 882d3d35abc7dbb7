"""The gated attempt, reflect, retry, update, internalize loop and its RLVR baseline."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..envs.core import BackendError, Context, EnvInstance, EpisodeTrace, run_episode
from ..policy.advice import (RETRY_SENTINEL, avoid_symbol_line, parse_advice, symbol_at,
                             transferable_lines)
from ..policy.reflector import scripted_reflector
from ..policy.tabular import SamplingParams
from ..prompts import load_prompt
from .config import TrainerConfig
from .losses import (DistillSample, Group, LossResult, Sample, UpdateBatch, distill_loss,
                     od_loss, policy_loss)
from .memory import MemoryState, memory_update

logger = logging.getLogger(__name__)

_PROMPT_RE = re.compile(r"<prompt>(.*?)</prompt>", re.DOTALL)


@dataclass
class Reflection:
    text: str
    sample: Optional[Sample] = None  # model-written reflections only
    reward: Optional[float] = None


@dataclass
class Attempt:
    instance: EnvInstance
    first: EpisodeTrace
    reflection: Optional[Reflection] = None
    second: Optional[EpisodeTrace] = None


@dataclass
class IterationMetrics:
    iteration: int
    attempt1_rewards: list[float] = field(default_factory=list)
    attempt2_rewards: list[float] = field(default_factory=list)
    # per first-attempt episode: r2 if it was retried, else r1
    post_reflection_rewards: list[float] = field(default_factory=list)
    attempt1_groups: int = 0
    attempt2_groups: int = 0
    reflections: int = 0
    memory_stores: int = 0
    memory_changed: bool = False
    distilled: int = 0
    policy_updates: int = 0
    distill_updates: int = 0
    skipped_updates: int = 0
    dropped_groups: int = 0
    discarded_episodes: int = 0
    masked_tokens: int = 0

    @property
    def attempt1_mean(self) -> float:
        return float(np.mean(self.attempt1_rewards)) if self.attempt1_rewards else float("nan")

    @property
    def attempt2_mean(self) -> float:
        return float(np.mean(self.attempt2_rewards)) if self.attempt2_rewards else float("nan")

    @property
    def post_reflection_mean(self) -> float:
        if not self.post_reflection_rewards:
            return float("nan")
        return float(np.mean(self.post_reflection_rewards))


def base_context(env) -> Context:
    return Context(env.system_prompt, "")


def reflect(policy, env, trace: EpisodeTrace, memory: MemoryState,
            sampling: Optional[SamplingParams] = None) -> Reflection:
    """Write a reflection on a failed first attempt.

    A chat backend is prompted with the reflection template and, in order,
    the task, the attempt, its feedback, its reward and the memory block.
    Other backends use the scripted reflector, extended with the memory's
    transferable lines.
    """
    if hasattr(policy, "chat"):
        messages = reflection_messages(env, trace, memory)
        completion = policy.chat(messages, sampling)
        m = _PROMPT_RE.search(completion.text)
        text = (m.group(1) if m else completion.text).strip() or RETRY_SENTINEL
        sample = None
        if completion.tokens:
            ctx = Context(messages[0]["content"], messages[1]["content"])
            sample = Sample([ctx] * len(completion.tokens), list(completion.tokens),
                            None if completion.logprobs is None else list(completion.logprobs),
                            0.0)
        return Reflection(text, sample)
    lines = scripted_reflector(trace).splitlines()
    if lines == [RETRY_SENTINEL]:
        lines = []
    # lift cell-level lessons to the symbol shown on that cell
    first_obs = trace.steps[0].observation if trace.steps else ""
    for item in parse_advice("\n".join(lines)):
        if item[0] == "avoid":
            sym = symbol_at(first_obs, item[1])
            if sym and avoid_symbol_line(sym) not in lines:
                lines.append(avoid_symbol_line(sym))
    for line in transferable_lines(memory.text):
        if line not in lines:
            lines.append(line)
    return Reflection("\n".join(lines) or RETRY_SENTINEL)


def reflection_messages(env, trace: EpisodeTrace, memory: MemoryState) -> list[dict]:
    template = "qa_reflection" if env.name == "qa" else "grid_reflection"
    task = trace.steps[0].observation if trace.steps else ""
    outputs = "\n\n".join(f"[step {i + 1}] {s.output}" for i, s in enumerate(trace.steps))
    feedback = "\n".join(f"[step {i + 1}] {s.feedback}" for i, s in enumerate(trace.steps)
                         if s.feedback)
    user = "\n\n".join([
        "## Task\n" + task,
        "## First attempt\n" + outputs,
        "## Feedback\n" + feedback,
        f"## Reward\n{trace.final_reward}",
        "## Reflection memory\n" + (memory.text or "(empty)"),
    ])
    return [{"role": "system", "content": load_prompt(template)},
            {"role": "user", "content": user}]


def retry_context(env, trace: EpisodeTrace) -> Context:
    """Second-attempt context of the no-reflection ablation: the raw first
    attempt plus a generic retry instruction, no structured reflection."""
    generic = load_prompt("no_reflection_retry").format(trajectory=trace.transcript())
    return base_context(env).with_reflection(generic)


def _rollouts(env, instance, policy, context, n, sampling, rng, metrics,
              attempt_index=1) -> list[EpisodeTrace]:
    out = []
    for _ in range(n):
        try:
            out.append(run_episode(env, instance, policy, context, sampling=sampling, rng=rng,
                                   attempt_index=attempt_index))
        except BackendError as exc:
            if not exc.retryable:
                raise
            metrics.discarded_episodes += 1
            logger.warning("discarding episode on %s: %s", instance.id, exc)
    return out


def _with_reference(sample: Sample, reference) -> Sample:
    if reference is not None and sample.tokens:
        sample.ref_logprobs = [reference.score(c, [t])[0]
                               for c, t in zip(sample.contexts, sample.tokens)]
    return sample


def _apply(policy, result: LossResult, lr: float, metrics: IterationMetrics) -> bool:
    metrics.masked_tokens += result.n_masked
    if result.skipped or not hasattr(policy, "apply_gradients"):
        metrics.skipped_updates += 1
        return False
    policy.apply_gradients(result.grads, lr)
    return True


def _rl_update(config, policy, groups: list[Group], reference, metrics) -> None:
    if not groups:
        return
    batch = UpdateBatch(groups)
    metrics.dropped_groups += batch.normalize(config.adv_eps)
    if not batch.groups:
        return
    for s in batch.samples():
        _with_reference(s, reference)
    result = policy_loss(policy, batch, config.clip_lower, config.clip_upper, config.kl_coef)
    if _apply(policy, result, config.learning_rate, metrics):
        metrics.policy_updates += 1


def deploy_sample(trace: EpisodeTrace, system: str) -> DistillSample:
    contexts, tokens, behavior = [], [], []
    for step in trace.steps:
        ctx = Context(system, step.context.observation, step.context.history)
        for t in step.tokens:
            contexts.append(ctx)
            tokens.append(t)
        if step.logprobs is not None:
            behavior.extend(step.logprobs)
    return DistillSample(contexts, tokens, trace.final_reward,
                         behavior if trace.has_logprobs else None)


def erl_iteration(config: TrainerConfig, policy, env, instances: Sequence[EnvInstance],
                  memory: MemoryState, *, rng: np.random.Generator, reference=None,
                  iteration: int = 0,
                  on_trace: Optional[Callable[[EpisodeTrace], None]] = None
                  ) -> tuple[MemoryState, IterationMetrics]:
    """One ERL iteration over ``instances``; mutates ``policy`` in place."""
    metrics = IterationMetrics(iteration)
    sampling = config.train_sampling
    base = base_context(env)
    k = config.rollouts_erl_per_attempt
    use_memory = config.ablation is None

    attempts: list[Attempt] = []
    groups = []
    for inst in instances:
        traces = _rollouts(env, inst, policy, base, k, sampling, rng, metrics)
        attempts += [Attempt(inst, t) for t in traces]
        groups.append(Group("attempt1", inst.id, [Sample.from_trace(t) for t in traces]))
        metrics.attempt1_rewards += [t.final_reward for t in traces]
    metrics.attempt1_groups = len(groups)
    _rl_update(config, policy, groups, reference, metrics)

    start_memory = memory
    by_instance: dict[str, list[Attempt]] = {}
    for att in attempts:
        if on_trace:
            on_trace(att.first)
        if att.first.final_reward >= config.tau_gate:
            continue
        if config.ablation == "no-reflection":
            ctx2 = retry_context(env, att.first)
            att.reflection = Reflection("")
        else:
            att.reflection = reflect(policy, env, att.first,
                                     memory if use_memory else MemoryState(), sampling)
            ctx2 = base.with_reflection(att.reflection.text)
        metrics.reflections += 1
        second = _rollouts(env, att.instance, policy, ctx2, 1, sampling, rng, metrics,
                           attempt_index=2)
        if not second:
            continue
        att.second = second[0]
        att.reflection.reward = att.second.final_reward
        if att.reflection.sample is not None:
            att.reflection.sample.reward = att.second.final_reward
        metrics.attempt2_rewards.append(att.second.final_reward)
        if on_trace:
            on_trace(att.second)
        if use_memory:
            updated = memory_update(memory, att.reflection.text, att.second.final_reward,
                                    config.tau_store, att.instance.id, iteration)
            if updated is not memory:
                metrics.memory_stores += 1
            memory = updated
        by_instance.setdefault(att.instance.id, []).append(att)

    metrics.post_reflection_rewards = [
        a.first.final_reward if a.second is None else a.second.final_reward for a in attempts]

    groups = []
    for inst_id, atts in by_instance.items():
        refl = [a.reflection.sample for a in atts if a.reflection.sample is not None]
        if refl:
            groups.append(Group("reflection", inst_id, refl))
        groups.append(Group("attempt2", inst_id, [Sample.from_trace(a.second) for a in atts]))
    metrics.attempt2_groups = sum(g.kind == "attempt2" for g in groups)
    _rl_update(config, policy, groups, reference, metrics)

    retried = [a for atts in by_instance.values() for a in atts]
    metrics.distilled = sum(a.second.final_reward > 0 for a in retried)
    if retried:
        if config.distill == "od":
            _od_internalize(config, policy, env, retried, rng, metrics)
        else:
            samples = [deploy_sample(a.second, env.system_prompt) for a in retried]
            if _apply(policy, distill_loss(policy, samples, config.clip_upper),
                      config.learning_rate, metrics):
                metrics.distill_updates += 1

    metrics.memory_changed = memory.text != start_memory.text
    return memory, metrics


def _od_internalize(config, policy, env, retried, rng, metrics) -> None:
    base = base_context(env)
    pairs = []
    for att in retried:
        if att.second.final_reward <= 0:
            continue
        # states visited on-policy by the deployment policy
        for trace in _rollouts(env, att.instance, policy, base, 1, config.train_sampling, rng,
                               metrics):
            pairs += [(s.context, s.context.with_reflection(att.reflection.text))
                      for s in trace.steps]
    if _apply(policy, od_loss(policy, pairs, 1.0 if pairs else 0.0),
              config.learning_rate, metrics):
        metrics.distill_updates += 1


def rlvr_iteration(config: TrainerConfig, policy, env, instances: Sequence[EnvInstance], *,
                   rng: np.random.Generator, reference=None, iteration: int = 0,
                   on_trace: Optional[Callable[[EpisodeTrace], None]] = None
                   ) -> IterationMetrics:
    metrics = IterationMetrics(iteration)
    base = base_context(env)
    groups = []
    for inst in instances:
        traces = _rollouts(env, inst, policy, base, config.rollouts_rlvr,
                           config.train_sampling, rng, metrics)
        if on_trace:
            for t in traces:
                on_trace(t)
        groups.append(Group("attempt1", inst.id, [Sample.from_trace(t) for t in traces]))
        metrics.attempt1_rewards += [t.final_reward for t in traces]
    metrics.attempt1_groups = len(groups)
    _rl_update(config, policy, groups, reference, metrics)
    return metrics


@dataclass
class EvalReport:
    mean_reward: float
    rows: list[dict]

    def per_instance(self) -> dict[str, float]:
        out: dict[str, list[float]] = {}
        for r in self.rows:
            out.setdefault(r["instance_id"], []).append(r["reward"])
        return {k: float(np.mean(v)) for k, v in out.items()}


def evaluate(policy, env, instances: Sequence[EnvInstance], samples_per_prompt: int = 4,
             sampling: Optional[SamplingParams] = None,
             rng: Optional[np.random.Generator] = None) -> EvalReport:
    """Deployment-form evaluation: task input only, no reflection, no memory."""
    rng = np.random.default_rng(0) if rng is None else rng
    sampling = sampling or SamplingParams(0.7, 0.8, 20)
    base = base_context(env)
    rows = []
    for inst in instances:
        for k in range(samples_per_prompt):
            trace = run_episode(env, inst, policy, base, sampling=sampling, rng=rng)
            rows.append({"instance_id": inst.id, "sample": k, "reward": trace.final_reward,
                         "steps": len(trace), "feedback": trace.feedback})
    mean = float(np.mean([r["reward"] for r in rows])) if rows else float("nan")
    return EvalReport(mean, rows)
