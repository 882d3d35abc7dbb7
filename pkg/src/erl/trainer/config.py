from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Optional

from ..policy.tabular import SamplingParams

ALGOS = ("erl", "rlvr")
ABLATIONS = (None, "no-memory", "no-reflection")
DISTILL_MODES = ("sft", "od")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems


@dataclass
class TrainerConfig:
    learning_rate: float = 1e-6
    batch_size: int = 64
    rollouts_rlvr: int = 10
    rollouts_erl_per_attempt: int = 4
    clip_upper: float = 0.28
    clip_lower: float = 0.2
    kl_coef: float = 0.001
    adv_eps: float = 1e-6
    eval_every: int = 5
    eval_samples: int = 4
    temperature: float = 0.7
    eval_temperature: float = 0.7
    eval_top_p: float = 0.8
    eval_top_k: int = 20
    max_tokens: int = 8196
    tau_gate: float = 1.0
    tau_store: float = 1.0
    iterations: int = 50
    algo: str = "erl"
    ablation: Optional[str] = None
    distill: str = "sft"
    advice_strength: float = 4.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("int", "float") and (isinstance(v, bool) or
                                              not isinstance(v, (int, float))):
                problems.append(f"{f.name}: expected a number, got {v!r}")
            elif f.type == "int" and not isinstance(v, int):
                problems.append(f"{f.name}: expected an integer, got {v!r}")
        if problems:
            raise ConfigError(problems)
        for name in ("learning_rate", "clip_upper", "clip_lower", "temperature",
                     "eval_temperature", "max_tokens", "adv_eps"):
            if not getattr(self, name) > 0:
                problems.append(f"{name}: must be > 0, got {getattr(self, name)!r}")
        for name in ("batch_size", "rollouts_rlvr", "eval_every", "eval_samples", "iterations"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                problems.append(f"{name}: must be a positive integer, got {v!r}")
        if not isinstance(self.rollouts_erl_per_attempt, int) or self.rollouts_erl_per_attempt < 2:
            problems.append("rollouts_erl_per_attempt: must be an integer >= 2 (group size)")
        elif isinstance(self.rollouts_rlvr, int) and \
                2 * self.rollouts_erl_per_attempt > self.rollouts_rlvr:
            problems.append("rollouts_erl_per_attempt: two ERL attempts must not exceed the "
                            f"RLVR budget ({self.rollouts_erl_per_attempt} x 2 > "
                            f"{self.rollouts_rlvr})")
        if self.kl_coef < 0:
            problems.append(f"kl_coef: must be >= 0, got {self.kl_coef!r}")
        if not 0 < self.eval_top_p <= 1:
            problems.append(f"eval_top_p: must be in (0, 1], got {self.eval_top_p!r}")
        if self.eval_top_k < 0:
            problems.append(f"eval_top_k: must be >= 0, got {self.eval_top_k!r}")
        for name in ("tau_gate", "tau_store"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                problems.append(f"{name}: must be in (0, 1], got {v!r}")
        if self.algo not in ALGOS:
            problems.append(f"algo: must be one of {ALGOS}, got {self.algo!r}")
        if self.ablation not in ABLATIONS:
            problems.append(f"ablation: must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.ablation is not None and self.algo != "erl":
            problems.append(f"ablation: {self.ablation!r} only applies to algo 'erl'")
        if self.distill not in DISTILL_MODES:
            problems.append(f"distill: must be one of {DISTILL_MODES}, got {self.distill!r}")
        if self.advice_strength < 0:
            problems.append("advice_strength: must be >= 0")
        if problems:
            raise ConfigError(problems)

    @property
    def train_sampling(self) -> SamplingParams:
        return SamplingParams(self.temperature, 1.0, 0, self.max_tokens)

    @property
    def eval_sampling(self) -> SamplingParams:
        return SamplingParams(self.eval_temperature, self.eval_top_p, self.eval_top_k,
                              self.max_tokens)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainerConfig:
        known = {f.name for f in fields(cls)}
        problems = [f"{k}: unknown field" for k in sorted(set(d) - known)]
        try:
            config = cls(**{k: v for k, v in d.items() if k in known})
        except ConfigError as exc:
            problems += exc.problems
        if problems:
            raise ConfigError(problems)
        return config

    def to_dict(self) -> dict:
        return asdict(self)
