"""Dataset generation, training runs, checkpoint evaluation and curve plots."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .envs import ENV_NAMES, EnvInstance, load_instances, make_env, write_jsonl
from .envs.frozenlake import generate_lake
from .envs.qa import TOOL_SCHEMA, generate_qa
from .envs.sokoban import generate_sokoban
from .metrics import MetricsRow, MetricsWriter, read_metrics, smooth
from .policy import RemoteClient, RemotePolicy, TabularPolicy
from .trainer import (ConfigError, EvalReport, MemoryState, TrainerConfig, erl_iteration,
                      evaluate, rlvr_iteration)

logger = logging.getLogger(__name__)

BACKENDS = ("tabular", "remote")
CHECKPOINT_NAME = "checkpoint.json"
METRICS_NAME = "metrics.csv"
TRACES_NAME = "traces.jsonl"


class SplitError(ValueError):
    """A dataset file holds instances from the wrong split."""


# ---------------------------------------------------------------- datasets

def _grid_payload(env: str, seed: int, size: Optional[int]) -> dict:
    if env == "frozenlake":
        rng = (size, size) if size else (2, 9)
        return generate_lake(seed, rng).to_payload()
    rng = (size, size) if size else (6, 8)
    return generate_sokoban(seed, rng).to_payload()


def gen_dataset(env: str, out_dir: str | Path, train_count: int = 10_000,
                eval_count: int = 100, seed: int = 0, size: Optional[int] = None) -> dict:
    """Write ``train.jsonl`` and ``eval.jsonl`` (plus ``corpus.jsonl`` for qa).

    Instance seeds are distinct 64-bit draws from ``seed``, so the two splits
    never share an id and the same arguments give byte-identical files.
    """
    if env not in ENV_NAMES:
        raise ValueError(f"unknown environment {env!r}; expected one of {ENV_NAMES}")
    if train_count < 1 or eval_count < 1:
        raise ValueError("train_count and eval_count must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = train_count + eval_count
    paths = {"train": out / "train.jsonl", "eval": out / "eval.jsonl"}
    if env == "qa":
        rows, docs = generate_qa(seed, total)
        instances = [EnvInstance(f"qa-{i:05d}", seed, row,
                                 "train" if i < train_count else "eval")
                     for i, row in enumerate(rows)]
        paths["corpus"] = out / "corpus.jsonl"
        write_jsonl(paths["corpus"], ({"doc_id": d.doc_id, "title": d.title, "text": d.text}
                                      for d in docs))
    else:
        rng = random.Random(seed)
        seeds: list[int] = []
        seen = set()
        while len(seeds) < total:
            s = rng.getrandbits(64)
            if s not in seen:
                seen.add(s)
                seeds.append(s)
        instances = [EnvInstance(f"{env}-{s:016x}", s, _grid_payload(env, s, size),
                                 "train" if i < train_count else "eval")
                     for i, s in enumerate(seeds)]
    write_jsonl(paths["train"], (i.to_json() for i in instances[:train_count]))
    write_jsonl(paths["eval"], (i.to_json() for i in instances[train_count:]))
    return paths


def load_split(path: str | Path, split: str) -> list[EnvInstance]:
    instances = load_instances(path)
    wrong = [i.id for i in instances if i.split != split]
    if wrong:
        raise SplitError(f"{path}: expected {split} instances, found {len(wrong)} others "
                         f"(first: {wrong[0]})")
    return instances


# ------------------------------------------------------------- run config

@dataclass
class RunConfig:
    env: str = "frozenlake"
    backend: str = "tabular"
    data_dir: str = "data"
    out_dir: str = "runs/default"
    model: str = "default"
    endpoint: Optional[str] = None
    resume: bool = True
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "trainer"}
        d["trainer"] = self.trainer.to_dict()
        return d


def run_config_from_dict(d: dict[str, Any], overrides: Optional[dict] = None) -> RunConfig:
    """Build a RunConfig, collecting every problem before refusing."""
    d = dict(d or {})
    trainer = dict(d.pop("trainer", None) or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("algo", "ablation", "seed"):
            trainer[key] = value
        else:
            d[key] = value
    problems = []
    known = {f.name for f in fields(RunConfig)} - {"trainer"}
    problems += [f"{k}: unknown field" for k in sorted(set(d) - known)]
    run = RunConfig(**{k: v for k, v in d.items() if k in known})
    if run.env not in ENV_NAMES:
        problems.append(f"env: must be one of {ENV_NAMES}, got {run.env!r}")
    if run.backend not in BACKENDS:
        problems.append(f"backend: must be one of {BACKENDS}, got {run.backend!r}")
    if run.env == "qa" and run.backend == "tabular":
        problems.append("backend: the tabular policy acts over a fixed action set and cannot "
                        "write free-text answers; use backend remote for qa")
    try:
        run.trainer = TrainerConfig.from_dict(trainer)
    except ConfigError as exc:
        problems += [f"trainer.{p}" for p in exc.problems]
    except TypeError as exc:
        problems.append(f"trainer: {exc}")
    if problems:
        raise ConfigError(problems)
    return run


def load_run_config(path: str | Path, overrides: Optional[dict] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return run_config_from_dict(data, overrides)


# ---------------------------------------------------------------- training

def build_env(env_name: str, data_dir: str | Path):
    corpus = Path(data_dir) / "corpus.jsonl" if env_name == "qa" else None
    return make_env(env_name, corpus)


def build_policy(backend: str, env, trainer: TrainerConfig, model: str = "default",
                 endpoint: Optional[str] = None):
    if backend == "tabular":
        return TabularPolicy(env.action_space, temperature=trainer.temperature,
                             advice_strength=trainer.advice_strength, seed=trainer.seed)
    client = RemoteClient(endpoint, model)
    tools = TOOL_SCHEMA if env.name == "qa" else None
    return RemotePolicy(client, trainer.train_sampling, tools=tools)


def _finite(x: float) -> bool:
    return x is not None and math.isfinite(x)


def train(run: RunConfig) -> Checkpoint:
    """Run (or resume) a training run; returns the final checkpoint."""
    cfg = run.trainer
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = Path(run.data_dir)
    env = build_env(run.env, data)
    train_set = load_split(data / "train.jsonl", "train")
    eval_set = load_split(data / "eval.jsonl", "eval")
    policy = build_policy(run.backend, env, cfg, run.model, run.endpoint)
    # the reference is the initial policy; for the tabular backend that is
    # the empty table, so it can be rebuilt on resume
    reference = (build_policy(run.backend, env, cfg) if run.backend == "tabular" else None)
    rng = np.random.default_rng(cfg.seed)
    memory = MemoryState()
    start, clock_offset = 0, 0.0

    ckpt_path = out / CHECKPOINT_NAME
    if run.resume and ckpt_path.exists():
        ck = load_checkpoint(ckpt_path)
        if (ck.env, ck.backend) != (run.env, run.backend):
            raise CheckpointError(f"{ckpt_path} belongs to a {ck.env}/{ck.backend} run")
        if ck.policy is not None:
            policy = TabularPolicy.from_state_dict(ck.policy, seed=cfg.seed)
        if ck.rng_state is not None:
            rng.bit_generator.state = ck.rng_state
        memory, start, clock_offset = ck.memory, ck.iteration, ck.wall_clock_s
        logger.info("resuming %s at iteration %d", out, start)

    writer = MetricsWriter(out / METRICS_NAME, append=start > 0)
    t0 = time.monotonic()
    ck = None
    with open(out / TRACES_NAME, "a" if start > 0 else "w", encoding="utf-8") as traces:
        for it in range(start + 1, cfg.iterations + 1):
            def log_trace(trace, it=it):
                traces.write(json.dumps({"iteration": it, **trace.to_json()}) + "\n")

            size = min(cfg.batch_size, len(train_set))
            batch = [train_set[i] for i in rng.choice(len(train_set), size, replace=False)]
            if cfg.algo == "erl":
                memory, m = erl_iteration(cfg, policy, env, batch, memory, rng=rng,
                                          reference=reference, iteration=it, on_trace=log_trace)
            else:
                m = rlvr_iteration(cfg, policy, env, batch, rng=rng, reference=reference,
                                   iteration=it, on_trace=log_trace)
            clock = clock_offset + time.monotonic() - t0
            if _finite(m.attempt1_mean):
                writer.write(MetricsRow(it, clock, "train", "attempt1", m.attempt1_mean,
                                        m.attempt1_groups, False))
            if cfg.algo == "erl" and _finite(m.post_reflection_mean):
                writer.write(MetricsRow(it, clock, "train", "attempt2", m.post_reflection_mean,
                                        m.attempt2_groups, m.memory_changed))
            if it % cfg.eval_every == 0:
                report = evaluate(policy, env, eval_set, cfg.eval_samples, cfg.eval_sampling,
                                  np.random.default_rng([cfg.seed, it]))
                clock = clock_offset + time.monotonic() - t0
                writer.write(MetricsRow(it, clock, "eval", "deploy", report.mean_reward,
                                        len(eval_set), False))
                logger.info("iteration %d: eval reward %.3f", it, report.mean_reward)
            traces.flush()
            ck = Checkpoint(run.env, run.backend, it, memory,
                            policy.state_dict() if hasattr(policy, "state_dict") else None,
                            clock, rng.bit_generator.state, run.to_dict())
            save_checkpoint(ck, ckpt_path)
    return ck if ck is not None else load_checkpoint(ckpt_path)


# -------------------------------------------------------------- evaluation

def evaluate_checkpoint(checkpoint: str | Path, dataset: str | Path, samples_per_prompt: int = 4,
                        seed: int = 0, corpus: Optional[str | Path] = None) -> EvalReport:
    """Deploy-form evaluation of a saved run on an eval-split file."""
    ck = load_checkpoint(checkpoint)
    instances = load_split(dataset, "eval")
    if samples_per_prompt < 1:
        raise ValueError("samples_per_prompt must be >= 1")
    trainer = TrainerConfig.from_dict(ck.config.get("trainer", {}))
    if ck.env == "qa":
        corpus = corpus or Path(ck.config.get("data_dir", ".")) / "corpus.jsonl"
    env = make_env(ck.env, corpus)
    if ck.policy is not None:
        policy = TabularPolicy.from_state_dict(ck.policy)
    else:
        policy = build_policy(ck.backend, env, trainer, ck.config.get("model", "default"),
                              ck.config.get("endpoint"))
    return evaluate(policy, env, instances, samples_per_prompt, trainer.eval_sampling,
                    np.random.default_rng(seed))


# ------------------------------------------------------------------- plots

def plot_curves(csv_paths: Sequence[str | Path], out_path: str | Path, window: int = 5) -> Path:
    """Smoothed reward curves, one line per (run, split, phase)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
    for path in csv_paths:
        path = Path(path)
        label = path.parent.name or path.stem
        series: dict[tuple[str, str], list[MetricsRow]] = {}
        for row in read_metrics(path):
            series.setdefault((row.split, row.phase), []).append(row)
        for (split, phase), rows in sorted(series.items()):
            ax = axes[0] if split == "train" else axes[1]
            ax.plot([r.iteration for r in rows], smooth([r.mean_reward for r in rows], window),
                    label=f"{label} {phase}")
    axes[0].set_title("training reward")
    axes[1].set_title("validation reward (deploy form)")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=8)
    axes[0].set_ylabel(f"mean reward (trailing mean over {window})")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
