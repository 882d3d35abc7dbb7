from .core import (MAX_STEP_FEEDBACK, PARSE_FAILURE, BackendError, Completion, Context,
                   EnvInstance, EpisodeTrace, GenerationError, Step, StepOutcome,
                   TerminalStateError, load_instances, parse_action, read_jsonl, run_episode,
                   write_jsonl)
from .frozenlake import FrozenLakeEnv
from .qa import QaEnv, SearchIndex
from .sokoban import SokobanEnv

ENV_NAMES = ("frozenlake", "sokoban", "qa")


def make_env(name: str, corpus=None):
    if name == "frozenlake":
        return FrozenLakeEnv()
    if name == "sokoban":
        return SokobanEnv()
    if name == "qa":
        if corpus is None:
            raise ValueError("the qa environment needs a corpus file")
        index = corpus if isinstance(corpus, SearchIndex) else SearchIndex.from_jsonl(corpus)
        return QaEnv(index)
    raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
