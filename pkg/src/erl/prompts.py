"""Prompt templates shipped as text assets under ``erl/prompts``."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return resources.files("erl").joinpath("prompts").joinpath(f"{name}.txt").read_text("utf-8").rstrip("\n")
