from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class MemoryState:
    """The single plain-text reflection block carried across episodes."""

    text: str = ""
    source_instance_id: Optional[str] = None
    stored_at_iteration: Optional[int] = None

    @property
    def empty(self) -> bool:
        return not self.text

    def to_json(self) -> dict:
        return {"text": self.text, "source_instance_id": self.source_instance_id,
                "stored_at_iteration": self.stored_at_iteration}

    @classmethod
    def from_json(cls, d: dict) -> MemoryState:
        return cls(d.get("text", ""), d.get("source_instance_id"), d.get("stored_at_iteration"))


def memory_update(memory: MemoryState, reflection: str, r2: float, tau_store: float = 1.0,
                  instance_id: Optional[str] = None,
                  iteration: Optional[int] = None) -> MemoryState:
    """Overwrite the memory with ``reflection`` when r2 >= tau_store."""
    if r2 >= tau_store:
        return MemoryState(reflection, instance_id, iteration)
    return memory
