"""Task kinds that receive GRPO rewards."""
from __future__ import annotations

from enum import Enum


class TaskKind(str, Enum):
    TAG = "TAG"  # temporal action grounding, segment level
    STG = "STG"  # spatiotemporal grounding, frame level
    VS = "VS"  # video summarization
    RC = "RC"  # region captioning

    @classmethod
    def parse(cls, value: "str | TaskKind") -> "TaskKind":
        if isinstance(value, TaskKind):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"unknown task kind {value!r}; expected one of {[t.value for t in cls]}") from None

    @property
    def is_grounding(self) -> bool:
        return self in (TaskKind.TAG, TaskKind.STG)

    @property
    def is_caption(self) -> bool:
        return self in (TaskKind.VS, TaskKind.RC)


GROUNDING_TASKS = (TaskKind.TAG, TaskKind.STG)
CAPTION_TASKS = (TaskKind.VS, TaskKind.RC)
