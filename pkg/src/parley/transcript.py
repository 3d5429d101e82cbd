from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping

SPEAKERS = ("agent", "respondent")


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str
    start_ms: int = 0

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"unknown speaker {self.speaker!r}")


@dataclass(frozen=True)
class Transcript:
    turns: tuple[Turn, ...]

    def __init__(self, turns: Iterable[Turn]):
        turns = tuple(turns)
        for a, b in zip(turns, turns[1:]):
            if b.start_ms < a.start_ms:
                raise ValueError("turn start times must be nondecreasing")
        object.__setattr__(self, "turns", turns)

    def __len__(self) -> int:
        return len(self.turns)

    def respondent_lines(self) -> list[str]:
        return [t.text for t in self.turns if t.speaker == "respondent"]

    def as_text(self) -> str:
        names = {"agent": "Agent", "respondent": "Respondent"}
        return "\n".join(f"{names[t.speaker]}: {t.text}" for t in self.turns)

    def to_json(self) -> list[dict]:
        return [{"speaker": t.speaker, "text": t.text, "start_ms": t.start_ms} for t in self.turns]

    @classmethod
    def from_json(cls, doc: Iterable[Mapping[str, Any]]) -> "Transcript":
        return cls(Turn(d["speaker"], d["text"], int(d.get("start_ms", 0))) for d in doc)
