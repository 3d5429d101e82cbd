"""Survey instrument, answer values and response sets."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Union

from .text import normalize_text

KINDS = ("single_choice", "multi_choice", "numeric")
SPECIAL_KINDS = ("refused", "dont_know", "other")
CODE_RE = re.compile(r"^[a-z0-9_]+$")
BUNDLED_SURVEY = "covid_impact_33"


class SurveyError(ValueError):
    """Malformed survey definition or response set."""


@dataclass(frozen=True)
class OptionDef:
    code: str
    label: str
    special: str | None = None

    @property
    def is_special(self) -> bool:
        return self.special is not None


@dataclass(frozen=True)
class Question:
    index: int
    text: str
    kind: str
    options: tuple[OptionDef, ...]
    unit: str | None = None
    # (days, option code) pairs, sorted by days
    day_buckets: tuple[tuple[int, str], ...] = ()
    topic: str = ""
    agent_text: str | None = None
    bare_yes_target: str | None = None

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(o.code for o in self.options)

    @property
    def day_bucket_map(self) -> dict[int, str]:
        return dict(self.day_buckets)

    def option(self, code: str) -> OptionDef:
        for o in self.options:
            if o.code == code:
                return o
        raise KeyError(f"Q{self.index} has no option {code!r}")

    def has_code(self, code: str) -> bool:
        return any(o.code == code for o in self.options)

    def position(self, code: str) -> int:
        return self.codes.index(code)

    @property
    def prompt_text(self) -> str:
        return self.agent_text or self.text

    @property
    def refused_code(self) -> str | None:
        for o in self.options:
            if o.special == "refused":
                return o.code
        return None


@dataclass(frozen=True)
class SurveyDefinition:
    id: str
    title: str
    questions: tuple[Question, ...]
    purpose: str = ""
    agent_example: str | None = None

    def __len__(self) -> int:
        return len(self.questions)

    def question(self, index: int) -> Question:
        if not 1 <= index <= len(self.questions):
            raise KeyError(f"no question {index} in survey {self.id!r}")
        return self.questions[index - 1]

    @property
    def indices(self) -> range:
        return range(1, len(self.questions) + 1)


# -- answer values -----------------------------------------------------------


@dataclass(frozen=True)
class Choice:
    code: str


@dataclass(frozen=True)
class MultiChoice:
    codes: frozenset[str]

    def __init__(self, codes):
        object.__setattr__(self, "codes", frozenset(codes))


@dataclass(frozen=True)
class Numeric:
    value: float

    def __init__(self, value):
        object.__setattr__(self, "value", float(value))


@dataclass(frozen=True)
class Other:
    raw_text: str | None = None


@dataclass(frozen=True)
class Refused:
    pass


AnswerValue = Union[Choice, MultiChoice, Numeric, Other, Refused]


@dataclass(frozen=True)
class Violation:
    question: int
    kind: str  # wrong-kind | unknown-code | empty-multi | special-in-multi | bad-number
    message: str

    def __str__(self) -> str:
        return f"Q{self.question}: {self.kind}: {self.message}"


@dataclass
class ResponseSet:
    survey_id: str
    respondent_id: str
    answers: dict[int, AnswerValue] = field(default_factory=dict)

    def validate(self, survey: SurveyDefinition) -> list[Violation]:
        """Return every violation; an empty list means complete and valid."""
        if self.survey_id != survey.id:
            return [Violation(0, "survey-mismatch", f"{self.survey_id!r} != {survey.id!r}")]
        out = []
        for q in survey.questions:
            a = self.answers.get(q.index)
            if a is None:
                out.append(Violation(q.index, "missing", "no answer"))
                continue
            v = validate_answer(q, a)
            if v is not None:
                out.append(v)
        extra = set(self.answers) - set(survey.indices)
        out.extend(Violation(i, "unknown-question", "not in survey") for i in sorted(extra))
        return out

    def check(self, survey: SurveyDefinition) -> "ResponseSet":
        problems = self.validate(survey)
        if problems:
            raise SurveyError("; ".join(map(str, problems)))
        return self

    def to_json(self) -> dict:
        return {
            "survey_id": self.survey_id,
            "respondent_id": self.respondent_id,
            "answers": {str(i): answer_to_json(a) for i, a in sorted(self.answers.items())},
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "ResponseSet":
        return cls(
            doc["survey_id"],
            doc["respondent_id"],
            {int(i): answer_from_json(a) for i, a in doc["answers"].items()},
        )


def validate_answer(q: Question, a: AnswerValue) -> Violation | None:
    """Check one answer against its question; ``None`` means valid."""
    if isinstance(a, (Refused, Other)):
        return None
    if isinstance(a, Choice):
        if not q.has_code(a.code):
            return Violation(q.index, "unknown-code", f"{a.code!r} not an option")
        return None
    if isinstance(a, MultiChoice):
        if q.kind != "multi_choice":
            return Violation(q.index, "wrong-kind", f"multiple choices on {q.kind} question")
        if not a.codes:
            return Violation(q.index, "empty-multi", "no codes selected")
        unknown = sorted(c for c in a.codes if not q.has_code(c))
        if unknown:
            return Violation(q.index, "unknown-code", f"{unknown} not options")
        special = sorted(c for c in a.codes if q.option(c).is_special)
        if special:
            return Violation(q.index, "special-in-multi", f"{special} cannot be combined")
        return None
    if isinstance(a, Numeric):
        if q.kind != "numeric":
            return Violation(q.index, "wrong-kind", f"number on {q.kind} question")
        if a.value != a.value or a.value in (float("inf"), float("-inf")):
            return Violation(q.index, "bad-number", "not finite")
        if q.unit == "persons" and (a.value < 0 or not a.value.is_integer()):
            return Violation(q.index, "bad-number", f"{a.value} is not a person count")
        return None
    return Violation(q.index, "wrong-kind", f"unsupported answer {a!r}")


def canonical(q: Question, a: AnswerValue) -> AnswerValue:
    """Collapse equivalent spellings: a chosen "Refused" option becomes
    ``Refused()``, and a single substantive choice on a multi-choice question
    becomes a one-element ``MultiChoice``."""
    if isinstance(a, Choice) and q.has_code(a.code):
        opt = q.option(a.code)
        if opt.special == "refused":
            return Refused()
        if q.kind == "multi_choice" and not opt.is_special:
            return MultiChoice({a.code})
    return a


def answer_to_json(a: AnswerValue) -> dict:
    if isinstance(a, Choice):
        return {"type": "choice", "code": a.code}
    if isinstance(a, MultiChoice):
        return {"type": "multi", "codes": sorted(a.codes)}
    if isinstance(a, Numeric):
        return {"type": "numeric", "value": a.value}
    if isinstance(a, Other):
        return {"type": "other", "raw_text": a.raw_text}
    if isinstance(a, Refused):
        return {"type": "refused"}
    raise TypeError(a)


def answer_from_json(doc: Mapping[str, Any]) -> AnswerValue:
    t = doc["type"]
    if t == "choice":
        return Choice(doc["code"])
    if t == "multi":
        return MultiChoice(doc["codes"])
    if t == "numeric":
        return Numeric(doc["value"])
    if t == "other":
        return Other(doc.get("raw_text"))
    if t == "refused":
        return Refused()
    raise SurveyError(f"unknown answer type {t!r}")


# -- loading -----------------------------------------------------------------


def _parse_question(doc: Mapping[str, Any]) -> Question:
    try:
        index = int(doc["index"])
        kind = doc["kind"]
        raw_opts = doc.get("options", [])
        text = doc["text"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SurveyError(f"malformed question entry: {exc}") from None
    if kind not in KINDS:
        raise SurveyError(f"Q{index}: unknown kind {kind!r}")
    options = []
    for o in raw_opts:
        special = o.get("special")
        if special is True:
            special = "other" if o["code"] == "other" else "dont_know"
        if special not in (None, False) and special not in SPECIAL_KINDS:
            raise SurveyError(f"Q{index}: unknown special flag {special!r}")
        options.append(OptionDef(str(o["code"]), o["label"], special or None))
    codes = [o.code for o in options]
    if len(set(codes)) != len(codes):
        raise SurveyError(f"Q{index}: duplicate option codes")
    for o in options:
        if not CODE_RE.match(o.code):
            raise SurveyError(f"Q{index}: option code {o.code!r} is not a snake_case slug")
        if not o.label.strip():
            raise SurveyError(f"Q{index}: empty label for {o.code!r}")
    buckets = tuple(sorted((int(k), v) for k, v in (doc.get("day_bucket_map") or {}).items()))
    for _, code in buckets:
        if code not in codes:
            raise SurveyError(f"Q{index}: day bucket maps to unknown code {code!r}")
    target = doc.get("bare_yes_target")
    if target is not None and target not in codes:
        raise SurveyError(f"Q{index}: bare_yes_target {target!r} is not an option")
    return Question(
        index=index,
        text=text,
        kind=kind,
        options=tuple(options),
        unit=doc.get("unit"),
        day_buckets=buckets,
        topic=doc.get("topic") or f"question {index}",
        agent_text=doc.get("agent_text"),
        bare_yes_target=target,
    )


def survey_from_json(doc: Mapping[str, Any]) -> SurveyDefinition:
    try:
        questions = [_parse_question(q) for q in doc["questions"]]
        sid, title = doc["id"], doc["title"]
    except (KeyError, TypeError) as exc:
        raise SurveyError(f"malformed survey document: {exc}") from None
    indices = [q.index for q in questions]
    if len(set(indices)) != len(indices):
        raise SurveyError("duplicate indices")
    if sorted(indices) != list(range(1, len(indices) + 1)):
        raise SurveyError("non-contiguous indices")
    questions.sort(key=lambda q: q.index)
    return SurveyDefinition(
        id=sid,
        title=title,
        questions=tuple(questions),
        purpose=doc.get("purpose", ""),
        agent_example=doc.get("agent_example"),
    )


def survey_to_json(survey: SurveyDefinition) -> dict:
    qs = []
    for q in survey.questions:
        d: dict[str, Any] = {"index": q.index, "text": q.text, "kind": q.kind, "topic": q.topic}
        if q.unit:
            d["unit"] = q.unit
        if q.day_buckets:
            d["day_bucket_map"] = {str(k): v for k, v in q.day_buckets}
        if q.agent_text:
            d["agent_text"] = q.agent_text
        if q.bare_yes_target:
            d["bare_yes_target"] = q.bare_yes_target
        d["options"] = [
            {"code": o.code, "label": o.label, **({"special": o.special} if o.special else {})}
            for o in q.options
        ]
        qs.append(d)
    doc: dict[str, Any] = {"id": survey.id, "title": survey.title, "purpose": survey.purpose}
    if survey.agent_example:
        doc["agent_example"] = survey.agent_example
    doc["questions"] = qs
    return doc


def load_survey(path: str | Path | None = None) -> SurveyDefinition:
    """Load a survey definition; ``None`` or ``"builtin:<id>"`` loads a bundled one."""
    if path is None or str(path).startswith("builtin:"):
        name = BUNDLED_SURVEY if path is None else str(path).split(":", 1)[1]
        text = resources.files("parley").joinpath(f"data/survey/{name}.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SurveyError(f"parse failure: {exc}") from None
    return survey_from_json(doc)


# -- option matching ---------------------------------------------------------


def _occurrences(label_tokens: list[str], tokens: list[str]) -> list[tuple[int, int]]:
    n = len(label_tokens)
    if n == 0:
        return []
    return [
        (i, i + n - 1)
        for i in range(len(tokens) - n + 1)
        if tokens[i : i + n] == label_tokens
    ]


def _label_tokens(q: Question) -> list[tuple[str, list[str]]]:
    return [(o.code, normalize_text(o.label)) for o in q.options]


def match_option(q: Question, utterance: str | list[str]) -> AnswerValue:
    """Map a respondent utterance onto the question's options.

    A label matches when its normalized tokens occur contiguously in the
    utterance. Matches lying inside a longer match ("good" within "very good")
    are discarded. On single-choice questions the option mentioned last wins;
    on multi-choice questions every substantive match is kept. No match gives
    ``Other`` carrying the utterance.
    """
    tokens = normalize_text(utterance) if isinstance(utterance, str) else list(utterance)
    spans: list[tuple[int, int, str]] = []
    for code, lt in _label_tokens(q):
        spans.extend((s, e, code) for s, e in _occurrences(lt, tokens))
    kept = [
        (s, e, c)
        for s, e, c in spans
        if not any((s2 <= s and e <= e2) and (s2, e2) != (s, e) for s2, e2, _ in spans)
    ]
    if not kept:
        return Other(" ".join(tokens) if tokens else None)
    if q.kind == "multi_choice":
        substantive = {c for _, _, c in kept if not q.option(c).is_special}
        if substantive:
            return MultiChoice(substantive)
    # last end position wins; a longer span breaks ties at the same end
    s, e, code = max(kept, key=lambda t: (t[1], t[1] - t[0]))
    return Choice(code)
