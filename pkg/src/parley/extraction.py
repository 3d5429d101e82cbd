"""Turn call transcripts into structured response sets.

Two extractors share the same output type: an LLM-backed one that runs the
analyzer prompt ``k`` times and votes, and a deterministic rule-based one
that understands the simulator's turn format.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Union

from pydantic import BaseModel, ValidationError

from .llm import LLMClient
from .survey import (
    AnswerValue,
    Choice,
    MultiChoice,
    Numeric,
    Other,
    Question,
    Refused,
    ResponseSet,
    SurveyDefinition,
    Violation,
    answer_to_json,
    canonical,
    match_option,
    validate_answer,
)
from .text import first_number, format_number, normalize_text
from .transcript import Transcript

log = logging.getLogger(__name__)

MAX_REPAIRS = 2


class ExtractionError(RuntimeError):
    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


# -- structured output ---------------------------------------------------------


class AnswerItem(BaseModel):
    question_index: int
    value: Union[float, str, list[str]]
    other_text: str | None = None


class AnswerDocument(BaseModel):
    answers: list[AnswerItem]


OUTPUT_SCHEMA = AnswerDocument.model_json_schema()

_OUTPUT_NOTE = (
    "Return a JSON document of the form "
    '{"answers": [{"question_index": <number>, "value": <answer>, "other_text": <text or null>}]} '
    "with one entry per question. Use the exact option text as the value, a number for "
    "questions that ask for a numeric value, a list of option texts when several races apply, "
    "REFUSED for refusals, and OTHER (with the respondent's words in other_text) otherwise."
)


def _option_line(q: Question) -> str:
    labels = [o.label for o in q.options]
    if q.kind == "numeric":
        labels.insert(0, "Numeric Value")
    return "; ".join(labels)


def build_analyzer_prompt(survey: SurveyDefinition) -> str:
    role = resources.files("parley").joinpath("data/prompts/analyzer_role.txt").read_text("utf-8")
    blocks = [f"{q.index}. {q.text}\n{_option_line(q)}" for q in survey.questions]
    return role.format(n=len(survey)).rstrip("\n") + "\n\n" + "\n\n".join(blocks) + "\n\n" + _OUTPUT_NOTE + "\n"


def _lookup_option(q: Question, text: str) -> str | None:
    t = text.strip()
    if q.has_code(t):
        return t
    tokens = normalize_text(t)
    for o in q.options:
        if normalize_text(o.label) == tokens:
            return o.code
    return None


def fold_days(q: Question, value: float) -> str | None:
    if not q.day_buckets or not float(value).is_integer():
        return None
    return q.day_bucket_map.get(int(value))


def resolve_value(q: Question, item: AnswerItem) -> AnswerValue | Violation:
    """Interpret one model answer against its question."""
    v = item.value
    if isinstance(v, list):
        codes = [_lookup_option(q, s) for s in v]
        if None in codes:
            bad = [s for s, c in zip(v, codes) if c is None]
            return Violation(q.index, "unknown-code", f"{bad} are not options")
        if len(codes) == 1:
            return canonical(q, Choice(codes[0]))
        return MultiChoice(codes)
    if isinstance(v, str):
        word = v.strip().upper()
        if word == "REFUSED":
            return Refused()
        if word == "OTHER":
            return Other(item.other_text)
        code = _lookup_option(q, v)
        if code is not None:
            return canonical(q, Choice(code))
        try:
            v = float(v.strip().rstrip("°F").strip())
        except ValueError:
            return Violation(q.index, "unknown-code", f"{item.value!r} is not an option")
    if q.kind == "numeric":
        return Numeric(v)
    code = fold_days(q, v)
    if code is not None:
        return Choice(code)
    return Violation(q.index, "wrong-kind", f"number {format_number(v)} on {q.kind} question")


def parse_output(survey: SurveyDefinition, raw: str, respondent_id: str = "") -> tuple[ResponseSet, list[str]]:
    """Decode a model reply; returns the answers that validated and a list of problems."""
    try:
        doc = AnswerDocument.model_validate_json(raw)
    except ValidationError as exc:
        return ResponseSet(survey.id, respondent_id), [f"output is not a valid answer document: {exc.errors()[:3]}"]
    answers: dict[int, AnswerValue] = {}
    problems: list[str] = []
    for item in doc.answers:
        if item.question_index not in survey.indices:
            problems.append(f"question {item.question_index} does not exist")
            continue
        if item.question_index in answers:
            problems.append(f"Q{item.question_index}: answered more than once")
            continue
        q = survey.question(item.question_index)
        a = resolve_value(q, item)
        if not isinstance(a, Violation):
            a = validate_answer(q, a) or a
        if isinstance(a, Violation):
            problems.append(str(a))
            continue
        answers[q.index] = canonical(q, a)
    missing = [i for i in survey.indices if i not in answers and not any(p.startswith(f"Q{i}:") for p in problems)]
    problems += [f"Q{i}: missing: every question needs an answer" for i in missing]
    return ResponseSet(survey.id, respondent_id, answers), problems


@dataclass(frozen=True)
class ExtractionRun:
    run_index: int
    answers: ResponseSet
    raw_output: str
    valid_on_attempt: int

    def to_json(self) -> dict:
        return {
            "run_index": self.run_index,
            "valid_on_attempt": self.valid_on_attempt,
            "raw_output": self.raw_output,
            "answers": self.answers.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExtractionRun":
        return cls(doc["run_index"], ResponseSet.from_json(doc["answers"]), doc["raw_output"], doc["valid_on_attempt"])


def extract_once(
    client: LLMClient,
    survey: SurveyDefinition,
    transcript: Transcript,
    run_index: int = 0,
    respondent_id: str = "",
) -> ExtractionRun:
    """One analyzer pass with up to two repair requests."""
    if not len(transcript):
        raise ExtractionError("transcript is empty")
    system = build_analyzer_prompt(survey)
    base = "Here is the conversation transcript:\n\n" + transcript.as_text()
    user = base
    problems: list[str] = []
    for attempt in range(1, MAX_REPAIRS + 2):
        raw = client.complete(system, user, OUTPUT_SCHEMA)
        rs, problems = parse_output(survey, raw, respondent_id)
        if not problems:
            return ExtractionRun(run_index, rs, raw, attempt)
        log.info("run %d attempt %d rejected: %d problems", run_index, attempt, len(problems))
        user = (
            base
            + "\n\nYour previous answer document was:\n"
            + raw
            + "\n\nIt has these problems:\n"
            + "\n".join(f"- {p}" for p in problems)
            + "\n\nReturn a corrected, complete answer document."
        )
    raise ExtractionError(f"run {run_index}: no valid output after {MAX_REPAIRS + 1} attempts", problems)


# -- voting ------------------------------------------------------------------


def _vote_key(a: AnswerValue) -> AnswerValue:
    return Other(None) if isinstance(a, Other) else a


def tie_rank(q: Question, a: AnswerValue) -> tuple:
    """Sort key used to break ties: listed options in order, then numbers,
    then Other, then Refused."""
    if isinstance(a, Choice):
        return (0, (q.position(a.code),))
    if isinstance(a, MultiChoice):
        return (0, tuple(sorted(q.position(c) for c in a.codes)))
    if isinstance(a, Numeric):
        return (1, (a.value,))
    if isinstance(a, Other):
        return (2, ())
    return (3, ())


@dataclass(frozen=True)
class ConsensusResult:
    answers: ResponseSet
    tallies: dict[int, dict[AnswerValue, int]]
    agreement: float
    runs: tuple[ExtractionRun, ...] = ()

    def to_json(self) -> dict:
        return {
            "answers": self.answers.to_json(),
            "agreement": self.agreement,
            "tallies": {
                str(i): [{"answer": answer_to_json(a), "votes": n} for a, n in t.items()]
                for i, t in sorted(self.tallies.items())
            },
            "runs": [r.to_json() for r in self.runs],
        }


def vote(survey: SurveyDefinition, runs: list[ResponseSet], respondent_id: str = "") -> ConsensusResult:
    """Per-question modal answer over ``runs``; see ``tie_rank`` for ties."""
    if not runs:
        raise ValueError("need at least one run")
    k = len(runs)
    answers: dict[int, AnswerValue] = {}
    tallies: dict[int, dict[AnswerValue, int]] = {}
    agreed = 0
    for q in survey.questions:
        votes = [canonical(q, rs.answers[q.index]) for rs in runs]
        counts = Counter(_vote_key(a) for a in votes)
        top = max(counts.values())
        winner = min((a for a, n in counts.items() if n == top), key=lambda a: tie_rank(q, a))
        if isinstance(winner, Other):
            texts = Counter(a.raw_text for a in votes if isinstance(a, Other))
            best = max(texts.values())
            winner = Other(min((t for t, n in texts.items() if n == best), key=lambda t: (t is not None, t or "")))
        answers[q.index] = winner
        tallies[q.index] = dict(counts)
        agreed += top >= math.ceil(k / 2)
    return ConsensusResult(ResponseSet(survey.id, respondent_id, answers), tallies, agreed / len(survey))


def self_consistent_extract(
    client: LLMClient,
    survey: SurveyDefinition,
    transcript: Transcript,
    k: int = 5,
    parallelism: int = 1,
    respondent_id: str = "",
) -> ConsensusResult:
    """Run ``extract_once`` ``k`` times (optionally concurrently) and vote."""
    if k < 1:
        raise ValueError("k must be at least 1")

    def one(i: int) -> ExtractionRun:
        return extract_once(client, survey, transcript, i, respondent_id)

    if parallelism > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=min(parallelism, k)) as pool:
            runs = list(pool.map(one, range(k)))
    else:
        runs = [one(i) for i in range(k)]
    result = vote(survey, [r.answers for r in runs], respondent_id)
    return ConsensusResult(result.answers, result.tallies, result.agreement, tuple(runs))


# -- rule-based extractor ----------------------------------------------------

_REFUSAL_PHRASES = (("rather", "not"), ("prefer", "not"), ("refuse",), ("decline",), ("not", "answer"))


def _is_refusal(tokens: list[str]) -> bool:
    for phrase in _REFUSAL_PHRASES:
        n = len(phrase)
        if any(tuple(tokens[i : i + n]) == phrase for i in range(len(tokens) - n + 1)):
            return True
    return False


def interpret_reply(q: Question, reply: str) -> AnswerValue:
    """Deterministic reading of one respondent reply to question ``q``."""
    tokens = normalize_text(reply)
    if not tokens:
        return Refused()
    if q.kind == "numeric":
        value = first_number(reply)
        if value is not None:
            return Numeric(value)
        hit = match_option(q, tokens)
        if not isinstance(hit, Other):
            return canonical(q, hit)
        return Refused() if _is_refusal(tokens) else Other(" ".join(tokens))
    hit = match_option(q, tokens)
    if not isinstance(hit, Other):
        return canonical(q, hit)
    if q.day_buckets:
        value = first_number(reply)
        code = fold_days(q, value) if value is not None else None
        if code is not None:
            return Choice(code)
    if q.bare_yes_target and tokens[0] == "yes":
        return Choice(q.bare_yes_target)
    if _is_refusal(tokens):
        return Refused()
    return hit


def rule_based_extract(survey: SurveyDefinition, transcript: Transcript, respondent_id: str = "") -> ResponseSet:
    """Pair each question's agent turn with the respondent turns that follow
    it and interpret them. Questions must appear in survey order."""
    turns = transcript.turns
    starts: list[int] = []
    pos = 0
    for q in survey.questions:
        while pos < len(turns) and not (turns[pos].speaker == "agent" and q.prompt_text in turns[pos].text):
            pos += 1
        if pos == len(turns):
            raise ExtractionError(f"no agent turn asks question {q.index}; transcript is not in simulator format")
        starts.append(pos)
        pos += 1
    answers: dict[int, AnswerValue] = {}
    for q, start in zip(survey.questions, starts):
        replies = []
        for t in turns[start + 1 :]:
            if t.speaker == "agent":
                break
            replies.append(t.text)
        answers[q.index] = interpret_reply(q, " ".join(replies))
    return ResponseSet(survey.id, respondent_id, answers)


__all__ = [
    "AnswerDocument",
    "ConsensusResult",
    "ExtractionError",
    "ExtractionRun",
    "OUTPUT_SCHEMA",
    "build_analyzer_prompt",
    "extract_once",
    "interpret_reply",
    "parse_output",
    "rule_based_extract",
    "self_consistent_extract",
    "vote",
]
