"""Synthetic ground-truth surveys, scripted dialogues and respondent personas.

Answers are drawn per question with one of three strategies:

* ``uniform`` -- every listed option equally likely;
* ``probability_based`` -- option frequencies from an empirical distribution,
  with a two-stage refuse-or-draw scheme for numeric questions;
* ``consistent`` -- age, household size and household age-group counts are
  copied together from one real respondent row whose household size matches
  a freshly drawn size.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .survey import (
    Choice,
    MultiChoice,
    Numeric,
    Other,
    Question,
    Refused,
    ResponseSet,
    SurveyDefinition,
    AnswerValue,
    canonical,
)
from .text import WORD_NUMBERS, format_number, normalize_text
from .transcript import Transcript, Turn

STRATEGIES = ("uniform", "probability_based", "consistent")


class SynthesisError(ValueError):
    pass


class PersonaParseError(ValueError):
    def __init__(self, missing: Sequence[int]):
        self.missing = sorted(missing)
        super().__init__(f"could not recover answers for questions {self.missing}")


def rng_for(seed: int, *keys: object) -> random.Random:
    """Independent, reproducible stream for (seed, keys)."""
    return random.Random("/".join(map(str, (seed, *keys))))


# -- inputs ------------------------------------------------------------------


@dataclass(frozen=True)
class NumericDistribution:
    refuse_prob: float
    values: tuple[float, ...]


@dataclass
class EmpiricalDistribution:
    choices: dict[int, dict[str, float]] = field(default_factory=dict)
    numeric: dict[int, NumericDistribution] = field(default_factory=dict)

    def __post_init__(self):
        for idx, probs in self.choices.items():
            if any(not 0.0 <= p <= 1.0 for p in probs.values()):
                raise SynthesisError(f"Q{idx}: probabilities must lie in [0, 1]")
            if abs(math.fsum(probs.values()) - 1.0) > 1e-9:
                raise SynthesisError(f"Q{idx}: probabilities sum to {math.fsum(probs.values())}")
        for idx, nd in self.numeric.items():
            if not 0.0 <= nd.refuse_prob <= 1.0:
                raise SynthesisError(f"Q{idx}: refusal probability outside [0, 1]")
            if nd.refuse_prob < 1.0 and not nd.values:
                raise SynthesisError(f"Q{idx}: no observed values to draw from")

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "EmpiricalDistribution":
        choices, numeric = {}, {}
        for key, val in doc.items():
            if key.isdigit():
                choices[int(key)] = {str(c): float(p) for c, p in val.items()}
            elif re.fullmatch(r"q\d+", key):
                vals = val.get("temperatures", val.get("values", []))
                numeric[int(key[1:])] = NumericDistribution(
                    float(val["refuse_prob"]), tuple(float(v) for v in vals)
                )
        return cls(choices, numeric)

    def check_against(self, survey: SurveyDefinition) -> None:
        for idx, probs in self.choices.items():
            q = survey.question(idx)
            unknown = sorted(set(probs) - set(q.codes))
            if unknown:
                raise SynthesisError(f"Q{idx}: distribution names unknown codes {unknown}")


@dataclass(frozen=True)
class RespondentRecord:
    age_bracket: str
    household_size: str
    bucket_counts: tuple[int, ...]


@dataclass(frozen=True)
class ConsistentFields:
    """Which questions the ``consistent`` strategy fills together."""

    age: int = 1
    household_size: int = 6
    counts: tuple[int, ...] = (7, 8, 9, 10, 11)


def household_bounds(label: str) -> tuple[int, int | None] | None:
    """``"Two persons"`` -> (2, 2); ``"Six or more persons"`` -> (6, None)."""
    tokens = normalize_text(label)
    if not tokens:
        return None
    first = tokens[0]
    n = WORD_NUMBERS.get(first, int(first) if first.isdigit() else None)
    if n is None:
        return None
    if "more" in tokens:
        return n, None
    return n, n


def load_records(
    path: str | Path, survey: SurveyDefinition, fields: ConsistentFields = ConsistentFields()
) -> list[RespondentRecord]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = doc["records"] if isinstance(doc, dict) else doc
    age_q, size_q = survey.question(fields.age), survey.question(fields.household_size)
    out = []
    for i, row in enumerate(rows):
        rec = RespondentRecord(
            str(row["age_bracket"]), str(row["household_size"]), tuple(int(c) for c in row["bucket_counts"])
        )
        if not age_q.has_code(rec.age_bracket):
            raise SynthesisError(f"record {i}: unknown age bracket {rec.age_bracket!r}")
        if not size_q.has_code(rec.household_size):
            raise SynthesisError(f"record {i}: unknown household size {rec.household_size!r}")
        if len(rec.bucket_counts) != len(fields.counts) or min(rec.bucket_counts, default=0) < 0:
            raise SynthesisError(f"record {i}: bad age-group counts {rec.bucket_counts}")
        bounds = household_bounds(size_q.option(rec.household_size).label)
        if bounds is not None:
            lo, hi = bounds
            total = sum(rec.bucket_counts)
            if total < lo or (hi is not None and total > hi):
                raise SynthesisError(
                    f"record {i}: counts sum to {total}, inconsistent with {rec.household_size!r}"
                )
        out.append(rec)
    return out


def load_distribution(path: str | Path) -> EmpiricalDistribution:
    return EmpiricalDistribution.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def bundled_example(name: str) -> Path:
    """Path of a bundled synthetic example file (``distributions`` or ``records``)."""
    return Path(str(resources.files("parley").joinpath(f"data/examples/{name}.json")))


def default_plan(survey: SurveyDefinition) -> dict[int, str]:
    """Per-question strategies for the bundled 33-question instrument."""
    if len(survey) != 33:
        return {i: "uniform" for i in survey.indices}
    plan = {i: "probability_based" for i in survey.indices}
    for i in (3, 4, 5):
        plan[i] = "uniform"
    for i in (1, 6, 7, 8, 9, 10, 11):
        plan[i] = "consistent"
    return plan


# -- sampling ----------------------------------------------------------------


def _draw_code(rng: random.Random, probs: Mapping[str, float]) -> str:
    codes = list(probs)
    return rng.choices(codes, weights=[probs[c] for c in codes])[0]


def synthesize_survey(
    survey: SurveyDefinition,
    plan: Mapping[int, str],
    dist: EmpiricalDistribution | None,
    records: Sequence[RespondentRecord] | None,
    seed: int,
    respondent_id: str = "r0",
    fields: ConsistentFields = ConsistentFields(),
) -> ResponseSet:
    """Draw one complete fictitious response set."""
    missing = [i for i in survey.indices if plan.get(i) not in STRATEGIES]
    if missing:
        raise SynthesisError(f"sampling plan has no valid strategy for questions {missing}")
    rng = rng_for(seed, "synth", respondent_id)
    answers: dict[int, AnswerValue] = {}
    for q in survey.questions:
        if q.index in answers:
            continue
        strategy = plan[q.index]
        if strategy == "uniform":
            answers[q.index] = canonical(q, Choice(rng.choice(q.codes)))
        elif strategy == "probability_based":
            answers[q.index] = _draw_probability_based(q, dist, rng)
        else:
            answers.update(_draw_consistent(survey, plan, dist, records, rng, fields))
    return ResponseSet(survey.id, respondent_id, dict(sorted(answers.items())))


def _draw_probability_based(q: Question, dist: EmpiricalDistribution | None, rng: random.Random):
    if dist is None:
        raise SynthesisError(f"Q{q.index}: probability_based sampling needs a distribution")
    if q.kind == "numeric":
        nd = dist.numeric.get(q.index)
        if nd is None:
            raise SynthesisError(f"Q{q.index}: missing distribution entry")
        if rng.random() < nd.refuse_prob:
            return Refused()
        return Numeric(rng.choice(nd.values))
    probs = dist.choices.get(q.index)
    if probs is None:
        raise SynthesisError(f"Q{q.index}: missing distribution entry")
    return canonical(q, Choice(_draw_code(rng, probs)))


def _draw_consistent(survey, plan, dist, records, rng, fields: ConsistentFields):
    if not records:
        raise SynthesisError("consistent sampling needs respondent records")
    size_q = survey.question(fields.household_size)
    if dist is not None and fields.household_size in dist.choices:
        size = _draw_code(rng, dist.choices[fields.household_size])
    else:
        size = rng.choice([o.code for o in size_q.options if not o.is_special])
    pool = [r for r in records if r.household_size == size]
    if not pool:
        raise SynthesisError(f"no respondent records with household size {size!r}")
    row = rng.choice(pool)
    out: dict[int, AnswerValue] = {
        fields.household_size: canonical(size_q, Choice(size)),
        fields.age: canonical(survey.question(fields.age), Choice(row.age_bracket)),
    }
    for idx, n in zip(fields.counts, row.bucket_counts):
        out[idx] = Numeric(n)
    return {i: a for i, a in out.items() if plan.get(i) == "consistent"}


# -- scripted dialogue -------------------------------------------------------

_CHOICE_TEMPLATES = ("{}.", "I'd say {}.", "Hmm, {}.", "That would be {}.")
_MULTI_TEMPLATES = ("{}.", "I'd say {}.", "I consider myself {}.")
_COUNT_TEMPLATES = ("{}.", "I'd say {}.", "There are {}.", "{w}.")
_TEMPERATURE_TEMPLATES = ("It's {}°F.", "{} degrees.", "Sure, just a moment. It's {}.")
_DAY_TEMPLATES = ("About {} days.", "Probably {} days.", "I'd say {} days.")
_ONE_DAY_TEMPLATES = ("About 1 day.", "Maybe one day.", "Just 1 day.")
REFUSAL_TEXT = "I'd rather not say."
_LEADINS = ("", "Thank you. ", "Got it. ", "Okay. ")
_NUMBER_WORDS = {v: k for k, v in WORD_NUMBERS.items() if k != "none"}


def respondent_utterance(q: Question, answer: AnswerValue, rng: random.Random) -> str:
    """A scripted reply that states ``answer`` unambiguously."""
    if isinstance(answer, Refused):
        return REFUSAL_TEXT
    if isinstance(answer, Other):
        return answer.raw_text or "I'm not sure how to answer that."
    if isinstance(answer, MultiChoice):
        labels = [q.option(c).label for c in q.codes if c in answer.codes]
        return rng.choice(_MULTI_TEMPLATES).format(" and ".join(labels))
    if isinstance(answer, Numeric):
        text = format_number(answer.value)
        if q.unit == "fahrenheit":
            return rng.choice(_TEMPERATURE_TEMPLATES).format(text)
        word = _NUMBER_WORDS.get(int(answer.value)) if answer.value.is_integer() else None
        templates = _COUNT_TEMPLATES if word else _COUNT_TEMPLATES[:3]
        return rng.choice(templates).format(text, w=(word or "").capitalize())
    opt = q.option(answer.code)
    days = sorted(d for d, c in q.day_buckets if c == answer.code and d > 0)
    if days and rng.random() < 0.5:
        d = rng.choice(days)
        if d == 1:
            return rng.choice(_ONE_DAY_TEMPLATES)
        return rng.choice(_DAY_TEMPLATES).format(d)
    return rng.choice(_CHOICE_TEMPLATES).format(opt.label)


def _duration_ms(text: str) -> int:
    return 600 + 350 * len(text.split())


def render_fictitious_dialogue(survey: SurveyDefinition, rs: ResponseSet, seed: int) -> Transcript:
    """Scripted agent/respondent conversation that states every answer in ``rs``."""
    rng = rng_for(seed, "dialogue", rs.respondent_id)
    lines = [
        ("agent", f"Hello! My name is Sarah, and I'm conducting the {survey.title}. "
                  "Could I have a few minutes of your time to answer some questions?"),
        ("respondent", "Sure!"),
    ]
    for q in survey.questions:
        lines.append(("agent", rng.choice(_LEADINS) + q.prompt_text))
        lines.append(("respondent", respondent_utterance(q, rs.answers[q.index], rng)))
    lines.append(("agent", "Thank you for providing that information. That concludes our survey. "
                           "Have a great day!"))
    turns, clock = [], 0
    for speaker, text in lines:
        turns.append(Turn(speaker, text, clock))
        clock += _duration_ms(text)
    return Transcript(turns)


# -- personas ----------------------------------------------------------------

_NAMES = ("Alex", "Jordan", "Taylor", "Morgan", "Casey", "Riley", "Jamie", "Avery", "Quinn", "Robin")
_AGE_OPEN = (13, 95)
_MONEY_OPEN = (1_000, 400_000)
_REFUSAL_WORDS = {"refuse", "refuses", "refused", "decline", "declines", "declined", "rather"}
_STOPWORDS = {"a", "an", "the", "or", "and", "of", "to", "in", "for", "at", "as", "i", "my", "own"}


@dataclass(frozen=True)
class Persona:
    persona_id: str
    paragraphs: tuple[str, ...]
    source: ResponseSet

    def text(self) -> str:
        return "\n\n".join(self.paragraphs)

    def to_json(self) -> dict:
        return {"persona_id": self.persona_id, "paragraphs": list(self.paragraphs),
                "source": self.source.to_json()}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "Persona":
        return cls(doc["persona_id"], tuple(doc["paragraphs"]), ResponseSet.from_json(doc["source"]))


def _bracket(label: str) -> tuple[int, int] | None:
    """Integer range described by an option label, or ``None``."""
    money = "$" in label
    lo_open, hi_open = _MONEY_OPEN if money else _AGE_OPEN
    text = label.replace("$", "").replace(",", "").strip().lower()
    if m := re.fullmatch(r"(\d+)\s*-\s*(\d+)", text):
        return int(m[1]), int(m[2])
    if m := re.fullmatch(r"(\d+)\s*to under\s*(\d+)", text):
        return int(m[1]), int(m[2]) - 1
    if m := re.fullmatch(r"under\s*(\d+)", text):
        return lo_open, int(m[1]) - 1
    if m := re.fullmatch(r"(\d+)\s*(?:\+|or more)", text):
        return int(m[1]), hi_open
    return None


def bracket_question(q: Question) -> dict[str, tuple[int, int]] | None:
    """Option ranges if every substantive option is a numeric bracket."""
    if q.kind != "single_choice" or q.day_buckets:
        return None
    out = {}
    for o in q.options:
        if o.is_special:
            continue
        r = _bracket(o.label)
        if r is None:
            return None
        out[o.code] = r
    return out or None


def bracket_lookup(q: Question, value: float) -> str | None:
    """Option code whose bracket contains ``value`` (``32`` -> ``"25_34"``)."""
    for code, (lo, hi) in (bracket_question(q) or {}).items():
        if lo <= value <= hi:
            return code
    return None


def paragraph_groups(n: int) -> list[range]:
    size = math.ceil(n / 3)
    return [range(1 + k * size, min(n, (k + 1) * size) + 1) for k in range(3)]


def _money(q: Question) -> bool:
    return any("$" in o.label for o in q.options)


def _persona_sentence(q: Question, a: AnswerValue, rng: random.Random) -> str:
    topic = q.topic
    if isinstance(a, Refused):
        if q.unit == "fahrenheit":
            return "They refuse to take their temperature."
        return f"Asked about {topic}, they refuse to answer."
    if isinstance(a, Other):
        if a.raw_text is None:
            return f"Asked about {topic}, they give an answer outside the listed options."
        return (f"Asked about {topic}, they give an answer outside the listed options: "
                f"{json.dumps(a.raw_text, ensure_ascii=False)}.")
    if isinstance(a, MultiChoice):
        labels = [q.option(c).label for c in q.codes if c in a.codes]
        return f"Asked about {topic}, they answer: {'; '.join(labels)}."
    if isinstance(a, Numeric):
        if q.unit == "fahrenheit":
            return f"Their {topic} is {format_number(a.value)}°F."
        return f"Asked about {topic}, they answer: {format_number(a.value)}."
    opt = q.option(a.code)
    brackets = bracket_question(q)
    if brackets and a.code in brackets:
        lo, hi = brackets[a.code]
        if _money(q):
            step = 100
            value = lo + step * rng.randrange(max(1, (hi - lo + 1) // step))
            return f"Their {topic} is ${value:,}."
        if topic == "age":
            return f"They are {rng.randint(lo, hi)} years old."
        return f"Their {topic} is {rng.randint(lo, hi)}."
    days = [d for d, c in q.day_buckets if c == a.code]
    if days:
        d = rng.choice(days)
        return f"They report {topic} on {d} day{'s' if d != 1 else ''} in the past week."
    return f"Asked about {topic}, they answer: {opt.label}."


def render_persona_prompt(survey: SurveyDefinition, rs: ResponseSet) -> tuple[str, str]:
    """System and user messages asking a chat model for a three-paragraph persona."""
    groups = paragraph_groups(len(survey))
    day_qs = [q.index for q in survey.questions if q.day_buckets]
    role = resources.files("parley").joinpath("data/prompts/persona_role.txt").read_text("utf-8")
    if day_qs:
        role = role.replace("{day_questions}", f"{day_qs[0]} through {day_qs[-1]}")
    else:
        role = "\n".join(l for l in role.splitlines() if "{day_questions}" not in l) + "\n"
    role = role.format(
        n=len(survey), **{f"p{k + 1}": f"{g.start} through {g.stop - 1}" for k, g in enumerate(groups)}
    )
    lines = []
    for q in survey.questions:
        lines.append(f"{q.index}. {q.text}")
        lines.append(f"Answer: {describe_answer(q, rs.answers[q.index])}")
    return role, "\n".join(lines)


def describe_answer(q: Question, a: AnswerValue) -> str:
    if isinstance(a, Choice):
        return q.option(a.code).label
    if isinstance(a, MultiChoice):
        return "; ".join(q.option(c).label for c in q.codes if c in a.codes)
    if isinstance(a, Numeric):
        return format_number(a.value)
    if isinstance(a, Refused):
        return "REFUSED"
    return "OTHER" + (f" ({a.raw_text})" if a.raw_text else "")


def generate_persona(
    rs: ResponseSet,
    survey: SurveyDefinition,
    renderer: Any = "template",
    seed: int = 0,
    persona_id: str | None = None,
) -> Persona:
    """Describe ``rs`` as a three-paragraph persona.

    ``renderer`` is ``"template"`` (deterministic, parseable by
    :func:`parse_persona`) or a chat client exposing ``complete(system, user)``.
    """
    persona_id = persona_id or rs.respondent_id
    if renderer == "template":
        rng = rng_for(seed, "persona", rs.respondent_id)
        name = rng.choice(_NAMES)
        paragraphs = []
        for k, group in enumerate(paragraph_groups(len(survey))):
            sentences = [f"{name} is a survey respondent."] if k == 0 else []
            sentences += [_persona_sentence(survey.question(i), rs.answers[i], rng) for i in group]
            paragraphs.append(" ".join(sentences))
        return Persona(persona_id, tuple(paragraphs), rs)

    system, user = render_persona_prompt(survey, rs)
    for _ in range(2):
        reply = renderer.complete(system, user)
        paragraphs = tuple(p.strip() for p in re.split(r"\n\s*\n", reply.strip()) if p.strip())
        if len(paragraphs) == 3:
            return Persona(persona_id, paragraphs, rs)
    raise SynthesisError(f"persona reply had {len(paragraphs)} paragraphs, expected 3")


def _parse_sentence(q: Question, text: str, pos: int) -> tuple[AnswerValue, int] | None:
    """Match the sentence for ``q`` starting exactly at ``pos``."""
    topic = re.escape(q.topic)
    tail = r"(?= |$)"
    patterns: list[tuple[str, Any]] = [
        (rf"Asked about {topic}, they refuse to answer\.{tail}", lambda m: Refused()),
        (r"They refuse to take their temperature\." + tail, lambda m: Refused()),
        (rf"Asked about {topic}, they give an answer outside the listed options\.{tail}",
         lambda m: Other(None)),
    ]
    for pat, build in patterns:
        if m := re.compile(pat).match(text, pos):
            return build(m), m.end()

    other_prefix = f"Asked about {q.topic}, they give an answer outside the listed options: "
    if text.startswith(other_prefix, pos):
        raw, end = json.JSONDecoder().raw_decode(text, pos + len(other_prefix))
        if text.startswith(".", end):
            return Other(raw), end + 1

    m = re.compile(rf"Their {topic} is \$?([\d,.]+?)(°F)?\.{tail}").match(text, pos)
    if m is None and q.topic == "age":
        m = re.compile(r"They are (\d+)() years old\." + tail).match(text, pos)
    if m:
        value = float(m[1].replace(",", ""))
        if m[2]:
            return Numeric(value), m.end()
        code = bracket_lookup(q, value)
        return (Choice(code), m.end()) if code else None
    if m := re.compile(rf"They report {topic} on (\d+) days? in the past week\.{tail}").match(text, pos):
        code = q.day_bucket_map.get(int(m[1]))
        return (Choice(code), m.end()) if code else None
    if m := re.compile(rf"Asked about {topic}, they answer: (.+?)\.{tail}").match(text, pos):
        value = m[1]
        by_label = {o.label: o.code for o in q.options}
        if q.kind == "numeric" and value not in by_label:
            try:
                return Numeric(float(value)), m.end()
            except ValueError:
                return None
        if value in by_label:
            return canonical(q, Choice(by_label[value])), m.end()
        parts = value.split("; ")
        if q.kind == "multi_choice" and all(p in by_label for p in parts):
            return MultiChoice(by_label[p] for p in parts), m.end()
    return None


def parse_persona(p: Persona, survey: SurveyDefinition) -> ResponseSet:
    """Recover the response set from a template-rendered persona."""
    answers: dict[int, AnswerValue] = {}
    missing: list[int] = []
    for k, group in enumerate(paragraph_groups(len(survey))):
        if k >= len(p.paragraphs):
            missing.extend(group)
            continue
        text = p.paragraphs[k]
        pos = 0
        if k == 0 and (m := re.match(r"\w+ is a survey respondent\.( |$)", text)):
            pos = m.end()
        for i in group:
            q = survey.question(i)
            hit = _parse_sentence(q, text, pos)
            if hit is None:
                # resynchronise on the next sentence boundary that parses
                hit = next(
                    (h for b in _sentence_starts(text, pos) if (h := _parse_sentence(q, text, b))),
                    None,
                )
            if hit is None:
                missing.append(i)
                continue
            answers[i], end = hit
            pos = end + 1 if text.startswith(" ", end) else end
    if missing:
        raise PersonaParseError(missing)
    return ResponseSet(survey.id, p.source.respondent_id, answers)


def _sentence_starts(text: str, pos: int):
    for m in re.finditer(r"\. ", text[pos:]):
        yield pos + m.end()


def _paragraph_numbers(text: str) -> list[float]:
    nums = [float(m.replace(",", "")) for m in re.findall(r"\d[\d,]*(?:\.\d+)?", text)]
    nums += [float(WORD_NUMBERS[w]) for w in normalize_text(text) if w in WORD_NUMBERS]
    return nums


def _day_counts(text: str) -> set[int]:
    found = set()
    for m in re.finditer(r"\b(\d+|[a-z]+)\s+days?\b", text.lower()):
        tok = m[1]
        if tok.isdigit():
            found.add(int(tok))
        elif tok in WORD_NUMBERS:
            found.add(WORD_NUMBERS[tok])
    return found


def _key_tokens(label: str) -> set[str]:
    return {t for t in normalize_text(label) if t not in _STOPWORDS}


def _covered(q: Question, a: AnswerValue, paragraph: str) -> bool:
    tokens = set(normalize_text(paragraph))
    if isinstance(a, Refused):
        return bool(tokens & _REFUSAL_WORDS)
    if isinstance(a, Other):
        return _key_tokens(a.raw_text or "") <= tokens or {"outside", "options"} <= tokens
    if isinstance(a, MultiChoice):
        return all(_key_tokens(q.option(c).label) <= tokens for c in a.codes)
    if isinstance(a, Numeric):
        return any(abs(v - a.value) < 1e-9 for v in _paragraph_numbers(paragraph))
    brackets = bracket_question(q) or {}
    if a.code in brackets:
        lo, hi = brackets[a.code]
        if any(lo <= v <= hi for v in _paragraph_numbers(paragraph)):
            return True
    days = {d for d, c in q.day_buckets if c == a.code}
    if days and days & _day_counts(paragraph):
        return True
    return _key_tokens(q.option(a.code).label) <= tokens


def check_persona_coverage(p: Persona, rs: ResponseSet, survey: SurveyDefinition) -> list[int]:
    """Questions whose answer is not evidently stated in the persona.

    A heuristic token check: label words, numerals within the answer's range,
    or a day count inside the answer's bucket must appear in the paragraph
    that is meant to cover the question.
    """
    uncovered = []
    for k, group in enumerate(paragraph_groups(len(survey))):
        paragraph = p.paragraphs[k] if k < len(p.paragraphs) else ""
        for i in group:
            if not _covered(survey.question(i), rs.answers[i], paragraph):
                uncovered.append(i)
    return uncovered
