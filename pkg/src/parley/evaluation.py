"""Transcription (WER) and extraction (accuracy) scoring plus group reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np
from numba import njit

from .survey import (
    MultiChoice,
    Numeric,
    Other,
    ResponseSet,
    SurveyDefinition,
    canonical,
)
from .text import normalize_text

__all__ = [
    "AlignmentStats",
    "normalize_text",
    "align_words",
    "wer",
    "score_accuracy",
    "aggregate",
    "round_half_up",
]

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"
_OPS = (MATCH, SUB, DEL, INS)
TEMPERATURE_TOLERANCE = 0.05


@njit(cache=True)
def _align_kernel(ids, n):
    # ids holds the reference token ids followed by the hypothesis ids
    m = ids.shape[0] - n
    D = np.empty((n + 1, m + 1), np.int64)
    for j in range(m + 1):
        D[0, j] = j
    for i in range(1, n + 1):
        D[i, 0] = i
        r = ids[i - 1]
        for j in range(1, m + 1):
            best = D[i - 1, j - 1] + (0 if r == ids[n + j - 1] else 1)
            up = D[i - 1, j] + 1
            if up < best:
                best = up
            left = D[i, j - 1] + 1
            if left < best:
                best = left
            D[i, j] = best
    ops = np.empty(n + m, np.int8)
    k = n + m
    i = n
    j = m
    while i > 0 or j > 0:
        c = D[i, j]
        k -= 1
        if i > 0 and j > 0:
            same = ids[i - 1] == ids[n + j - 1]
            if D[i - 1, j - 1] + (0 if same else 1) == c:
                ops[k] = 0 if same else 1
                i -= 1
                j -= 1
                continue
        if i > 0 and D[i - 1, j] + 1 == c:
            ops[k] = 2
            i -= 1
        else:
            ops[k] = 3
            j -= 1
    return ops[k:]


@dataclass(slots=True)
class AlignmentStats:
    S: int
    D: int
    I: int
    N: int
    ref: tuple[str, ...] = ()
    hyp: tuple[str, ...] = ()
    codes: tuple[int, ...] = ()

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def alignment(self) -> list[tuple[str, str | None, str | None]]:
        """``(op, ref_token, hyp_token)`` triples; replaying them on ``ref`` gives ``hyp``."""
        out, i, j = [], 0, 0
        for c in self.codes:
            op = _OPS[c]
            if op in (MATCH, SUB):
                out.append((op, self.ref[i], self.hyp[j]))
                i += 1
                j += 1
            elif op == DEL:
                out.append((op, self.ref[i], None))
                i += 1
            else:
                out.append((op, None, self.hyp[j]))
                j += 1
        return out


def align_words(ref: Sequence[str], hyp: Sequence[str]) -> AlignmentStats:
    """Minimum-edit alignment with unit costs.

    Among equally cheap paths the backtrace prefers, at every cell, a
    match or substitution, then a deletion, then an insertion.
    """
    ref, hyp = tuple(ref), tuple(hyp)
    vocab: dict[str, int] = {}
    ids = np.fromiter([vocab.setdefault(t, len(vocab)) for t in ref + hyp], np.int64)
    codes = _align_kernel(ids, len(ref)).tolist()
    return AlignmentStats(codes.count(1), codes.count(2), codes.count(3), len(ref), ref, hyp, tuple(codes))


def line_stats(pairs: Iterable[tuple[str | Sequence[str], str | Sequence[str]]]) -> list[AlignmentStats]:
    def toks(x):
        return normalize_text(x) if isinstance(x, str) else list(x)

    return [align_words(toks(r), toks(h)) for r, h in pairs]


def micro_wer(stats: Sequence[AlignmentStats]) -> float:
    n = sum(s.N for s in stats)
    if n == 0:
        raise ValueError("WER is undefined: every reference line is empty")
    return sum(s.errors for s in stats) / n


def wer(lines: Iterable[tuple[str | Sequence[str], str | Sequence[str]]]) -> float:
    """Micro-averaged word error rate over ``(reference, hypothesis)`` lines.

    Strings are normalized first; token sequences are used as given.
    """
    return micro_wer(line_stats(lines))


def _same(q, g, p) -> bool:
    g, p = canonical(q, g), canonical(q, p)
    if isinstance(g, Other) or isinstance(p, Other):
        return isinstance(g, Other) and isinstance(p, Other)
    if isinstance(g, Numeric) and isinstance(p, Numeric):
        if q.unit == "fahrenheit":
            return abs(g.value - p.value) <= TEMPERATURE_TOLERANCE + 1e-9
        return g.value == p.value
    if isinstance(g, MultiChoice) and isinstance(p, MultiChoice):
        return g.codes == p.codes
    return g == p


def score_accuracy(gold: ResponseSet, pred: ResponseSet, survey: SurveyDefinition) -> dict[int, bool]:
    """Per-question correctness of ``pred`` against ``gold``."""
    if gold.survey_id != pred.survey_id or gold.survey_id != survey.id:
        raise ValueError(f"survey mismatch: {gold.survey_id!r} vs {pred.survey_id!r}")
    out = {}
    for q in survey.questions:
        g, p = gold.answers.get(q.index), pred.answers.get(q.index)
        if g is None or p is None:
            raise ValueError(f"Q{q.index}: response set is incomplete")
        out[q.index] = _same(q, g, p)
    return out


def percent(hits: Iterable[bool]) -> float:
    hits = list(hits)
    return 100.0 * sum(hits) / len(hits)


def round_half_up(x: float, places: int = 1) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    if not xs:
        raise ValueError("mean of no values")
    return math.fsum(xs) / len(xs)


# -- aggregation -------------------------------------------------------------


@dataclass
class ParticipantInput:
    """Everything scored for one participant: accuracy per persona and WER lines."""

    participant: str
    correctness: dict[str, dict[int, bool]] = field(default_factory=dict)  # persona -> question -> ok
    wer_lines: list[AlignmentStats] = field(default_factory=list)


@dataclass
class WerReport:
    per_participant: dict[str, float]
    words: dict[str, int]
    groups: dict[str, dict[str, float]]

    def to_json(self) -> dict:
        return {"per_participant": self.per_participant, "reference_words": self.words, "groups": self.groups}


@dataclass
class AccuracyReport:
    correctness: dict[str, dict[str, dict[int, bool]]]
    per_participant: dict[str, float]
    groups: dict[str, float]
    per_question: dict[int, float]

    def to_json(self) -> dict:
        return {
            "per_participant": self.per_participant,
            "groups": self.groups,
            "per_question": {str(k): v for k, v in sorted(self.per_question.items())},
            "correctness": {
                p: {persona: {str(i): ok for i, ok in sorted(qs.items())} for persona, qs in sorted(by.items())}
                for p, by in sorted(self.correctness.items())
            },
        }


@dataclass
class EvaluationReport:
    wer: WerReport | None
    accuracy: AccuracyReport | None
    grouping: dict[str, str]
    notes: list[str]

    def to_json(self) -> dict:
        return {
            "grouping": self.grouping,
            "wer": self.wer.to_json() if self.wer else None,
            "accuracy": self.accuracy.to_json() if self.accuracy else None,
            "notes": self.notes,
        }


GROUP_ORDER = ("native", "non_native")


def _groups(grouping: Mapping[str, str]) -> list[tuple[str, list[str]]]:
    names = sorted(set(grouping.values()), key=lambda g: (GROUP_ORDER.index(g) if g in GROUP_ORDER else 99, g))
    out = [(g, [p for p in grouping if grouping[p] == g]) for g in names]
    out.append(("overall", list(grouping)))
    return out


def wer_report(per_participant_lines: Mapping[str, Sequence[AlignmentStats]], grouping: Mapping[str, str]) -> WerReport:
    rates, words, errors = {}, {}, {}
    for p, stats in per_participant_lines.items():
        rates[p] = 100.0 * micro_wer(stats)
        words[p] = sum(s.N for s in stats)
        errors[p] = sum(s.errors for s in stats)
    groups = {}
    for g, members in _groups({p: grouping[p] for p in per_participant_lines}):
        groups[g] = {
            "simple_mean": mean(rates[p] for p in members),
            "word_weighted": 100.0 * sum(errors[p] for p in members) / sum(words[p] for p in members),
        }
    return WerReport(rates, words, groups)


def accuracy_report(correctness: Mapping[str, Mapping[str, Mapping[int, bool]]], grouping: Mapping[str, str]) -> AccuracyReport:
    per_participant = {
        p: percent(ok for qs in by.values() for ok in qs.values()) for p, by in correctness.items()
    }
    groups = {g: mean(per_participant[p] for p in members)
              for g, members in _groups({p: grouping[p] for p in correctness})}
    questions = sorted({i for by in correctness.values() for qs in by.values() for i in qs})
    per_question = {
        i: mean(percent(qs[i] for qs in by.values()) for by in correctness.values())
        for i in questions
    }
    return AccuracyReport({p: {k: dict(v) for k, v in by.items()} for p, by in correctness.items()},
                          per_participant, groups, per_question)


NATIVE_WER_NOTE = (
    "Group WER is reported two ways: the simple mean of per-participant rates and the "
    "word-weighted rate. Published summaries may use either, and the two can differ in the "
    "first decimal place (for example 6.46 against a printed 6.4)."
)


def aggregate(
    inputs: Sequence[ParticipantInput],
    grouping: Mapping[str, str],
) -> EvaluationReport:
    """Combine per-participant scores into participant, group and question summaries."""
    if not inputs:
        raise ValueError("nothing to aggregate")
    missing = [i.participant for i in inputs if i.participant not in grouping]
    if missing:
        raise ValueError(f"participants without a group: {missing}")
    grouping = {i.participant: grouping[i.participant] for i in inputs}
    with_lines = {i.participant: i.wer_lines for i in inputs if sum(s.N for s in i.wer_lines) > 0}
    with_acc = {i.participant: i.correctness for i in inputs if i.correctness}
    if not with_lines and not with_acc:
        raise ValueError("inputs carry neither WER lines nor accuracy scores")
    return EvaluationReport(
        wer=wer_report(with_lines, grouping) if with_lines else None,
        accuracy=accuracy_report(with_acc, grouping) if with_acc else None,
        grouping=dict(grouping),
        notes=[NATIVE_WER_NOTE] if with_lines else [],
    )


def summarize_values(values: Mapping[str, float], grouping: Mapping[str, str]) -> dict[str, float]:
    """Simple group means of already-computed per-participant values."""
    return {g: mean(values[p] for p in members) for g, members in _groups(grouping)}


# -- rendering ---------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{round_half_up(x):.1f}"


def _table(title: str, header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]

    def line(r):
        return "  ".join(v.ljust(w) if c == 0 else v.rjust(w) for c, (v, w) in enumerate(zip(r, widths)))

    rule = "-" * len(line(header))
    return "\n".join([title, rule, line(header), rule, *map(line, rows), rule])


def render_text(report: EvaluationReport) -> str:
    parts = []
    groups = _groups(report.grouping)
    if report.wer:
        w = report.wer
        rows = []
        for g, members in groups[:-1]:
            rows += [[p, g, _fmt(w.per_participant[p]), str(w.words[p])] for p in members if p in w.per_participant]
        for g, _ in groups:
            if g in w.groups:
                rows.append([f"average ({g})", "", _fmt(w.groups[g]["simple_mean"]), ""])
                rows.append([f"word-weighted ({g})", "", _fmt(w.groups[g]["word_weighted"]), ""])
        parts.append(_table("Word error rate by participant (%)", ["participant", "group", "WER", "words"], rows))
    if report.accuracy:
        a = report.accuracy
        rows = []
        for g, members in groups[:-1]:
            rows += [[p, g, _fmt(a.per_participant[p])] for p in members if p in a.per_participant]
        rows += [[f"average ({g})", "", _fmt(a.groups[g])] for g, _ in groups if g in a.groups]
        parts.append(_table("Extraction accuracy by participant (%)", ["participant", "group", "accuracy"], rows))
    if report.notes:
        parts.append("Notes:\n" + "\n".join(f"- {n}" for n in report.notes))
    return "\n\n".join(parts) + "\n"


def render_question_csv(report: AccuracyReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["question", "accuracy_pct"])
    for i, v in sorted(report.per_question.items()):
        w.writerow([i, f"{v:.4f}"])
    return buf.getvalue()
