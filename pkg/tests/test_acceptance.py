"""Acceptance checks; the terminal summary prints one PASS/FAIL line per criterion."""

import itertools
import json
import math
import random
import time
from collections import defaultdict
from functools import lru_cache

import numpy as np
import pytest
from scipy import stats

from parley import cli
from parley.evaluation import (
    ParticipantInput,
    aggregate,
    align_words,
    round_half_up,
    score_accuracy,
    wer,
)
from parley.extraction import interpret_reply, rule_based_extract, self_consistent_extract
from parley.storage import RecordsClient, StubRecordsServer, flatten, unflatten
from parley.survey import Choice, Numeric, Other, Refused, ResponseSet, canonical
from parley.synth import (
    check_persona_coverage,
    generate_persona,
    household_bounds,
    parse_persona,
    synthesize_survey,
)
from parley.transcript import Transcript, Turn

# -- oracles -----------------------------------------------------------------


def batched_edit_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Edit distance of every row of A against every row of B (Wagner-Fischer, vectorized over pairs)."""
    na, la = A.shape
    nb, lb = B.shape
    prev = np.broadcast_to(np.arange(lb + 1), (na, nb, lb + 1)).copy()
    for i in range(1, la + 1):
        cur = np.empty_like(prev)
        cur[:, :, 0] = i
        for j in range(1, lb + 1):
            diff = (A[:, None, i - 1] != B[None, :, j - 1]).astype(prev.dtype)
            cur[:, :, j] = np.minimum(
                np.minimum(prev[:, :, j] + 1, cur[:, :, j - 1] + 1), prev[:, :, j - 1] + diff
            )
        prev = cur
    return prev[:, :, lb]


def naive_distance(a: tuple, b: tuple) -> int:
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(d(i + 1, j) + 1, d(i, j + 1) + 1, d(i + 1, j + 1) + (a[i] != b[j]))

    return d(0, 0)


def binomial_majority_error(e: float, k: int) -> float:
    need = k // 2 + 1
    return sum(math.comb(k, j) * e**j * (1 - e) ** (k - j) for j in range(need, k + 1))


# -- 1 -----------------------------------------------------------------------


@pytest.mark.acceptance(1, "WER oracle equivalence (exhaustive + 1,000 random pairs, < 10 s)")
def test_alignment_matches_exhaustive_oracle():
    by_len = {n: [t for t in itertools.product("abc", repeat=n)] for n in range(7)}
    arrays = {n: np.array([[ord(c) for c in t] for t in ts], dtype=np.int64).reshape(len(ts), n)
              for n, ts in by_len.items()}
    align_words(["warm"], ["up"])

    t0 = time.perf_counter()
    ours = {}
    for la, ta in by_len.items():
        for lb, tb in by_len.items():
            ours[la, lb] = np.array([[align_words(a, b).errors for b in tb] for a in ta]).reshape(len(ta), len(tb))
    elapsed = time.perf_counter() - t0

    mismatches = 0
    for (la, lb), got in ours.items():
        mismatches += int((got != batched_edit_distances(arrays[la], arrays[lb])).sum())
    pairs = sum(len(a) * len(b) for a in by_len.values() for b in by_len.values())
    print(f"exhaustive: {pairs} pairs, {mismatches} mismatches, alignment time {elapsed:.2f} s")
    assert pairs == 1093**2
    assert mismatches == 0
    assert elapsed < 10.0


@pytest.mark.acceptance(1, "WER oracle equivalence (exhaustive + 1,000 random pairs, < 10 s)")
def test_alignment_matches_naive_oracle_on_random_pairs():
    rng = random.Random(1234)
    vocab = ["yes", "no", "four", "for", "male", "mail"]
    mismatches = 0
    for _ in range(1000):
        a = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 12)))
        b = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 12)))
        if align_words(a, b).errors != naive_distance(a, b):
            mismatches += 1
    assert mismatches == 0


# -- 2 -----------------------------------------------------------------------


@pytest.mark.acceptance(2, "worked WER case S=1 D=1 I=0 N=6, WER 0.3333")
def test_worked_wer_case():
    ref, hyp = "i am thirty two years old", "i am thirty too years"
    s = align_words(ref.split(), hyp.split())
    assert (s.S, s.D, s.I, s.N) == (1, 1, 0, 6)
    assert abs(wer([(ref, hyp)]) - 2 / 6) <= 1e-9


# -- 3 -----------------------------------------------------------------------

TABLE_WER = {"N1": 5.1, "N2": 6.7, "N3": 10.6, "N4": 4.9, "N5": 5.0, "F1": 6.0, "F2": 19.7, "F3": 3.2}
TABLE_ACC = {"N1": 98.8, "N2": 96.4, "N3": 95.8, "N4": 99.4, "N5": 98.2, "F1": 99.4, "F2": 97.6, "F3": 98.8}
GROUPING = {p: ("native" if p.startswith("N") else "non_native") for p in TABLE_WER}


def wer_lines_for(rate_pct: float, words: int = 1000):
    errors = round(rate_pct * words / 100)
    ref = [f"w{i}" for i in range(words)]
    hyp = ["x" if i < errors else t for i, t in enumerate(ref)]
    return [align_words(ref, hyp)]


def correctness_for(acc_pct: float, personas: int = 5, questions: int = 33):
    total = personas * questions
    correct = round(acc_pct * total / 100)
    flags = [i < correct for i in range(total)]
    return {f"p{k}": {q + 1: flags[k * questions + q] for q in range(questions)} for k in range(personas)}


@pytest.mark.acceptance(3, "table aggregation reproduction (9.6 / 7.7 / 97.7 / 98.6, native WER note)")
def test_table_aggregation():
    inputs = []
    for p in TABLE_WER:
        inputs.append(ParticipantInput(p, correctness_for(TABLE_ACC[p]), wer_lines_for(TABLE_WER[p])))
    report = aggregate(inputs, GROUPING)
    for p in TABLE_WER:
        assert round_half_up(report.wer.per_participant[p]) == TABLE_WER[p]
        assert round_half_up(report.accuracy.per_participant[p]) == TABLE_ACC[p]
    w, a = report.wer.groups, report.accuracy.groups
    assert round_half_up(w["non_native"]["simple_mean"]) == 9.6
    assert round_half_up(w["overall"]["simple_mean"]) == 7.7
    assert round_half_up(a["native"]) == 97.7
    assert round_half_up(a["non_native"]) == 98.6
    assert abs(w["native"]["simple_mean"] - 6.46) < 1e-9
    assert any("6.46" in n and "6.4" in n for n in report.notes)


# -- 4 -----------------------------------------------------------------------


@pytest.mark.acceptance(4, "zero-noise simulate round trip, 40/40 exact, WER 0, < 60 s")
def test_zero_noise_simulation(make_config, tmp_path, survey):
    cfg = make_config("zero", noise={"p_sub": 0, "p_del": 0, "p_ins": 0})
    t0 = time.perf_counter()
    assert cli.main(["simulate", "--config", str(cfg), "--extractor", "rules"]) == 0
    elapsed = time.perf_counter() - t0
    root = tmp_path / "runs" / "zero"
    exact = 0
    for path in sorted((root / "extractions").glob("*.json")):
        pred = ResponseSet.from_json(json.loads(path.read_text())["answers"])
        gold = ResponseSet.from_json(json.loads((root / "personas" / path.name).read_text())["source"])
        same = all(canonical(q, gold.answers[q.index]) == canonical(q, pred.answers[q.index])
                   for q in survey.questions)
        exact += same
    report = json.loads((root / "reports" / "evaluation.json").read_text())
    assert exact == 40
    assert report["accuracy"]["groups"]["overall"] == 100.0
    assert all(v == 0.0 for v in report["wer"]["per_participant"].values())
    assert report["wer"]["groups"]["overall"]["word_weighted"] == 0.0
    assert elapsed < 60.0


# -- 5 -----------------------------------------------------------------------

NOISE_SEED = 2025


@pytest.mark.acceptance(5, "noise calibration: p_sub=0.077 gives corpus WER 0.077 +/- 0.02")
def test_noise_calibration(make_config, tmp_path):
    cfg = make_config("noisy", noise={"p_sub": 0.077, "seed": NOISE_SEED})
    assert cli.main(["simulate", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "runs" / "noisy" / "reports" / "evaluation.json").read_text())
    measured = report["wer"]["groups"]["overall"]["word_weighted"] / 100
    print(f"corpus WER {measured:.4f} at p_sub=0.077, noise seed {NOISE_SEED}")
    assert abs(measured - 0.077) <= 0.02


# -- 6 -----------------------------------------------------------------------


class FlakyAnalyzer:
    """Answers every question correctly except, with probability ``e`` per
    question and run, one fixed wrong answer."""

    def __init__(self, survey, gold, e, seed):
        self.survey, self.gold, self.e = survey, gold, e
        self.rng = random.Random(seed)

    @staticmethod
    def _value(q, a):
        if isinstance(a, Numeric):
            return a.value
        if isinstance(a, Refused):
            return "REFUSED"
        if isinstance(a, Other):
            return "OTHER"
        if isinstance(a, Choice):
            return a.code
        return sorted(a.codes)

    def wrong(self, q, a):
        if q.kind == "numeric":
            return (a.value + 1.0) if isinstance(a, Numeric) else 1.0
        if isinstance(a, Refused):
            return q.codes[0]
        return "REFUSED"

    def complete(self, system, user, schema=None):
        answers = []
        for q in self.survey.questions:
            a = self.gold.answers[q.index]
            value = self.wrong(q, a) if self.rng.random() < self.e else self._value(q, a)
            answers.append({"question_index": q.index, "value": value})
        return json.dumps({"answers": answers})


def consensus_trial(survey, gold, e, n_transcripts, seed):
    client = FlakyAnalyzer(survey, gold, e, seed)
    transcript = Transcript([Turn("agent", "Hello"), Turn("respondent", "Hi")])
    single_wrong = consensus_wrong = trials = 0
    for _ in range(n_transcripts):
        res = self_consistent_extract(client, survey, transcript, k=5)
        ok_single = score_accuracy(gold, res.runs[0].answers, survey)
        ok_final = score_accuracy(gold, res.answers, survey)
        single_wrong += sum(not v for v in ok_single.values())
        consensus_wrong += sum(not v for v in ok_final.values())
        trials += len(survey)
    return single_wrong / trials, consensus_wrong / trials, trials


@pytest.fixture(scope="module")
def gold_one(survey, plan, dist, records):
    return synthesize_survey(survey, plan, dist, records, seed=3, respondent_id="sc")


@pytest.mark.acceptance(6, "self-consistency law: consensus error 0.0579 +/- 0.003; consensus < single run")
def test_self_consistency_law(survey, gold_one):
    expected = binomial_majority_error(0.2, 5)
    assert abs(expected - 0.05792) < 1e-5
    n = math.ceil(100_000 / len(survey))
    single, consensus, trials = consensus_trial(survey, gold_one, 0.2, n, seed=11)
    print(f"e=0.2: {trials} question-trials, single {single:.4f}, consensus {consensus:.4f} (oracle {expected:.5f})")
    assert trials >= 100_000
    assert abs(consensus - expected) <= 0.003


@pytest.mark.acceptance(6, "self-consistency law: consensus error 0.0579 +/- 0.003; consensus < single run")
@pytest.mark.parametrize("e", [0.1, 0.2, 0.3])
def test_consensus_beats_single_run(survey, gold_one, e):
    single, consensus, trials = consensus_trial(survey, gold_one, e, 600, seed=int(e * 100))
    se = math.sqrt(single * (1 - single) / trials + consensus * (1 - consensus) / trials)
    assert consensus < single
    assert single - consensus > 2 * se


# -- 7 -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def draws(survey, plan, dist, records):
    return [synthesize_survey(survey, plan, dist, records, seed=7, respondent_id=f"d{i}") for i in range(10_000)]


@pytest.mark.acceptance(7, "sampling fidelity: chi-square p > 0.01; household sums hold for 10,000 syntheses")
def test_probability_based_questions_follow_distribution(survey, plan, dist, draws):
    # One joint goodness-of-fit test over every probability-based question
    # (statistics and degrees of freedom add across independent questions),
    # plus per-question tests at a Bonferroni-corrected level.
    tested = [i for i in dist.choices if plan[i] == "probability_based"]
    total_stat, total_df, per_question = 0.0, 0, {}
    for idx in tested:
        probs = dist.choices[idx]
        q = survey.question(idx)
        codes = [c for c in q.codes if probs.get(c, 0) > 0]
        counts = defaultdict(int)
        for rs in draws:
            a = rs.answers[idx]
            counts[q.refused_code if isinstance(a, Refused) else a.code] += 1
        assert sum(counts[c] for c in codes) == len(draws)
        res = stats.chisquare([counts[c] for c in codes], [probs[c] * len(draws) for c in codes])
        total_stat += res.statistic
        total_df += len(codes) - 1
        per_question[idx] = res.pvalue
    joint_p = stats.chi2.sf(total_stat, total_df)
    print(f"joint chi-square over {len(tested)} questions: p={joint_p:.4f}; "
          f"smallest per-question p={min(per_question.values()):.4f}")
    assert joint_p > 0.01
    level = 0.01 / len(tested)
    assert all(p > level for p in per_question.values()), per_question
    q33 = dist.numeric[33]
    refused = sum(isinstance(rs.answers[33], Refused) for rs in draws) / len(draws)
    se = math.sqrt(q33.refuse_prob * (1 - q33.refuse_prob) / len(draws))
    assert abs(refused - q33.refuse_prob) <= 2 * se


@pytest.mark.acceptance(7, "sampling fidelity: chi-square p > 0.01; household sums hold for 10,000 syntheses")
def test_household_sum_invariant(survey, draws):
    size_q = survey.question(6)
    violations = 0
    for rs in draws:
        size = rs.answers[6]
        if isinstance(size, Refused):
            continue
        lo, hi = household_bounds(size_q.option(size.code).label)
        total = sum(rs.answers[i].value for i in range(7, 12))
        violations += not (total >= lo and (hi is None or total <= hi))
    assert violations == 0


# -- 8 -----------------------------------------------------------------------


@pytest.mark.acceptance(8, "template persona round trip over 1,000 syntheses, empty coverage lists")
def test_persona_round_trip(survey, plan, dist, records):
    mismatches = uncovered = 0
    for i in range(1000):
        rs = synthesize_survey(survey, plan, dist, records, seed=i, respondent_id=f"p{i}")
        persona = generate_persona(rs, survey, seed=i)
        mismatches += parse_persona(persona, survey).answers != rs.answers
        uncovered += bool(check_persona_coverage(persona, rs, survey))
    assert mismatches == 0
    assert uncovered == 0


# -- 9 -----------------------------------------------------------------------


@pytest.mark.acceptance(9, "edge rules: 'Good. Fair.', 'didn't finish high school', bare 'Yes' on Q19")
def test_edge_rules(survey):
    assert interpret_reply(survey.question(20), "Good. Fair.") == Choice("fair")
    assert isinstance(interpret_reply(survey.question(5), "didn't finish high school"), Other)
    assert interpret_reply(survey.question(19), "Yes.") == Choice("worked_for_someone_else")


@pytest.mark.acceptance(9, "edge rules: 'Good. Fair.', 'didn't finish high school', bare 'Yes' on Q19")
def test_edge_rules_inside_a_transcript(survey):
    replies = {5: "I didn't finish high school.", 19: "Yes.", 20: "Good. Fair."}
    turns = []
    for q in survey.questions:
        turns.append(Turn("agent", q.prompt_text))
        turns.append(Turn("respondent", replies.get(q.index, "I'd rather not say.")))
    rs = rule_based_extract(survey, Transcript(turns))
    assert rs.answers[20] == Choice("fair")
    assert isinstance(rs.answers[5], Other)
    assert rs.answers[19] == Choice("worked_for_someone_else")


# -- 10 ----------------------------------------------------------------------


@pytest.mark.acceptance(10, "storage round trip over 1,000 sets; stub upload of 40 acknowledged and idempotent")
def test_flatten_round_trip(survey, plan, dist, records):
    bad = 0
    for i in range(1000):
        rs = synthesize_survey(survey, plan, dist, records, seed=i, respondent_id=f"s{i}")
        back = unflatten(flatten(rs, survey), survey)
        bad += any(canonical(q, back.answers[q.index]) != canonical(q, rs.answers[q.index])
                   for q in survey.questions)
    assert bad == 0


@pytest.mark.acceptance(10, "storage round trip over 1,000 sets; stub upload of 40 acknowledged and idempotent")
def test_stub_upload_of_forty(survey, plan, dist, records):
    recs = [
        flatten(synthesize_survey(survey, plan, dist, records, seed=1, respondent_id=f"r{i}"), survey)
        for i in range(40)
    ]
    with StubRecordsServer("secret") as server:
        client = RecordsClient(server.url, token="secret")
        assert client.upload(recs) == 40
        first = json.loads(json.dumps(server.records, sort_keys=True))
        assert client.upload(recs) == 40
        assert server.records == first
        assert len(server.records) == 40
        client.close()

