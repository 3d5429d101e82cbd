import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from parley.agent import NoiseConfig, simulate_call
from parley.extraction import (
    AnswerItem,
    ExtractionError,
    build_analyzer_prompt,
    extract_once,
    interpret_reply,
    parse_output,
    resolve_value,
    rule_based_extract,
    self_consistent_extract,
    vote,
)
from parley.survey import Choice, MultiChoice, Numeric, Other, Refused, ResponseSet, canonical
from parley.synth import describe_answer, render_fictitious_dialogue, synthesize_survey
from parley.transcript import Transcript, Turn

TRANSCRIPT = Transcript([Turn("agent", "How is your health?", 0), Turn("respondent", "Fair.", 900)])


def document(survey, rs, drop=()):
    items = []
    for q in survey.questions:
        if q.index in drop:
            continue
        a = rs.answers[q.index]
        if isinstance(a, Numeric):
            value = a.value
        elif isinstance(a, MultiChoice):
            value = [q.option(c).label for c in q.codes if c in a.codes]
        else:
            value = describe_answer(q, a)
        items.append({"question_index": q.index, "value": value, "other_text": None})
    return json.dumps({"answers": items})


class Scripted:
    """Chat-client stand-in replaying fixed replies and recording requests."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def complete(self, system, user, schema=None):
        self.requests.append((system, user, schema))
        return self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]


@pytest.fixture(scope="module")
def gold(survey, plan, dist, records):
    return synthesize_survey(survey, plan, dist, records, seed=21, respondent_id="g")


def test_analyzer_prompt_lists_options(survey):
    prompt = build_analyzer_prompt(survey)
    assert "33. " + survey.question(33).text + "\nNumeric Value; Refused" in prompt
    q20 = survey.question(20)
    assert f"20. {q20.text}\n" + "; ".join(o.label for o in q20.options) in prompt
    assert prompt.index("1. ") < prompt.index("2. ")


def test_valid_document_on_first_attempt(survey, gold):
    client = Scripted([document(survey, gold)])
    run = extract_once(client, survey, TRANSCRIPT, respondent_id="g")
    assert run.valid_on_attempt == 1
    assert all(canonical(q, run.answers.answers[q.index]) == canonical(q, gold.answers[q.index])
               for q in survey.questions)
    assert client.requests[0][2]["title"] == "AnswerDocument"


def test_missing_answer_triggers_repair_then_error(survey, gold):
    bad = document(survey, gold, drop={33})
    client = Scripted([bad])
    with pytest.raises(ExtractionError) as err:
        extract_once(client, survey, TRANSCRIPT)
    assert len(client.requests) == 3
    assert any("Q33" in v for v in err.value.violations)
    repair = client.requests[1][1]
    assert "Q33: missing" in repair and bad in repair


def test_repair_succeeds_on_second_attempt(survey, gold):
    client = Scripted([document(survey, gold, drop={5}), document(survey, gold)])
    run = extract_once(client, survey, TRANSCRIPT)
    assert run.valid_on_attempt == 2


def test_empty_transcript_rejected(survey, gold):
    with pytest.raises(ExtractionError):
        extract_once(Scripted([document(survey, gold)]), survey, Transcript([]))


def test_day_count_folds_into_bucket(survey, gold):
    raw = json.loads(document(survey, gold))
    for item in raw["answers"]:
        if item["question_index"] == 15:
            item["value"] = "2"
    rs, problems = parse_output(survey, json.dumps(raw))
    assert problems == []
    assert rs.answers[15] == Choice("1_2_days")


def test_resolve_value_forms(survey):
    q3, q20, q33 = survey.question(3), survey.question(20), survey.question(33)
    assert resolve_value(q20, AnswerItem(question_index=20, value="Very good")) == Choice("very_good")
    assert resolve_value(q20, AnswerItem(question_index=20, value="refused")) == Refused()
    assert resolve_value(q20, AnswerItem(question_index=20, value="OTHER", other_text="meh")) == Other("meh")
    assert resolve_value(q33, AnswerItem(question_index=33, value="98.6°F")) == Numeric(98.6)
    assert resolve_value(q3, AnswerItem(question_index=3, value=["White", "Chinese"])) == MultiChoice(
        {"white", "chinese"})
    assert resolve_value(q20, AnswerItem(question_index=20, value=3.0)).kind == "wrong-kind"


def test_parse_output_problems(survey, gold):
    raw = json.loads(document(survey, gold))
    raw["answers"].append({"question_index": 40, "value": "x"})
    raw["answers"].append(dict(raw["answers"][0]))
    _, problems = parse_output(survey, json.dumps(raw))
    assert any("40 does not exist" in p for p in problems)
    assert any("Q1: answered more than once" in p for p in problems)
    _, problems = parse_output(survey, "not json")
    assert problems and "not a valid answer document" in problems[0]


# -- voting ------------------------------------------------------------------


def _runs_with(survey, gold, q, values):
    runs = []
    for v in values:
        answers = dict(gold.answers)
        answers[q] = v
        runs.append(ResponseSet(survey.id, "g", answers))
    return runs


def test_majority_vote(survey, gold):
    votes = [Choice("fair")] * 3 + [Choice("good")] * 2
    result = vote(survey, _runs_with(survey, gold, 20, votes))
    assert result.answers.answers[20] == Choice("fair")
    assert result.tallies[20] == {Choice("fair"): 3, Choice("good"): 2}


def test_ties_go_to_earlier_option_then_other_then_refused(survey, gold):
    tie = vote(survey, _runs_with(survey, gold, 20, [Choice("fair"), Choice("good")]))
    assert tie.answers.answers[20] == Choice("good")
    tie = vote(survey, _runs_with(survey, gold, 20, [Refused(), Other("hm")]))
    assert tie.answers.answers[20] == Other("hm")
    tie = vote(survey, _runs_with(survey, gold, 33, [Refused(), Numeric(99.1), Numeric(98.2)]))
    assert tie.answers.answers[33] == Numeric(98.2)


def test_other_votes_pool_and_keep_common_text(survey, gold):
    votes = [Other("a"), Other("b"), Other("b"), Choice("good"), Choice("fair")]
    result = vote(survey, _runs_with(survey, gold, 20, votes))
    assert result.answers.answers[20] == Other("b")


def test_single_run_is_identity(survey, gold):
    assert vote(survey, [gold], "g").answers == gold


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(5)))
def test_vote_is_order_invariant(survey, gold, order):
    votes = [Choice("fair"), Choice("good"), Other("x"), Refused(), Choice("good")]
    runs = _runs_with(survey, gold, 20, votes)
    assert vote(survey, [runs[i] for i in order]).answers == vote(survey, runs).answers


def test_agreement_counts_half_majorities(survey, gold):
    runs = _runs_with(survey, gold, 20, [Choice("fair"), Choice("good"), Choice("poor")])
    assert vote(survey, runs).agreement == pytest.approx(32 / 33)


def test_self_consistent_extract_runs_k_passes(survey, gold):
    client = Scripted([document(survey, gold)])
    result = self_consistent_extract(client, survey, TRANSCRIPT, k=3, parallelism=2, respondent_id="g")
    assert len(result.runs) == 3 and len(client.requests) == 3
    assert result.agreement == 1.0
    with pytest.raises(ValueError):
        self_consistent_extract(client, survey, TRANSCRIPT, k=0)


# -- rule-based reading ------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_zero_noise_dialogue_is_read_back_exactly(survey, plan, dist, records, seed):
    rs = synthesize_survey(survey, plan, dist, records, seed=seed)
    got = rule_based_extract(survey, render_fictitious_dialogue(survey, rs, seed))
    assert all(canonical(q, got.answers[q.index]) == canonical(q, rs.answers[q.index]) for q in survey.questions)


def test_reply_rules(survey):
    q6, q7, q15, q19, q33 = (survey.question(i) for i in (6, 7, 15, 19, 33))
    assert interpret_reply(q33, "It's 98.6°F.") == Numeric(98.6)
    assert interpret_reply(q33, "I'd rather not say.") == Refused()
    assert interpret_reply(q33, "") == Refused()
    assert interpret_reply(q7, "Two.") == Numeric(2)
    assert interpret_reply(q7, "I don't know.") == Choice("dont_know")
    assert interpret_reply(q15, "About 6 days.") == Choice("5_7_days")
    assert interpret_reply(q19, "Yes") == Choice("worked_for_someone_else")
    assert interpret_reply(q6, "Three persons") == Choice("three_persons")
    assert interpret_reply(q6, "a cat") == Other("a cat")


def test_rule_reader_needs_every_question(survey):
    with pytest.raises(ExtractionError, match="question 1"):
        rule_based_extract(survey, TRANSCRIPT)


def test_rule_reader_on_noisy_call_returns_complete_set(survey, gold):
    s = simulate_call(survey, gold, NoiseConfig(p_sub=0.3, p_del=0.2), seed=4)
    got = rule_based_extract(survey, s.transcript)
    assert sorted(got.answers) == list(survey.indices)


def test_all_pairs_of_votes_resolve(survey, gold):
    values = [Choice(c) for c in survey.question(20).codes] + [Other("z")]
    for a, b in itertools.product(values, repeat=2):
        winner = vote(survey, _runs_with(survey, gold, 20, [a, b])).answers.answers[20]
        assert winner in (canonical(survey.question(20), a), canonical(survey.question(20), b))
