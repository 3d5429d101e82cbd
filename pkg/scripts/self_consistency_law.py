"""Compare majority-vote error of k independent analyzer runs with the binomial law.

A stub analyzer answers each question wrongly with probability e. With
``--wrong same`` every wrong vote lands on one fixed distractor, the worst
case, and consensus error matches P(Binomial(k, e) > k/2). With
``--wrong scattered`` wrong votes spread over all other options and rarely
outvote the correct one, so consensus error falls below the law.
"""

import argparse
import math
import random

from parley.extraction import vote
from parley.survey import Choice, ResponseSet, canonical, load_survey


def binomial_majority(e: float, k: int) -> float:
    return sum(math.comb(k, j) * e**j * (1 - e) ** (k - j) for j in range(k // 2 + 1, k + 1))


def simulate(survey, e, k, transcripts, rng, wrong_mode):
    questions = [q for q in survey.questions if q.kind != "numeric"]
    single = wrong = total = 0
    for t in range(transcripts):
        gold, distractor = {}, {}
        for q in questions:
            substantive = [o.code for o in q.options if not o.is_special]
            gold[q.index] = rng.choice(substantive)
            distractor[q.index] = rng.choice([c for c in q.codes if c != gold[q.index]])
        runs = []
        for _ in range(k):
            answers = {q.index: Choice(q.codes[0]) for q in survey.questions}
            for q in questions:
                code = gold[q.index]
                if rng.random() < e:
                    if wrong_mode == "same":
                        code = distractor[q.index]
                    else:
                        code = rng.choice([c for c in q.codes if c != gold[q.index]])
                answers[q.index] = Choice(code)
            runs.append(ResponseSet(survey.id, str(t), answers))
        result = vote(survey, runs).answers.answers
        for q in questions:
            g = canonical(q, Choice(gold[q.index]))
            total += 1
            single += canonical(q, runs[0].answers[q.index]) != g
            wrong += result[q.index] != g
    return single / total, wrong / total


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--transcripts", type=int, default=400)
    ap.add_argument("--wrong", choices=("same", "scattered"), default="same")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    survey = load_survey()
    rng = random.Random(args.seed)
    for e in (0.05, 0.1, 0.2, 0.3):
        single, consensus = simulate(survey, e, args.k, args.transcripts, rng, args.wrong)
        print(f"e={e:.2f} k={args.k} ({args.wrong}): single {single:.4f}, consensus {consensus:.4f}, "
              f"binomial law {binomial_majority(e, args.k):.4f}")


if __name__ == "__main__":
    main()
