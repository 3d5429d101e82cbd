"""Rebuild the per-participant WER and accuracy tables from their published rates.

Each participant's WER becomes a 1,000-word line with that many substitutions
and each accuracy becomes a correct count out of 5 personas x 33 questions;
the aggregation then recomputes group averages exactly as ``parley score`` does.
"""

from parley.evaluation import ParticipantInput, aggregate, align_words, render_text

WER = {"N1": 5.1, "N2": 6.7, "N3": 10.6, "N4": 4.9, "N5": 5.0, "F1": 6.0, "F2": 19.7, "F3": 3.2}
ACCURACY = {"N1": 98.8, "N2": 96.4, "N3": 95.8, "N4": 99.4, "N5": 98.2, "F1": 99.4, "F2": 97.6, "F3": 98.8}
PERSONAS, QUESTIONS, WORDS = 5, 33, 1000


def wer_line(rate):
    errors = round(rate * WORDS / 100)
    ref = [f"w{i}" for i in range(WORDS)]
    return align_words(ref, ["x" if i < errors else w for i, w in enumerate(ref)])


def correctness(acc):
    correct = round(acc * PERSONAS * QUESTIONS / 100)
    flags = iter(i < correct for i in range(PERSONAS * QUESTIONS))
    return {f"persona{k + 1}": {q: next(flags) for q in range(1, QUESTIONS + 1)} for k in range(PERSONAS)}


def main():
    grouping = {p: "native" if p.startswith("N") else "non_native" for p in WER}
    inputs = [ParticipantInput(p, correctness(ACCURACY[p]), [wer_line(WER[p])]) for p in WER]
    report = aggregate(inputs, grouping)
    print(render_text(report), end="")
    for g, v in report.wer.groups.items():
        print(f"WER {g}: simple mean {v['simple_mean']:.4f}, word-weighted {v['word_weighted']:.4f}")


if __name__ == "__main__":
    main()
