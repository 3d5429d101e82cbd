"""Measure corpus WER of simulated campaigns against the configured noise rates.

Usage: python scripts/noise_calibration.py [--seeds 10] [--p-sub 0.02 0.05 0.077 0.1]
"""

import argparse
import json
import statistics
import tempfile
from pathlib import Path

from parley.pipeline import load_config, stage_extract, stage_run, stage_score, stage_synth


def quiet(line: str) -> None:
    pass


def corpus_wer(workdir: Path, p_sub: float, noise_seed: int, n_participants: int) -> float:
    name = f"cal-{p_sub}-{noise_seed}".replace(".", "_")
    doc = {
        "campaign_id": name,
        "runs_dir": str(workdir),
        "participants": [
            {"id": f"P{i}", "phone_number": f"+1555010{i:04d}", "group": "native"}
            for i in range(1, n_participants + 1)
        ],
        "noise": {"p_sub": p_sub, "seed": noise_seed},
    }
    path = workdir / f"{name}.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    stage_synth(cfg, quiet)
    stage_run(cfg, quiet)
    stage_extract(cfg, quiet)
    report = stage_score(cfg, quiet)
    return report["wer"]["groups"]["overall"]["word_weighted"] / 100


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--participants", type=int, default=8)
    ap.add_argument("--p-sub", type=float, nargs="+", default=[0.02, 0.05, 0.077, 0.1])
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        for p in args.p_sub:
            rates = [corpus_wer(Path(tmp), p, s, args.participants) for s in range(args.seeds)]
            sd = statistics.stdev(rates) if len(rates) > 1 else 0.0
            print(f"p_sub={p:.3f}: mean WER {statistics.fmean(rates):.4f}, sd {sd:.4f}, "
                  f"range {min(rates):.4f}-{max(rates):.4f} over {len(rates)} noise seeds")


if __name__ == "__main__":
    main()
