"""Synthetic pipeline at the default configuration: teacher, then student, then the score table.

usage: python scripts/synthetic_benchmark.py OUT_DIR [key=value ...]
"""

import sys
from pathlib import Path

from poselift.config import parse_config_text, resolve
from poselift.experiments import format_scores, make_splits, run_student, run_teacher


def main(argv):
    out = Path(argv[0])
    cfg = resolve(parse_config_text("\n".join(argv[1:])))
    print(cfg.as_text())
    splits = make_splits(cfg)
    log = lambda row: print(row, flush=True)  # noqa: E731
    scores = {"teacher": run_teacher(cfg, splits, out / "teacher", log)}
    scores["student"] = run_student(cfg, splits, scores["teacher"].checkpoint, out / "student", log)
    print(format_scores(splits.baseline, scores))


if __name__ == "__main__":
    main(sys.argv[1:])
