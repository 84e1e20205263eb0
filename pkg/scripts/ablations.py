"""Ablations around the default model.

usage: python scripts/ablations.py OUT_DIR [--reduced] [key=value ...]

Trains one teacher, then: single-branch students, literal_eq4, REC-only,
KD-only, a no-RIC teacher, the detached-cycle pair and the lambda sweeps.
``--reduced`` uses 1000 samples and 5 + 5 epochs.
"""

import dataclasses
import sys
from pathlib import Path

from poselift.config import parse_config_text, resolve
from poselift.experiments import format_scores, make_splits, run_student, run_teacher

SWEEP = (1.0, 3.0, 5.0, 8.0, 10.0)


def main(argv):
    out = Path(argv[0])
    reduced = "--reduced" in argv
    pairs = [a for a in argv[1:] if a != "--reduced"]
    if reduced:
        pairs = ["n_samples=1000", "epochs=5"] + pairs
    cfg = resolve(parse_config_text("\n".join(pairs)))
    splits = make_splits(cfg, n_eval=200 if reduced else 1000)
    base = run_teacher(cfg, splits, out / "teacher")
    scores = {"teacher": base, "student": run_student(cfg, splits, base.checkpoint, out / "student")}

    def student(name, **kw):
        scores[name] = run_student(dataclasses.replace(cfg, **kw), splits, base.checkpoint, out / name)

    student("physical_only", nonphysical=False)
    student("nonphysical_only", physical=False)
    student("literal_eq4", literal_eq4=True)
    student("rec_only", lambda_kd=0.0)
    student("kd_only", lambda_rec=0.0)
    scores["teacher_no_ric"] = run_teacher(dataclasses.replace(cfg, lambda_ric=0.0), splits, out / "teacher_no_ric")
    det = dataclasses.replace(cfg, detach_cycle_target=True)
    scores["teacher_detach"] = run_teacher(det, splits, out / "teacher_detach")
    scores["student_detach"] = run_student(det, splits, scores["teacher_detach"].checkpoint, out / "student_detach")
    for v in SWEEP:
        c = dataclasses.replace(cfg, lambda_rep=v, lambda_ric=1.0)
        scores[f"teacher lambda_rep={v:g}"] = run_teacher(c, splits, out / f"teacher_rep{v:g}")
    for v in SWEEP:
        student(f"student lambda_kd={v:g}", lambda_kd=v, lambda_rec=1.0)
    print(format_scores(splits.baseline, scores))


if __name__ == "__main__":
    main(sys.argv[1:])
