"""Command-line entry point: synth, train-teacher, train-student, eval, lift, gradcheck.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluate as ev
from . import gradcheck
from .data import DatasetError, ground_truth_array, input_array, load_dataset, save_dataset, synth_generate
from .training import (
    NumericFailure,
    lift,
    load_student,
    load_teacher,
    teacher_poses,
    train_student,
    train_teacher,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _add_common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--seed", type=str, default=None, help="run seed (config key seed)")
    p.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    p.add_argument("--out", type=Path, required=True, help=out_help)
    for name, f in cfgmod.KEYS.items():
        if name == "seed":
            continue
        default = f.default
        p.add_argument(
            "--" + name.replace("_", "-"),
            dest=name,
            type=str,
            default=None,
            metavar=f.type.upper(),
            help=f"config key {name} (default {cfgmod._format(default)})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poselift", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with hidden ground truth")
    _add_common(p, "output JSONL dataset")

    p = sub.add_parser("train-teacher", help="stage 1: train the pose-dictionary teacher")
    _add_common(p, "output directory for checkpoint.json and metrics.csv")
    p.add_argument("--data", type=Path, required=True, help="training JSONL (2D only is enough)")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = sub.add_parser("train-student", help="stage 2: train the graph student under a frozen teacher")
    _add_common(p, "output directory for checkpoint.json and metrics.csv")
    p.add_argument("--data", type=Path, required=True, help="training JSONL")
    p.add_argument("--teacher", type=Path, required=True, help="stage 1 checkpoint")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate checkpoints against ground truth")
    _add_common(p, "output directory for report CSVs and SVGs")
    p.add_argument("--data", type=Path, required=True, help="evaluation JSONL with joints3d")
    p.add_argument("--teacher", type=Path, default=None, help="teacher checkpoint")
    p.add_argument("--student", type=Path, default=None, help="student checkpoint")
    p.add_argument("--baseline", type=Path, default=None, help="training JSONL with joints3d for the mean-pose baseline")
    p.add_argument("--render", type=int, default=0, metavar="K", help="write SVGs for the first K samples")

    p = sub.add_parser("lift", help="predict 3D poses for a 2D-only file")
    _add_common(p, "output JSONL of predicted 3D poses")
    p.add_argument("--data", type=Path, required=True, help="input JSONL")
    p.add_argument("--student", type=Path, required=True, help="student checkpoint")

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _add_common(p, "output text file for the pass/fail table")
    return parser


def _resolve(args) -> cfgmod.RunConfig:
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in cfgmod.KEYS if getattr(args, k, None) is not None}
    return cfgmod.resolve(file_values, flags)


def _cmd_synth(args, cfg):
    ds = synth_generate(cfg.synth(), cfg.camera(), cfg.graph())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(args.out, ds.records)
    print(f"wrote {len(ds.records)} records to {args.out}")
    return EXIT_OK


def _training_inputs(path, cfg):
    graph = cfg.graph()
    records = load_dataset(path, graph)
    if not records:
        raise DatasetError(f"{path}: dataset is empty")
    return input_array(records, graph, cfg.target_spread), graph


def _progress(row):
    parts = " ".join(f"{k}={v:.6g}" for k, v in row.items() if k not in ("epoch", "wall_time"))
    print(f"epoch {row['epoch']}: {parts} ({row['wall_time']:.1f}s)", flush=True)


def _cmd_train_teacher(args, cfg):
    x, graph = _training_inputs(args.data, cfg)
    res = train_teacher(x, cfg.train("teacher"), cfg.teacher(graph.n_joints), args.out, args.resume, _progress)
    print(f"checkpoint: {res.checkpoint}\nmetrics: {res.metrics}")
    return EXIT_OK


def _cmd_train_student(args, cfg):
    x, graph = _training_inputs(args.data, cfg)
    tc = cfg.train("student")
    tc.teacher_checkpoint = str(args.teacher)
    res = train_student(x, args.teacher, tc, cfg.student(graph.n_joints), args.out, graph, args.resume, _progress)
    print(f"checkpoint: {res.checkpoint}\nmetrics: {res.metrics}\nteacher sha256 unchanged: {res.extra['teacher_sha256']}")
    return EXIT_OK


def _cmd_eval(args, cfg):
    if args.teacher is None and args.student is None and args.baseline is None:
        raise ValueError("eval needs at least one of --teacher, --student, --baseline")
    graph = cfg.graph()
    records = load_dataset(args.data, graph)
    if not records:
        raise DatasetError(f"{args.data}: dataset is empty")
    gt = ground_truth_array(records, graph.root_index)
    x = input_array(records, graph, cfg.target_spread)
    actions = [r.action for r in records]
    cam = cfg.camera()
    args.out.mkdir(parents=True, exist_ok=True)
    preds = {}
    if args.teacher is not None:
        t_store, t_cfg = load_teacher(args.teacher)
        preds["teacher"] = (teacher_poses(x, t_store, t_cfg)[1], ev.fingerprint(args.teacher))
    if args.student is not None:
        s_store, s_cfg, s_graph = load_student(args.student)
        preds["student"] = (lift(x, s_store, s_cfg, s_graph, cam), ev.fingerprint(args.student))
    if args.baseline is not None:
        train = load_dataset(args.baseline, graph)
        mean = ev.mean_pose(ground_truth_array(train, graph.root_index), graph.root_index)
        preds["baseline"] = (ev.baseline_predictions(mean, len(records)), ev.fingerprint(args.baseline))
    status = EXIT_OK
    for name, (pred, fp) in preds.items():
        report = ev.build_report(pred, gt, actions, fp, cfg.unit_scale)
        path = args.out / f"report_{name}.csv"
        report.to_csv(path)
        a = report.aggregate
        print(f"{name}: n={a.n} mpjpe={a.mpjpe:.6g} p_mpjpe={a.p_mpjpe:.6g} pck150={a.pck150:.4g} auc={a.auc:.4g} -> {path}")
        if report.has_nan():
            print(f"{name}: report contains NaN", file=sys.stderr)
            status = EXIT_NUMERIC
    for i in range(min(args.render, len(records))):
        poses = {"input 2D": x[i], "ground truth": gt[i]}
        for name, (pred, _) in preds.items():
            poses[name] = pred[i]
        ev.render_skeleton(poses, graph, args.out / f"sample_{i:04d}.svg")
    return status


def _cmd_lift(args, cfg):
    s_store, s_cfg, graph = load_student(args.student)
    records = load_dataset(args.data, graph)
    x = input_array(records, graph, cfg.target_spread)
    poses = lift(x, s_store, s_cfg, graph, cfg.camera()) if records else np.zeros((0, 3, graph.n_joints))
    if not np.all(np.isfinite(poses)):
        raise NumericFailure("non-finite lifted pose")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        for r, y in zip(records, poses):
            fh.write(json.dumps({"id": r.id, "joints3d": y.T.tolist()}) + "\n")
    print(f"wrote {len(records)} poses to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args, cfg):
    results = gradcheck.run_all(seed=cfg.seed)
    table = gradcheck.format_table(results)
    print(table)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(table + "\n")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases pass")
    return EXIT_OK if not failed else EXIT_NUMERIC


COMMANDS = {
    "synth": _cmd_synth,
    "train-teacher": _cmd_train_teacher,
    "train-student": _cmd_train_student,
    "eval": _cmd_eval,
    "lift": _cmd_lift,
    "gradcheck": _cmd_gradcheck,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = _resolve(args)
        print("# resolved config")
        print(cfg.as_text(), end="", flush=True)
        return COMMANDS[args.command](args, cfg)
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, IsADirectoryError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
