"""Command-line entry point.

Subcommands: simulate, train-teacher, distill, verify-taylor, sweep-lambda.
Exit codes: 0 success, 2 configuration or usage error, 3 missing input file.
Every file written starts with a ``#`` line holding the normalized config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import config as cfgmod
from . import curves, datasets, distill
from .csvio import atomic_write_text
from .nn import accuracy, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3


class MissingInput(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=_seed)
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", choices=datasets.KINDS)
    data.add_argument("--noise", type=float)

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--eta", type=float)
    train.add_argument("--steps", type=_positive_int)
    train.add_argument("--batch-size", type=_positive_int)
    train.add_argument("--temperature", type=float)
    train.add_argument("--activation", choices=("tanh", "relu"))
    train.add_argument("--teacher", type=Path, help="teacher checkpoint")

    p = argparse.ArgumentParser(prog="kdbalance", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo Q(lambda) curves")
    s.add_argument("--regime", choices=("acute", "obtuse", "full", "both"))
    s.add_argument("--trials", type=_positive_int)
    s.add_argument("--grid-size", type=int)
    s.add_argument("--mag-lo", type=float)
    s.add_argument("--mag-hi", type=float)

    t = sub.add_parser("train-teacher", parents=[common, data], help="pretrain the teacher")
    t.add_argument("--teacher-steps", type=_positive_int)
    t.add_argument("--teacher-eta", type=float)
    t.add_argument("--export-data", action="store_true", help="also write the train/test sets as CSV")

    d = sub.add_parser("distill", parents=[common, data, train], help="distil a student from a teacher checkpoint")
    d.add_argument("--lambda-strategy", choices=("fixed", "max_descent", "min_descent", "target_rate"))
    d.add_argument("--lambda", dest="fixed_lambda", type=float)
    d.add_argument("--target-delta", type=float, help="predicted loss change per step, <= 0 (write as --target-delta=-1e-3)")
    d.add_argument("--smoothing", type=float)
    d.add_argument("--lambda-bounds", type=_float_list)

    v = sub.add_parser("verify-taylor", parents=[common, data, train], help="residual scaling over learning rates")
    v.add_argument("--etas", type=_float_list)

    w = sub.add_parser("sweep-lambda", parents=[common, data, train], help="one student per fixed lambda")
    w.add_argument("--grid", type=_float_list)
    return p


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    o: Dict[str, Any] = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    def get(name):
        return getattr(args, name, None)

    if args.seed is not None:
        o["seed"] = args.seed
    put("data", "kind", get("dataset"))
    put("data", "noise", get("noise"))
    for key in ("eta", "steps", "batch_size", "temperature", "activation", "teacher_steps", "teacher_eta"):
        put("train", key, get(key))
    if get("lambda_bounds") is not None:
        put("train", "lambda_bounds", get("lambda_bounds"))
    strategy = {}
    for flag, key in (("lambda_strategy", "kind"), ("fixed_lambda", "fixed_lambda"),
                      ("target_delta", "target_delta"), ("smoothing", "smoothing")):
        if get(flag) is not None:
            strategy[key] = get(flag)
    if strategy:
        o.setdefault("train", {})["strategy"] = strategy
    if get("regime") is not None:
        put("simulate", "regimes", ["acute", "obtuse"] if args.regime == "both" else [args.regime])
    put("simulate", "n_trials", get("trials"))
    put("simulate", "lambda_grid_size", get("grid_size"))
    put("simulate", "mag_lo", get("mag_lo"))
    put("simulate", "mag_hi", get("mag_hi"))
    put("taylor", "etas", get("etas"))
    if args.command == "verify-taylor":
        put("taylor", "steps", get("steps"))
        o.get("train", {}).pop("steps", None)
    put("sweep", "grid", get("grid"))
    return o


def resolve_config(args: argparse.Namespace) -> cfgmod.ExperimentConfig:
    raw = cfgmod.load(args.config) if args.config is not None else {}
    if args.config is not None and not isinstance(raw, dict):
        raise cfgmod.ConfigError("config: expected a JSON object")
    return cfgmod.from_dict(cfgmod.merge(raw, _overrides(args)))


def _comment(command: str, cfg: cfgmod.ExperimentConfig) -> str:
    return f"kdbalance {command} seed={cfg.seed} config={cfg.to_json()}"


def _load_teacher(path: Path):
    if not path.is_file():
        raise MissingInput(f"teacher checkpoint not found: {path}")
    return load_checkpoint(path)[0]


def _teacher_for(args, cfg, train):
    if args.teacher is not None:
        return _load_teacher(args.teacher)
    return distill.train_teacher(cfg.train, train)


def cmd_simulate(args, cfg: cfgmod.ExperimentConfig) -> int:
    sim = cfg.simulate
    points = []
    for regime in sim.regimes:
        points.extend(curves.run_simulation(sim.trial_spec(cfg.seed, regime)))
    path = args.out / "curves.csv"
    atomic_write_text(path, f"# {_comment('simulate', cfg)}\n" + curves.to_csv(points))
    for regime, s in curves.regime_summary(points).items():
        print(f"{regime}: trials={int(s['trials'])} min_Q={s['q_min']:.6g} mean_Q={s['q_mean']:.6g} "
              f"mean_Qmin/Q(0.5)={s['normalized_min_mean']:.6f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_train_teacher(args, cfg: cfgmod.ExperimentConfig) -> int:
    train, test = datasets.generate(cfg.data)
    teacher = distill.train_teacher(cfg.train, train)
    comment = _comment("train-teacher", cfg)
    path = args.out / "teacher.ckpt"
    save_checkpoint(path, teacher, cfg.train.temperature, comment)
    if args.export_data:
        atomic_write_text(args.out / "data_train.csv", f"# {comment}\n" + datasets.to_csv(train))
        atomic_write_text(args.out / "data_test.csv", f"# {comment}\n" + datasets.to_csv(test))
    print(f"teacher train_acc={accuracy(teacher, train):.4f} test_acc={accuracy(teacher, test):.4f}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_distill(args, cfg: cfgmod.ExperimentConfig) -> int:
    teacher = _load_teacher(args.teacher if args.teacher is not None else args.out / "teacher.ckpt")
    train, test = datasets.generate(cfg.data)
    result = distill.run_training(cfg.train, train, test, teacher)
    comment = _comment("distill", cfg)
    atomic_write_text(args.out / "steps.csv", distill.steps_csv(result.records, comment))
    save_checkpoint(args.out / "student.ckpt", result.student, cfg.train.temperature, comment)
    print(f"student train_acc={result.train_accuracy:.4f} test_acc={result.test_accuracy:.4f} "
          f"teacher test_acc={accuracy(teacher, test):.4f} final_loss={result.final_loss_total:.6g}")
    print(f"wrote {args.out / 'steps.csv'} and {args.out / 'student.ckpt'}")
    return EXIT_OK


def cmd_verify_taylor(args, cfg: cfgmod.ExperimentConfig) -> int:
    train, test = datasets.generate(cfg.data)
    teacher = _teacher_for(args, cfg, train)
    report = distill.verify_taylor(replace(cfg.train, steps=cfg.taylor.steps), cfg.taylor.etas, train, test, teacher)
    path = args.out / "taylor.csv"
    atomic_write_text(path, distill.taylor_csv(report, _comment("verify-taylor", cfg)))
    for eta, res, act, ratio in report.rows():
        print(f"eta={eta:g} mean|residual|={res:.6g} mean|actual|={act:.6g}" + (f" ratio={ratio:.4f}" if ratio != "" else ""))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep_lambda(args, cfg: cfgmod.ExperimentConfig) -> int:
    train, test = datasets.generate(cfg.data)
    teacher = _teacher_for(args, cfg, train)
    rows, logs = distill.sweep_lambda(cfg.train, cfg.sweep.grid, train, test, teacher)
    comment = _comment("sweep-lambda", cfg)
    atomic_write_text(args.out / "sweep.csv", distill.sweep_csv(rows, comment))
    atomic_write_text(args.out / "sweep_steps.csv", distill.sweep_steps_csv(logs, comment))
    for r in rows:
        print(f"lambda={r.lam:g} loss_total={r.final_loss_total:.6g} loss_cls={r.final_loss_cls:.6g} test_acc={r.test_accuracy:.4f}")
    print(f"wrote {args.out / 'sweep.csv'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "verify-taylor": cmd_verify_taylor,
    "sweep-lambda": cmd_sweep_lambda,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except cfgmod.ConfigError as exc:
        print(f"kdbalance: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"kdbalance: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
