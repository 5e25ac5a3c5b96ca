"""Teacher pretraining, student distillation and first-order loss checks.

Each distillation step computes the distillation and classification
gradients separately from one forward pass, records their geometry, applies
``theta -= eta * (lam * g_dist + (1 - lam) * g_cls)`` and re-evaluates the
total loss on the same mini-batch. The first-order prediction of that change
is ``-eta * Q(lam)`` (see :mod:`kdbalance.geometry`); the residual is what
the second and higher order terms contribute.

Random streams are derived from the run seed with
``SeedSequence(seed, spawn_key=(k,))``: k=0 teacher init, k=1 teacher
batches, k=2 student init, k=3 student batches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import geometry as geo
from .csvio import render_csv
from .nn import (
    Batch,
    FlatGrad,
    Network,
    accuracy,
    backward,
    combine_grads,
    forward,
    init_network,
    loss_cls,
    loss_dist,
    sgd_step,
)

log = logging.getLogger(__name__)

STEP_CSV_HEADER = (
    "step", "lambda", "loss_total_before", "loss_total_after", "loss_dist", "loss_cls",
    "a", "b", "cos_phi", "predicted_delta", "actual_delta", "residual",
)

_TEACHER_INIT, _TEACHER_BATCHES, _STUDENT_INIT, _STUDENT_BATCHES = range(4)


@dataclass(frozen=True)
class SchedulerStrategy:
    kind: str = "fixed"
    fixed_lambda: float = 0.5
    target_delta: float = -1e-3
    smoothing: float = 0.0

    def __post_init__(self):
        if self.kind not in geo.STRATEGIES:
            raise ValueError(f"strategy kind must be one of {geo.STRATEGIES}, got {self.kind!r}")
        if not 0.0 < self.fixed_lambda < 1.0:
            raise ValueError("fixed_lambda must lie in (0, 1)")
        if self.target_delta > 0:
            raise ValueError("target_delta must be <= 0")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")

    @property
    def dynamic(self) -> bool:
        return self.kind != "fixed"


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    steps: int = 300
    batch_size: int = 64
    strategy: SchedulerStrategy = field(default_factory=SchedulerStrategy)
    lambda_bounds: Tuple[float, float] = geo.DEFAULT_BOUNDS
    temperature: float = 1.0
    seed: int = 0
    teacher_sizes: Tuple[int, ...] = (2, 32, 3)
    student_sizes: Tuple[int, ...] = (2, 8, 3)
    activation: str = "tanh"
    teacher_eta: float = 0.5
    teacher_steps: int = 200

    def __post_init__(self):
        if not self.eta > 0 or not self.teacher_eta > 0:
            raise ValueError("learning rates must be > 0")
        if self.steps < 1 or self.teacher_steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch sizes must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        geo.check_bounds(self.lambda_bounds)
        if _param_count(self.student_sizes) >= _param_count(self.teacher_sizes):
            raise ValueError("the student must have fewer parameters than the teacher")
        if self.student_sizes[0] != self.teacher_sizes[0] or self.student_sizes[-1] != self.teacher_sizes[-1]:
            raise ValueError("teacher and student must share input and output widths")


def _param_count(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class StepRecord:
    step: int
    lam: float
    loss_total_before: float
    loss_total_after: float
    loss_dist: float
    loss_cls: float
    a: float
    b: float
    cos_phi: float
    predicted_delta: float
    actual_delta: float
    residual: float
    degenerate: bool = False
    grad_dist: Optional[FlatGrad] = field(default=None, repr=False, compare=False)
    grad_cls: Optional[FlatGrad] = field(default=None, repr=False, compare=False)

    @property
    def stats(self) -> geo.GradientStats:
        return geo.GradientStats(self.a, self.b, self.cos_phi, self.degenerate)

    def row(self) -> tuple:
        return (
            self.step, self.lam, self.loss_total_before, self.loss_total_after, self.loss_dist,
            self.loss_cls, self.a, self.b, self.cos_phi, self.predicted_delta, self.actual_delta,
            self.residual,
        )


@dataclass
class TrainResult:
    student: Network
    records: List[StepRecord]
    final_loss_total: float
    final_loss_cls: float
    final_loss_dist: float
    train_accuracy: float
    test_accuracy: float


@dataclass(frozen=True)
class TaylorReport:
    eta_values: List[float]
    mean_abs_residual: List[float]
    mean_abs_actual: List[float]
    residual_ratio: List[float]  # residual[i+1] / residual[i]

    def rows(self):
        for i, eta in enumerate(self.eta_values):
            ratio = self.residual_ratio[i - 1] if i else ""
            yield eta, self.mean_abs_residual[i], self.mean_abs_actual[i], ratio


TAYLOR_CSV_HEADER = ("eta", "mean_abs_residual", "mean_abs_actual", "residual_ratio")


@dataclass(frozen=True)
class SweepRow:
    lam: float
    final_loss_total: float
    final_loss_cls: float
    test_accuracy: float


SWEEP_CSV_HEADER = ("lambda", "final_loss_total", "final_loss_cls", "test_accuracy")


def subseed(seed: int, key: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(key,))
    return int(ss.generate_state(1, np.uint64)[0])


def _batch_stream(data: Batch, batch_size: int, seed: int, key: int):
    rng = np.random.Generator(np.random.PCG64(subseed(seed, key)))
    n = len(data)
    while True:
        if batch_size >= n:
            yield data
        else:
            yield data.take(np.sort(rng.choice(n, size=batch_size, replace=False)))


def train_teacher(config: TrainConfig, train: Batch) -> Network:
    """Plain cross-entropy SGD on the teacher architecture."""
    net = init_network(config.teacher_sizes, config.activation, subseed(config.seed, _TEACHER_INIT))
    batches = _batch_stream(train, config.batch_size, config.seed, _TEACHER_BATCHES)
    for _ in range(config.teacher_steps):
        batch = next(batches)
        logits, cache = forward(net, batch)
        _, g = loss_cls(logits, batch.labels)
        net = sgd_step(net, backward(net, cache, g), config.teacher_eta)
    log.info("teacher train accuracy %.4f after %d steps", accuracy(net, train), config.teacher_steps)
    return net


def total_loss(student: Network, teacher_logits: np.ndarray, batch: Batch, lam: float, temperature: float):
    """``(total, dist, cls)`` losses of ``student`` on ``batch``."""
    logits, _ = forward(student, batch)
    ld, _ = loss_dist(logits, teacher_logits, temperature)
    lc, _ = loss_cls(logits, batch.labels)
    return lam * ld + (1.0 - lam) * lc, ld, lc


def kd_step(
    student: Network,
    teacher: Network,
    batch: Batch,
    lam: float,
    eta: float,
    temperature: float = 1.0,
    step: int = 0,
) -> Tuple[Network, StepRecord]:
    """One distillation SGD step plus its predicted and measured loss change.

    When one gradient is zero the angle is undefined: the record is flagged
    ``degenerate`` (cos_phi stored as 0) but the combined update is still
    applied, since it does not need the angle.
    """
    if not 0.0 < lam < 1.0:
        raise geo.DomainError(f"lambda must lie in (0, 1), got {lam}")
    if not eta > 0:
        raise geo.DomainError(f"eta must be > 0, got {eta}")
    teacher_logits, _ = forward(teacher, batch)
    logits, cache = forward(student, batch)
    ld, gd_logits = loss_dist(logits, teacher_logits, temperature)
    lc, gc_logits = loss_cls(logits, batch.labels)
    before = lam * ld + (1.0 - lam) * lc
    g_dist = backward(student, cache, gd_logits, "dist")
    g_cls = backward(student, cache, gc_logits, "cls")

    stats = geo.cosine_between(g_dist.values, g_cls.values)
    predicted = geo.predicted_delta(stats, lam, eta)
    updated = sgd_step(student, combine_grads(g_dist, g_cls, lam), eta)
    after = total_loss(updated, teacher_logits, batch, lam, temperature)[0]
    actual = after - before
    record = StepRecord(
        step, lam, before, after, ld, lc, stats.a, stats.b, stats.cos_phi,
        predicted, actual, actual - predicted, stats.degenerate, g_dist, g_cls,
    )
    return updated, record


def next_lambda(
    strategy: SchedulerStrategy,
    stats: Optional[geo.GradientStats],
    prev_lambda: float,
    eta: float,
    bounds: Sequence[float] = geo.DEFAULT_BOUNDS,
) -> float:
    """The balancing parameter for the next step.

    Fixed strategies ignore the stats. Dynamic strategies take the matching
    recommendation, blend it with ``prev_lambda`` by ``strategy.smoothing``
    and clamp to ``bounds``; degenerate or missing stats keep ``prev_lambda``.
    """
    if strategy.kind == "fixed":
        return strategy.fixed_lambda
    lo, hi = geo.check_bounds(bounds)
    if stats is None or stats.degenerate:
        return prev_lambda
    if strategy.kind == "max_descent":
        rec = geo.lambda_max_descent(stats, (lo, hi), eta)
    elif strategy.kind == "min_descent":
        rec = geo.lambda_min_descent(stats, (lo, hi), eta)
    else:
        rec = geo.lambda_for_target(stats, eta, strategy.target_delta, (lo, hi), prev_lambda)
    s = strategy.smoothing
    lam = rec.value if s == 0 else s * prev_lambda + (1.0 - s) * rec.value
    return min(hi, max(lo, lam))


def initial_lambda(strategy: SchedulerStrategy, bounds: Sequence[float]) -> float:
    if strategy.kind == "fixed":
        return strategy.fixed_lambda
    lo, hi = geo.check_bounds(bounds)
    return 0.5 * (lo + hi)


def init_student(config: TrainConfig) -> Network:
    return init_network(config.student_sizes, config.activation, subseed(config.seed, _STUDENT_INIT))


def run_training(
    config: TrainConfig,
    train: Batch,
    test: Batch,
    teacher: Network,
    student: Optional[Network] = None,
) -> TrainResult:
    """Distil ``teacher`` into a fresh (or given) student for ``config.steps`` steps."""
    student = init_student(config) if student is None else student
    batches = _batch_stream(train, config.batch_size, config.seed, _STUDENT_BATCHES)
    lam = initial_lambda(config.strategy, config.lambda_bounds)
    records: List[StepRecord] = []
    for i in range(config.steps):
        if i:
            lam = next_lambda(config.strategy, records[-1].stats, lam, config.eta, config.lambda_bounds)
        student, rec = kd_step(student, teacher, next(batches), lam, config.eta, config.temperature, i)
        records.append(rec)
    teacher_logits, _ = forward(teacher, train)
    total, ld, lc = total_loss(student, teacher_logits, train, lam, config.temperature)
    return TrainResult(student, records, total, lc, ld, accuracy(student, train), accuracy(student, test))


def verify_taylor(
    config: TrainConfig,
    eta_list: Sequence[float],
    train: Batch,
    test: Batch,
    teacher: Network,
) -> TaylorReport:
    """Mean |actual - predicted| per learning rate over identical seeded runs.

    A second-order remainder shrinks about fourfold each time eta halves.
    """
    etas = [float(e) for e in eta_list]
    if len(etas) < 2:
        raise ValueError("need at least two learning rates")
    if any(e <= 0 for e in etas) or any(x <= y for x, y in zip(etas, etas[1:])):
        raise ValueError("learning rates must be positive and strictly descending")
    residuals, actuals = [], []
    for eta in etas:
        result = run_training(replace(config, eta=eta), train, test, teacher)
        residuals.append(float(np.mean([abs(r.residual) for r in result.records])))
        actuals.append(float(np.mean([abs(r.actual_delta) for r in result.records])))
    ratios = [b / a for a, b in zip(residuals, residuals[1:])]
    return TaylorReport(etas, residuals, actuals, ratios)


def sweep_lambda(
    config: TrainConfig,
    lambda_grid: Sequence[float],
    train: Batch,
    test: Batch,
    teacher: Network,
) -> Tuple[List[SweepRow], Dict[float, List[StepRecord]]]:
    """Train one student per fixed lambda from the same init and batch stream."""
    rows: List[SweepRow] = []
    logs: Dict[float, List[StepRecord]] = {}
    for lam in lambda_grid:
        if not 0.0 < lam < 1.0:
            raise ValueError(f"grid values must lie in (0, 1), got {lam}")
        cfg = replace(config, strategy=replace(config.strategy, kind="fixed", fixed_lambda=float(lam)))
        result = run_training(cfg, train, test, teacher)
        rows.append(SweepRow(float(lam), result.final_loss_total, result.final_loss_cls, result.test_accuracy))
        logs[float(lam)] = result.records
    return rows, logs


def steps_csv(records: Sequence[StepRecord], comment: Optional[str] = None) -> str:
    return render_csv(STEP_CSV_HEADER, (r.row() for r in records), comment)


def taylor_csv(report: TaylorReport, comment: Optional[str] = None) -> str:
    return render_csv(TAYLOR_CSV_HEADER, report.rows(), comment)


def sweep_csv(rows: Sequence[SweepRow], comment: Optional[str] = None) -> str:
    return render_csv(SWEEP_CSV_HEADER, ((r.lam, r.final_loss_total, r.final_loss_cls, r.test_accuracy) for r in rows), comment)


def sweep_steps_csv(logs: Dict[float, List[StepRecord]], comment: Optional[str] = None) -> str:
    header = ("arm_lambda",) + STEP_CSV_HEADER
    rows = ((lam,) + r.row() for lam in sorted(logs) for r in logs[lam])
    return render_csv(header, rows, comment)
