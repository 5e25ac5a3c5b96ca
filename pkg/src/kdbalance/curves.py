"""Monte Carlo families of Q(lam) curves for acute and obtuse gradient pairs.

Each trial draws two gradient magnitudes uniformly from ``[mag_lo, mag_hi]``
and an angle uniformly inside its regime, then sweeps Q over a uniform
``lam`` grid on [0, 1].

Random numbers come from numpy's PCG64 bit generator. Trial ``t`` of regime
``r`` is seeded by ``SeedSequence(seed, spawn_key=(REGIMES.index(r), t))``, so
each trial is reproducible on its own and the table does not depend on the
order in which trials are evaluated. PCG64 and SeedSequence give the same
stream on every platform numpy supports.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .geometry import GradientStats, bracket_value, vertex_value

REGIMES = ("acute", "obtuse", "full")

# Open angle intervals in radians; the endpoints are never returned.
_ANGLE_RANGES = {
    "acute": (0.0, math.pi / 2),
    "obtuse": (math.pi / 2, math.pi),
    "full": (0.0, math.pi),
}

CSV_HEADER = ("trial_id", "regime", "a", "b", "cos_phi", "lambda", "q_value")


@dataclass(frozen=True)
class TrialSpec:
    mag_lo: float = 1e-5
    mag_hi: float = 1e-1
    angle_regime: str = "acute"
    n_trials: int = 1000
    lambda_grid_size: int = 101
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mag_lo < self.mag_hi:
            raise ValueError(f"need 0 < mag_lo < mag_hi, got {self.mag_lo}, {self.mag_hi}")
        if self.angle_regime not in REGIMES:
            raise ValueError(f"angle_regime must be one of {REGIMES}, got {self.angle_regime!r}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.lambda_grid_size < 2:
            raise ValueError("lambda_grid_size must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class CurvePoint:
    trial_id: int
    regime: str
    lam: float
    q_value: float
    a: float
    b: float
    cos_phi: float


def trial_rng(seed: int, regime: str, trial_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(REGIMES.index(regime), trial_id))
    return np.random.Generator(np.random.PCG64(ss))


def _open_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    while True:
        x = lo + (hi - lo) * rng.random()
        if lo < x < hi:
            return x


def sample_trial(spec: TrialSpec, rng: np.random.Generator) -> GradientStats:
    """Draw one (a, b, cos phi) triple for ``spec.angle_regime``."""
    a = spec.mag_lo + (spec.mag_hi - spec.mag_lo) * rng.random()
    b = spec.mag_lo + (spec.mag_hi - spec.mag_lo) * rng.random()
    lo, hi = _ANGLE_RANGES[spec.angle_regime]
    while True:
        cos_phi = math.cos(_open_uniform(rng, lo, hi))
        # keep the regimes strictly apart even where cos rounds onto 0 or -1
        if spec.angle_regime == "acute" and 0.0 < cos_phi < 1.0:
            break
        if spec.angle_regime == "obtuse" and -1.0 < cos_phi < 0.0:
            break
        if spec.angle_regime == "full" and -1.0 < cos_phi < 1.0:
            break
    return GradientStats(a, b, cos_phi)


def lambda_grid(grid_size: int) -> List[float]:
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    return [k / (grid_size - 1) for k in range(grid_size)]


def sweep_curve(stats: GradientStats, grid_size: int, trial_id: int = 0, regime: str = "full") -> List[CurvePoint]:
    return [
        CurvePoint(trial_id, regime, lam, bracket_value(stats, lam), stats.a, stats.b, stats.cos_phi)
        for lam in lambda_grid(grid_size)
    ]


def run_simulation(spec: TrialSpec) -> List[CurvePoint]:
    """All curve points for ``spec``, trial-major and lambda-minor."""
    points: List[CurvePoint] = []
    for t in range(spec.n_trials):
        stats = sample_trial(spec, trial_rng(spec.seed, spec.angle_regime, t))
        points.extend(sweep_curve(stats, spec.lambda_grid_size, t, spec.angle_regime))
    return points


def run_regimes(spec: TrialSpec, regimes: Iterable[str]) -> List[CurvePoint]:
    points: List[CurvePoint] = []
    for regime in regimes:
        points.extend(run_simulation(replace(spec, angle_regime=regime)))
    return points


def group_trials(points: Sequence[CurvePoint]) -> Dict[tuple, List[CurvePoint]]:
    """Group points into per-trial curves keyed by ``(regime, trial_id)``."""
    curves: Dict[tuple, List[CurvePoint]] = {}
    for p in points:
        curves.setdefault((p.regime, p.trial_id), []).append(p)
    return curves


def regime_summary(points: Sequence[CurvePoint]) -> Dict[str, Dict[str, float]]:
    """Per regime: trial count, min and mean Q, and mean Q_min / Q(0.5).

    Q_min is the closed-form minimum over [0, 1]; Q(0.5) is evaluated
    directly so the ratio does not depend on the grid containing 0.5.
    """
    out: Dict[str, Dict[str, float]] = {}
    by_regime: Dict[str, list] = {}
    for (regime, _), curve in group_trials(points).items():
        by_regime.setdefault(regime, []).append(curve)
    for regime, curves in by_regime.items():
        qs = np.array([p.q_value for c in curves for p in c])
        ratios = []
        for curve in curves:
            s = GradientStats(curve[0].a, curve[0].b, curve[0].cos_phi)
            ratios.append(min_over_unit_interval(s) / bracket_value(s, 0.5))
        out[regime] = {
            "trials": float(len(curves)),
            "q_min": float(qs.min()),
            "q_mean": float(qs.mean()),
            "normalized_min_mean": float(np.mean(ratios)),
        }
    return out


def min_over_unit_interval(stats: GradientStats) -> float:
    """Minimum of Q over the closed interval [0, 1]."""
    ends = min(bracket_value(stats, 0.0), bracket_value(stats, 1.0))
    v = vertex_value(stats)
    if v is not None and 0.0 <= v[0] <= 1.0:
        return min(v[1], ends)
    return ends


def to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in points:
        w.writerow((p.trial_id, p.regime, repr(p.a), repr(p.b), repr(p.cos_phi), repr(p.lam), repr(p.q_value)))
    return buf.getvalue()
