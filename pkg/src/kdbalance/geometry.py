"""Gradient geometry of the distillation/classification loss mix.

With unweighted gradient norms ``a = |grad L_dist|``, ``b = |grad L_cls|`` and
the cosine ``c`` of the angle between them, one SGD step with learning rate
``eta`` on ``lam * L_dist + (1 - lam) * L_cls`` changes the loss by roughly
``-eta * Q(lam)`` where

    Q(lam) = lam^2 a^2 + (1 - lam)^2 b^2 + 2 lam (1 - lam) a b c
           = A lam^2 + B lam + C,

    A = a^2 + b^2 - 2 a b c,   B = 2 (a b c - b^2),   C = b^2.

Q is the squared norm of the combined gradient, so it is non-negative and
convex in ``lam``. The controllers below pick ``lam`` inside a closed
sub-interval of (0, 1): the endpoint maximizing Q (fastest predicted
descent), the minimizer of Q (gentlest descent), or a root of
``-eta * Q(lam) = target``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

DEFAULT_BOUNDS: Tuple[float, float] = (0.05, 0.95)

STRATEGIES = ("fixed", "max_descent", "min_descent", "target_rate")


class DimensionError(ValueError):
    """Two vectors that must have equal length do not."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateStatsError(ValueError):
    """A gradient norm is zero, so the angle between the gradients is undefined."""


@dataclass(frozen=True)
class GradientStats:
    """Norms of the two unweighted loss gradients and the cosine between them."""

    dist_norm: float
    cls_norm: float
    cos_phi: float
    degenerate: bool = False

    def __post_init__(self):
        if not (self.dist_norm >= 0 and self.cls_norm >= 0):
            raise DomainError(f"gradient norms must be >= 0, got {self.dist_norm}, {self.cls_norm}")
        if not -1.0 <= self.cos_phi <= 1.0:
            raise DomainError(f"cos_phi must lie in [-1, 1], got {self.cos_phi}")
        is_degenerate = self.dist_norm == 0 or self.cls_norm == 0
        if self.degenerate != is_degenerate:
            raise DomainError("degenerate flag must be set exactly when a norm is zero")
        if is_degenerate and self.cos_phi != 0:
            raise DomainError("degenerate stats store cos_phi = 0")

    @classmethod
    def from_values(cls, a: float, b: float, cos_phi: float) -> "GradientStats":
        """Build stats from raw numbers, setting the degenerate flag automatically."""
        a, b = float(a), float(b)
        degenerate = a == 0 or b == 0
        return cls(a, b, 0.0 if degenerate else float(cos_phi), degenerate)

    @property
    def a(self) -> float:
        return self.dist_norm

    @property
    def b(self) -> float:
        return self.cls_norm

    @property
    def c(self) -> float:
        return self.cos_phi

    def swapped(self) -> "GradientStats":
        return GradientStats(self.cls_norm, self.dist_norm, self.cos_phi, self.degenerate)


@dataclass(frozen=True)
class BalanceParam:
    value: float
    bounds: Tuple[float, float] = DEFAULT_BOUNDS

    def __post_init__(self):
        lo, hi = check_bounds(self.bounds)
        if not lo <= self.value <= hi:
            raise DomainError(f"lambda={self.value} outside bounds [{lo}, {hi}]")


@dataclass(frozen=True)
class BracketCoeffs:
    """Coefficients of ``Q(lam) = a2 * lam**2 + a1 * lam + a0``."""

    a2: float
    a1: float
    a0: float

    def __call__(self, lam: float) -> float:
        return (self.a2 * lam + self.a1) * lam + self.a0

    def vertex(self) -> Optional[float]:
        """Unconstrained minimizer, or None when Q is not strictly convex."""
        if self.a2 > 0:
            return -self.a1 / (2.0 * self.a2)
        return None


@dataclass(frozen=True)
class LambdaRecommendation:
    value: float
    strategy_tag: str
    predicted_delta: float
    feasible: bool = True
    note: str = ""

    @property
    def lam(self) -> float:
        return self.value


def check_bounds(bounds: Sequence[float]) -> Tuple[float, float]:
    lo, hi = (float(v) for v in bounds)
    if not 0.0 < lo <= hi < 1.0:
        raise DomainError(f"bounds must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]")
    return lo, hi


def cosine_between(g1, g2) -> GradientStats:
    """Norms of ``g1`` and ``g2`` and the cosine of their angle.

    The cosine is clamped to [-1, 1] against rounding. When either vector is
    zero the result is flagged degenerate and ``cos_phi`` is stored as 0.
    """
    u = np.asarray(g1, dtype=np.float64).ravel()
    v = np.asarray(g2, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.size} vs {v.size}")
    if u.size == 0:
        raise DimensionError("vectors must have at least one entry")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0 or nv == 0:
        return GradientStats(nu, nv, 0.0, True)
    cos = float(np.dot(u, v)) / (nu * nv)
    return GradientStats(nu, nv, min(1.0, max(-1.0, cos)), False)


def bracket_coeffs(stats: GradientStats) -> BracketCoeffs:
    a, b, c = stats.dist_norm, stats.cls_norm, stats.cos_phi
    # (a - b)^2 + 2ab(1 - c) == a^2 + b^2 - 2abc, written so it cannot round below 0
    a2 = (a - b) ** 2 + 2.0 * a * b * (1.0 - c)
    a1 = 2.0 * b * (a * c - b)
    return BracketCoeffs(a2, a1, b * b)


def _q(stats: GradientStats, lam: float) -> float:
    # x = lam*a, y = (1-lam)*b; for c < 0 use (x - y)^2 + 2xy(1 + c) so no
    # term cancels, which keeps Q >= 0 and accurate near its minimum.
    x = lam * stats.dist_norm
    y = (1.0 - lam) * stats.cls_norm
    c = stats.cos_phi
    if c >= 0:
        return x * x + y * y + 2.0 * (x * y) * c
    return (x - y) ** 2 + 2.0 * (x * y) * (1.0 + c)


def bracket_value(stats: GradientStats, lam: float) -> float:
    """Evaluate ``Q(lam)``, the squared norm of ``lam*g_dist + (1-lam)*g_cls``."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    return _q(stats, lam)


def predicted_delta(stats: GradientStats, lam: float, eta: float) -> float:
    """First-order loss change ``-eta * Q(lam)`` of one SGD step."""
    if not eta > 0:
        raise DomainError(f"eta must be > 0, got {eta}")
    return -eta * bracket_value(stats, lam)


def vertex_value(stats: GradientStats) -> Optional[Tuple[float, float]]:
    """Unclamped vertex ``(lam_v, Q(lam_v))`` or None when A == 0.

    ``lam_v`` may fall outside [0, 1]; Q is evaluated there anyway.
    """
    coeffs = bracket_coeffs(stats)
    if coeffs.a2 <= 0:
        return None
    a, b, c = stats.dist_norm, stats.cls_norm, stats.cos_phi
    lam_v = b * (b - a * c) / coeffs.a2
    return lam_v, _q(stats, lam_v)


def _require_nondegenerate(stats: GradientStats) -> None:
    if stats.degenerate:
        raise DegenerateStatsError("zero gradient norm: angle undefined, use a fixed lambda")


def lambda_min_descent(
    stats: GradientStats, bounds: Sequence[float] = DEFAULT_BOUNDS, eta: float = 1.0
) -> LambdaRecommendation:
    """Minimize Q over ``bounds``: the gentlest predicted loss decrease."""
    _require_nondegenerate(stats)
    lo, hi = check_bounds(bounds)
    coeffs = bracket_coeffs(stats)
    note = ""
    if coeffs.a2 > 0:
        lam_v = stats.cls_norm * (stats.cls_norm - stats.dist_norm * stats.cos_phi) / coeffs.a2
        lam = min(hi, max(lo, lam_v))
    elif coeffs.a1 != 0:
        lam = hi if coeffs.a1 < 0 else lo
    else:
        lam = 0.5 * (lo + hi)
        note = "constant"
    return LambdaRecommendation(lam, "min_descent", predicted_delta(stats, lam, eta), True, note)


def lambda_max_descent(
    stats: GradientStats, bounds: Sequence[float] = DEFAULT_BOUNDS, eta: float = 1.0
) -> LambdaRecommendation:
    """Maximize Q over ``bounds``; by convexity the answer is an endpoint.

    Ties go to the upper (distillation-heavy) endpoint.
    """
    _require_nondegenerate(stats)
    lo, hi = check_bounds(bounds)
    q_lo, q_hi = _q(stats, lo), _q(stats, hi)
    lam = lo if q_lo > q_hi else hi
    note = "constant" if q_lo == q_hi else ""
    return LambdaRecommendation(lam, "max_descent", predicted_delta(stats, lam, eta), True, note)


def _branch_root(coeffs: BracketCoeffs, level: float, left: bool) -> float:
    """Root of ``Q(lam) = level`` on the decreasing (left) or increasing branch."""
    A, B, C = coeffs.a2, coeffs.a1, coeffs.a0 - level
    if A == 0:
        return -C / B
    disc = max(0.0, B * B - 4.0 * A * C)
    sq = math.sqrt(disc)
    # Stable pair: q = -(B + sign(B) sq)/2, roots q/A and C/q.
    q = -0.5 * (B + math.copysign(sq, B))
    r1 = q / A
    r2 = C / q if q != 0 else r1
    small, large = min(r1, r2), max(r1, r2)
    return small if left else large


def lambda_for_target(
    stats: GradientStats,
    eta: float,
    target_delta: float,
    bounds: Sequence[float] = DEFAULT_BOUNDS,
    prev_lambda: Optional[float] = None,
) -> LambdaRecommendation:
    """Choose ``lam`` so the predicted step change equals ``target_delta``.

    When two roots lie inside ``bounds`` the one closest to ``prev_lambda``
    wins (ties, or no previous value, pick the smaller root). An unreachable
    target returns the in-bounds ``lam`` whose prediction is closest, with
    ``feasible=False``.
    """
    if target_delta > 0:
        raise DomainError("a first-order model cannot predict a loss increase; target must be <= 0")
    if not eta > 0:
        raise DomainError(f"eta must be > 0, got {eta}")
    _require_nondegenerate(stats)
    lo, hi = check_bounds(bounds)
    level = -target_delta / eta

    low = lambda_min_descent(stats, (lo, hi), eta)
    high = lambda_max_descent(stats, (lo, hi), eta)
    q_min = _q(stats, low.value)
    if level > _q(stats, high.value):
        return LambdaRecommendation(high.value, "target_rate", high.predicted_delta, False)
    if level <= q_min:
        return LambdaRecommendation(low.value, "target_rate", low.predicted_delta, level == q_min)

    coeffs = bracket_coeffs(stats)
    lam_m = low.value
    candidates = []
    if coeffs.a2 == 0:
        candidates.append(min(hi, max(lo, _branch_root(coeffs, level, True))))
    else:
        if _q(stats, lo) >= level:
            candidates.append(min(lam_m, max(lo, _branch_root(coeffs, level, True))))
        if _q(stats, hi) >= level:
            candidates.append(min(hi, max(lam_m, _branch_root(coeffs, level, False))))
    candidates.sort()
    if prev_lambda is None or len(candidates) == 1:
        lam = candidates[0]
    else:
        lam = min(candidates, key=lambda r: (abs(r - prev_lambda), r))
    return LambdaRecommendation(lam, "target_rate", predicted_delta(stats, lam, eta), True)
