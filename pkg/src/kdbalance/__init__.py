"""First-order analysis of the distillation balancing parameter.

Closed-form loss-change prediction from gradient geometry, Monte Carlo curve
families, and a small numpy distillation lab to test both against real SGD.
"""

from .geometry import (
    BracketCoeffs,
    DegenerateStatsError,
    DimensionError,
    DomainError,
    GradientStats,
    LambdaRecommendation,
    bracket_coeffs,
    bracket_value,
    cosine_between,
    lambda_for_target,
    lambda_max_descent,
    lambda_min_descent,
    predicted_delta,
)

__version__ = "0.1.0"

__all__ = [
    "BracketCoeffs",
    "DegenerateStatsError",
    "DimensionError",
    "DomainError",
    "GradientStats",
    "LambdaRecommendation",
    "bracket_coeffs",
    "bracket_value",
    "cosine_between",
    "lambda_for_target",
    "lambda_max_descent",
    "lambda_min_descent",
    "predicted_delta",
]
