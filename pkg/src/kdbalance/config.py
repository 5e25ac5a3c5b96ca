"""JSON experiment configuration.

Every key is optional; missing keys take the defaults below and unknown keys
are rejected. ``normalize`` fills defaults and returns plain JSON types, and
normalizing an already normalized document returns it unchanged.

    {
      "seed": 0,
      "data":     {"kind": "gaussian_blobs", "n_classes": 3, "n_train": 600,
                   "n_test": 300, "noise": 0.1},
      "train":    {"eta": 0.1, "steps": 300, "batch_size": 64,
                   "lambda_bounds": [0.05, 0.95], "temperature": 1.0,
                   "teacher_sizes": [2, 32, 3], "student_sizes": [2, 8, 3],
                   "activation": "tanh", "teacher_eta": 0.5, "teacher_steps": 200,
                   "strategy": {"kind": "fixed", "fixed_lambda": 0.5,
                                "target_delta": -0.001, "smoothing": 0.0}},
      "simulate": {"mag_lo": 1e-05, "mag_hi": 0.1, "regimes": ["acute", "obtuse"],
                   "n_trials": 1000, "lambda_grid_size": 101},
      "taylor":   {"etas": [0.01, 0.005, 0.0025], "steps": 20},
      "sweep":    {"grid": [0.1, 0.3, 0.5, 0.7, 0.9]}
    }

The single top-level seed feeds every section.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Tuple

from .curves import REGIMES, TrialSpec
from .datasets import DatasetSpec
from .distill import SchedulerStrategy, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimulateSection:
    mag_lo: float = 1e-5
    mag_hi: float = 1e-1
    regimes: Tuple[str, ...] = ("acute", "obtuse")
    n_trials: int = 1000
    lambda_grid_size: int = 101

    def __post_init__(self):
        bad = [r for r in self.regimes if r not in REGIMES]
        if bad or not self.regimes:
            raise ValueError(f"regimes must be a non-empty subset of {REGIMES}")

    def trial_spec(self, seed: int, regime: str) -> TrialSpec:
        return TrialSpec(self.mag_lo, self.mag_hi, regime, self.n_trials, self.lambda_grid_size, seed)


@dataclass(frozen=True)
class TaylorSection:
    etas: Tuple[float, ...] = (1e-2, 5e-3, 2.5e-3)
    steps: int = 20


@dataclass(frozen=True)
class SweepSection:
    grid: Tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)


# DatasetSpec and TrainConfig carry a seed field; it comes from the top level.
_SECTIONS = {
    "data": DatasetSpec,
    "train": TrainConfig,
    "simulate": SimulateSection,
    "taylor": TaylorSection,
    "sweep": SweepSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    taylor: TaylorSection = field(default_factory=TaylorSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"seed": self.seed}
        for name in _SECTIONS:
            d = _plain(asdict(getattr(self, name)))
            d.pop("seed", None)
            out[name] = d
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _coerce(default, value, path: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
        if ok:
            if not value:
                return ()
            proto = default[0] if default else value[0]
            value = tuple(_coerce(proto, v, f"{path}[{i}]") for i, v in enumerate(value))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")
    return value


def _build(cls, raw, path: str, seed=None):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    defaults = cls()
    known = {f.name for f in fields(cls)} - {"seed"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in raw.items():
        default = getattr(defaults, name)
        if name == "strategy":
            kwargs[name] = _build(SchedulerStrategy, value, f"{path}.strategy")
        else:
            kwargs[name] = _coerce(default, value, f"{path}.{name}")
    if seed is not None and "seed" in {f.name for f in fields(cls)}:
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(raw) - {"seed", *_SECTIONS})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed: expected an integer in [0, 2**64)")
    sections = {name: _build(cls, raw.get(name, {}), name, seed) for name, cls in _SECTIONS.items()}
    return ExperimentConfig(seed=seed, **sections)


def normalize(raw: Dict[str, Any]) -> Dict[str, Any]:
    return from_dict(raw).to_dict()


def load(path) -> Dict[str, Any]:
    """Raw (un-normalized) config dict from a JSON file."""
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively overlay ``overrides`` on ``base``."""
    out = dict(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
