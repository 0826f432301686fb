"""The 15-variable environment design space and concrete design points.

A design point serializes to a flat JSON object keyed by the snake_case
variable names below; that object is the interchange format between the
search loop, the statistical analysis, and the CLI.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigurationError

#: the three training-data mixture shares, constrained to sum to one
SHARE_NAMES = ("realistic_data", "normal_data", "uniform_data")

SIMPLEX_ATOL = 1e-9


@dataclass(frozen=True)
class FloatVar:
    low: float
    high: float


@dataclass(frozen=True)
class BoolVar:
    pass


@dataclass(frozen=True)
class IntVar:
    choices: tuple[int, ...]


@dataclass(frozen=True)
class DesignSpace:
    """Per-variable descriptors; iteration order is the declaration order."""

    variables: dict

    @classmethod
    def default(cls, multi_step: bool = False) -> "DesignSpace":
        steps = (1, 3, 5) if multi_step else (1,)
        return cls(
            variables={
                "valid_reward": FloatVar(0.0, 2.0),
                "invalid_penalty": FloatVar(0.0, 2.0),
                "invalid_objective_share": FloatVar(0.0, 1.0),
                "penalty_weight": FloatVar(0.01, 0.99),
                "diff_objective": BoolVar(),
                "normal_data": FloatVar(0.0, 1.0),
                "uniform_data": FloatVar(0.0, 1.0),
                "realistic_data": FloatVar(0.0, 1.0),
                "add_voltage_magnitude": BoolVar(),
                "add_voltage_angle": BoolVar(),
                "add_line_loading": BoolVar(),
                "add_trafo_loading": BoolVar(),
                "add_slack_power": BoolVar(),
                "steps_per_episode": IntVar(steps),
                "autoscaling": BoolVar(),
            }
        )

    def names(self) -> tuple[str, ...]:
        return tuple(self.variables)

    def sample(self, rng: np.random.Generator) -> "EnvDesign":
        values = {}
        for name, var in self.variables.items():
            if isinstance(var, FloatVar):
                values[name] = float(rng.uniform(var.low, var.high))
            elif isinstance(var, BoolVar):
                values[name] = bool(rng.integers(0, 2))
            else:
                values[name] = int(var.choices[rng.integers(0, len(var.choices))])
        design = EnvDesign(**values)
        return project_shares(design)

    def validate(self, design: "EnvDesign") -> None:
        for name, var in self.variables.items():
            value = getattr(design, name)
            if isinstance(var, FloatVar):
                if not (var.low - 1e-12 <= value <= var.high + 1e-12):
                    raise ConfigurationError(f"{name}={value} outside [{var.low}, {var.high}]")
            elif isinstance(var, BoolVar):
                if not isinstance(value, (bool, np.bool_)):
                    raise ConfigurationError(f"{name} must be boolean")
            else:
                if value not in var.choices:
                    raise ConfigurationError(f"{name}={value} not in {var.choices}")
        total = sum(getattr(design, n) for n in SHARE_NAMES)
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ConfigurationError(f"data shares sum to {total}, expected 1")


@dataclass(frozen=True)
class EnvDesign:
    valid_reward: float = 0.0
    invalid_penalty: float = 0.0
    invalid_objective_share: float = 1.0
    penalty_weight: float = 0.5
    diff_objective: bool = False
    normal_data: float = 0.0
    uniform_data: float = 0.0
    realistic_data: float = 1.0
    add_voltage_magnitude: bool = False
    add_voltage_angle: bool = False
    add_line_loading: bool = False
    add_trafo_loading: bool = False
    add_slack_power: bool = False
    steps_per_episode: int = 1
    autoscaling: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvDesign":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown design variables: {sorted(unknown)}")
        coerced = dict(doc)
        for f in fields(cls):
            if f.name in coerced:
                if f.type == "bool":
                    coerced[f.name] = bool(coerced[f.name])
                elif f.type == "int":
                    coerced[f.name] = int(coerced[f.name])
                else:
                    coerced[f.name] = float(coerced[f.name])
        return cls(**coerced)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnvDesign":
        return cls.from_dict(json.loads(text))


def project_shares(design: EnvDesign) -> EnvDesign:
    """Clip the data shares to [0, 1] and renormalize them onto the simplex.

    Designs already on the simplex pass through unchanged so that repeated
    projection is idempotent bit-for-bit.
    """
    raw = np.array([getattr(design, n) for n in SHARE_NAMES])
    if np.all(raw >= 0.0) and np.all(raw <= 1.0) and abs(raw.sum() - 1.0) <= SIMPLEX_ATOL:
        return design
    shares = np.clip(raw, 0.0, 1.0)
    total = shares.sum()
    shares = shares / total if total > 0 else np.full(3, 1.0 / 3.0)
    return replace(design, **{n: float(s) for n, s in zip(SHARE_NAMES, shares)})


def baseline_design(penalty_weight: float = 0.5) -> EnvDesign:
    """The fixed manual reference design: zero reward offsets, the full
    objective kept on invalid states, purely realistic data, minimal
    observations, 1-step episodes, autoscaled actions."""
    return EnvDesign(
        valid_reward=0.0,
        invalid_penalty=0.0,
        invalid_objective_share=1.0,
        penalty_weight=penalty_weight,
        diff_objective=False,
        normal_data=0.0,
        uniform_data=0.0,
        realistic_data=1.0,
        add_voltage_magnitude=False,
        add_voltage_angle=False,
        add_line_loading=False,
        add_trafo_loading=False,
        add_slack_power=False,
        steps_per_episode=1,
        autoscaling=True,
    )


BASELINE_PENALTY_WEIGHTS = (0.1, 0.3, 0.5, 0.7, 0.9)

#: penalty weight whose manual design scored best on the combined criterion
BEST_UTOPIA_BASELINE_WEIGHT = {"economic-dispatch": 0.5, "voltage-control": 0.1}
