"""The two minimized performance metrics, measured against the baseline
solver: the invalid share (relative constraint-satisfaction to the reference)
and the mean objective error over mutually valid states."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricPair:
    """invalid_share is bounded above by 1; mean_error is None when no state
    was valid for both the agent and the baseline."""

    invalid_share: float
    mean_error: float | None

    def is_complete(self) -> bool:
        return (
            math.isfinite(self.invalid_share)
            and self.mean_error is not None
            and math.isfinite(self.mean_error)
        )

    def as_tuple(self):
        return (self.invalid_share, self.mean_error)


@dataclass(frozen=True)
class StateRecord:
    index: int
    objective: float
    objective_base: float
    valid_rl: bool
    valid_base: bool


@dataclass(frozen=True)
class EvalReport:
    records: tuple[StateRecord, ...]
    n_valid_rl: int
    n_valid_base: int
    metrics: MetricPair
    degenerate_baseline: bool = False

    def to_dict(self) -> dict:
        return {
            "n_valid_rl": self.n_valid_rl,
            "n_valid_base": self.n_valid_base,
            "invalid_share": self.metrics.invalid_share,
            "mean_error": self.metrics.mean_error,
            "degenerate_baseline": self.degenerate_baseline,
            "records": [
                {
                    "index": r.index,
                    "objective": r.objective,
                    "objective_base": r.objective_base,
                    "valid_rl": r.valid_rl,
                    "valid_base": r.valid_base,
                }
                for r in self.records
            ],
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "objective", "objective_base", "valid_rl", "valid_base"])
            for r in self.records:
                writer.writerow([r.index, f"{r.objective:.10g}", f"{r.objective_base:.10g}",
                                 int(r.valid_rl), int(r.valid_base)])


def report_from_records(records) -> EvalReport:
    """Compute both metrics from per-state outcomes.

    The invalid share compares valid-solution counts against the baseline;
    the mean error averages the objective gap over states where both the
    agent and the baseline are valid (the gap to a failed reference is
    undefined).  A baseline with zero valid states cannot anchor the share
    and is flagged as degenerate.
    """
    records = tuple(records)
    n_valid_rl = sum(r.valid_rl for r in records)
    n_valid_base = sum(r.valid_base for r in records)
    if n_valid_base == 0:
        return EvalReport(
            records=records,
            n_valid_rl=n_valid_rl,
            n_valid_base=0,
            metrics=MetricPair(invalid_share=math.nan, mean_error=None),
            degenerate_baseline=True,
        )
    invalid_share = 1.0 - n_valid_rl / n_valid_base
    gaps = [r.objective - r.objective_base for r in records if r.valid_rl and r.valid_base]
    mean_error = float(np.mean(gaps)) if gaps else None
    return EvalReport(
        records=records,
        n_valid_rl=n_valid_rl,
        n_valid_base=n_valid_base,
        metrics=MetricPair(invalid_share=float(invalid_share), mean_error=mean_error),
    )


def evaluate_policy(policy, env, mode: str = "validation") -> EvalReport:
    """Deterministic (noise-free) rollout of the policy over a full split.

    Uses the raw problem objective from the environment's info dict, never
    the shaped reward.  Requires a baseline attached to the environment for
    the given mode.
    """
    if mode not in env.baselines:
        raise ValueError(f"no baseline solutions attached for mode {mode!r}")
    baseline = env.baselines[mode]
    records = []
    for i in range(len(env.split_indices(mode))):
        obs = env.reset(mode, i)
        terminated = False
        while not terminated:
            obs, _, terminated, info = env.step(policy.act(obs))
        records.append(
            StateRecord(
                index=i,
                objective=info["objective"],
                objective_base=baseline[i].objective,
                valid_rl=bool(info["valid"]),
                valid_base=bool(baseline[i].valid),
            )
        )
    return report_from_records(records)


def aggregate_checkpoints(reports) -> MetricPair:
    """Arithmetic mean of both metrics across checkpoint evaluations.

    The mean error averages over the checkpoints where it exists; it stays
    missing only if it is missing everywhere.
    """
    shares = [r.metrics.invalid_share for r in reports]
    errors = [r.metrics.mean_error for r in reports if r.metrics.mean_error is not None]
    return MetricPair(
        invalid_share=float(np.mean(shares)),
        mean_error=float(np.mean(errors)) if errors else None,
    )


def aggregate_seeds(pairs) -> tuple[MetricPair, MetricPair]:
    """Mean and standard deviation per metric across seeds."""
    pairs = list(pairs)
    shares = np.array([p.invalid_share for p in pairs])
    errors = [p.mean_error for p in pairs if p.mean_error is not None]
    mean = MetricPair(
        invalid_share=float(np.mean(shares)),
        mean_error=float(np.mean(errors)) if errors else None,
    )
    std = MetricPair(
        invalid_share=float(np.std(shares)),
        mean_error=float(np.std(errors)) if errors else None,
    )
    return mean, std
