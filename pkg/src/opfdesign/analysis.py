"""Splits study trials into high/low performers under four criteria and
tests every design variable for a statistically significant association with
the high-performing group."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .design import BoolVar, DesignSpace, FloatVar, IntVar
from .errors import ConfigurationError
from .search import nondominated_sort, trial_scores
from .stats import chi_squared_test, fisher_combine, welch_t_test

CRITERIA = ("pareto", "validity", "optimization", "utopia")

ALPHA = 0.05

COMBINED = "combined"


@dataclass(frozen=True)
class SplitCriterion:
    kind: str
    top_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in CRITERIA:
            raise ConfigurationError(f"unknown split criterion {self.kind!r}")
        if not 0.0 < self.top_fraction < 1.0:
            raise ConfigurationError("top_fraction must be in (0, 1)")


def split_trials(trials, criterion: SplitCriterion):
    """(top group, rest group) over the complete trials.

    Pareto splits non-dominated vs dominated; the other criteria put the
    best ``top_fraction`` (ties broken by trial id) into the top group.
    """
    complete = [t for t in trials if t.point() is not None]
    if criterion.kind == "pareto":
        ranks = nondominated_sort([t.point() for t in complete])
        top = [t for t, r in zip(complete, ranks) if r == 0]
        rest = [t for t, r in zip(complete, ranks) if r > 0]
        return top, rest
    scores = trial_scores(complete, criterion.kind)
    order = sorted(range(len(complete)), key=lambda i: (scores[i], complete[i].trial_id))
    n_top = max(1, int(len(complete) * criterion.top_fraction)) if complete else 0
    top = [complete[i] for i in order[:n_top]]
    rest = [complete[i] for i in order[n_top:]]
    return top, rest


@dataclass(frozen=True)
class SignificanceEntry:
    environment: str
    variable: str
    criterion: str
    test: str  # "welch" | "chi-squared" | "fisher" | "untestable"
    p_value: float | None
    significant: bool | None
    top_stat: object = None  # top-group mean (floats) or dominant value (discrete)
    rest_stat: object = None
    degenerate: bool = False


@dataclass
class SignificanceReport:
    entries: list
    alpha: float = ALPHA
    note: str = "per-test p-values; no multiple-testing correction applied"

    def lookup(self, environment: str, variable: str, criterion: str) -> SignificanceEntry:
        for e in self.entries:
            if (e.environment, e.variable, e.criterion) == (environment, variable, criterion):
                return e
        raise KeyError((environment, variable, criterion))

    def significant_entries(self):
        return [e for e in self.entries if e.significant]

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "note": self.note, "entries": [asdict(e) for e in self.entries]}

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["environment", "variable", "criterion", "test", "p_value", "significant",
                 "top_stat", "rest_stat", "degenerate"]
            )
            for e in self.entries:
                writer.writerow(
                    [e.environment, e.variable, e.criterion, e.test,
                     "" if e.p_value is None else f"{e.p_value:.6g}",
                     "" if e.significant is None else int(e.significant),
                     e.top_stat, e.rest_stat, int(e.degenerate)]
                )


def _variable_test(space: DesignSpace, name, top, rest):
    """(test name, StatTest | None, top_stat, rest_stat) for one variable."""
    var = space.variables[name]
    top_values = [getattr(t.design, name) for t in top]
    rest_values = [getattr(t.design, name) for t in rest]
    if len(top_values) < 2 or len(rest_values) < 2:
        return "untestable", None, _summary(var, top_values), _summary(var, rest_values)
    if isinstance(var, FloatVar):
        result = welch_t_test(top_values, rest_values)
        return "welch", result, _summary(var, top_values), _summary(var, rest_values)
    if isinstance(var, IntVar) and len(var.choices) < 2:
        return "untestable", None, _summary(var, top_values), _summary(var, rest_values)
    choices = (False, True) if isinstance(var, BoolVar) else tuple(var.choices)
    table = np.array(
        [[sum(v == c for v in top_values) for c in choices],
         [sum(v == c for v in rest_values) for c in choices]]
    )
    result = chi_squared_test(table)
    return "chi-squared", result, _summary(var, top_values), _summary(var, rest_values)


def _summary(var, values):
    if not values:
        return None
    if isinstance(var, FloatVar):
        return float(np.mean(values))
    counts = {}
    for v in values:
        key = bool(v) if isinstance(var, BoolVar) else int(v)
        counts[key] = counts.get(key, 0) + 1
    return max(sorted(counts), key=lambda k: counts[k])


def significance_report(
    studies,
    space: DesignSpace | None = None,
    criteria=None,
    alpha: float = ALPHA,
) -> SignificanceReport:
    """Per (environment, variable, criterion) hypothesis tests.

    ``studies`` maps a study name to its trial list.  With several studies, a
    combined analysis is added: pooled top/rest groups for the top-fraction
    criteria, and Fisher-combined per-study p-values for the Pareto
    criterion (so environments with larger fronts do not dominate).
    """
    space = space or DesignSpace.default()
    if criteria is None:
        criteria = [SplitCriterion(kind) for kind in CRITERIA]
    entries = []
    splits = {}
    for env_name, trials in studies.items():
        for criterion in criteria:
            top, rest = split_trials(trials, criterion)
            splits[(env_name, criterion.kind)] = (top, rest)
            for name in space.names():
                test, result, top_stat, rest_stat = _variable_test(space, name, top, rest)
                entries.append(
                    SignificanceEntry(
                        environment=env_name,
                        variable=name,
                        criterion=criterion.kind,
                        test=test,
                        p_value=None if result is None else result.p_value,
                        significant=None if result is None else bool(result.p_value < alpha),
                        top_stat=top_stat,
                        rest_stat=rest_stat,
                        degenerate=bool(result.degenerate) if result is not None else False,
                    )
                )
    if len(studies) > 1:
        entries.extend(_combined_entries(studies, space, criteria, splits, alpha))
    return SignificanceReport(entries=entries, alpha=alpha)


def _combined_entries(studies, space, criteria, splits, alpha):
    entries = []
    for criterion in criteria:
        for name in space.names():
            if criterion.kind == "pareto":
                per_env = []
                for env_name in studies:
                    top, rest = splits[(env_name, criterion.kind)]
                    test, result, _, _ = _variable_test(space, name, top, rest)
                    if result is not None:
                        per_env.append(result.p_value)
                if per_env:
                    combined = fisher_combine(per_env)
                    entries.append(
                        SignificanceEntry(
                            environment=COMBINED,
                            variable=name,
                            criterion=criterion.kind,
                            test="fisher",
                            p_value=combined.p_value,
                            significant=bool(combined.p_value < alpha),
                        )
                    )
                else:
                    entries.append(
                        SignificanceEntry(COMBINED, name, criterion.kind, "untestable", None, None)
                    )
            else:
                top = [t for env_name in studies for t in splits[(env_name, criterion.kind)][0]]
                rest = [t for env_name in studies for t in splits[(env_name, criterion.kind)][1]]
                test, result, top_stat, rest_stat = _variable_test(space, name, top, rest)
                entries.append(
                    SignificanceEntry(
                        environment=COMBINED,
                        variable=name,
                        criterion=criterion.kind,
                        test=test,
                        p_value=None if result is None else result.p_value,
                        significant=None if result is None else bool(result.p_value < alpha),
                        top_stat=top_stat,
                        rest_stat=rest_stat,
                        degenerate=bool(result.degenerate) if result is not None else False,
                    )
                )
    return entries
