"""Conventional reference solver: multi-start penalized pattern search.

Provides the per-state optimum J* and validity reference that both
performance metrics are measured against.  Deterministic given the seed;
results are cacheable on disk keyed by (problem, state, seed, budget).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .grid import GridState, PenaltyScaling, evaluate_constraints, penalty
from .problems import OpfProblem, action_bounds, objective, problem_fingerprint, solve_state


@dataclass(frozen=True)
class BaselineBudget:
    n_starts: int = 16
    rho_factors: tuple[float, ...] = (0.5, 8.0, 128.0)  # penalty weights, scaled by |J|
    initial_step: float = 0.25
    min_step: float = 1.0 / 256.0
    max_evaluations: int = 8000


@dataclass(frozen=True)
class BaselineSolution:
    setpoints: tuple[float, ...]  # MW / MVAr per actuator axis
    objective: float
    valid: bool
    status: str  # "valid" | "no-valid-point-found"
    evaluations: int


def baseline_solve(
    problem: OpfProblem,
    state: GridState,
    budget: BaselineBudget | None = None,
    seed: int = 0,
) -> BaselineSolution:
    """Best setpoints found by pattern search from ``n_starts`` random points.

    Each start is refined coordinate-wise on J + rho * P for an increasing
    penalty weight rho; the best strictly valid point seen anywhere wins.
    When no evaluation was valid the least-violating point is returned with
    ``valid == False``.
    """
    budget = budget or BaselineBudget()
    lo, hi = action_bounds(problem, state)
    scaling = PenaltyScaling.from_limits(problem.limits)
    d = problem.action_dim
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBA5E)))

    evals = 0
    best_valid: tuple[float, np.ndarray] | None = None
    best_any: tuple[float, float, np.ndarray] | None = None  # (pen, J, a)
    cache: dict[bytes, tuple[float, float, bool]] = {}

    def evaluate(a: np.ndarray) -> tuple[float, float, bool]:
        nonlocal evals, best_valid, best_any
        key = a.tobytes()
        hit = cache.get(key)
        if hit is not None:
            return hit
        evals += 1
        sp = (1.0 - a) * lo + a * hi
        sol = solve_state(problem, state, sp)
        report = evaluate_constraints(sol, problem.limits)
        pen = penalty(report, scaling)
        j = objective(problem, state, sol, sp) if sol.converged else float("inf")
        valid = report.valid and sol.converged
        if valid and (best_valid is None or j < best_valid[0]):
            best_valid = (j, a.copy())
        if best_any is None or (pen, j) < (best_any[0], best_any[1]):
            best_any = (pen, j, a.copy())
        result = (j, pen, valid)
        cache[key] = result
        return result

    starts = [np.full(d, 0.5)] + [rng.uniform(0.0, 1.0, d) for _ in range(budget.n_starts - 1)]
    start_js = [evaluate(a)[0] for a in starts]
    finite = [abs(j) for j in start_js if np.isfinite(j)]
    j_scale = max(1.0, max(finite)) if finite else 1.0

    for a0 in starts:
        a = a0.copy()
        for factor in budget.rho_factors:
            rho = factor * j_scale
            a = _pattern_search(a, evaluate, rho, budget, lambda: evals, rng)
            if evals >= budget.max_evaluations:
                break
        if evals >= budget.max_evaluations:
            break

    if best_valid is not None and evals < budget.max_evaluations:
        # feasible-descent polish: coordinate moves alone stall on constraint
        # boundaries that cut diagonally through the box
        _feasible_polish(best_valid[1], evaluate, budget, rng, lambda: evals)

    if best_valid is not None:
        j, a = best_valid
        valid, status = True, "valid"
    else:
        _, j, a = best_any
        valid, status = False, "no-valid-point-found"
    sp = (1.0 - a) * lo + a * hi
    return BaselineSolution(
        setpoints=tuple(float(v) for v in sp),
        objective=float(j),
        valid=valid,
        status=status,
        evaluations=evals,
    )


def _search_directions(d: int, rng, n_random: int = 0):
    """Axis moves, paired-axis diagonals, and optional random unit vectors.

    The diagonals matter: with linear objectives the feasible descent cone
    often hugs a constraint ridge that no single-coordinate move can follow.
    """
    directions = []
    for i in range(d):
        for sign in (1.0, -1.0):
            v = np.zeros(d)
            v[i] = sign
            directions.append(v)
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    v = np.zeros(d)
                    v[i], v[j] = si, sj
                    directions.append(v / np.sqrt(2.0))
    for _ in range(n_random):
        v = rng.standard_normal(d)
        directions.append(v / np.linalg.norm(v))
    return directions


def _descend(a0, score, step0, min_step, budget, eval_count, rng, n_random=0):
    """Best-improvement pattern descent with direction momentum."""
    a = a0.copy()
    current = score(a)
    step = step0
    last_direction = None
    while step >= min_step and eval_count() < budget.max_evaluations:
        if last_direction is not None:
            candidate = np.clip(a + step * last_direction, 0.0, 1.0)
            value = score(candidate)
            if value < current:
                a, current = candidate, value
                continue
            last_direction = None
        best_value = current
        best_candidate = None
        best_direction = None
        for direction in _search_directions(len(a), rng, n_random):
            candidate = np.clip(a + step * direction, 0.0, 1.0)
            if np.array_equal(candidate, a):
                continue
            value = score(candidate)
            if value < best_value:
                best_value = value
                best_candidate = candidate
                best_direction = direction
        if best_candidate is None:
            step /= 2.0
        else:
            a, current = best_candidate, best_value
            last_direction = best_direction
    return a


def _feasible_polish(a0, evaluate, budget: BaselineBudget, rng, eval_count):
    def score(a):
        j, _, valid = evaluate(a)
        return j if valid else float("inf")

    return _descend(a0, score, budget.initial_step / 2.0, budget.min_step, budget,
                    eval_count, rng, n_random=8)


def _pattern_search(a0, evaluate, rho, budget: BaselineBudget, eval_count, rng):
    def score(a):
        j, pen, _ = evaluate(a)
        return j + rho * pen if np.isfinite(j) else float("inf")

    return _descend(a0, score, budget.initial_step, budget.min_step, budget, eval_count, rng)


# -- disk cache ---------------------------------------------------------------


def state_fingerprint(state: GridState) -> str:
    h = hashlib.sha256()
    for arr in (state.p_inj, state.q_inj, state.p_min, state.p_max, state.q_min, state.q_max,
                state.price_p, state.price_q):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    h.update(np.float64(state.price_loss).tobytes())
    return h.hexdigest()[:20]


class BaselineCache:
    """One JSON file per solved state under ``directory``."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, problem, state, seed, budget) -> Path:
        h = hashlib.sha256()
        h.update(problem_fingerprint(problem).encode())
        h.update(state_fingerprint(state).encode())
        h.update(json.dumps(asdict(budget), sort_keys=True).encode())
        h.update(str(seed).encode())
        return self.directory / f"{h.hexdigest()[:24]}.json"

    def get_or_solve(
        self,
        problem: OpfProblem,
        state: GridState,
        budget: BaselineBudget | None = None,
        seed: int = 0,
    ) -> BaselineSolution:
        budget = budget or BaselineBudget()
        path = self._path(problem, state, seed, budget)
        if path.exists():
            with open(path) as fh:
                doc = json.load(fh)
            return BaselineSolution(
                setpoints=tuple(doc["setpoints"]),
                objective=doc["objective"],
                valid=doc["valid"],
                status=doc["status"],
                evaluations=doc["evaluations"],
            )
        solution = baseline_solve(problem, state, budget, seed)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(
                {
                    "setpoints": list(solution.setpoints),
                    "objective": solution.objective,
                    "valid": solution.valid,
                    "status": solution.status,
                    "evaluations": solution.evaluations,
                },
                fh,
            )
        tmp.rename(path)
        return solution
