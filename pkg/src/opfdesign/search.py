"""Outer search loop: proposes environment designs with an elitist
multi-objective evolutionary sampler, runs trials (train + evaluate across
seeds), persists every record, and extracts Pareto fronts and condensed
designs.

A study lives in one directory: ``config.json`` plus an append-only
``trials.jsonl`` (one record per line).  All randomness is derived from
(study seed, trial id), so an interrupted study resumes bit-identically.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import CHECKPOINT_FRACTIONS, DdpgConfig, train
from .baseline import BaselineBudget, BaselineCache
from .data import SplitSpec, generate_timeseries, nested_split, save_dataset
from .grid import save_grid
from .design import BoolVar, DesignSpace, EnvDesign, FloatVar, IntVar, project_shares
from .environment import OpfEnv, calibrate_normalization
from .errors import ConfigurationError, TrialFailure
from .metrics import MetricPair, aggregate_checkpoints, aggregate_seeds, evaluate_policy
from .problems import ScaleConfig, make_benchmark, state_from_dataset

SBX_ETA = 15.0
MUTATION_ETA = 20.0
CROSSOVER_PROB = 0.9

_SEED_TAG_TRIAL = 0x731A1
_SEED_TAG_PROPOSAL = 0x9E0
_SEED_TAG_CALIBRATION = 0xCA1


@dataclass(frozen=True)
class StudyConfig:
    benchmark: str
    n_trials: int = 20
    seeds_per_trial: int = 2
    steps: int = 20_000
    checkpoint_fractions: tuple[float, ...] = CHECKPOINT_FRACTIONS
    study_seed: int = 0
    n_initial_random: int = 10
    n_actuators: int | None = None
    multi_step_space: bool = False
    dataset_steps: int = 4096
    dataset_noise: float = 0.08
    dataset_seed: int = 1
    train_size: int = 800
    val_size: int = 32
    split_seed: int = 0
    calibration_samples: int = 1000
    baseline_seed: int = 0
    baseline_n_starts: int = 12
    baseline_max_evaluations: int = 4000
    ddpg: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["checkpoint_fractions"] = list(self.checkpoint_fractions)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        doc = dict(doc)
        if "checkpoint_fractions" in doc:
            doc["checkpoint_fractions"] = tuple(doc["checkpoint_fractions"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(f"bad study config: {exc}") from exc

    def design_space(self) -> DesignSpace:
        return DesignSpace.default(multi_step=self.multi_step_space)

    def ddpg_config(self) -> DdpgConfig:
        try:
            return DdpgConfig(**{**{"hidden": (64, 64)}, **_tuplify(self.ddpg)})
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad DDPG overrides: {exc}") from exc

    def baseline_budget(self) -> BaselineBudget:
        return BaselineBudget(
            n_starts=self.baseline_n_starts, max_evaluations=self.baseline_max_evaluations
        )


def _tuplify(overrides: dict) -> dict:
    out = dict(overrides)
    if "hidden" in out:
        out["hidden"] = tuple(out["hidden"])
    return out


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    design: EnvDesign
    seed_metrics: tuple[MetricPair, ...]
    metrics: MetricPair | None
    metrics_std: MetricPair | None
    status: str  # "complete" | "failed"
    wall_time: float
    seeds: tuple[int, ...]
    checkpoint_fractions: tuple[float, ...]
    provenance: str = "search"
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "design": self.design.to_dict(),
            "seed_metrics": [[m.invalid_share, m.mean_error] for m in self.seed_metrics],
            "metrics": None if self.metrics is None else [self.metrics.invalid_share, self.metrics.mean_error],
            "metrics_std": None if self.metrics_std is None else [self.metrics_std.invalid_share, self.metrics_std.mean_error],
            "status": self.status,
            "wall_time": self.wall_time,
            "seeds": list(self.seeds),
            "checkpoint_fractions": list(self.checkpoint_fractions),
            "provenance": self.provenance,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrialRecord":
        def pair(v):
            return None if v is None else MetricPair(invalid_share=v[0], mean_error=v[1])

        return cls(
            trial_id=doc["trial_id"],
            design=EnvDesign.from_dict(doc["design"]),
            seed_metrics=tuple(pair(v) for v in doc["seed_metrics"]),
            metrics=pair(doc["metrics"]),
            metrics_std=pair(doc["metrics_std"]),
            status=doc["status"],
            wall_time=doc["wall_time"],
            seeds=tuple(doc["seeds"]),
            checkpoint_fractions=tuple(doc["checkpoint_fractions"]),
            provenance=doc.get("provenance", "search"),
            error=doc.get("error"),
        )

    def point(self) -> tuple[float, float] | None:
        """(invalid share, mean error) when both metrics exist, else None."""
        if self.status != "complete" or self.metrics is None or not self.metrics.is_complete():
            return None
        return (self.metrics.invalid_share, self.metrics.mean_error)


@dataclass
class Study:
    config: StudyConfig
    trials: list


class StudyStore:
    """Directory-backed persistence: config.json + append-only trials.jsonl.

    Manual-design reference runs are kept in a separate line file (default
    ``baseline.jsonl``) so the sampler never sees them.
    """

    def __init__(self, directory, trials_filename: str = "trials.jsonl"):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.trials_filename = trials_filename

    @property
    def config_path(self) -> Path:
        return self.directory / "config.json"

    @property
    def trials_path(self) -> Path:
        return self.directory / self.trials_filename

    def save_config(self, config: StudyConfig) -> None:
        self._atomic_write(self.config_path, json.dumps(config.to_dict(), indent=2))

    def load_config(self) -> StudyConfig:
        with open(self.config_path) as fh:
            return StudyConfig.from_dict(json.load(fh))

    def append_trial(self, record: TrialRecord) -> None:
        existing = self.trials_path.read_text() if self.trials_path.exists() else ""
        self._atomic_write(self.trials_path, existing + json.dumps(record.to_dict()) + "\n")

    def load_trials(self) -> list:
        if not self.trials_path.exists():
            return []
        records = []
        for line in self.trials_path.read_text().splitlines():
            if line.strip():
                records.append(TrialRecord.from_dict(json.loads(line)))
        return records

    def _atomic_write(self, path: Path, text: str) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(text)
        tmp.rename(path)


# -- multi-objective machinery --------------------------------------------------


def nondominated_sort(points) -> np.ndarray:
    """Front ranks under componentwise minimization; rank 0 is non-dominated.

    Entries that are None (failed trials or missing metrics) rank strictly
    below every complete point.
    """
    n = len(points)
    ranks = np.full(n, -1, dtype=int)
    complete = [i for i, p in enumerate(points) if p is not None]
    dominated_by = {i: [] for i in complete}
    domination_count = {i: 0 for i in complete}
    for i in complete:
        for j in complete:
            if i == j:
                continue
            if _dominates(points[i], points[j]):
                dominated_by[i].append(j)
            elif _dominates(points[j], points[i]):
                domination_count[i] += 1
    front = [i for i in complete if domination_count[i] == 0]
    rank = 0
    while front:
        next_front = []
        for i in front:
            ranks[i] = rank
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    next_front.append(j)
        front = next_front
        rank += 1
    ranks[ranks == -1] = rank
    return ranks


def _dominates(p, q) -> bool:
    return p[0] <= q[0] and p[1] <= q[1] and (p[0] < q[0] or p[1] < q[1])


def crowding_distance(points, ranks) -> np.ndarray:
    """NSGA-II crowding distance, computed per front; boundaries get inf."""
    n = len(points)
    distance = np.zeros(n)
    for rank in np.unique(ranks):
        members = [i for i in range(n) if ranks[i] == rank and points[i] is not None]
        if len(members) <= 2:
            for i in members:
                distance[i] = np.inf
            continue
        for axis in (0, 1):
            members.sort(key=lambda i: points[i][axis])
            lo = points[members[0]][axis]
            hi = points[members[-1]][axis]
            distance[members[0]] = distance[members[-1]] = np.inf
            span = hi - lo
            if span <= 0:
                continue
            for prev_i, i, next_i in zip(members, members[1:], members[2:]):
                distance[i] += (points[next_i][axis] - points[prev_i][axis]) / span
    return distance


def hypervolume_2d(points, ref) -> float:
    """Dominated area between the front and the reference point."""
    pts = sorted((x, y) for x, y in points if x < ref[0] and y < ref[1])
    front = []
    best_y = np.inf
    for x, y in pts:
        if y < best_y:
            front.append((x, y))
            best_y = y
    hv = 0.0
    for i, (x, y) in enumerate(front):
        next_x = front[i + 1][0] if i + 1 < len(front) else ref[0]
        hv += (next_x - x) * (ref[1] - y)
    return hv


def pareto_front(trials) -> list:
    """Rank-0 complete trials."""
    points = [t.point() for t in trials]
    ranks = nondominated_sort(points)
    return [t for t, r, p in zip(trials, ranks, points) if r == 0 and p is not None]


# -- proposals --------------------------------------------------------------------


def propose_design(
    space: DesignSpace,
    trials,
    trial_id: int,
    study_seed: int,
    n_initial_random: int = 10,
    mutation_prob: float | None = None,
) -> EnvDesign:
    """Uniform sampling for the first generation, then binary tournament on
    (front rank, crowding distance), SBX-style blend crossover for floats,
    uniform/bit-flip handling for the discrete variables, and a per-variable
    mutation probability of 1/n.  Data shares are re-projected after every
    operator."""
    rng = np.random.default_rng(np.random.SeedSequence((study_seed, _SEED_TAG_PROPOSAL, trial_id)))
    complete = [t for t in trials if t.point() is not None]
    if trial_id < n_initial_random or len(complete) < 2:
        return space.sample(rng)

    points = [t.point() for t in trials]
    ranks = nondominated_sort(points)
    crowding = crowding_distance(points, ranks)
    p1 = trials[_tournament(rng, ranks, crowding)]
    p2 = trials[_tournament(rng, ranks, crowding)]

    n_vars = len(space.names())
    if mutation_prob is None:
        mutation_prob = 1.0 / n_vars
    values = {}
    for name, var in space.variables.items():
        v1 = getattr(p1.design, name)
        v2 = getattr(p2.design, name)
        if isinstance(var, FloatVar):
            child = _sbx(v1, v2, var.low, var.high, rng) if rng.uniform() < CROSSOVER_PROB else v1
            if rng.uniform() < mutation_prob:
                child = _poly_mutate(child, var.low, var.high, rng)
            values[name] = float(min(max(child, var.low), var.high))
        elif isinstance(var, IntVar):
            child = v1 if rng.uniform() < 0.5 else v2
            if rng.uniform() < mutation_prob:
                child = int(var.choices[rng.integers(0, len(var.choices))])
            values[name] = int(child)
        else:
            child = v1 if rng.uniform() < 0.5 else v2
            if rng.uniform() < mutation_prob:
                child = not child
            values[name] = bool(child)
    return project_shares(EnvDesign(**values))


def _tournament(rng, ranks, crowding) -> int:
    i, j = rng.integers(0, len(ranks), 2)
    if ranks[i] != ranks[j]:
        return i if ranks[i] < ranks[j] else j
    if crowding[i] != crowding[j]:
        return i if crowding[i] > crowding[j] else j
    return min(i, j)


def _sbx(x1: float, x2: float, lo: float, hi: float, rng, eta: float = SBX_ETA) -> float:
    if abs(x1 - x2) < 1e-14:
        return x1
    u = rng.uniform()
    if u <= 0.5:
        beta = (2.0 * u) ** (1.0 / (eta + 1.0))
    else:
        beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0))
    child = 0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)
    if rng.uniform() < 0.5:
        child = 0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)
    return min(max(child, lo), hi)


def _poly_mutate(x: float, lo: float, hi: float, rng, eta: float = MUTATION_ETA) -> float:
    span = hi - lo
    if span <= 0:
        return x
    u = rng.uniform()
    if u < 0.5:
        delta = (2.0 * u) ** (1.0 / (eta + 1.0)) - 1.0
    else:
        delta = 1.0 - (2.0 * (1.0 - u)) ** (1.0 / (eta + 1.0))
    return min(max(x + delta * span, lo), hi)


# -- trial execution ---------------------------------------------------------------


def trial_seed(study_seed: int, trial_id: int, seed_index: int) -> int:
    ss = np.random.SeedSequence((study_seed, _SEED_TAG_TRIAL, trial_id, seed_index))
    return int(ss.generate_state(1)[0])


@dataclass
class StudyContext:
    """Shared per-study assets: problem, dataset, splits, warmed baselines."""

    config: StudyConfig
    problem: object
    dataset: object
    splits: object
    baselines: dict  # mode -> list[BaselineSolution]

    @classmethod
    def build(cls, config: StudyConfig, store_dir, modes=("validation",)) -> "StudyContext":
        problem = make_benchmark(config.benchmark, ScaleConfig(n_actuators=config.n_actuators))
        dataset = generate_timeseries(
            problem.dataset_config(n_steps=config.dataset_steps, noise=config.dataset_noise),
            seed=config.dataset_seed,
        )
        splits = nested_split(
            dataset,
            SplitSpec(
                train_size=config.train_size, val_size=config.val_size, split_seed=config.split_seed
            ),
        )
        store_dir = Path(store_dir)
        grid_path = store_dir / "grid.json"
        if not grid_path.exists():
            store_dir.mkdir(parents=True, exist_ok=True)
            save_grid(grid_path, problem.grid, problem.limits)
        if not (store_dir / "dataset" / "dataset.json").exists():
            save_dataset(store_dir / "dataset", dataset)
        cache = BaselineCache(store_dir / "baseline_cache")
        budget = config.baseline_budget()
        baselines = {}
        for mode in modes:
            indices = getattr(splits, mode)
            baselines[mode] = [
                cache.get_or_solve(
                    problem,
                    state_from_dataset(problem, dataset, int(i)),
                    budget,
                    seed=config.baseline_seed,
                )
                for i in indices
            ]
        return cls(config=config, problem=problem, dataset=dataset, splits=splits, baselines=baselines)


def run_seed(ctx: StudyContext, design: EnvDesign, norm_stats, seed: int, eval_mode="validation"):
    """One training run plus checkpoint evaluations; returns a MetricPair."""
    config = ctx.config
    env = OpfEnv(ctx.problem, design, ctx.dataset, ctx.splits, norm_stats, seed=seed)
    env.attach_baseline(eval_mode, ctx.baselines[eval_mode])
    result = train(env, config.ddpg_config(), config.steps, seed, config.checkpoint_fractions)
    reports = [evaluate_policy(policy, env, eval_mode) for _, policy in result.checkpoints]
    return aggregate_checkpoints(reports)


def _run_seed_subprocess(config_doc, design_doc, store_dir, seed, trial_id, eval_mode):
    config = StudyConfig.from_dict(config_doc)
    ctx = StudyContext.build(config, store_dir, modes=(eval_mode,))
    design = EnvDesign.from_dict(design_doc)
    stats = _trial_norm_stats(ctx, design, trial_id)
    return run_seed(ctx, design, stats, seed, eval_mode)


def _trial_norm_stats(ctx: StudyContext, design: EnvDesign, trial_id: int):
    rng = np.random.default_rng(
        np.random.SeedSequence((ctx.config.study_seed, _SEED_TAG_CALIBRATION, trial_id))
    )
    return calibrate_normalization(
        ctx.problem, design, ctx.dataset, ctx.splits,
        n_samples=ctx.config.calibration_samples, rng=rng,
    )


def run_trial(
    ctx: StudyContext,
    design: EnvDesign,
    trial_id: int,
    store_dir=None,
    workers: int = 1,
    provenance: str = "search",
    eval_mode: str = "validation",
) -> TrialRecord:
    config = ctx.config
    t0 = time.perf_counter()
    seeds = tuple(trial_seed(config.study_seed, trial_id, k) for k in range(config.seeds_per_trial))
    seed_metrics = []
    errors = []
    if workers > 1 and store_dir is not None and config.seeds_per_trial > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    _run_seed_subprocess, config.to_dict(), design.to_dict(), str(store_dir),
                    s, trial_id, eval_mode,
                )
                for s in seeds
            ]
            for fut in futures:
                try:
                    seed_metrics.append(fut.result())
                except TrialFailure as exc:
                    errors.append(str(exc))
    else:
        stats = _trial_norm_stats(ctx, design, trial_id)
        for s in seeds:
            try:
                seed_metrics.append(run_seed(ctx, design, stats, s, eval_mode))
            except TrialFailure as exc:
                errors.append(str(exc))

    if seed_metrics:
        mean, std = aggregate_seeds(seed_metrics)
        status = "complete"
    else:
        mean = std = None
        status = "failed"
    return TrialRecord(
        trial_id=trial_id,
        design=design,
        seed_metrics=tuple(seed_metrics),
        metrics=mean,
        metrics_std=std,
        status=status,
        wall_time=time.perf_counter() - t0,
        seeds=seeds,
        checkpoint_fractions=tuple(config.checkpoint_fractions),
        provenance=provenance,
        error="; ".join(errors) if errors else None,
    )


def run_study(config: StudyConfig, store_dir, workers: int = 1, progress=None) -> Study:
    """Budget-bounded propose -> run -> persist loop; resumable.

    When the store already holds trials from the same config, the loop
    continues after the last persisted record and reproduces exactly what an
    uninterrupted run would have produced.
    """
    store = StudyStore(store_dir)
    if store.config_path.exists():
        persisted = store.load_config()
        if persisted != config:
            raise ConfigurationError("store already holds a study with a different config")
    else:
        store.save_config(config)
    space = config.design_space()
    ctx = StudyContext.build(config, store_dir)
    trials = store.load_trials()
    for trial_id in range(len(trials), config.n_trials):
        design = propose_design(space, trials, trial_id, config.study_seed, config.n_initial_random)
        space.validate(design)
        record = run_trial(ctx, design, trial_id, store_dir=store_dir, workers=workers)
        store.append_trial(record)
        trials.append(record)
        if progress is not None:
            progress(record)
    return Study(config=config, trials=trials)


# -- criterion scores and design extraction -----------------------------------------


def trial_scores(trials, criterion: str) -> np.ndarray:
    """Lower-is-better score per trial under a split criterion.

    Incomplete trials and missing mean errors score +inf (ranked worst).
    """
    n = len(trials)
    scores = np.full(n, np.inf)
    if criterion == "validity":
        for i, t in enumerate(trials):
            if t.status == "complete" and t.metrics is not None:
                scores[i] = t.metrics.invalid_share
    elif criterion == "optimization":
        for i, t in enumerate(trials):
            if t.status == "complete" and t.metrics is not None and t.metrics.mean_error is not None:
                scores[i] = t.metrics.mean_error
    elif criterion == "utopia":
        shares = [t.metrics.invalid_share for t in trials if t.point() is not None]
        errors = [t.metrics.mean_error for t in trials if t.point() is not None]
        if shares:
            s_lo, s_hi = min(shares), max(shares)
            e_lo, e_hi = min(errors), max(errors)
            for i, t in enumerate(trials):
                if t.point() is None:
                    continue
                s_norm = (t.metrics.invalid_share - s_lo) / (s_hi - s_lo) if s_hi > s_lo else 0.0
                e_norm = (t.metrics.mean_error - e_lo) / (e_hi - e_lo) if e_hi > e_lo else 0.0
                scores[i] = s_norm + e_norm
    elif criterion == "pareto":
        ranks = nondominated_sort([t.point() for t in trials])
        scores = ranks.astype(float)
    else:
        raise ConfigurationError(f"unknown criterion {criterion!r}")
    return scores


def extract_design(trials, space: DesignSpace, criterion: str = "utopia", k: int = 5,
                   tie_breaker: EnvDesign | None = None) -> EnvDesign:
    """Condense the top-k trials into one design: componentwise mean for the
    continuous variables (shares re-normalized), most frequent value for the
    discrete ones, ties broken toward the reference design."""
    complete = [t for t in trials if t.point() is not None]
    if not complete:
        raise ConfigurationError("no complete trials to extract a design from")
    scores = trial_scores(complete, criterion)
    order = sorted(range(len(complete)), key=lambda i: (scores[i], complete[i].trial_id))
    top = [complete[i] for i in order[: max(1, k)]]
    if tie_breaker is None:
        from .design import baseline_design

        tie_breaker = baseline_design()
    values = {}
    for name, var in space.variables.items():
        entries = [getattr(t.design, name) for t in top]
        if isinstance(var, FloatVar):
            # identical inputs extract verbatim (no float-mean round-off)
            values[name] = entries[0] if all(e == entries[0] for e in entries) else float(np.mean(entries))
        else:
            counts = {}
            for v in entries:
                counts[v] = counts.get(v, 0) + 1
            best_count = max(counts.values())
            candidates = sorted(v for v, c in counts.items() if c == best_count)
            ref = getattr(tie_breaker, name)
            chosen = ref if ref in candidates else candidates[0]
            values[name] = bool(chosen) if isinstance(var, BoolVar) else int(chosen)
    design = project_shares(EnvDesign(**values))
    space.validate(design)
    return design
