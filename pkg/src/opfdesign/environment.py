"""Parameterized RL environment around a fixed benchmark problem.

The environment realizes one concrete design point: how training states are
sampled (realistic / normal / uniform mixture), what the agent observes,
how [0,1] actions map to setpoints, and how the reward trades off the
objective against the constraint penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, Splits
from .design import EnvDesign
from .errors import ConfigurationError
from .grid import (
    GridState,
    PenaltyScaling,
    PowerFlowSolution,
    evaluate_constraints,
    penalty,
)
from .problems import (
    OpfProblem,
    action_bounds,
    grid_state_from_scalers,
    initial_setpoints,
    objective,
    solve_state,
    state_from_dataset,
)

STD_FLOOR = 1e-8
MIXTURE_BRANCHES = ("realistic", "normal", "uniform")
RESAMPLE_LIMIT = 32


@dataclass(frozen=True)
class NormStats:
    """Frozen calibration-phase estimates used to scale the reward terms.

    The penalty is scaled by its standard deviation only: P = 0 has to keep
    meaning "no violation", so the penalty term is never mean-centered.
    """

    mean_j: float
    std_j: float
    mean_p: float
    std_p: float
    n_samples: int = 0
    cache_j_init: bool = True


def compute_reward(
    design: EnvDesign,
    stats: NormStats,
    j: float,
    j_init: float,
    pen: float,
    valid: bool,
) -> float:
    """Weighted sum of the adjusted objective and penalty terms.

    The objective enters relative to the initial state when Diff-Objective is
    set, is kept on invalid states only up to the invalid-objective share,
    and both terms are scaled by the calibration statistics.
    """
    j_eff = j - j_init if design.diff_objective else j
    j_norm = (j_eff - stats.mean_j) / stats.std_j
    p_norm = pen / stats.std_p
    if valid:
        j_hat = -j_norm
        p_hat = design.valid_reward
    else:
        j_hat = -design.invalid_objective_share * j_norm
        p_hat = -p_norm - design.invalid_penalty
    beta = design.penalty_weight
    return (1.0 - beta) * j_hat + beta * p_hat


def map_action(
    design: EnvDesign,
    action: np.ndarray,
    state: GridState,
    problem: OpfProblem,
) -> np.ndarray:
    """Map agent actions in [0,1]^d to setpoints.

    Autoscaling interpolates the state-dependent box; otherwise the nominal
    box is interpolated and the result clipped to the dynamic limits.  The
    two-product form keeps the endpoints a=0 / a=1 exact.
    """
    action = np.clip(np.asarray(action, dtype=float), 0.0, 1.0)
    if action.shape != (problem.action_dim,):
        raise ConfigurationError(f"action must have shape ({problem.action_dim},)")
    lo_dyn, hi_dyn = action_bounds(problem, state)
    if design.autoscaling:
        return (1.0 - action) * lo_dyn + action * hi_dyn
    lo_nom, hi_nom = action_bounds(problem, state, nominal=True)
    sp = (1.0 - action) * lo_nom + action * hi_nom
    return np.clip(sp, lo_dyn, hi_dyn)


# -- state sampling -----------------------------------------------------------


def sample_scalers(
    design: EnvDesign,
    dataset: Dataset,
    train_indices: np.ndarray,
    normal_mu: np.ndarray,
    normal_sigma: np.ndarray,
    rng: np.random.Generator,
):
    """Draw one (branch, scalers, prices) tuple from the design's mixture."""
    shares = (design.realistic_data, design.normal_data, design.uniform_data)
    u = rng.uniform()
    if u < shares[0]:
        branch = "realistic"
    elif u < shares[0] + shares[1]:
        branch = "normal"
    else:
        branch = "uniform"

    n_units = dataset.scalers.shape[1]
    if branch == "realistic":
        if len(train_indices) == 0:
            raise ConfigurationError("realistic share > 0 requires a non-empty dataset split")
        idx = int(train_indices[rng.integers(0, len(train_indices))])
        return branch, dataset.scalers[idx], dataset.price_p[idx], dataset.price_q[idx], float(dataset.price_loss[idx])
    if branch == "normal":
        scalers = np.clip(rng.normal(normal_mu, normal_sigma), 0.0, 1.0)
    else:
        scalers = rng.uniform(0.0, 1.0, n_units)
    price_p = _sample_prices(dataset.config.price_p, rng, n_units)
    price_q = _sample_prices(dataset.config.price_q, rng, n_units)
    lr = dataset.config.price_loss
    price_loss = float(rng.uniform(lr.low, lr.high)) if (lr.width() > 0 or lr.low != 0) else 0.0
    return branch, scalers, price_p, price_q, price_loss


def _sample_prices(ranges, rng, n_units):
    prices = np.zeros(n_units)
    for i in range(n_units):
        r = ranges[i] if ranges else None
        if r is not None and (r.width() > 0 or r.low != 0):
            prices[i] = rng.uniform(r.low, r.high)
    return prices


def fit_normal_params(dataset: Dataset, train_indices: np.ndarray):
    rows = dataset.scalers[train_indices]
    mu = rows.mean(axis=0)
    sigma = np.maximum(rows.std(axis=0), STD_FLOOR)
    return mu, sigma


def sample_state(
    design: EnvDesign,
    problem: OpfProblem,
    dataset: Dataset,
    train_indices: np.ndarray,
    normal_mu: np.ndarray,
    normal_sigma: np.ndarray,
    rng: np.random.Generator,
) -> tuple[str, GridState]:
    branch, scalers, price_p, price_q, price_loss = sample_scalers(
        design, dataset, train_indices, normal_mu, normal_sigma, rng
    )
    state = grid_state_from_scalers(problem, scalers, price_p, price_q, price_loss)
    return branch, state


# -- observations --------------------------------------------------------------


def observation_length(problem: OpfProblem, design: EnvDesign) -> int:
    grid = problem.grid
    n = 2 * len(problem.noncontrollable_units)
    n += len(problem.priced_p_actuators) + len(problem.priced_q_actuators)
    if problem.price_loss.width() > 0:
        n += 1
    if design.add_voltage_magnitude:
        n += grid.n_buses
    if design.add_voltage_angle:
        n += grid.n_buses
    if design.add_line_loading:
        n += len(grid.lines)
    if design.add_trafo_loading:
        n += len(grid.transformers)
    if design.add_slack_power:
        n += 2
    return n


def build_observation(
    problem: OpfProblem,
    design: EnvDesign,
    state: GridState,
    solution: PowerFlowSolution,
) -> tuple[np.ndarray, bool]:
    """Observation vector plus a flag marking zero-filled redundant blocks.

    The always-present base block holds the exogenous injections of the
    non-controllable units and the state-dependent prices of priced actuator
    axes; the optional blocks mirror the initial power-flow solution and are
    zeroed when that solve did not converge.
    """
    parts = []
    nc = problem.noncontrollable_units
    parts.append(state.p_inj[nc])
    parts.append(state.q_inj[nc])
    if problem.priced_p_actuators:
        parts.append(state.price_p[list(problem.priced_p_actuators)])
    if problem.priced_q_actuators:
        parts.append(state.price_q[list(problem.priced_q_actuators)])
    if problem.price_loss.width() > 0:
        parts.append(np.array([state.price_loss]))

    degenerate = not solution.converged
    grid = problem.grid

    def block(values, size):
        return np.zeros(size) if degenerate else np.asarray(values, dtype=float)

    if design.add_voltage_magnitude:
        parts.append(block(solution.v_mag, grid.n_buses))
    if design.add_voltage_angle:
        parts.append(block(solution.v_ang, grid.n_buses))
    if design.add_line_loading:
        parts.append(block(solution.line_loading, len(grid.lines)))
    if design.add_trafo_loading:
        parts.append(block(solution.trafo_loading, len(grid.transformers)))
    if design.add_slack_power:
        parts.append(block([solution.slack_p, solution.slack_q], 2))
    obs = np.concatenate(parts) if parts else np.zeros(0)
    return obs, degenerate


# -- environment ---------------------------------------------------------------


class OpfEnv:
    """Gym-style 1..n-step episodic environment over one benchmark problem.

    Each instance owns its RNG and episode state; run one instance per
    worker.  Validation and test episodes iterate their split
    deterministically by index.
    """

    def __init__(
        self,
        problem: OpfProblem,
        design: EnvDesign,
        dataset: Dataset,
        splits: Splits,
        norm_stats: NormStats | None = None,
        seed: int = 0,
    ):
        self.problem = problem
        self.design = design
        self.dataset = dataset
        self.splits = splits
        self.norm_stats = norm_stats or NormStats(0.0, 1.0, 0.0, 1.0)
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE13)))
        self.scaling = PenaltyScaling.from_limits(problem.limits)
        self.normal_mu, self.normal_sigma = fit_normal_params(dataset, splits.train)
        self.branch_counts = {b: 0 for b in MIXTURE_BRANCHES}
        self.resampled_nonconverged = 0
        self.baselines: dict[str, list] = {}
        self._episode_ref: tuple[str, int] | None = None
        self._state: GridState | None = None
        self._j_init: float = 0.0
        self._step_index = 0
        self._terminated = True
        self._initial_solution: PowerFlowSolution | None = None

    @property
    def action_dim(self) -> int:
        return self.problem.action_dim

    @property
    def observation_dim(self) -> int:
        return observation_length(self.problem, self.design)

    def split_indices(self, mode: str) -> np.ndarray:
        if mode == "train":
            return self.splits.train
        if mode == "validation":
            return self.splits.validation
        if mode == "test":
            return self.splits.test
        raise ConfigurationError(f"unknown mode {mode!r}")

    def attach_baseline(self, mode: str, solutions: list) -> None:
        """Aligns one reference solution per state of the given split."""
        if len(solutions) != len(self.split_indices(mode)):
            raise ConfigurationError("need one baseline solution per split state")
        self.baselines[mode] = solutions

    def reset(self, mode: str = "train", index: int | None = None) -> np.ndarray:
        if mode == "train":
            state, solution = self._sample_train_state()
            self._episode_ref = None
        else:
            indices = self.split_indices(mode)
            if index is None or not 0 <= index < len(indices):
                raise ConfigurationError(f"index {index} out of range for {mode} split")
            state = state_from_dataset(self.problem, self.dataset, int(indices[index]))
            solution = solve_state(self.problem, state, None)
            self._episode_ref = (mode, index)
        self._state = state
        self._initial_solution = solution
        self._j_init = self._initial_objective(state, solution)
        self._step_index = 0
        self._terminated = False
        obs, _ = build_observation(self.problem, self.design, state, solution)
        return obs

    def _sample_train_state(self):
        for _ in range(RESAMPLE_LIMIT):
            branch, state = sample_state(
                self.design, self.problem, self.dataset, self.splits.train,
                self.normal_mu, self.normal_sigma, self.rng,
            )
            self.branch_counts[branch] += 1
            solution = solve_state(self.problem, state, None)
            if solution.converged:
                return state, solution
            self.resampled_nonconverged += 1
        return state, solution

    def _initial_objective(self, state, solution) -> float:
        if not solution.converged:
            return 0.0
        sp = initial_setpoints(self.problem, state)
        return objective(self.problem, state, solution, sp)

    def step(self, action: np.ndarray):
        if self._terminated or self._state is None:
            raise RuntimeError("step() called on a terminated environment; call reset() first")
        state = self._state
        setpoints = map_action(self.design, action, state, self.problem)
        solution = solve_state(self.problem, state, setpoints)
        report = evaluate_constraints(solution, self.problem.limits)
        pen = penalty(report, self.scaling)
        if solution.converged:
            j = objective(self.problem, state, solution, setpoints)
        else:
            j = self._j_init  # flow-dependent objective unavailable; neutral fallback
        reward = compute_reward(self.design, self.norm_stats, j, self._j_init, pen, report.valid)
        self._step_index += 1
        self._terminated = self._step_index >= self.design.steps_per_episode
        obs, degenerate = build_observation(self.problem, self.design, state, solution)
        info = {
            "objective": j,
            "j_init": self._j_init,
            "penalty": pen,
            "valid": report.valid,
            "converged": solution.converged,
            "degenerate_obs": degenerate,
            "setpoints": setpoints,
        }
        if self._episode_ref is not None:
            mode, index = self._episode_ref
            if mode in self.baselines:
                ref = self.baselines[mode][index]
                info["j_star"] = ref.objective
                info["valid_base"] = ref.valid
        return obs, float(reward), self._terminated, info


# -- calibration ----------------------------------------------------------------


def calibrate_normalization(
    problem: OpfProblem,
    design: EnvDesign,
    dataset: Dataset,
    splits: Splits,
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
) -> NormStats:
    """Estimate reward-scaling statistics from (state, uniform action) pairs.

    The statistics are frozen for the whole training run so the reward stays
    stationary under off-policy replay.
    """
    if n_samples < 100:
        raise ConfigurationError("calibration needs at least 100 samples")
    rng = rng or np.random.default_rng(0)
    scaling = PenaltyScaling.from_limits(problem.limits)
    mu, sigma = fit_normal_params(dataset, splits.train)
    js = np.empty(n_samples)
    ps = np.empty(n_samples)
    for k in range(n_samples):
        _, state = sample_state(design, problem, dataset, splits.train, mu, sigma, rng)
        action = rng.uniform(0.0, 1.0, problem.action_dim)
        setpoints = map_action(design, action, state, problem)
        solution = solve_state(problem, state, setpoints)
        report = evaluate_constraints(solution, problem.limits)
        ps[k] = penalty(report, scaling)
        if design.diff_objective:
            init_solution = solve_state(problem, state, None)
            j_init = (
                objective(problem, state, init_solution, initial_setpoints(problem, state))
                if init_solution.converged
                else 0.0
            )
        else:
            j_init = 0.0
        if solution.converged:
            js[k] = objective(problem, state, solution, setpoints) - j_init
        else:
            js[k] = 0.0
    return NormStats(
        mean_j=float(js.mean()),
        std_j=float(max(js.std(), STD_FLOOR)),
        mean_p=float(ps.mean()),
        std_p=float(max(ps.std(), STD_FLOOR)),
        n_samples=n_samples,
    )
