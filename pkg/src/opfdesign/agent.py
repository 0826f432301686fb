"""Self-contained DDPG learner: actor/critic MLPs, replay buffer, target
networks, Gaussian exploration noise, and the training loop with
checkpoint snapshots."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .environment import OpfEnv
from .errors import TrialFailure
from .nets import Adam, Mlp

POLICY_FORMAT_VERSION = 1

CHECKPOINT_FRACTIONS = (0.625, 0.75, 0.875, 1.0)


@dataclass(frozen=True)
class DdpgConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 5e-4
    batch_size: int = 256
    gamma: float = 0.9
    memory_size: int = 1_000_000
    noise_std: float = 0.1
    start_train: int = 2000
    tau: float = 0.001
    hidden: tuple[int, ...] = (64, 64)
    dtype: str = "float32"

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        for name in ("actor_lr", "critic_lr", "batch_size", "memory_size", "start_train"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def paper(cls, **overrides) -> "DdpgConfig":
        return cls(hidden=(256, 256, 256), **overrides)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, dtype=np.float32):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.rewards = np.zeros(capacity, dtype=dtype)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.terminated = np.zeros(capacity, dtype=dtype)
        self.size = 0
        self._cursor = 0

    def add(self, obs, action, reward, next_obs, terminated) -> None:
        i = self._cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminated[i] = terminated
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, batch_size)
        return (
            self.obs[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx],
            self.terminated[idx],
        )


@dataclass
class ObsNormalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, observations: np.ndarray) -> "ObsNormalizer":
        obs = np.asarray(observations, dtype=np.float64)
        return cls(mean=obs.mean(axis=0), std=np.maximum(obs.std(axis=0), 1e-6))

    @classmethod
    def identity(cls, dim: int) -> "ObsNormalizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return (obs - self.mean) / self.std


class DdpgAgent:
    def __init__(self, obs_dim: int, action_dim: int, config: DdpgConfig, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.config = config
        dtype = config.np_dtype
        self.actor = Mlp((obs_dim, *config.hidden, action_dim), "tanh", dtype, rng)
        self.critic = Mlp((obs_dim + action_dim, *config.hidden, 1), "identity", dtype, rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor.parameters(), config.actor_lr)
        self.critic_opt = Adam(self.critic.parameters(), config.critic_lr)
        self.noise_rng = rng

    def act(self, obs: np.ndarray, noise_std: float = 0.0) -> np.ndarray:
        out = self.actor.forward(obs)
        action = (out + 1.0) / 2.0
        if noise_std > 0.0:
            action = action + noise_std * self.noise_rng.standard_normal(self.action_dim)
        return np.clip(action, 0.0, 1.0)

    def update(self, batch) -> dict:
        obs, actions, rewards, next_obs, terminated = batch
        dtype = self.config.np_dtype
        obs = obs.astype(dtype, copy=False)
        actions = actions.astype(dtype, copy=False)
        n = len(obs)

        next_a = (self.target_actor.forward(next_obs.astype(dtype, copy=False)) + 1.0) / 2.0
        q_next = self.target_critic.forward(np.concatenate([next_obs, next_a], axis=1).astype(dtype)).ravel()
        y = rewards.astype(dtype) + self.config.gamma * (1.0 - terminated.astype(dtype)) * q_next

        q, cache = self.critic.forward_cache(np.concatenate([obs, actions], axis=1))
        td = q.ravel() - y
        critic_loss = float(np.mean(td**2))
        upstream = (2.0 * td / n)[:, None].astype(dtype)
        critic_grads, _ = self.critic.backward(cache, upstream)
        self.critic_opt.step(self.critic.parameters(), critic_grads)

        a_pred, actor_cache = self.actor.forward_cache(obs)
        a01 = (a_pred + 1.0) / 2.0
        q_actor, q_cache = self.critic.forward_cache(np.concatenate([obs, a01], axis=1))
        actor_loss = float(-np.mean(q_actor))
        dq = np.full((n, 1), -1.0 / n, dtype=dtype)
        _, dinput = self.critic.backward(q_cache, dq)
        d_action = dinput[:, self.obs_dim :] * 0.5  # chain through a = (tanh + 1) / 2
        actor_grads, _ = self.actor.backward(actor_cache, d_action)
        self.actor_opt.step(self.actor.parameters(), actor_grads)

        self._soft_update(self.target_actor, self.actor)
        self._soft_update(self.target_critic, self.critic)

        if not (np.isfinite(critic_loss) and np.isfinite(actor_loss)):
            raise TrialFailure(f"non-finite loss (critic={critic_loss}, actor={actor_loss})")
        return {
            "critic_loss": critic_loss,
            "actor_loss": actor_loss,
            "target_minus_reward_max": float(np.max(np.abs(y - rewards))),
        }

    def _soft_update(self, target: Mlp, online: Mlp) -> None:
        tau = self.config.tau
        for pt, p in zip(target.parameters(), online.parameters()):
            pt *= 1.0 - tau
            pt += tau * p


@dataclass
class TrainedPolicy:
    """Frozen deterministic policy: actor snapshot plus observation scaling."""

    actor: Mlp
    normalizer: ObsNormalizer
    steps: int
    seed: int

    def act(self, obs: np.ndarray) -> np.ndarray:
        out = self.actor.forward(self.normalizer(np.asarray(obs, dtype=float)))
        return np.clip((out + 1.0) / 2.0, 0.0, 1.0)

    def save(self, path) -> None:
        doc = {
            "format_version": POLICY_FORMAT_VERSION,
            "sizes": list(self.actor.sizes),
            "output_activation": self.actor.output_activation,
            "dtype": "float32" if self.actor.dtype == np.float32 else "float64",
            "parameters": [p.astype(np.float64).tolist() for p in self.actor.parameters()],
            "normalizer": {"mean": self.normalizer.mean.tolist(), "std": self.normalizer.std.tolist()},
            "steps": self.steps,
            "seed": self.seed,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "TrainedPolicy":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format_version") != POLICY_FORMAT_VERSION:
            raise ValueError(f"unsupported policy format {doc.get('format_version')!r}")
        dtype = np.float32 if doc["dtype"] == "float32" else np.float64
        actor = Mlp(doc["sizes"], doc["output_activation"], dtype)
        actor.set_parameters([np.asarray(p) for p in doc["parameters"]])
        normalizer = ObsNormalizer(
            mean=np.asarray(doc["normalizer"]["mean"]),
            std=np.asarray(doc["normalizer"]["std"]),
        )
        return cls(actor=actor, normalizer=normalizer, steps=doc["steps"], seed=doc["seed"])


@dataclass
class TrainResult:
    checkpoints: list  # [(fraction, TrainedPolicy)]
    final: TrainedPolicy
    updates: int
    wall_time: float
    diagnostics: dict = field(default_factory=dict)


N_NORMALIZER_SAMPLES = 128


def fit_observation_normalizer(env, n_samples: int = N_NORMALIZER_SAMPLES) -> ObsNormalizer:
    observations = np.stack([env.reset("train") for _ in range(n_samples)])
    return ObsNormalizer.fit(observations)


def train(
    env,
    config: DdpgConfig,
    steps: int,
    seed: int,
    checkpoint_fractions: tuple[float, ...] = CHECKPOINT_FRACTIONS,
) -> TrainResult:
    """Run the full interaction/update loop on an environment.

    Fully reproducible from (env state, config, steps, seed): network
    initialization, exploration, and replay sampling all derive from the
    seed.  Snapshots are taken at the given fractions of ``steps``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDD9)))
    normalizer = fit_observation_normalizer(env)
    agent = DdpgAgent(env.observation_dim, env.action_dim, config, rng)
    capacity = min(config.memory_size, max(steps, 1))
    buffer = ReplayBuffer(capacity, env.observation_dim, env.action_dim, dtype=config.np_dtype)

    checkpoint_steps = {max(1, int(round(f * steps))): f for f in sorted(checkpoint_fractions)}
    checkpoints = []
    updates = 0
    obs = normalizer(env.reset("train"))
    for t in range(steps):
        if t < config.start_train:
            action = rng.uniform(0.0, 1.0, env.action_dim)
        else:
            action = agent.act(obs, config.noise_std)
        raw_next, reward, terminated, _ = env.step(action)
        next_obs = normalizer(raw_next)
        buffer.add(obs, action, reward, next_obs, float(terminated))
        obs = normalizer(env.reset("train")) if terminated else next_obs
        if buffer.size >= config.start_train:
            agent.update(buffer.sample(config.batch_size, rng))
            updates += 1
        done_steps = t + 1
        if done_steps in checkpoint_steps:
            policy = TrainedPolicy(
                actor=agent.actor.copy(), normalizer=normalizer, steps=done_steps, seed=seed
            )
            checkpoints.append((checkpoint_steps[done_steps], policy))

    if not checkpoints or checkpoints[-1][1].steps != steps:
        checkpoints.append((1.0, TrainedPolicy(agent.actor.copy(), normalizer, steps, seed)))
    final = checkpoints[-1][1]
    diagnostics = {}
    if isinstance(env, OpfEnv):
        diagnostics["resampled_nonconverged"] = env.resampled_nonconverged
        diagnostics["branch_counts"] = dict(env.branch_counts)
    return TrainResult(
        checkpoints=checkpoints,
        final=final,
        updates=updates,
        wall_time=time.perf_counter() - t0,
        diagnostics=diagnostics,
    )
