import numpy as np
import pytest

from opfdesign.agent import (
    DdpgAgent,
    DdpgConfig,
    ObsNormalizer,
    ReplayBuffer,
    TrainedPolicy,
    train,
)
from opfdesign.errors import TrialFailure
from opfdesign.nets import Adam, Mlp, gradient
from opfdesign.stats import chi_squared_gof


class BanditEnv:
    """1-step task with closed-form optimum: reward = -||a - target||^2."""

    def __init__(self, target=(0.25, 0.75), obs_dim=2):
        self.target = np.asarray(target, dtype=float)
        self.action_dim = len(self.target)
        self.observation_dim = obs_dim
        self._obs = np.linspace(0.1, 0.9, obs_dim)

    def reset(self, mode="train", index=None):
        return self._obs.copy()

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float), 0.0, 1.0)
        reward = -float(np.sum((a - self.target) ** 2))
        return self._obs.copy(), reward, True, {}


# -- mlp forward/backward -----------------------------------------------------


def test_zero_weight_network_outputs_bias():
    mlp = Mlp((3, 4, 2), "identity", rng=np.random.default_rng(0))
    for w in mlp.weights:
        w[:] = 0.0
    mlp.biases[-1][:] = [1.5, -2.0]
    out = mlp.forward(np.array([7.0, -3.0, 2.0]))
    assert np.allclose(out, [1.5, -2.0])


def test_single_linear_layer_identity():
    mlp = Mlp((3, 3), "identity", rng=np.random.default_rng(0))
    mlp.weights[0][:] = np.eye(3)
    mlp.biases[0][:] = 0.0
    x = np.array([0.3, -1.2, 4.0])
    assert np.allclose(mlp.forward(x), x)


def test_outputs_finite_on_bounded_inputs():
    rng = np.random.default_rng(1)
    mlp = Mlp((5, 32, 32, 3), "tanh", rng=rng)
    x = rng.uniform(-10, 10, (100, 5))
    assert np.all(np.isfinite(mlp.forward(x)))


def finite_difference_grads(mlp, x, upstream, h=1e-5):
    grads = []
    for p in mlp.parameters():
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(np.sum(upstream * mlp.forward(x)))
            flat[i] = orig - h
            down = float(np.sum(upstream * mlp.forward(x)))
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.max(np.abs(a - b) / denom)


@pytest.mark.parametrize(
    "sizes,activation",
    [((3, 8, 2), "tanh"), ((5, 8, 8, 1), "identity"), ((4, 16, 16, 3), "tanh")],
)
def test_gradient_matches_finite_differences(sizes, activation):
    rng = np.random.default_rng(42)
    mlp = Mlp(sizes, activation, dtype=np.float64, rng=rng)
    x = rng.uniform(-1, 1, (4, sizes[0]))
    upstream = rng.standard_normal((4, sizes[-1]))
    analytic = gradient(mlp, x, upstream)
    numeric = finite_difference_grads(mlp, x, upstream)
    for a, n in zip(analytic, numeric):
        assert relative_error(a, n) <= 1e-4


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(3)
    mlp = Mlp((4, 8, 2), "tanh", rng=rng)
    grads = gradient(mlp, rng.uniform(-1, 1, (5, 4)), np.zeros((5, 2)))
    for g in grads:
        assert np.all(g == 0.0)


def test_gradient_linear_in_upstream():
    rng = np.random.default_rng(4)
    mlp = Mlp((4, 8, 2), "identity", dtype=np.float64, rng=rng)
    x = rng.uniform(-1, 1, (5, 4))
    upstream = rng.standard_normal((5, 2))
    g1 = gradient(mlp, x, upstream)
    g2 = gradient(mlp, x, 2.0 * upstream)
    for a, b in zip(g1, g2):
        assert np.allclose(2.0 * a, b)


def test_adam_reduces_quadratic():
    p = np.array([5.0, -3.0])
    opt = Adam([p], lr=0.1)
    for _ in range(500):
        opt.step([p], [2.0 * p])
    assert np.all(np.abs(p) < 1e-2)


# -- replay buffer and targets --------------------------------------------------


def test_replay_buffer_ring_and_uniform_sampling():
    buf = ReplayBuffer(1000, 2, 1)
    for i in range(1500):
        buf.add([i, i], [0.5], float(i), [i, i], 1.0)
    assert buf.size == 1000
    rng = np.random.default_rng(0)
    counts = np.zeros(1000)
    n_draws = 50_000
    for _ in range(n_draws // 100):
        _, _, rewards, _, _ = buf.sample(100, rng)
        idx = (rewards - 500).astype(int)
        counts += np.bincount(idx, minlength=1000)
    result = chi_squared_gof(counts, np.full(1000, n_draws / 1000))
    assert result.p_value >= 0.01


def test_tau_one_copies_online_to_target():
    config = DdpgConfig(tau=1.0, hidden=(8,), batch_size=4, start_train=1)
    agent = DdpgAgent(3, 2, config, np.random.default_rng(0))
    for p in agent.actor.parameters():
        p += 0.5
    agent._soft_update(agent.target_actor, agent.actor)
    for pt, p in zip(agent.target_actor.parameters(), agent.actor.parameters()):
        assert np.array_equal(pt, p)


def test_target_distance_decays_geometrically():
    config = DdpgConfig(tau=0.1, hidden=(8,))
    agent = DdpgAgent(3, 2, config, np.random.default_rng(1))
    for p in agent.actor.parameters():
        p += 1.0
    dist = []
    for _ in range(5):
        agent._soft_update(agent.target_actor, agent.actor)
        dist.append(
            max(
                np.max(np.abs(pt - p))
                for pt, p in zip(agent.target_actor.parameters(), agent.actor.parameters())
            )
        )
    for d0, d1 in zip(dist, dist[1:]):
        assert d1 == pytest.approx((1 - config.tau) * d0, rel=1e-5)


def test_gamma_zero_target_equals_reward():
    config = DdpgConfig(gamma=0.0, hidden=(8,), batch_size=8, start_train=1, dtype="float64")
    agent = DdpgAgent(2, 1, config, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    batch = (
        rng.uniform(0, 1, (8, 2)),
        rng.uniform(0, 1, (8, 1)),
        rng.uniform(-1, 1, 8),
        rng.uniform(0, 1, (8, 2)),
        np.zeros(8),
    )
    diag = agent.update(batch)
    assert diag["target_minus_reward_max"] == 0.0
    config2 = DdpgConfig(gamma=0.9, hidden=(8,), batch_size=8, start_train=1, dtype="float64")
    agent2 = DdpgAgent(2, 1, config2, np.random.default_rng(2))
    diag2 = agent2.update(batch)
    assert diag2["target_minus_reward_max"] > 0.0


# -- acting ----------------------------------------------------------------------


def test_act_noise_zero_deterministic():
    agent = DdpgAgent(3, 2, DdpgConfig(hidden=(8,)), np.random.default_rng(5))
    obs = np.array([0.1, 0.2, 0.3])
    a1 = agent.act(obs, noise_std=0.0)
    a2 = agent.act(obs, noise_std=0.0)
    assert np.array_equal(a1, a2)
    assert np.all(a1 >= 0.0) and np.all(a1 <= 1.0)


def test_act_clamps_under_extreme_noise():
    agent = DdpgAgent(3, 2, DdpgConfig(hidden=(8,)), np.random.default_rng(6))
    obs = np.zeros(3)
    actions = np.stack([agent.act(obs, noise_std=50.0) for _ in range(100)])
    assert np.all(actions >= 0.0) and np.all(actions <= 1.0)
    assert np.any(actions == 0.0) and np.any(actions == 1.0)


def test_two_seeds_different_exploration():
    a1 = DdpgAgent(3, 2, DdpgConfig(hidden=(8,)), np.random.default_rng(7)).act(np.zeros(3), 0.1)
    a2 = DdpgAgent(3, 2, DdpgConfig(hidden=(8,)), np.random.default_rng(8)).act(np.zeros(3), 0.1)
    assert not np.array_equal(a1, a2)


# -- training loop ----------------------------------------------------------------


def small_config(**overrides):
    defaults = dict(hidden=(16, 16), batch_size=32, start_train=100, noise_std=0.1)
    defaults.update(overrides)
    return DdpgConfig(**defaults)


def test_train_same_seed_bit_identical():
    r1 = train(BanditEnv(), small_config(), steps=400, seed=11)
    r2 = train(BanditEnv(), small_config(), steps=400, seed=11)
    for (f1, p1), (f2, p2) in zip(r1.checkpoints, r2.checkpoints):
        assert f1 == f2
        for a, b in zip(p1.actor.parameters(), p2.actor.parameters()):
            assert np.array_equal(a, b)
    r3 = train(BanditEnv(), small_config(), steps=400, seed=12)
    assert not all(
        np.array_equal(a, b)
        for a, b in zip(r1.final.actor.parameters(), r3.final.actor.parameters())
    )


def test_train_without_reaching_start_train_keeps_initial_policy():
    result = train(BanditEnv(), small_config(start_train=1000), steps=200, seed=3)
    assert result.updates == 0
    fresh = DdpgAgent(2, 2, small_config(start_train=1000), np.random.default_rng(np.random.SeedSequence((3, 0xDD9))))
    for a, b in zip(result.final.actor.parameters(), fresh.actor.parameters()):
        assert np.array_equal(a, b)


def test_train_checkpoints_at_requested_fractions():
    result = train(BanditEnv(), small_config(), steps=800, seed=5)
    fractions = [f for f, _ in result.checkpoints]
    assert fractions == [0.625, 0.75, 0.875, 1.0]
    assert [p.steps for _, p in result.checkpoints] == [500, 600, 700, 800]


def test_bandit_converges_to_closed_form_optimum():
    env = BanditEnv(target=(0.25, 0.75))
    result = train(env, DdpgConfig(hidden=(64, 64), batch_size=256, start_train=500), steps=5000, seed=1)
    action = result.final.act(env.reset())
    err = np.linalg.norm(action - env.target)
    assert err < 0.05


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises_trial_failure():
    config = small_config(start_train=1, batch_size=4, actor_lr=1e30, critic_lr=1e30)
    with pytest.raises(TrialFailure):
        train(BanditEnv(), config, steps=2000, seed=9)


# -- checkpoint files ---------------------------------------------------------------


def test_training_beats_random_policy_on_voltage_control():
    """Desk learning check: after 20k steps the agent's mean objective gap to
    the reference solver is at most half the gap of a random policy."""
    from opfdesign.baseline import BaselineBudget, baseline_solve
    from opfdesign.data import SplitSpec, generate_timeseries, nested_split
    from opfdesign.design import baseline_design
    from opfdesign.environment import OpfEnv, calibrate_normalization
    from opfdesign.metrics import evaluate_policy
    from opfdesign.problems import make_benchmark, state_from_dataset

    problem = make_benchmark("voltage-control")
    dataset = generate_timeseries(problem.dataset_config(n_steps=2048), seed=4)
    splits = nested_split(dataset, SplitSpec(train_size=700, val_size=24, split_seed=2))
    design = baseline_design(0.1)
    stats = calibrate_normalization(problem, design, dataset, splits, 500, np.random.default_rng(0))
    env = OpfEnv(problem, design, dataset, splits, stats, seed=5)
    budget = BaselineBudget(n_starts=8, max_evaluations=2500)
    env.attach_baseline("validation", [
        baseline_solve(problem, state_from_dataset(problem, dataset, int(i)), budget, seed=0)
        for i in splits.validation
    ])

    class RandomPolicy:
        def __init__(self, seed):
            self.rng = np.random.default_rng(seed)

        def act(self, obs):
            return self.rng.uniform(0.0, 1.0, env.action_dim)

    random_report = evaluate_policy(RandomPolicy(3), env, "validation")
    result = train(env, DdpgConfig(), steps=20_000, seed=5)
    trained_report = evaluate_policy(result.final, env, "validation")
    assert random_report.metrics.mean_error is not None
    assert trained_report.metrics.mean_error is not None
    assert trained_report.metrics.mean_error <= 0.5 * random_report.metrics.mean_error, (
        f"trained gap {trained_report.metrics.mean_error} vs random "
        f"{random_report.metrics.mean_error}"
    )


def test_policy_checkpoint_round_trip_bit_exact(tmp_path):
    result = train(BanditEnv(), small_config(), steps=300, seed=21)
    policy = result.final
    path = tmp_path / "policy.json"
    policy.save(path)
    restored = TrainedPolicy.load(path)
    for a, b in zip(policy.actor.parameters(), restored.actor.parameters()):
        assert np.array_equal(a, b)
    assert np.array_equal(policy.normalizer.mean, restored.normalizer.mean)
    obs = np.random.default_rng(0).uniform(0, 1, 2)
    assert np.array_equal(policy.act(obs), restored.act(obs))
    restored.save(tmp_path / "again.json")
    assert (tmp_path / "policy.json").read_text() == (tmp_path / "again.json").read_text()
