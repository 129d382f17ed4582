import math

import numpy as np
import pytest

from conftest import fd_gradient, rel_error
from modelsplit.nn import ParamStore, forward, init_params
from modelsplit.nn import zoo
from modelsplit.rl import (AgentConfig, EpisodeOver, GridWorld, ReplayBuffer, Trajectory, actor_critic_update,
                           env_reset, env_step, episodic_return, exact_expected_return, policy_table, rl_loss)
from modelsplit.rl.agent import with_start
from modelsplit.tensor import STREAM_INIT, RngStream

RIGHT, DOWN = 1, 2


# ---- environment -----------------------------------------------------------------

def test_step_into_goal_rewards_and_ends():
    env = GridWorld(3, 3, goal=(2, 2), obstacles=frozenset(), start=(2, 1))
    env_reset(env, RngStream(0))
    obs, r, done = env_step(env, DOWN)
    assert r == 1.0 and done and obs[env.index((2, 2))] == 1.0


def test_truncation_after_k_steps():
    env = GridWorld(3, 3, goal=(2, 2), obstacles=frozenset(), start=(0, 0), max_steps=4)
    env_reset(env, RngStream(0))
    rewards = []
    for _ in range(4):
        _, r, done = env_step(env, 0)  # up into the wall
        rewards.append(r)
    assert done and episodic_return(rewards) == 0
    with pytest.raises(EpisodeOver):
        env_step(env, 0)


def test_same_seed_same_episode():
    def play(seed):
        env = GridWorld()
        out = [env.index(env.pos) if env_reset(env, RngStream(seed)) is not None else None]
        for a in [1, 2, 1, 2, 3, 0]:
            if env.done:
                break
            out.append(env_step(env, a)[1:])
        return out
    assert play(4) == play(4)


def test_invalid_action_and_layout():
    env = GridWorld()
    env_reset(env, RngStream(0))
    with pytest.raises(ValueError):
        env_step(env, 4)
    with pytest.raises(ValueError):
        GridWorld(3, 3, goal=(1, 1), obstacles=frozenset({(1, 1)}))


@pytest.mark.parametrize("rewards,g", [([0, 0, 1], 1), ([], 0), ([-1, 2, 0.5], 1.5)])
def test_episodic_return(rewards, g):
    assert episodic_return(rewards) == g
    assert episodic_return(Trajectory(rewards=list(rewards), actions=[0] * len(rewards))) == g


# ---- rl_loss ---------------------------------------------------------------------

def _net(env, hidden=(4,)):
    return zoo.gridworld_net(env.n_states, 4, hidden)


def test_always_reaching_policy_has_loss_minus_one():
    env = GridWorld(2, 1, goal=(1, 0), obstacles=frozenset(), start=(0, 0))
    m = _net(env)
    p = ParamStore.for_model(m)
    p.tensors(m, "policy")["b"][...] = [0.0, 60.0, 0.0, 0.0]
    assert rl_loss(m, p, env, 20, RngStream(1)) == -1.0


def test_unreachable_goal_has_loss_zero():
    env = GridWorld(3, 3, goal=(2, 2), obstacles=frozenset({(1, 2), (2, 1)}), max_steps=10)
    m = _net(env)
    assert rl_loss(m, ParamStore.for_model(m), env, 50, RngStream(2)) == 0.0


def test_monte_carlo_loss_matches_exhaustive_expectation():
    env = GridWorld(3, 3, goal=(2, 2), obstacles=frozenset({(1, 1)}), max_steps=5)
    m = _net(env, (8,))
    p = init_params(m, RngStream(3, STREAM_INIT))
    probs, _ = policy_table(m, p, env)
    for start in [(0, 0), (2, 0)]:
        exact = exact_expected_return(env, probs, start)
        n = 4000
        est = -rl_loss(m, p, with_start(env, start), n, RngStream(4))
        se = math.sqrt(max(exact * (1 - exact), 1e-12) / n)
        assert abs(est - exact) < 3 * se


# ---- actor-critic gradients ---------------------------------------------------------

def test_zero_advantage_gives_zero_policy_gradient():
    env = GridWorld(2, 1, goal=(1, 0), obstacles=frozenset(), start=(0, 0))
    m = _net(env)
    p = init_params(m, RngStream(5, STREAM_INIT))
    p.tensors(m, "value")["w"][...] = 0.0
    p.tensors(m, "value")["b"][...] = 1.0
    traj = Trajectory(states=[0], actions=[RIGHT], rewards=[1.0], next_states=[1], terminal=True)
    g = actor_critic_update(m, p, traj, AgentConfig(entropy_coef=0.0), n_states=env.n_states)
    assert np.linalg.norm(g.segment("policy")) < 1e-8


def test_bandit_policy_gradient_by_hand():
    m = zoo.gridworld_net(1, 2, ())
    p = ParamStore.for_model(m)
    z = [0.2, -0.3]
    p.tensors(m, "policy")["b"][...] = z
    traj = Trajectory(states=[0], actions=[1], rewards=[1.0], next_states=[0], terminal=True)
    g = actor_critic_update(m, p, traj, AgentConfig(entropy_coef=0.0), n_states=1)
    pi1 = math.exp(z[1]) / (math.exp(z[0]) + math.exp(z[1]))
    # V = 0 so the advantage is 1; d(-log pi_1)/dz = pi - e_1
    expect = [1 - pi1, pi1 - 1]
    gb = g.tensors(m, "policy")["b"]
    np.testing.assert_allclose(gb, expect, rtol=0, atol=1e-15)
    np.testing.assert_allclose(g.tensors(m, "policy")["w"][0], expect, rtol=0, atol=1e-15)


def test_value_gradient_matches_finite_differences():
    env = GridWorld(3, 3, goal=(2, 2), obstacles=frozenset())
    m = _net(env, (5,))
    p = init_params(m, RngStream(6, STREAM_INIT))
    traj = Trajectory(states=[0, 1, 4, 5], actions=[1, 2, 1, 2], rewards=[0, 0, 0, 1.0], next_states=[1, 4, 5, 8])
    cfg = AgentConfig(entropy_coef=0.0, policy_coef=0.0, value_coef=0.5, gamma=0.9)
    returns = np.array([0.9 ** 3, 0.9 ** 2, 0.9, 1.0])
    obs = np.eye(env.n_states)[traj.states]

    def objective():
        v = forward(m, p, obs).outputs["value"][:, 0]
        return cfg.value_coef * 0.5 * float(np.sum((returns - v) ** 2))

    g = actor_critic_update(m, p, traj, cfg, n_states=env.n_states)
    assert rel_error(g.data, fd_gradient(objective, p.data)).max() < 1e-6


# ---- replay buffer ---------------------------------------------------------------------

def test_fifo_eviction():
    b = ReplayBuffer(3)
    for i in range(4):
        b.push(i)
    assert len(b) == 3 and b.items() == [1, 2, 3]


def test_reset_empties():
    b = ReplayBuffer(3)
    b.push(1)
    b.reset()
    assert len(b) == 0


def test_seeded_sample_deterministic():
    b = ReplayBuffer(10)
    for i in range(5):
        b.push(i)
    s1, s2 = b.sample(2, RngStream(7)), b.sample(2, RngStream(7))
    assert s1 == s2 and len(set(s1)) == 2


def test_sampling_too_many_fails():
    b = ReplayBuffer(4)
    b.push(0)
    with pytest.raises(ValueError):
        b.sample(2, RngStream(0))
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_copy_is_independent():
    b = ReplayBuffer(2)
    b.push(1)
    c = b.copy()
    c.push(2)
    assert len(b) == 1 and len(c) == 2


def test_training_stops_at_target_loss():
    from modelsplit.rl import train_agent
    env = GridWorld(2, 1, goal=(1, 0), obstacles=frozenset(), start=(0, 0))
    m = _net(env)
    p = ParamStore.for_model(m)
    p.tensors(m, "policy")["b"][...] = [0.0, 60.0, 0.0, 0.0]
    res = train_agent(m, p, env, AgentConfig(eval_episodes=3), 0, budget=1000, eval_every=10, stop_loss=-1.0)
    assert res.run.points == [(0, -1.0)] and res.run.committed == 0
