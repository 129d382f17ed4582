"""Monte-Carlo actor-critic on the nn core, with optional replayed TD updates."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..nn.layers import ModelSpec
from ..nn.model import backward_range, forward
from ..nn.optim import LrSchedule, NonFiniteError, OptimizerState, lr_at, sgd_step
from ..nn.params import ParamStore
from ..runs import TrainingRun, digest
from ..tensor import STREAM_ENV, STREAM_EVAL, STREAM_POLICY, STREAM_REPLAY, RngLike, RngStream, as_generator
from .gridworld import GridWorld, Trajectory, episodic_return
from .replay import ReplayBuffer


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.95
    policy_coef: float = 1.0
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0
    use_replay: bool = False
    replay_capacity: int = 2000
    replay_batch: int = 32
    replay_coef: float = 0.5
    eval_episodes: int = 50
    eval_greedy: bool = True
    eval_seed: int = 12345

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _heads(model: ModelSpec) -> tuple[str, str]:
    pol = [l.name for l in model.heads if l.kind == "policy_head"]
    val = [l.name for l in model.heads if l.kind == "value_head"]
    if len(pol) != 1 or len(val) != 1:
        raise ValueError("actor-critic needs exactly one policy head and one value head")
    return pol[0], val[0]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def policy_table(model: ModelSpec, params: ParamStore, env: GridWorld) -> tuple[np.ndarray, np.ndarray]:
    """Action probabilities and values for every grid cell, from one batched forward."""
    pol, val = _heads(model)
    fwd = forward(model, params, np.eye(env.n_states))
    return _softmax(fwd.outputs[pol]), fwd.outputs[val][:, 0]


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def run_episode(env: GridWorld, probs: np.ndarray, gen: np.random.Generator, greedy: bool = False,
                start_gen: np.random.Generator | None = None, limit: int | None = None) -> Trajectory:
    traj = Trajectory()
    s = env.reset(start_gen if start_gen is not None else gen)
    done = False
    while not done:
        a = int(np.argmax(probs[s])) if greedy else int(gen.choice(env.n_actions, p=probs[s]))
        s2, r, done = env.step(a)
        traj.states.append(s)
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.next_states.append(s2)
        s = s2
        if limit is not None and len(traj) >= limit:
            break
    traj.terminal = done and traj.rewards[-1] > 0
    return traj


def rl_loss(model: ModelSpec, params: ParamStore, env: GridWorld, n_episodes: int, rng: RngLike,
            greedy: bool = False) -> float:
    """Negative mean episodic return over ``n_episodes`` fresh episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    gen = as_generator(rng)
    probs, _ = policy_table(model, params, env)
    total = 0.0
    for _ in range(n_episodes):
        total += episodic_return(run_episode(env, probs, gen, greedy))
    return -total / n_episodes


def _head_grads(probs, values, actions, advantages, value_targets, cfg: AgentConfig):
    n = len(actions)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    # d/dz of -log pi(a) * A  is  (pi - onehot) * A
    dlogits = cfg.policy_coef * advantages[:, None] * (probs - onehot)
    if cfg.entropy_coef:
        logp = np.log(np.clip(probs, 1e-300, None))
        ent = -(probs * logp).sum(axis=1, keepdims=True)
        dlogits += cfg.entropy_coef * probs * (logp + ent)
    dvalue = cfg.value_coef * (values - value_targets)[:, None]
    return dlogits, dvalue


def actor_critic_update(model: ModelSpec, params: ParamStore, traj: Trajectory, cfg: AgentConfig,
                        env: GridWorld | None = None, n_states: int | None = None) -> ParamStore:
    """Gradient of  sum_t [-log pi(a_t|o_t) (R_t - V(o_t))] + value_coef * sum_t 1/2 (R_t - V(o_t))^2.

    The advantage is held constant inside the policy term; returns are
    Monte-Carlo (discounted by ``gamma``), never bootstrapped.
    """
    n_states = n_states if n_states is not None else env.n_states
    pol, val = _heads(model)
    obs = np.eye(n_states)[traj.states]
    fwd = forward(model, params, obs)
    probs = _softmax(fwd.outputs[pol])
    values = fwd.outputs[val][:, 0]
    returns = discounted_returns(traj.rewards, cfg.gamma)
    dlogits, dvalue = _head_grads(probs, values, np.asarray(traj.actions), returns - values, returns, cfg)
    grads, _ = backward_range(model, params, fwd, head_grads={pol: dlogits, val: dvalue})
    if not np.all(np.isfinite(grads.data)):
        raise NonFiniteError("non-finite actor-critic gradient")
    return grads


def replay_update(model: ModelSpec, params: ParamStore, batch: list, cfg: AgentConfig,
                  n_states: int) -> ParamStore:
    """One-step TD actor-critic on replayed transitions, averaged over the batch."""
    pol, val = _heads(model)
    s, a, r, s2, done = (np.asarray(c) for c in zip(*batch))
    eye = np.eye(n_states)
    v_next = forward(model, params, eye[s2]).outputs[val][:, 0]
    target = r + cfg.gamma * (1.0 - done) * v_next
    fwd = forward(model, params, eye[s])
    probs = _softmax(fwd.outputs[pol])
    values = fwd.outputs[val][:, 0]
    dlogits, dvalue = _head_grads(probs, values, a, target - values, target, cfg)
    scale = cfg.replay_coef / len(batch)
    grads, _ = backward_range(model, params, fwd, head_grads={pol: dlogits * scale, val: dvalue * scale})
    return grads


@dataclass
class AgentResult:
    run: TrainingRun
    params: ParamStore
    buffer: ReplayBuffer | None


def train_agent(model: ModelSpec, params: ParamStore, env: GridWorld, cfg: AgentConfig, seed: int,
                budget: int, eval_every: int, buffer: ReplayBuffer | None = None,
                trainable: np.ndarray | None = None, schedule: LrSchedule | None = None,
                stop_loss: float | None = None) -> AgentResult:
    """Train for ``budget`` environment steps, recording (env_step, -mean return) on the eval grid.

    The greedy evaluation uses a fixed episode seed, so every point on a curve
    is scored on the same start states. With ``stop_loss`` set, training ends
    at the first evaluation at or below it.
    """
    schedule = schedule or LrSchedule.constant(cfg.lr)
    start_gen = RngStream(seed, STREAM_ENV).generator()
    act_gen = RngStream(seed, STREAM_POLICY).generator()
    rep_gen = RngStream(seed, STREAM_REPLAY).generator()
    if cfg.use_replay and buffer is None:
        buffer = ReplayBuffer(cfg.replay_capacity)
    grid = list(range(0, budget, eval_every)) + [budget]
    opt = OptimizerState.zeros(params, cfg.momentum, cfg.weight_decay)
    points: list[tuple[int, float]] = []
    explore: list[dict] = []
    steps = 0

    def evaluate():
        return rl_loss(model, params, env, cfg.eval_episodes, RngStream(cfg.eval_seed, STREAM_EVAL),
                       cfg.eval_greedy)

    while steps < budget:
        probs, _ = policy_table(model, params, env)
        traj = run_episode(env, probs, act_gen, start_gen=start_gen, limit=budget - steps)
        end = steps + len(traj)
        if grid[len(points)] < end:
            loss = evaluate()
            while grid[len(points)] < end:
                points.append((grid[len(points)], loss))
            if stop_loss is not None and loss <= stop_loss:
                break
        explore.append({"step": steps, "length": len(traj), "return": episodic_return(traj),
                        "distinct_states": len(set(traj.states))})
        grads = actor_critic_update(model, params, traj, cfg, n_states=env.n_states)
        if buffer is not None:
            for t in range(len(traj)):
                last = t == len(traj) - 1
                buffer.push((traj.states[t], traj.actions[t], traj.rewards[t], traj.next_states[t],
                             float(last and env.done and traj.rewards[t] > 0)))
            if cfg.use_replay and len(buffer) >= cfg.replay_batch:
                extra = replay_update(model, params, buffer.sample(cfg.replay_batch, rep_gen), cfg, env.n_states)
                grads = grads.with_data(grads.data + extra.data)
        params, opt = sgd_step(params, grads, opt, lr_at(schedule, steps), trainable)
        steps = end
    if steps >= budget:
        points.append((budget, evaluate()))
    run = TrainingRun(points, budget, seed, digest({"agent": cfg.to_dict(), "budget": budget,
                                                     "eval_every": eval_every}), steps)
    run.params = params
    run.extras = {"exploration": explore}
    return AgentResult(run, params, buffer)


def exact_expected_return(env: GridWorld, probs: np.ndarray, start: tuple[int, int]) -> float:
    """Expected undiscounted return from ``start`` by enumerating every action sequence."""
    def go(p, t):
        if t == env.max_steps:
            return 0.0
        total = 0.0
        for a in range(env.n_actions):
            if probs[env.index(p), a] == 0.0:
                continue
            q = env.move(p, a)
            total += probs[env.index(p), a] * (1.0 if q == env.goal else go(q, t + 1))
        return total
    return go(tuple(start), 0)


def with_start(env: GridWorld, start) -> GridWorld:
    return replace(env, start=tuple(start))
