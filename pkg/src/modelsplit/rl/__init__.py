from .agent import (AgentConfig, AgentResult, actor_critic_update, exact_expected_return, policy_table, replay_update,
                    rl_loss, run_episode, train_agent)
from .gridworld import EpisodeOver, GridWorld, Trajectory, env_reset, env_step, episodic_return
from .replay import ReplayBuffer
