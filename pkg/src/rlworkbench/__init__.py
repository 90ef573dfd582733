"""Reinforcement-learning workbench: tabular MDPs, value and policy methods, planning.

Submodules
----------
envs        tabular MDPs, counterexample environments, rollouts
dp          value iteration, policy iteration, RTDP
bandits     posteriors, UCB, Thompson sampling, exploration rules
td          Monte Carlo, TD(lambda), SARSA, Q-learning, double Q, Dyna-Q
autodiff    small reverse-mode autodiff tape
fa          parametric approximators and optimizers
deep_value  replay, target networks and DQN-family targets
policy      policy gradients, A2C, PPO, V-trace, SAC, TD3
planner     shooting, CEM, MPPI, SMC and MCTS planners, MPC loop
successor   successor representations and features, GPI
harness     experiment configs, seeded runs, IQM reports
"""
from ._kernels import BACKEND
from .envs import TabularEnv, TabularMDP, make_gridworld_1d, make_random_mdp
from .harness import ExperimentConfig, bootstrap_ci, iqm, report, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "TabularEnv",
    "TabularMDP",
    "make_gridworld_1d",
    "make_random_mdp",
    "ExperimentConfig",
    "run_experiment",
    "iqm",
    "bootstrap_ci",
    "report",
    "__version__",
]
