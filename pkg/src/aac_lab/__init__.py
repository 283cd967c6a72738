"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: aac_lab
Description: Automatic Actor-Critic lab - population-based online tuning of
             actor-critic hyperparameters, with SAC-family baselines
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Train a population of SAC-style learners whose hyperparameters
    (actor updates a, critic updates c, entropy coefficient h, action
    persistence k, discount exponent g) evolve while they learn, and
    compare them against SAC, SR-SAC, k-SAC and Rand-SAC on small built-in
    continuous-control and inventory tasks.

Components:
    - neural_core.py: dense networks, Adam, squashed Gaussian, checkpoints
    - envs.py: pendulum, point mass, newsvendor, persistence wrapper
    - replay.py: shared FIFO replay buffer and warmup
    - agent.py: self-regularized actor-critic learner
    - evolution.py: population loop (init, fitness, exchange, runner)
    - baselines.py: SAC, SR-SAC, k-SAC, Rand-SAC and k schedules
    - harness.py: config loading, sweeps, ensembles, plot data
    - run_store.py: run-directory artifacts
    - cli.py: `aac-lab` command-line entry point
    - models.py: Pydantic configuration and record models
    - utils.py: errors and small numeric helpers
=============================================================================
"""

__version__ = "1.0.0"
__author__ = "Hive Mind Collective"

from .agent import Agent, td_target
from .baselines import (
    BaselineRunner,
    SACAgent,
    TargetNets,
    ksac_train,
    polyak_update,
    rand_sac_make,
    sac_train_step,
    sr_sac_train_step,
)
from .envs import PersistenceWrapper, Transition, make_env
from .evolution import EvolutionRunner, PopulationMember, evaluate_fitness, exchange, init_population
from .harness import EnsemblePolicy, emit_plot_data, eval_frequency_sweep, load_run_config
from .models import (
    AgentConfig,
    BaselineConfig,
    EvolutionConfig,
    HyperParams,
    RunConfig,
    SearchSpace,
)
from .neural_core import AdamState, DenseNet, adam_step
from .replay import ReplayBuffer
from .utils import (
    AACLabError,
    InvalidInputError,
    NumericError,
    RunInputError,
    StateError,
    discounted_return,
)

__all__ = [
    "AACLabError",
    "AdamState",
    "Agent",
    "AgentConfig",
    "BaselineConfig",
    "BaselineRunner",
    "DenseNet",
    "EnsemblePolicy",
    "EvolutionConfig",
    "EvolutionRunner",
    "HyperParams",
    "InvalidInputError",
    "NumericError",
    "PersistenceWrapper",
    "PopulationMember",
    "ReplayBuffer",
    "RunConfig",
    "RunInputError",
    "SACAgent",
    "SearchSpace",
    "StateError",
    "TargetNets",
    "Transition",
    "adam_step",
    "discounted_return",
    "emit_plot_data",
    "eval_frequency_sweep",
    "evaluate_fitness",
    "exchange",
    "init_population",
    "ksac_train",
    "load_run_config",
    "make_env",
    "polyak_update",
    "rand_sac_make",
    "sac_train_step",
    "sr_sac_train_step",
    "td_target",
]
