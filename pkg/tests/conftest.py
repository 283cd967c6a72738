"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: conftest.py
Description: Shared pytest fixtures for aac-lab tests
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Provide shared fixtures for all test modules including:
    - A scripted environment with fixed per-step rewards
    - Small agent configurations that train in milliseconds
    - Stub critics with closed-form Q values
    - Replay buffers filled with random transitions

Fixtures:
    - scripted_factory: seed -> ScriptedEnv builder with chosen reward/length
    - small_config: AgentConfig with (16, 16) hidden layers
    - make_agent: Agent builder on a 2-wide observation and 1-D action
    - filled_buffer: ReplayBuffer with 200 random transitions (k_max 3)
    - bdd: GivenWhenThen scenario helper
=============================================================================
"""

import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
import pytest

# Add src to path for imports
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from aac_lab.agent import Agent
from aac_lab.envs import Environment, Transition
from aac_lab.models import AgentConfig, EnvSpec, HyperParams
from aac_lab.replay import ReplayBuffer


class ScriptedEnv(Environment):
    """
    Deterministic test task: constant reward per base step.

    The observation is [t / max_steps]; the episode terminates after
    `terminate_after` base steps when set.
    """

    env_id = "scripted"

    def __init__(self, seed: Optional[int] = None, reward: float = 1.0, max_steps: int = 200,
                 terminate_after: Optional[int] = None, action_dim: int = 1):
        self.rng = np.random.default_rng(seed)
        self.reward = reward
        self.max_steps = max_steps
        self.terminate_after = terminate_after
        self.action_dim = action_dim
        self.t = 0
        self.actions = []

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(env_id=self.env_id, state_dim=1, action_dim=self.action_dim,
                       max_episode_steps=self.max_steps, default_batch_size=16,
                       default_k_max=15)

    def reset(self) -> np.ndarray:
        self.t = 0
        return np.array([0.0])

    def step(self, action: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        self.t += 1
        self.actions.append(np.array(action, dtype=np.float64))
        terminated = self.terminate_after is not None and self.t >= self.terminate_after
        return np.array([self.t / self.max_steps]), self.reward, terminated


class ConstantCritic:
    """Q(s, a) = value everywhere; input gradients are zero."""

    def __init__(self, value: float):
        self.value = value
        self._rows = 0
        self._width = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        self._rows, self._width = x.shape
        return np.full((self._rows, 1), self.value)

    def backward(self, grad_output: np.ndarray) -> "StubGradients":
        return StubGradients(input=np.zeros((self._rows, self._width)))


class QuadraticCritic:
    """Q(s, a) = offset - ||a - target||^2 on the action columns."""

    def __init__(self, obs_dim: int, target: float = 0.5, offset: float = 0.0):
        self.obs_dim = obs_dim
        self.target = target
        self.offset = offset
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        a = self._x[:, self.obs_dim:]
        return (self.offset - ((a - self.target) ** 2).sum(axis=1))[:, None]

    def backward(self, grad_output: np.ndarray) -> "StubGradients":
        x = self._x
        grad = np.zeros_like(x)
        grad[:, self.obs_dim:] = grad_output * (-2.0 * (x[:, self.obs_dim:] - self.target))
        return StubGradients(input=grad)


class ShiftedCritic:
    """Wraps a critic and adds a constant to its output."""

    def __init__(self, inner, shift: float):
        self.inner = inner
        self.shift = shift

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.inner.forward(x) + self.shift

    def backward(self, grad_output: np.ndarray):
        return self.inner.backward(grad_output)


@dataclass
class StubGradients:
    input: np.ndarray


def random_transition(rng: np.random.Generator, obs_dim: int = 2, action_dim: int = 1,
                      k_max: int = 3, k: Optional[int] = None, done: Optional[bool] = None) -> Transition:
    """A valid transition with random contents."""
    k = int(rng.integers(1, k_max + 1)) if k is None else k
    rewards = np.zeros(k_max)
    rewards[:k] = rng.normal(size=k)
    return Transition(
        state=rng.normal(size=obs_dim),
        action=rng.uniform(-1.0, 1.0, size=action_dim),
        rewards=rewards,
        next_state=rng.normal(size=obs_dim),
        done=bool(rng.random() < 0.1) if done is None else done,
        k=k,
    )


@pytest.fixture
def scripted_factory() -> Callable[..., Callable[[Optional[int]], ScriptedEnv]]:
    """
    Build seed -> ScriptedEnv factories.

    Usage:
        factory = scripted_factory(reward=0.25, max_steps=200)
        env = factory(7)
    """
    def make(reward: float = 1.0, max_steps: int = 200, terminate_after: Optional[int] = None,
             action_dim: int = 1):
        def factory(seed: Optional[int] = None) -> ScriptedEnv:
            return ScriptedEnv(seed, reward, max_steps, terminate_after, action_dim)
        return factory
    return make


@pytest.fixture
def small_config() -> AgentConfig:
    return AgentConfig(hidden_sizes=(16, 16), batch_size=16)


@pytest.fixture
def hyperparams() -> HyperParams:
    """a=1, c=1, h=1, k=1, gamma=0.99."""
    return HyperParams(a=1, c=1, h=1.0, k=1, g=math.log(0.01))


@pytest.fixture
def make_agent(small_config, hyperparams) -> Callable[..., Agent]:
    """Agent builder on a 2-wide observation (state + k slot) and 1-D action."""
    def make(seed: int = 0, obs_dim: int = 2, action_dim: int = 1,
             hp: Optional[HyperParams] = None, config: Optional[AgentConfig] = None,
             cls=Agent, **kwargs) -> Agent:
        return cls(obs_dim, action_dim, hp or hyperparams, config or small_config,
                   rng=np.random.default_rng(seed), **kwargs)
    return make


@pytest.fixture
def filled_buffer() -> ReplayBuffer:
    """200 random transitions with obs_dim 2, |A| = 1, k_max 3."""
    rng = np.random.default_rng(123)
    buffer = ReplayBuffer(1000, obs_dim=2, action_dim=1, k_max=3)
    buffer.push_many(random_transition(rng) for _ in range(200))
    return buffer


# BDD Helper Classes
class GivenWhenThen:
    """
    Base class for BDD-style test scenarios.

    Usage:
        scenario = GivenWhenThen()
        scenario.given("a filled replay buffer", len(buffer) > 0)
        scenario.when("I sample a batch", buffer.sample(32, rng))
        scenario.then("the batch has 32 rows", len(scenario.result) == 32)
    """

    def __init__(self):
        self.given_conditions = []
        self.when_actions = []
        self.then_assertions = []
        self._context = {}

    def given(self, description: str, condition: bool = True):
        """Record a Given condition."""
        self.given_conditions.append((description, condition))
        assert condition, f"Given '{description}' failed"
        return self

    def when(self, description: str, action_result=None):
        """Record a When action and its result."""
        self.when_actions.append((description, action_result))
        self._context["result"] = action_result
        return self

    def then(self, description: str, assertion: bool):
        """Record and check a Then assertion."""
        self.then_assertions.append((description, assertion))
        assert assertion, f"Then '{description}' failed"
        return self

    @property
    def result(self):
        """Get the result from the When action."""
        return self._context.get("result")


@pytest.fixture
def bdd():
    """Create a new GivenWhenThen scenario helper."""
    return GivenWhenThen()
