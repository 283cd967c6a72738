"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: envs.py
Description: Built-in control tasks and the action-persistence wrapper
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Provide small, seeded, CPU-fast environments and the wrapper that turns
    any of them into a persistence-aware task:
    - pendulum: classic torque-limited swing-up
    - pointmass: damped 2-D double integrator steered to the origin
    - newsvendor: daily ordering against drifting Poisson demand
    - PersistenceWrapper: repeats each action k times, returns the per-step
      reward array, appends k to the observation and scales the episode
      budget by 1/k

Conventions:
    - Actions are always in [-1, 1]^|A|; environments rescale internally.
    - Base environments never end episodes on time; the wrapper owns the
      step budget and reports time-limit endings as `truncated`, never as
      `done` (infinite bootstrapping).
    - Each environment owns a numpy Generator; the same seed reproduces the
      same trajectory bit-for-bit.

Registry:
    make_env("pendulum" | "pointmass" | "newsvendor", seed, overrides)
=============================================================================
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .models import ENV_IDS, EnvSpec
from .utils import InvalidInputError, StateError, check_finite

logger = logging.getLogger(__name__)

ACTION_TOLERANCE = 1e-9


# -----------------------------------------------------------------------------
# Dynamics
# -----------------------------------------------------------------------------

class PendulumParams(BaseModel):
    """Physical constants of the swing-up task."""
    model_config = ConfigDict(extra="forbid")

    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    dt: float = 0.05
    max_torque: float = 2.0
    max_speed: float = 8.0
    max_steps: int = Field(default=200, gt=0)


def angle_normalize(theta: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


def pendulum_dynamics(
    state: Tuple[float, float],
    torque: float,
    params: PendulumParams = PendulumParams(),
) -> Tuple[Tuple[float, float], float]:
    """
    One Euler step of the pendulum, theta = 0 being upright.

    Args:
        state: (theta, theta_dot)
        torque: Applied torque u (already scaled)

    Returns:
        ((next theta, next theta_dot), reward of the pre-step state)
    """
    theta, theta_dot = float(state[0]), float(state[1])
    u = float(np.clip(torque, -params.max_torque, params.max_torque))
    g, m, l, dt = params.gravity, params.mass, params.length, params.dt

    reward = -(angle_normalize(theta) ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2)
    theta_ddot = 3.0 * g / (2.0 * l) * math.sin(theta) + 3.0 / (m * l * l) * u
    new_theta_dot = float(np.clip(theta_dot + theta_ddot * dt, -params.max_speed, params.max_speed))
    new_theta = theta + new_theta_dot * dt
    return (new_theta, new_theta_dot), reward


class PointMassParams(BaseModel):
    """Constants of the damped double integrator."""
    model_config = ConfigDict(extra="forbid")

    dt: float = 0.05
    damping: float = 0.95
    force_scale: float = 1.0
    init_range: float = 1.0
    max_steps: int = Field(default=300, gt=0)


def pointmass_dynamics(
    state: np.ndarray,
    force: np.ndarray,
    params: PointMassParams = PointMassParams(),
) -> Tuple[np.ndarray, float]:
    """
    One step of the 2-D point mass; the goal is the origin.

    Args:
        state: (x, y, vx, vy)
        force: (fx, fy), already scaled

    Returns:
        (next state, reward = -||position|| of the pre-step state)
    """
    state = np.asarray(state, dtype=np.float64)
    pos, vel = state[:2], state[2:]
    reward = -float(np.linalg.norm(pos))
    new_vel = (vel + np.asarray(force, dtype=np.float64) * params.dt) * params.damping
    new_pos = pos + new_vel * params.dt
    return np.concatenate([new_pos, new_vel]), reward


class NewsvendorParams(BaseModel):
    """Prices, costs and demand process of the newsvendor task."""
    model_config = ConfigDict(extra="forbid")

    max_order: float = 50.0
    price: float = 2.0
    cost: float = 1.0
    holding_cost: float = 0.05
    lost_sales_penalty: float = 0.5
    demand_min: float = 5.0
    demand_max: float = 45.0
    demand_drift: float = 2.0
    demand_window: int = Field(default=5, ge=1)
    horizon: int = Field(default=40, gt=0)


@dataclass(frozen=True)
class NewsvendorState:
    """Full (partly hidden) state of the newsvendor task."""
    inventory: float
    demand_rate: float
    recent_demand: Tuple[float, ...] = ()
    day: int = 0


def newsvendor_dynamics(
    state: NewsvendorState,
    action: float,
    rng: Optional[np.random.Generator] = None,
    demand: Optional[float] = None,
    params: NewsvendorParams = NewsvendorParams(),
) -> Tuple[NewsvendorState, float]:
    """
    One day: order, observe demand, sell, carry leftovers.

    Args:
        state: Current state
        action: Order fraction in [-1, 1]; q = max_order * (action + 1) / 2
        rng: Draws demand ~ Poisson(rate) and the rate's random walk
        demand: Explicit demand (skips the Poisson draw)

    Returns:
        (next state, reward = price*sold - cost*q - holding*left - penalty*unmet)
    """
    order = params.max_order * (float(action) + 1.0) / 2.0
    if demand is None:
        if rng is None:
            raise InvalidInputError("newsvendor_dynamics needs rng or an explicit demand")
        demand = float(rng.poisson(state.demand_rate))
    available = state.inventory + order
    sold = min(demand, available)
    leftover = available - sold
    unmet = demand - sold
    reward = (
        params.price * sold
        - params.cost * order
        - params.holding_cost * leftover
        - params.lost_sales_penalty * unmet
    )

    rate = state.demand_rate
    if rng is not None:
        rate = float(np.clip(rate + rng.normal(0.0, params.demand_drift),
                             params.demand_min, params.demand_max))
    recent = (state.recent_demand + (float(demand),))[-params.demand_window:]
    next_state = NewsvendorState(
        inventory=leftover, demand_rate=rate, recent_demand=recent, day=state.day + 1
    )
    return next_state, reward


# -----------------------------------------------------------------------------
# Environments
# -----------------------------------------------------------------------------

class Environment(ABC):
    """
    Base class for the built-in tasks.

    Subclasses define `spec`, `reset()` and `step()`. Episodes never end on
    time here; `step()` reports true termination only.
    """

    env_id: str = ""
    params_model: Type[BaseModel] = BaseModel

    def __init__(self, seed: Optional[int] = None, **overrides: Any):
        self.params = self.params_model(**overrides)
        self.rng = np.random.default_rng(seed)

    def seed(self, seed: Optional[int]) -> None:
        self.rng = np.random.default_rng(seed)

    @property
    @abstractmethod
    def spec(self) -> EnvSpec:
        """Static dimensions and defaults."""

    @abstractmethod
    def reset(self) -> np.ndarray:
        """Start an episode and return the base observation."""

    @abstractmethod
    def step(self, action: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        """Advance one base step: (observation, reward, terminated)."""


class PendulumEnv(Environment):
    env_id = "pendulum"
    params_model = PendulumParams

    def __init__(self, seed: Optional[int] = None, **overrides: Any):
        super().__init__(seed, **overrides)
        self.state: Tuple[float, float] = (0.0, 0.0)

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(
            env_id=self.env_id,
            state_dim=3,
            action_dim=1,
            max_episode_steps=self.params.max_steps,
            reward_scale_note="per-step reward in [-16.3, 0]",
            default_batch_size=512,
            default_k_max=15,
        )

    def reset(self) -> np.ndarray:
        self.state = (
            float(self.rng.uniform(-math.pi, math.pi)),
            float(self.rng.uniform(-1.0, 1.0)),
        )
        return self._observe()

    def step(self, action: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        torque = self.params.max_torque * float(np.asarray(action).reshape(-1)[0])
        self.state, reward = pendulum_dynamics(self.state, torque, self.params)
        return self._observe(), reward, False

    def _observe(self) -> np.ndarray:
        theta, theta_dot = self.state
        return np.array([math.cos(theta), math.sin(theta), theta_dot])


class PointMassEnv(Environment):
    env_id = "pointmass"
    params_model = PointMassParams

    def __init__(self, seed: Optional[int] = None, **overrides: Any):
        super().__init__(seed, **overrides)
        self.state = np.zeros(4)

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(
            env_id=self.env_id,
            state_dim=4,
            action_dim=2,
            max_episode_steps=self.params.max_steps,
            reward_scale_note="per-step reward = -distance to origin",
            default_batch_size=512,
            default_k_max=15,
        )

    def reset(self) -> np.ndarray:
        r = self.params.init_range
        self.state = np.concatenate([self.rng.uniform(-r, r, size=2), np.zeros(2)])
        return self.state.copy()

    def step(self, action: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        force = self.params.force_scale * np.asarray(action, dtype=np.float64).reshape(2)
        self.state, reward = pointmass_dynamics(self.state, force, self.params)
        return self.state.copy(), reward, False


class NewsvendorEnv(Environment):
    env_id = "newsvendor"
    params_model = NewsvendorParams

    def __init__(self, seed: Optional[int] = None, **overrides: Any):
        super().__init__(seed, **overrides)
        self.state = NewsvendorState(inventory=0.0, demand_rate=self.params.demand_min)

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(
            env_id=self.env_id,
            state_dim=3,
            action_dim=1,
            max_episode_steps=self.params.horizon,
            reward_scale_note="daily profit, roughly [-60, 90]",
            default_batch_size=128,
            default_k_max=5,
        )

    def reset(self) -> np.ndarray:
        rate = float(self.rng.uniform(self.params.demand_min, self.params.demand_max))
        self.state = NewsvendorState(inventory=0.0, demand_rate=rate)
        return self._observe()

    def step(self, action: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        fraction = float(np.asarray(action).reshape(-1)[0])
        self.state, reward = newsvendor_dynamics(self.state, fraction, self.rng, params=self.params)
        return self._observe(), reward, False

    def _observe(self) -> np.ndarray:
        p = self.params
        recent = self.state.recent_demand
        estimate = float(np.mean(recent)) if recent else 0.0
        return np.array([
            self.state.inventory / p.max_order,
            estimate / p.max_order,
            self.state.day / p.horizon,
        ])


ENV_REGISTRY: Dict[str, Type[Environment]] = {
    "pendulum": PendulumEnv,
    "pointmass": PointMassEnv,
    "newsvendor": NewsvendorEnv,
}
assert tuple(ENV_REGISTRY) == ENV_IDS

EnvFactory = Callable[[Optional[int]], Environment]


def make_env(
    env_id: str,
    seed: Optional[int] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Environment:
    """
    Build a registered environment.

    Args:
        env_id: "pendulum", "pointmass" or "newsvendor"
        seed: Seed for the environment's generator
        overrides: Parameter overrides (e.g. {"max_steps": 100})
    """
    if env_id not in ENV_REGISTRY:
        raise InvalidInputError(f"unknown env id {env_id!r}; choose one of {', '.join(ENV_IDS)}")
    return ENV_REGISTRY[env_id](seed, **dict(overrides or {}))


def env_factory(env_id: str, overrides: Optional[Mapping[str, Any]] = None) -> EnvFactory:
    """Seed -> Environment closure for one configured env id."""
    frozen = dict(overrides or {})
    make_env(env_id, 0, frozen)  # validate eagerly

    def factory(seed: Optional[int] = None) -> Environment:
        return make_env(env_id, seed, frozen)

    return factory


# -----------------------------------------------------------------------------
# Persistence
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    """
    One persistent decision as stored in the replay buffer.

    Attributes:
        state: Observation before the action (last element: reported k)
        action: Action in [-1, 1]^|A|
        rewards: Per-inner-step rewards, length k_max, zero past the executed steps
        next_state: Observation after the repeats
        done: True termination only (time limits are never terminal)
        k: Commanded persistence
    """
    state: np.ndarray
    action: np.ndarray
    rewards: np.ndarray
    next_state: np.ndarray
    done: bool
    k: int

    def validate(self, k_max: int) -> None:
        if self.k < 1 or self.k > k_max:
            raise InvalidInputError(f"k={self.k} outside [1, {k_max}]")
        if self.rewards.shape != (k_max,):
            raise InvalidInputError(f"reward array shape {self.rewards.shape} != ({k_max},)")
        if np.any(self.rewards[self.k:] != 0.0):
            raise InvalidInputError("reward entries past the commanded k must be zero")
        if np.any(np.abs(self.action) > 1.0 + ACTION_TOLERANCE):
            raise InvalidInputError("action outside [-1, 1]")
        check_finite("transition", np.concatenate([self.state, self.next_state, self.rewards]))


@dataclass
class PersistentStep:
    """Outcome of PersistenceWrapper.step_persistent()."""
    transition: Transition
    inner_steps: int
    truncated: bool

    @property
    def episode_over(self) -> bool:
        return self.transition.done or self.truncated

    @property
    def total_reward(self) -> float:
        return float(self.transition.rewards.sum())


class PersistenceWrapper:
    """
    Repeat each action k times and expose k in the observation.

    Attributes:
        env: Wrapped base environment
        k_max: Largest persistence (reward-array length)
        k: Persistence actually executed
        misleading: Report `reported_k_override` instead of k in observations
        reported_k_override: The k value shown in misleading mode
    """

    def __init__(
        self,
        env: Environment,
        k_max: int,
        k: int = 1,
        misleading: bool = False,
        reported_k_override: int = 1,
    ):
        if k_max < 1:
            raise InvalidInputError(f"k_max must be >= 1, got {k_max}")
        self.env = env
        self.k_max = int(k_max)
        self.misleading = misleading
        self.reported_k_override = int(reported_k_override)
        self.k = 1
        self.set_k(k)
        self._obs: Optional[np.ndarray] = None
        self._budget = 0
        self._wrapped_steps = 0
        self._active = False

    @property
    def spec(self) -> EnvSpec:
        return self.env.spec

    @property
    def reported_k(self) -> int:
        return self.reported_k_override if self.misleading else self.k

    @property
    def budget(self) -> int:
        """Wrapped-step budget of the current episode: floor(max_steps / k)."""
        return self._budget

    @property
    def active(self) -> bool:
        return self._active

    def set_k(self, k: int) -> None:
        """Change the persistence; the step budget is recomputed at the next reset()."""
        k = int(k)
        if not 1 <= k <= self.k_max:
            raise InvalidInputError(f"k={k} outside [1, {self.k_max}]")
        if k > self.env.spec.max_episode_steps:
            raise InvalidInputError(
                f"k={k} exceeds the episode length {self.env.spec.max_episode_steps}"
            )
        self.k = k

    def _augment(self, base_obs: np.ndarray) -> np.ndarray:
        return np.append(np.asarray(base_obs, dtype=np.float64), float(self.reported_k))

    def reset(self) -> np.ndarray:
        """Start a new episode; returns base observation ++ [reported k]."""
        self._obs = self._augment(self.env.reset())
        self._budget = self.env.spec.max_episode_steps // self.k
        self._wrapped_steps = 0
        self._active = True
        return self._obs.copy()

    def step_persistent(self, action: np.ndarray) -> PersistentStep:
        """
        Execute `action` for up to k inner steps.

        Returns:
            PersistentStep whose transition carries the reward array; the
            episode is over when `done` (true termination) or `truncated`
            (wrapped-step budget exhausted).
        """
        if not self._active or self._obs is None:
            raise StateError("step_persistent() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.spec.action_dim,):
            raise InvalidInputError(
                f"expected action of dimension {self.spec.action_dim}, got {action.shape}"
            )
        if np.any(np.abs(action) > 1.0 + ACTION_TOLERANCE) or not np.all(np.isfinite(action)):
            raise InvalidInputError(f"action {action} outside [-1, 1]")
        action = np.clip(action, -1.0, 1.0)

        rewards = np.zeros(self.k_max)
        done = False
        executed = 0
        base_obs = None
        for j in range(self.k):
            base_obs, reward, terminated = self.env.step(action)
            rewards[j] = reward
            executed += 1
            if terminated:
                done = True
                break

        next_obs = self._augment(base_obs)
        transition = Transition(
            state=self._obs,
            action=action,
            rewards=rewards,
            next_state=next_obs,
            done=done,
            k=self.k,
        )
        self._wrapped_steps += 1
        truncated = not done and self._wrapped_steps >= self._budget
        if done or truncated:
            self._active = False
        self._obs = next_obs
        return PersistentStep(transition=transition, inner_steps=executed, truncated=truncated)


Policy = Callable[[np.ndarray], np.ndarray]


def rollout_return(wrapper: PersistenceWrapper, policy: Policy) -> float:
    """
    Run one episode and return its undiscounted return.

    Args:
        wrapper: Persistence wrapper (reset here)
        policy: Observation -> action in [-1, 1]^|A|
    """
    obs = wrapper.reset()
    total = 0.0
    while True:
        step = wrapper.step_persistent(policy(obs))
        total += step.total_reward
        if step.episode_over:
            return total
        obs = step.transition.next_state


def random_policy(rng: np.random.Generator, action_dim: int) -> Policy:
    """Uniform random actions in [-1, 1]^|A|."""
    def act(_obs: np.ndarray) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=action_dim)
    return act


def evaluate_returns(
    policy: Policy,
    factory: EnvFactory,
    k: int,
    k_max: int,
    episodes: int,
    seed: Optional[int] = None,
    misleading: bool = False,
    reported_k: int = 1,
) -> List[float]:
    """
    Undiscounted returns of `episodes` rollouts at persistence k.

    All episodes run on one environment built from `seed`, so the same
    arguments always reproduce the same returns.
    """
    wrapper = PersistenceWrapper(factory(seed), k_max, k=k, misleading=misleading,
                                 reported_k_override=reported_k)
    return [rollout_return(wrapper, policy) for _ in range(episodes)]
