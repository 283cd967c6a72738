"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: models.py
Description: Pydantic configuration and record models for aac-lab
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Define strongly-typed configuration objects and emitted records so that
    every run is validated up front and every artifact row has a fixed shape.

Models:
    - ParamRange / SearchSpace: [min, max] and perturbation width per
      evolved hyperparameter (defaults: the parameter search-range table)
    - HyperParams: the evolved (a, c, h, k, g) tuple with derived gamma and H
    - AgentConfig: network sizes, learning rates and loss options
    - EvolutionConfig: population size, epochs, exchange fraction, ...
    - BaselineConfig: SAC-family variants and literature-standard defaults
    - EnvSpec: dimensions and defaults of a built-in environment
    - TrainMetrics: one train-step summary
    - RunConfig: the complete, validated description of one run
    - RunManifest / RunResult: what a finished run reports
=============================================================================
"""

import math
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .utils import gamma_from_g, target_entropy

ENV_IDS: Tuple[str, ...] = ("pendulum", "pointmass", "newsvendor")
MODES: Tuple[str, ...] = ("aac", "sac", "sr-sac", "k-sac", "rand-sac")
HYPERPARAM_NAMES: Tuple[str, ...] = ("a", "c", "h", "k", "g")

Variant = Literal["sac", "sr-sac", "k-sac", "rand-sac"]
KSchedule = Literal["incremental", "sampled", "delayed_sampled", "constant"]


class ParamRange(BaseModel):
    """
    Search range for one evolved hyperparameter.

    Attributes:
        min: Lower bound (inclusive)
        max: Upper bound (inclusive)
        delta: Perturbation half-width
        integer: Whether the parameter takes integer values
    """
    model_config = ConfigDict(extra="forbid")

    min: float
    max: float
    delta: float = Field(gt=0)
    integer: bool = False

    @model_validator(mode="after")
    def check_bounds(self) -> "ParamRange":
        if not self.min < self.max:
            raise ValueError(f"min ({self.min}) must be < max ({self.max})")
        return self

    def clamp(self, value: float) -> float:
        return min(self.max, max(self.min, value))


def _default_space() -> Dict[str, ParamRange]:
    return {
        "a": ParamRange(min=1, max=10, delta=2, integer=True),
        "c": ParamRange(min=1, max=40, delta=5, integer=True),
        "h": ParamRange(min=0.25, max=1.75, delta=0.25),
        "k": ParamRange(min=1, max=15, delta=2, integer=True),
        "g": ParamRange(min=-6.5, max=-1.0, delta=0.5),
    }


class SearchSpace(BaseModel):
    """Ranges for a, c, h, k and g."""
    model_config = ConfigDict(extra="forbid")

    a: ParamRange = Field(default_factory=lambda: _default_space()["a"])
    c: ParamRange = Field(default_factory=lambda: _default_space()["c"])
    h: ParamRange = Field(default_factory=lambda: _default_space()["h"])
    k: ParamRange = Field(default_factory=lambda: _default_space()["k"])
    g: ParamRange = Field(default_factory=lambda: _default_space()["g"])

    @model_validator(mode="before")
    @classmethod
    def fill_partial_ranges(cls, data: Any) -> Any:
        # `evolution.search.a.max = 2` keeps the default min and delta
        if isinstance(data, dict):
            defaults = _default_space()
            data = {
                name: ({**defaults[name].model_dump(), **value}
                       if isinstance(value, dict) and name in defaults else value)
                for name, value in data.items()
            }
        return data

    @model_validator(mode="after")
    def check_domains(self) -> "SearchSpace":
        for name in ("a", "c", "k"):
            rng = getattr(self, name)
            if not rng.integer or rng.min < 1:
                raise ValueError(f"{name} must be an integer range with min >= 1")
        if self.h.min <= 0:
            raise ValueError("h range must be positive")
        if self.g.max >= 0:
            raise ValueError("g range must be negative so that gamma lies in (0, 1)")
        return self

    def ranges(self) -> Dict[str, ParamRange]:
        return {name: getattr(self, name) for name in HYPERPARAM_NAMES}

    @property
    def k_values(self) -> List[int]:
        return list(range(int(self.k.min), int(self.k.max) + 1))


class HyperParams(BaseModel):
    """
    The evolved hyperparameters of one population member.

    Attributes:
        a: Actor updates per train step
        c: Critic updates per train step
        h: Target-entropy coefficient, H = h * (-|A|)
        k: Action persistence
        g: Discount exponent, gamma = 1 - exp(g)
    """
    a: int = Field(ge=1)
    c: int = Field(ge=1)
    h: float = Field(gt=0)
    k: int = Field(ge=1)
    g: float = Field(lt=0)

    @property
    def gamma(self) -> float:
        return gamma_from_g(self.g)

    def target_entropy(self, action_dim: int) -> float:
        return target_entropy(self.h, action_dim)

    def within(self, space: SearchSpace) -> bool:
        return all(
            space.ranges()[name].min <= getattr(self, name) <= space.ranges()[name].max
            for name in HYPERPARAM_NAMES
        )


class AgentConfig(BaseModel):
    """
    Learner settings shared by AAC members and the baselines.

    Attributes:
        hidden_sizes: Hidden layer widths of actor and critics
        actor_lr / critic_lr / alpha_lr: Adam learning rates
        initial_alpha: Starting entropy temperature
        batch_size: Mini-batch size (None: the environment default)
        entropy_in_actor_loss: Include alpha * log pi in the actor loss
        extra_discount_steps: Bootstrap discount is gamma^(k + this)
        log_std_min / log_std_max: Clamp of the actor log-std output
    """
    model_config = ConfigDict(extra="forbid")

    hidden_sizes: Tuple[int, ...] = (256, 256)
    actor_lr: float = Field(default=3e-4, gt=0)
    critic_lr: float = Field(default=3e-4, gt=0)
    alpha_lr: float = Field(default=1e-4, gt=0)
    initial_alpha: float = Field(default=0.1, gt=0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    entropy_in_actor_loss: bool = True
    extra_discount_steps: int = Field(default=1, ge=0)
    log_std_min: float = -10.0
    log_std_max: float = 2.0

    @field_validator("hidden_sizes")
    @classmethod
    def check_hidden(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(v) < 1 or any(s <= 0 for s in v):
            raise ValueError("hidden_sizes needs at least one positive width")
        return tuple(v)

    @model_validator(mode="after")
    def check_log_std(self) -> "AgentConfig":
        if self.log_std_min >= self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")
        return self

    @property
    def log_std_range(self) -> Tuple[float, float]:
        return (self.log_std_min, self.log_std_max)


class EvolutionConfig(BaseModel):
    """
    Settings of the population-based outer loop.

    Attributes:
        population_size: M
        epochs: E
        steps_per_epoch: T
        search: Ranges and perturbation widths of a, c, h, k, g
        exchange_fraction: Share of elites (and of bads) per exchange
        eval_episodes: Deterministic episodes per fitness evaluation
        warmup_samples: Random transitions collected before training
        buffer_capacity: Shared replay buffer capacity
    """
    model_config = ConfigDict(extra="forbid")

    population_size: int = Field(default=20, ge=2)
    epochs: int = Field(default=10, ge=0)
    steps_per_epoch: int = Field(default=1000, ge=1)
    search: SearchSpace = Field(default_factory=SearchSpace)
    exchange_fraction: float = Field(default=0.20, gt=0, lt=1)
    eval_episodes: int = Field(default=3, ge=1)
    warmup_samples: int = Field(default=10_000, ge=0)
    buffer_capacity: int = Field(default=2_000_000, ge=1)

    @property
    def group_size(self) -> int:
        return math.ceil(self.population_size * self.exchange_fraction)

    @model_validator(mode="after")
    def check_groups(self) -> "EvolutionConfig":
        if 2 * self.group_size > self.population_size:
            raise ValueError(
                f"elite and bad groups of size {self.group_size} overlap in a population "
                f"of {self.population_size}"
            )
        return self


class BaselineConfig(BaseModel):
    """
    Settings of the SAC-family comparison agents (literature defaults).

    Attributes:
        variant: sac | sr-sac | k-sac | rand-sac
        tau: Polyak factor of the target critics
        target_delay: Train steps between target updates
        actor_updates / critic_updates: Gradient updates per env step
        sr_beta_init / sr_beta_final: SR-SAC loss-ratio threshold (percent)
        sr_max_inner_updates: Hard cap of SR-SAC inner updates
        k / k_min / k_max: Fixed persistence and the k-SAC range
        k_schedule: k-SAC schedule
        schedule_delay: Incremental periods before Delayed-Sampled switches
        log_std_min / log_std_max: Clamp of the actor log-std output
        eval_interval: Env steps per evaluation period
    """
    model_config = ConfigDict(extra="forbid")

    variant: Variant = "sac"
    tau: float = Field(default=0.005, gt=0, le=1)
    actor_lr: float = Field(default=3e-4, gt=0)
    critic_lr: float = Field(default=3e-4, gt=0)
    alpha_lr: float = Field(default=1e-4, gt=0)
    initial_alpha: float = Field(default=0.1, gt=0)
    gamma: float = Field(default=0.99, gt=0, lt=1)
    warmup_steps: int = Field(default=1000, ge=0)
    target_delay: int = Field(default=2, ge=1)
    actor_updates: int = Field(default=1, ge=1)
    critic_updates: int = Field(default=1, ge=1)
    sr_beta_init: float = Field(default=70.0, ge=0)
    sr_beta_final: float = Field(default=90.0, ge=0)
    sr_max_inner_updates: int = Field(default=64, ge=1)
    entropy_coef: float = Field(default=1.0, gt=0)
    hidden_sizes: Tuple[int, ...] = (256, 256)
    batch_size: Optional[int] = Field(default=None, ge=1)
    buffer_capacity: int = Field(default=2_000_000, ge=1)
    extra_discount_steps: int = Field(default=1, ge=0)
    entropy_in_actor_loss: bool = True
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    k: int = Field(default=1, ge=1)
    k_min: int = Field(default=1, ge=1)
    k_max: Optional[int] = Field(default=None, ge=1)
    k_schedule: KSchedule = "incremental"
    schedule_delay: Optional[int] = Field(default=None, ge=0)
    eval_interval: int = Field(default=5000, ge=1)
    eval_episodes: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def check_consistency(self) -> "BaselineConfig":
        if self.sr_beta_init > self.sr_beta_final:
            raise ValueError("sr_beta_init must not exceed sr_beta_final")
        if self.k_max is not None and self.k_max < self.k_min:
            raise ValueError("k_max must be >= k_min")
        if self.log_std_min >= self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")
        return self

    @property
    def g(self) -> float:
        return math.log(1.0 - self.gamma)

    def agent_config(self) -> AgentConfig:
        """AgentConfig view of the learner-related fields."""
        return AgentConfig(
            hidden_sizes=self.hidden_sizes,
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            alpha_lr=self.alpha_lr,
            initial_alpha=self.initial_alpha,
            batch_size=self.batch_size,
            entropy_in_actor_loss=self.entropy_in_actor_loss,
            extra_discount_steps=self.extra_discount_steps,
            log_std_min=self.log_std_min,
            log_std_max=self.log_std_max,
        )

    def hyperparams(self) -> HyperParams:
        """The fixed (a, c, h, k, g) tuple this baseline trains with."""
        return HyperParams(
            a=self.actor_updates,
            c=self.critic_updates,
            h=self.entropy_coef,
            k=self.k,
            g=self.g,
        )


class EnvSpec(BaseModel):
    """
    Static description of a built-in environment.

    Attributes:
        env_id: Registry id
        state_dim: Base observation width (excludes the appended k slot)
        action_dim: |A|
        max_episode_steps: Base step limit before division by k
        reward_scale_note: Free-text note on reward magnitudes
        default_batch_size: Mini-batch size used when none is configured
        default_k_max: Upper end of the persistence range for this task
    """
    env_id: str
    state_dim: int = Field(gt=0)
    action_dim: int = Field(gt=0)
    max_episode_steps: int = Field(gt=0)
    reward_scale_note: str = ""
    default_batch_size: int = Field(default=512, ge=1)
    default_k_max: int = Field(default=15, ge=1)

    @property
    def observation_dim(self) -> int:
        return self.state_dim + 1


class TrainMetrics(BaseModel):
    """Summary of one train step (or one baseline update)."""
    critic_loss: float
    actor_loss: float
    alpha: float
    entropy: float
    gamma: float
    target_entropy: float
    critic_updates: int = 0
    actor_updates: int = 0


def _plain(value: Any) -> Any:
    return list(value) if isinstance(value, (list, tuple)) else value


class RunConfig(BaseModel):
    """
    Complete description of one run.

    Exactly one of `evolution` / `baseline` is present, matching `mode`.
    Baseline modes fold any `agent` section into `baseline`; `agent` is
    then None.
    """
    model_config = ConfigDict(extra="forbid")

    mode: Literal["aac", "sac", "sr-sac", "k-sac", "rand-sac"] = "aac"
    env_id: str = "pendulum"
    seed: int = Field(default=0, ge=0)
    total_env_steps: Optional[int] = Field(default=None, ge=0)
    evolution: Optional[EvolutionConfig] = None
    baseline: Optional[BaselineConfig] = None
    agent: Optional[AgentConfig] = Field(default_factory=AgentConfig)
    env: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    output_dir: str = "runs"
    num_threads: int = Field(default=1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def fill_mode_section(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        mode = data.get("mode", "aac")
        if mode == "aac":
            data.setdefault("evolution", {})
            if data.get("agent") is None:
                data["agent"] = {}
        elif mode in MODES:
            baseline = dict(data.get("baseline") or {})
            baseline.setdefault("variant", mode)
            agent = data.get("agent") or {}
            if isinstance(agent, BaseModel):
                agent = agent.model_dump(exclude_unset=True)
            for key, value in agent.items():
                if key in baseline and _plain(baseline[key]) != _plain(value):
                    raise ValueError(f"agent.{key} and baseline.{key} disagree")
                baseline[key] = value
            data["baseline"] = baseline
            data["agent"] = None
        return data

    @field_validator("env_id")
    @classmethod
    def check_env_id(cls, v: str) -> str:
        if v not in ENV_IDS:
            raise ValueError(f"unknown env id {v!r}; choose one of {', '.join(ENV_IDS)}")
        return v

    @model_validator(mode="after")
    def check_sections(self) -> "RunConfig":
        if (self.evolution is None) == (self.baseline is None):
            raise ValueError("exactly one of 'evolution' or 'baseline' must be configured")
        if self.mode == "aac" and self.evolution is None:
            raise ValueError("mode 'aac' requires an evolution section")
        if self.mode != "aac":
            if self.baseline is None:
                raise ValueError(f"mode {self.mode!r} requires a baseline section")
            if self.baseline.variant != self.mode:
                raise ValueError(
                    f"baseline.variant {self.baseline.variant!r} does not match mode {self.mode!r}"
                )
        return self

    def learner_config(self) -> AgentConfig:
        """
        Learner settings of this run.

        AAC uses `agent`; baselines read the learner fields of `baseline`,
        into which any `agent` section was folded at validation.
        """
        if self.baseline is None:
            return self.agent
        return self.baseline.agent_config()


class RunManifest(BaseModel):
    """Index file written at the root of every run directory."""
    mode: str
    algorithm: str
    env_id: str
    seed: int
    config_hash: str
    num_threads: int
    total_env_steps: int = 0
    status: str = "running"
    files: List[str] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None


class RunResult(BaseModel):
    """
    Standardized outcome of a CLI verb.

    Attributes:
        success: Whether the verb completed
        verb: Which verb ran
        run_dir: Output location (if any)
        message: Human-readable summary
        data: Verb-specific payload
        error: Error message if failed
    """
    success: bool = True
    verb: str
    run_dir: Optional[str] = None
    message: str = ""
    data: Any = None
    error: Optional[str] = None

    def to_response(self) -> Dict[str, Any]:
        if not self.success:
            return {"success": False, "verb": self.verb, "error": self.error}
        return {
            "success": True,
            "verb": self.verb,
            "run_dir": self.run_dir,
            "message": self.message,
            "data": self.data,
        }
