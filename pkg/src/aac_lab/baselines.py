"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: baselines.py
Description: SAC-family comparison agents and persistence schedules
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Build the comparison learners on top of the shared agent, replay and
    environment code:
    - SAC: Polyak-averaged target critics, no self-regularization
    - SR-SAC: self-regularized critic repeated on one batch until the loss
      falls below beta% of its initial value (hard cap 64 updates)
    - k-SAC: SAC whose training persistence follows a schedule
      (incremental, sampled, delayed_sampled, constant)
    - Rand-SAC: SAC with (a, c, h, k, g, tau) drawn at random
    - BaselineRunner: warmup, training, periodic evaluation, artifacts

Evaluation:
    Every `eval_interval` environment steps the deterministic policy is
    evaluated (k-SAC: at every k of its range) and a metrics row is
    appended. The reported return of k-SAC is the best per-k mean.
=============================================================================
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .agent import Agent, assemble_td_target, regularized_critic_step, soft_next_value
from .envs import PersistenceWrapper, env_factory, evaluate_returns
from .evolution import effective_search_space, sample_hyperparams
from .models import BaselineConfig, RunConfig, SearchSpace, TrainMetrics
from .neural_core import Checkpoint, DenseNet
from .replay import ReplayBuffer, warmup
from .run_store import RunStore
from .utils import InvalidInputError, NumericError, derive_seed

logger = logging.getLogger(__name__)

DEFAULT_BASELINE_STEPS = 100_000
RAND_SAC_TAU_RANGE = (0.001, 0.05)

# derive_seed stream tags
_AGENT_STREAM = 10
_ENV_STREAM = 11
_WARMUP_STREAM = 12
_EVAL_STREAM = 13
_SCHEDULE_STREAM = 14
_RAND_STREAM = 15


# -----------------------------------------------------------------------------
# Target networks
# -----------------------------------------------------------------------------

def polyak_update(targets: Sequence[Any], onlines: Sequence[Any], tau: float) -> None:
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidInputError(f"tau must lie in [0, 1], got {tau}")
    if len(targets) != len(onlines):
        raise InvalidInputError(f"{len(targets)} targets for {len(onlines)} online nets")
    for target, online in zip(targets, onlines):
        if tuple(target.layer_sizes) != tuple(online.layer_sizes):
            raise InvalidInputError(
                f"layer sizes differ: {target.layer_sizes} vs {online.layer_sizes}"
            )
        for t, o in zip(target.parameters(), online.parameters()):
            t *= 1.0 - tau
            t += tau * o


class TargetNets:
    """
    Polyak copies of the online critics.

    Attributes:
        nets: Target critics (exact copies at construction)
        delay: Train steps between Polyak updates
        counter: Train steps seen so far
    """

    def __init__(self, critics: Sequence[Any], delay: int = 2):
        if delay < 1:
            raise InvalidInputError(f"target delay must be >= 1, got {delay}")
        self.nets = tuple(c.copy() for c in critics)
        self.delay = delay
        self.counter = 0

    def step(self, onlines: Sequence[Any], tau: float) -> bool:
        """Count one train step; Polyak-update on every `delay`-th call."""
        self.counter += 1
        if self.counter % self.delay:
            return False
        polyak_update(self.nets, onlines, tau)
        return True


class SACAgent(Agent):
    """Agent bootstrapping from target critics, without the next-value penalty."""

    regularize_next_value = False

    def __init__(self, *args: Any, tau: float = 0.005, target_delay: int = 2, **kwargs: Any):
        super().__init__(*args, **kwargs)
        self.tau = tau
        self.targets = TargetNets(self.critics, target_delay)

    def bootstrap_critics(self):
        return self.targets.nets

    def train_step(self, buffer: ReplayBuffer) -> TrainMetrics:
        metrics = super().train_step(buffer)
        self.targets.step(self.critics, self.tau)
        return metrics

    def networks(self) -> Dict[str, DenseNet]:
        return {**super().networks(),
                "target1": self.targets.nets[0], "target2": self.targets.nets[1]}

    def save(self, path: Union[str, Path], meta: Optional[Dict] = None) -> Path:
        targets = {"tau": self.tau, "target_delay": self.targets.delay,
                   "target_counter": self.targets.counter}
        return super().save(path, {**targets, **(meta or {})})

    def restore_extra(self, ckpt: Checkpoint) -> None:
        meta = ckpt.meta
        self.tau = float(meta.get("tau", self.tau))
        self.targets = TargetNets(self.critics, int(meta.get("target_delay", self.targets.delay)))
        self.targets.counter = int(meta.get("target_counter", 0))
        if "target1" in ckpt.nets and "target2" in ckpt.nets:
            self.targets.nets = (ckpt.nets["target1"], ckpt.nets["target2"])
        else:
            logger.warning("Checkpoint has no target critics; copying the loaded critics")


def sac_train_step(agent: SACAgent, buffer: ReplayBuffer, config: BaselineConfig) -> TrainMetrics:
    """
    One SAC step: critic update(s) against the targets, actor and alpha
    update(s), then a Polyak update every `target_delay` steps.
    """
    agent.tau = config.tau
    return agent.train_step(buffer)


# -----------------------------------------------------------------------------
# SR-SAC
# -----------------------------------------------------------------------------

def sr_beta(config: BaselineConfig, progress: float) -> float:
    """Loss-ratio threshold (percent), linear in training progress."""
    progress = min(1.0, max(0.0, progress))
    return config.sr_beta_init + (config.sr_beta_final - config.sr_beta_init) * progress


def _critic_objective(critic: Any, inputs: np.ndarray, targets: np.ndarray,
                      next_inputs: np.ndarray, frozen_next: np.ndarray) -> float:
    n = inputs.shape[0]
    out = critic.forward(np.concatenate([inputs, next_inputs], axis=0)).reshape(-1)
    td = out[:n] - targets
    drift = frozen_next - out[n:]
    return float(np.mean(td * td) + np.mean(drift * drift))


def sr_sac_train_step(
    agent: Agent,
    buffer: ReplayBuffer,
    config: BaselineConfig,
    progress: float,
) -> TrainMetrics:
    """
    SR-SAC step: repeat the self-regularized critic update on one batch.

    The TD targets and the frozen next-state values are fixed for the whole
    inner loop. The loop stops after the first update whose resulting loss
    is below beta(progress)% of the initial loss, or at the hard cap.
    """
    gamma = agent.hyperparams.gamma
    h_target = agent.hyperparams.target_entropy(agent.action_dim)
    beta = sr_beta(config, progress)

    batch = buffer.sample(agent.batch_size, agent.rng)
    soft = soft_next_value(batch, agent.actor, agent.critics, agent.alpha, rng=agent.rng,
                           log_std_range=agent.config.log_std_range)
    targets = assemble_td_target(batch, gamma, soft.value, agent.config.extra_discount_steps)
    inputs = np.concatenate([batch.states, batch.actions], axis=1)
    frozen = [np.asarray(c.forward(soft.next_inputs)).reshape(-1) for c in agent.critics]

    def objective() -> float:
        return sum(
            _critic_objective(c, inputs, targets, soft.next_inputs, f)
            for c, f in zip(agent.critics, frozen)
        )

    initial = objective()
    threshold = beta / 100.0 * initial
    updates = 0
    while updates < config.sr_max_inner_updates:
        for critic, opt, f in zip(agent.critics, agent.critic_opts, frozen):
            regularized_critic_step(critic, opt, inputs, targets, soft.next_inputs, f)
        updates += 1
        if beta >= 100.0:
            break
        current = objective()
        if not math.isfinite(current):
            raise NumericError("non-finite SR-SAC critic loss", {"inner_update": updates})
        if current < threshold:
            break
    agent.update_counts["critic"] += updates
    agent.last_inner_updates = updates

    actor_results = [agent.actor_update(buffer, h_target) for _ in range(agent.hyperparams.a)]
    return TrainMetrics(
        critic_loss=initial,
        actor_loss=float(np.mean([loss for loss, _ in actor_results])),
        alpha=agent.alpha,
        entropy=agent.last_entropy,
        gamma=gamma,
        target_entropy=h_target,
        critic_updates=updates,
        actor_updates=agent.hyperparams.a,
    )


# -----------------------------------------------------------------------------
# Persistence schedules
# -----------------------------------------------------------------------------

class PersistenceSchedule(ABC):
    """Chooses the training k of each evaluation period."""

    def __init__(self, k_values: Sequence[int]):
        if not k_values:
            raise InvalidInputError("schedule needs at least one k value")
        self.k_values = [int(k) for k in k_values]

    @abstractmethod
    def next_k(self, rng: np.random.Generator) -> int:
        """k for the next training period."""

    def observe(self, k: int, returns: Sequence[float]) -> None:
        """Record evaluation returns obtained at persistence k."""


class ConstantSchedule(PersistenceSchedule):
    def __init__(self, k: int):
        super().__init__([k])

    def next_k(self, rng: np.random.Generator) -> int:
        return self.k_values[0]


class IncrementalSchedule(PersistenceSchedule):
    """Cycle through the k values in order."""

    def __init__(self, k_values: Sequence[int]):
        super().__init__(k_values)
        self._position = 0

    def next_k(self, rng: np.random.Generator) -> int:
        k = self.k_values[self._position % len(self.k_values)]
        self._position += 1
        return k


@dataclass
class _ReturnStats:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    @property
    def variance(self) -> float:
        # unit variance until a spread can be estimated
        return self.m2 / (self.count - 1) if self.count > 1 else 1.0


class SampledSchedule(PersistenceSchedule):
    """
    Thompson sampling over per-k evaluation returns.

    Each k's mean return has a Normal posterior N(mean, variance / count);
    the k with the largest draw trains next. Unseen k values go first.
    """

    def __init__(self, k_values: Sequence[int]):
        super().__init__(k_values)
        self.stats: Dict[int, _ReturnStats] = {k: _ReturnStats() for k in self.k_values}

    def observe(self, k: int, returns: Sequence[float]) -> None:
        if k not in self.stats:
            return
        for value in returns:
            self.stats[k].add(float(value))

    def next_k(self, rng: np.random.Generator) -> int:
        for k in self.k_values:
            if self.stats[k].count == 0:
                return k
        draws = [
            rng.normal(s.mean, math.sqrt(s.variance / s.count))
            for s in (self.stats[k] for k in self.k_values)
        ]
        return self.k_values[int(np.argmax(draws))]


class DelayedSampledSchedule(SampledSchedule):
    """Incremental for the first `delay` periods, Thompson sampling afterwards."""

    def __init__(self, k_values: Sequence[int], delay: Optional[int] = None):
        super().__init__(k_values)
        self.delay = len(self.k_values) if delay is None else int(delay)
        self._incremental = IncrementalSchedule(k_values)
        self._periods = 0

    def next_k(self, rng: np.random.Generator) -> int:
        self._periods += 1
        if self._periods <= self.delay:
            return self._incremental.next_k(rng)
        return super().next_k(rng)


def make_schedule(config: BaselineConfig, k_values: Sequence[int]) -> PersistenceSchedule:
    """Schedule named by `config.k_schedule` over `k_values`."""
    if config.k_schedule == "constant":
        return ConstantSchedule(config.k)
    if config.k_schedule == "incremental":
        return IncrementalSchedule(k_values)
    if config.k_schedule == "sampled":
        return SampledSchedule(k_values)
    return DelayedSampledSchedule(k_values, config.schedule_delay)


# -----------------------------------------------------------------------------
# Rand-SAC
# -----------------------------------------------------------------------------

def rand_sac_make(
    rng: np.random.Generator,
    space: Optional[SearchSpace] = None,
    base: Optional[BaselineConfig] = None,
) -> BaselineConfig:
    """
    Draw a Rand-SAC configuration.

    a, c, h, k, g come uniformly from the search ranges (integers over
    {min..max}); tau is uniform in [0.001, 0.05]; everything else keeps the
    standard SAC values.
    """
    space = space or SearchSpace()
    hp = sample_hyperparams(space, rng)
    tau = float(rng.uniform(*RAND_SAC_TAU_RANGE))
    base = base or BaselineConfig()
    return base.model_copy(update={
        "variant": "rand-sac",
        "actor_updates": hp.a,
        "critic_updates": hp.c,
        "entropy_coef": hp.h,
        "k": hp.k,
        "gamma": hp.gamma,
        "tau": tau,
    })


# -----------------------------------------------------------------------------
# Runner
# -----------------------------------------------------------------------------

@dataclass
class BaselineResult:
    """Outcome of BaselineRunner.run()."""
    agent: Agent
    config: BaselineConfig
    metrics: pd.DataFrame
    per_k: Optional[pd.DataFrame]
    total_env_steps: int
    score: float
    k_history: List[int] = field(default_factory=list)


class BaselineRunner:
    """
    Trains one baseline agent for a RunConfig with a baseline section.

    Attributes:
        config: Validated run configuration
        baseline: Effective baseline settings (Rand-SAC: the sampled ones)
        schedule: k-SAC persistence schedule (None for fixed-k variants)
        store: Artifact writer (None: keep results in memory only)
    """

    def __init__(self, config: RunConfig, store: Optional[RunStore] = None,
                 schedule: Optional[PersistenceSchedule] = None):
        if config.baseline is None:
            raise InvalidInputError("BaselineRunner needs a run config with a baseline section")
        self.config = config
        self.store = store
        self.env_overrides = config.env.get(config.env_id, {})
        self.factory = env_factory(config.env_id, self.env_overrides)
        self.spec = self.factory(0).spec
        seed = config.seed

        baseline = config.baseline
        if baseline.variant == "rand-sac":
            space = effective_search_space(SearchSpace(), self.spec.default_k_max)
            baseline = rand_sac_make(np.random.default_rng(derive_seed(seed, _RAND_STREAM)),
                                     space, baseline)
            logger.info("Rand-SAC draw: a=%d c=%d h=%.3f k=%d gamma=%.4f tau=%.4f",
                        baseline.actor_updates, baseline.critic_updates, baseline.entropy_coef,
                        baseline.k, baseline.gamma, baseline.tau)
        self.baseline = baseline

        if baseline.variant == "k-sac":
            k_hi = baseline.k_max or self.spec.default_k_max
            self.k_values = list(range(baseline.k_min, k_hi + 1))
            self.schedule = schedule or make_schedule(baseline, self.k_values)
        else:
            self.k_values = [baseline.k]
            self.schedule = schedule or ConstantSchedule(baseline.k)
        self.k_max = max(self.spec.default_k_max, max(self.k_values), *self.schedule.k_values)
        self.total_steps = config.total_env_steps or DEFAULT_BASELINE_STEPS

        self.agent = self._build_agent()
        self.buffer = ReplayBuffer(baseline.buffer_capacity, self.spec.observation_dim,
                                   self.spec.action_dim, self.k_max)
        self.wrapper = PersistenceWrapper(self.factory(derive_seed(seed, _ENV_STREAM)),
                                          self.k_max, k=self.schedule.k_values[0])
        self.schedule_rng = np.random.default_rng(derive_seed(seed, _SCHEDULE_STREAM))
        self.env_steps = 0

    def _build_agent(self) -> Agent:
        b = self.baseline
        args = (self.spec.observation_dim, self.spec.action_dim, b.hyperparams(), b.agent_config())
        kwargs = dict(rng=np.random.default_rng(derive_seed(self.config.seed, _AGENT_STREAM)),
                      batch_size=self.spec.default_batch_size)
        if b.variant == "sr-sac":
            return Agent(*args, **kwargs)
        return SACAgent(*args, tau=b.tau, target_delay=b.target_delay, **kwargs)

    def train_step(self) -> TrainMetrics:
        if self.baseline.variant == "sr-sac":
            return sr_sac_train_step(self.agent, self.buffer, self.baseline,
                                     self.env_steps / self.total_steps)
        return sac_train_step(self.agent, self.buffer, self.baseline)

    def evaluate(self, period: int) -> Dict[int, List[float]]:
        """Deterministic-policy returns at every k of the range."""
        def policy(obs: np.ndarray) -> np.ndarray:
            return self.agent.act(obs, stochastic=False)

        return {
            k: evaluate_returns(policy, self.factory, k, self.k_max, self.baseline.eval_episodes,
                                derive_seed(self.config.seed, _EVAL_STREAM, period, k))
            for k in self.k_values
        }

    def _warmup(self) -> None:
        steps = self.baseline.warmup_steps
        if steps <= 0:
            return
        wrapper = PersistenceWrapper(
            self.factory(derive_seed(self.config.seed, _WARMUP_STREAM)), self.k_max
        )
        rng = np.random.default_rng(derive_seed(self.config.seed, _WARMUP_STREAM))
        warmup(self.buffer, wrapper, self.k_values, steps, rng)

    def run(self) -> BaselineResult:
        """Warmup, then alternate training periods and evaluations until the step budget."""
        b = self.baseline
        self._warmup()
        rows: List[Dict[str, Any]] = []
        per_k_rows: List[Dict[str, Any]] = []
        k_history: List[int] = []
        period = 0
        metrics: Optional[TrainMetrics] = None
        obs: Optional[np.ndarray] = None

        try:
            while self.env_steps < self.total_steps:
                period += 1
                k = self.schedule.next_k(self.schedule_rng)
                k_history.append(k)
                self.wrapper.set_k(k)
                obs = None
                period_end = min(self.total_steps, self.env_steps + b.eval_interval)
                while self.env_steps < period_end:
                    if obs is None or not self.wrapper.active:
                        obs = self.wrapper.reset()
                    step = self.wrapper.step_persistent(self.agent.act(obs, stochastic=True))
                    self.buffer.push(step.transition)
                    self.env_steps += step.inner_steps
                    obs = None if step.episode_over else step.transition.next_state
                    metrics = self.train_step()

                returns = self.evaluate(period)
                for k_eval, values in returns.items():
                    self.schedule.observe(k_eval, values)
                    per_k_rows.append({
                        "period": period,
                        "step": self.env_steps,
                        "k": k_eval,
                        "mean_return": float(np.mean(values)),
                        "std_return": float(np.std(values)),
                        "episodes": len(values),
                    })
                means = {k_eval: float(np.mean(v)) for k_eval, v in returns.items()}
                best_k = max(means, key=lambda key: (means[key], -key))
                row = {
                    "period": period,
                    "step": self.env_steps,
                    "train_k": k,
                    "eval_k": best_k,
                    "return": means[best_k],
                    "return_std": float(np.std(returns[best_k])),
                    "variant": b.variant,
                }
                if metrics is not None:
                    row.update(metrics.model_dump())
                rows.append(row)
                if self.store is not None:
                    self.store.append_rows("metrics.csv", [row])
                logger.info("%s step %d: return %.2f (k=%d)", b.variant, self.env_steps,
                            means[best_k], best_k)
        except NumericError as exc:
            logger.error("Numeric failure in %s: %s", b.variant, exc)
            if self.store is not None:
                self.store.fail(str(exc))
            raise

        metrics_df = pd.DataFrame(rows)
        per_k = pd.DataFrame(per_k_rows) if b.variant == "k-sac" else None
        score = float(metrics_df["return"].iloc[-1]) if rows else float("nan")
        result = BaselineResult(self.agent, b, metrics_df, per_k, self.env_steps, score, k_history)
        if self.store is not None:
            self._write_artifacts(result)
        return result

    def _write_artifacts(self, result: BaselineResult) -> None:
        store = self.store
        assert store is not None
        if result.per_k is not None:
            store.write_table("per_k_eval.csv", result.per_k)
        self.agent.save(
            store.checkpoint_path("agent.npz"),
            meta={
                "variant": result.config.variant,
                "seed": self.config.seed,
                "config_hash": store.config_hash,
                "env_id": self.config.env_id,
                "k_max": self.k_max,
            },
        )
        store.update_total_steps(result.total_env_steps)
        store.finish({
            "variant": result.config.variant,
            "final_return": result.score,
            "hyperparams": result.config.hyperparams().model_dump(),
            "tau": result.config.tau,
        })


def ksac_train(
    config: RunConfig,
    schedule: Optional[PersistenceSchedule] = None,
    store: Optional[RunStore] = None,
) -> BaselineResult:
    """
    Train k-SAC: SAC whose training k follows `schedule` (default: the
    configured one), evaluated at every k of its range each period.
    """
    if config.mode != "k-sac":
        raise InvalidInputError(f"ksac_train needs mode 'k-sac', got {config.mode!r}")
    return BaselineRunner(config, store, schedule).run()
