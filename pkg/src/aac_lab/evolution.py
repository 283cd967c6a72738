"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: evolution.py
Description: Population-based outer loop of the Automatic Actor-Critic
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Tune (a, c, h, k, g) online while the members learn:
    - init_population: uniform draws from the search ranges
    - evaluate_fitness: mean deterministic return at the member's own k
    - exchange: elites overwrite bads, bads' hyperparameters are perturbed
    - EvolutionRunner: warmup, parallel epochs, evaluation, artifacts

Epoch Structure:
    for T iterations: every member collects one wrapped step (pushed to the
    shared buffer in member-id order), then every member runs train_step.
    After T iterations all members are evaluated; all epochs but the last
    end with an exchange. Population rows are recorded after the exchange.

Random Streams:
    One evolution generator (hyperparameter draws, pairing, perturbation),
    one per member for the agent and one per member for its environment,
    all derived from the run seed.
=============================================================================
"""

import logging
import math
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from .agent import Agent
from .envs import EnvFactory, PersistenceWrapper, Transition, env_factory, evaluate_returns, make_env
from .models import AgentConfig, EvolutionConfig, HyperParams, RunConfig, SearchSpace
from .replay import ReplayBuffer, warmup
from .run_store import RunStore
from .utils import InvalidInputError, NumericError, StateError, derive_seed

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# derive_seed stream tags
_EVOLUTION_STREAM = 0
_WARMUP_STREAM = 1
_MEMBER_ENV_STREAM = 2
_FITNESS_STREAM = 3
_MEMBER_AGENT_STREAM = 4


@dataclass
class PopulationMember:
    """
    One learner of the population.

    Attributes:
        member_id: Stable index in [0, M)
        agent: Learner state (networks, optimizers, alpha, hyperparameters)
        wrapper: Training environment (None for mock members)
        fitness: Latest fitness (None before the first evaluation)
        inherited_fitness: Fitness was copied from an elite, not measured
        lineage: (epoch, copied-from id) per exchange this member lost
        env_steps: Base environment steps collected by this member
    """
    member_id: int
    agent: Any
    wrapper: Optional[PersistenceWrapper] = None
    fitness: Optional[float] = None
    inherited_fitness: bool = False
    lineage: List[Tuple[int, int]] = field(default_factory=list)
    env_steps: int = 0
    _obs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def hyperparams(self) -> HyperParams:
        return self.agent.hyperparams

    @hyperparams.setter
    def hyperparams(self, value: HyperParams) -> None:
        self.agent.hyperparams = value
        if self.wrapper is not None:
            self.wrapper.set_k(value.k)
        self._obs = None

    def collect(self) -> Transition:
        """One wrapped environment step with the stochastic policy."""
        if self.wrapper is None:
            raise StateError(f"member {self.member_id} has no training environment")
        if self._obs is None or not self.wrapper.active:
            self._obs = self.wrapper.reset()
        step = self.wrapper.step_persistent(self.agent.act(self._obs, stochastic=True))
        self.env_steps += step.inner_steps
        self._obs = None if step.episode_over else step.transition.next_state
        return step.transition

    def adopt(self, elite: "PopulationMember", epoch: int) -> None:
        """Copy an elite's learner state and fitness into this member."""
        self.agent.copy_from(elite.agent)
        self.hyperparams = self.agent.hyperparams
        self.fitness = elite.fitness
        self.inherited_fitness = True
        self.lineage.append((epoch, elite.member_id))

    def lineage_text(self) -> str:
        return ";".join(f"{epoch}:{source}" for epoch, source in self.lineage)


# -----------------------------------------------------------------------------
# Hyperparameter sampling
# -----------------------------------------------------------------------------

def sample_hyperparams(space: SearchSpace, rng: np.random.Generator) -> HyperParams:
    """Uniform draw of (a, c, h, k, g): integers over {min..max}, reals continuous."""
    values: Dict[str, float] = {}
    for name, prange in space.ranges().items():
        if prange.integer:
            values[name] = int(rng.integers(int(prange.min), int(prange.max) + 1))
        else:
            values[name] = float(rng.uniform(prange.min, prange.max))
    return HyperParams(**values)


def perturb_hyperparams(hp: HyperParams, space: SearchSpace, rng: np.random.Generator) -> HyperParams:
    """
    Add a uniform draw from [-delta, delta] to each parameter and clamp.

    Integer parameters draw from the integers strictly inside (-delta, delta).
    Draw order: a, c, h, k, g.
    """
    values: Dict[str, float] = {}
    for name, prange in space.ranges().items():
        current = getattr(hp, name)
        if prange.integer:
            width = max(1, int(math.ceil(prange.delta)))
            shift = int(rng.integers(-width + 1, width))
            values[name] = int(prange.clamp(current + shift))
        else:
            values[name] = float(prange.clamp(current + rng.uniform(-prange.delta, prange.delta)))
    return HyperParams(**values)


def effective_search_space(space: SearchSpace, k_cap: int) -> SearchSpace:
    """Cap the k range at the environment's largest persistence."""
    if space.k.max <= k_cap:
        return space
    if space.k.min >= k_cap:
        raise InvalidInputError(f"k range [{space.k.min}, {space.k.max}] lies above the cap {k_cap}")
    k_range = space.k.model_copy(update={"max": float(k_cap)})
    return space.model_copy(update={"k": k_range})


# -----------------------------------------------------------------------------
# Population operations
# -----------------------------------------------------------------------------

def init_population(
    config: EvolutionConfig,
    rng: np.random.Generator,
    env_id: str = "pendulum",
    agent_config: Optional[AgentConfig] = None,
    env_overrides: Optional[Dict[str, Any]] = None,
    seed: int = 0,
) -> List[PopulationMember]:
    """
    Build M members with uniformly drawn hyperparameters and fresh networks.

    Args:
        config: Population settings and search ranges
        rng: Evolution generator (hyperparameter draws)
        env_id: Environment each member trains on
        agent_config: Network and optimizer settings
        env_overrides: Environment parameter overrides
        seed: Run seed from which member streams are derived
    """
    agent_config = agent_config or AgentConfig()
    sample_env = make_env(env_id, 0, env_overrides)
    spec = sample_env.spec
    space = effective_search_space(config.search, spec.default_k_max)
    k_max = int(space.k.max)
    factory = env_factory(env_id, env_overrides)

    members: List[PopulationMember] = []
    for i in range(config.population_size):
        hp = sample_hyperparams(space, rng)
        agent = Agent(
            spec.observation_dim,
            spec.action_dim,
            hp,
            agent_config,
            rng=np.random.default_rng(derive_seed(seed, _MEMBER_AGENT_STREAM, i)),
            batch_size=spec.default_batch_size,
        )
        wrapper = PersistenceWrapper(factory(derive_seed(seed, _MEMBER_ENV_STREAM, i)), k_max, k=hp.k)
        members.append(PopulationMember(member_id=i, agent=agent, wrapper=wrapper))
    logger.info("Initialized %d members on %s", len(members), env_id)
    return members


def evaluate_fitness(
    member: PopulationMember,
    factory: EnvFactory,
    episodes: int = 3,
    seed: Optional[int] = None,
) -> float:
    """
    Mean undiscounted return of the deterministic policy at the member's k.

    Each episode lasts at most floor(max_steps / k) wrapped steps.
    """
    k = member.hyperparams.k
    k_max = member.wrapper.k_max if member.wrapper is not None else k

    def policy(obs: np.ndarray) -> np.ndarray:
        return member.agent.act(obs, stochastic=False)

    fitness = float(np.mean(evaluate_returns(policy, factory, k, k_max, episodes, seed)))
    if not math.isfinite(fitness):
        raise NumericError("non-finite fitness", {"member_id": member.member_id})
    member.fitness = fitness
    member.inherited_fitness = False
    return fitness


def rank_members(population: Sequence[PopulationMember]) -> List[PopulationMember]:
    """Best first: fitness descending, lower id first on ties."""
    for m in population:
        if m.fitness is None:
            raise StateError(f"member {m.member_id} has not been evaluated")
    return sorted(population, key=lambda m: (-m.fitness, m.member_id))


def exchange(
    population: List[PopulationMember],
    config: EvolutionConfig,
    rng: np.random.Generator,
    epoch: int = 0,
    space: Optional[SearchSpace] = None,
) -> List[PopulationMember]:
    """
    Replace the worst members by perturbed copies of the best.

    The top and bottom ceil(M * fraction) members by fitness are shuffled
    and paired; each bad member receives its elite's full learner state,
    then has a, c, h, k, g perturbed and clamped. Middle members are not
    touched.

    Returns:
        The same population list (members are updated in place)
    """
    space = space or config.search
    n = math.ceil(len(population) * config.exchange_fraction)
    ranked = rank_members(population)
    elites = ranked[:n]
    bads = ranked[len(ranked) - n:]

    bad_order = rng.permutation(n)
    elite_order = rng.permutation(n)
    for bi, ei in zip(bad_order, elite_order):
        bad, elite = bads[bi], elites[ei]
        lost = bad.fitness
        bad.adopt(elite, epoch)
        bad.hyperparams = perturb_hyperparams(bad.hyperparams, space, rng)
        logger.info("Epoch %d exchange: member %d (fitness %.3f) <- member %d (fitness %.3f)",
                    epoch, bad.member_id, lost, elite.member_id, elite.fitness)
    return population


def member_record(member: PopulationMember, epoch: int, total_env_steps: int) -> Dict[str, Any]:
    """One population.csv row."""
    hp = member.hyperparams
    action_dim = member.agent.action_dim
    return {
        "epoch": epoch,
        "member_id": member.member_id,
        "fitness": member.fitness,
        "inherited_fitness": member.inherited_fitness,
        "a": hp.a,
        "c": hp.c,
        "h": hp.h,
        "k": hp.k,
        "g": hp.g,
        "gamma": hp.gamma,
        "H": hp.target_entropy(action_dim),
        "alpha": member.agent.alpha,
        "env_steps": member.env_steps,
        "total_env_steps": total_env_steps,
        "lineage": member.lineage_text(),
    }


# -----------------------------------------------------------------------------
# Runner
# -----------------------------------------------------------------------------

@dataclass
class EvolutionResult:
    """Outcome of EvolutionRunner.run()."""
    population: List[PopulationMember]
    records: pd.DataFrame
    total_env_steps: int
    store: Optional[RunStore] = None

    @property
    def best(self) -> PopulationMember:
        return rank_members(self.population)[0]


class EvolutionRunner:
    """
    Runs the full population-based training loop for one RunConfig.

    Attributes:
        config: Validated run configuration (mode "aac")
        store: Artifact writer (None: keep results in memory only)
    """

    def __init__(self, config: RunConfig, store: Optional[RunStore] = None):
        if config.evolution is None:
            raise ValueError("EvolutionRunner needs a run config with an evolution section")
        self.config = config
        self.evolution = config.evolution
        self.store = store
        self.env_overrides = config.env.get(config.env_id, {})
        self.factory = env_factory(config.env_id, self.env_overrides)
        self.spec = self.factory(0).spec
        self.space = effective_search_space(self.evolution.search, self.spec.default_k_max)
        self.rng = np.random.default_rng(derive_seed(config.seed, _EVOLUTION_STREAM))
        self.population: List[PopulationMember] = []
        self.buffer: Optional[ReplayBuffer] = None
        self.records: List[Dict[str, Any]] = []

    @property
    def total_env_steps(self) -> int:
        return sum(m.env_steps for m in self.population)

    def _map(self, executor: Optional[Executor], fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        if executor is None:
            return [fn(item) for item in items]
        return list(executor.map(fn, items))

    def _guard(self, fn: Callable[[PopulationMember], R], epoch: int, phase: str) -> Callable[[PopulationMember], R]:
        def wrapped(member: PopulationMember) -> R:
            try:
                return fn(member)
            except NumericError as exc:
                raise exc.with_context(member_id=member.member_id, epoch=epoch, phase=phase) from exc
        return wrapped

    def setup(self) -> None:
        """Build the population and the shared buffer, then run warmup."""
        evo = self.evolution
        self.population = init_population(
            evo.model_copy(update={"search": self.space}),
            self.rng,
            self.config.env_id,
            self.config.agent,
            self.env_overrides,
            self.config.seed,
        )
        k_max = int(self.space.k.max)
        self.buffer = ReplayBuffer(evo.buffer_capacity, self.spec.observation_dim,
                                   self.spec.action_dim, k_max)
        if evo.warmup_samples > 0:
            wrapper = PersistenceWrapper(
                self.factory(derive_seed(self.config.seed, _WARMUP_STREAM)), k_max
            )
            warm_rng = np.random.default_rng(derive_seed(self.config.seed, _WARMUP_STREAM))
            warmup(self.buffer, wrapper, self.space.k_values, evo.warmup_samples, warm_rng)

    def _budget_left(self) -> bool:
        limit = self.config.total_env_steps
        return limit is None or self.total_env_steps < limit

    def _evaluate_all(self, executor: Optional[Executor], epoch: int) -> None:
        episodes = self.evolution.eval_episodes

        def evaluate(member: PopulationMember) -> float:
            seed = derive_seed(self.config.seed, _FITNESS_STREAM, epoch, member.member_id)
            return evaluate_fitness(member, self.factory, episodes, seed)

        self._map(executor, self._guard(evaluate, epoch, "evaluate"), self.population)

    def _record(self, epoch: int) -> None:
        total = self.total_env_steps
        self.records.extend(member_record(m, epoch, total) for m in self.population)

    def run_epoch(self, executor: Optional[Executor], epoch: int, last: bool) -> bool:
        """
        T collect/train iterations, evaluation, and (unless last) exchange.

        Returns:
            True when this was the final epoch (scheduled or budget-limited)
        """
        assert self.buffer is not None
        buffer = self.buffer
        collect = self._guard(lambda m: m.collect(), epoch, "collect")
        train = self._guard(lambda m: m.agent.train_step(buffer), epoch, "train")

        for _ in range(self.evolution.steps_per_epoch):
            if not self._budget_left():
                break
            transitions = self._map(executor, collect, self.population)
            buffer.push_many(transitions)
            self._map(executor, train, self.population)

        last = last or not self._budget_left()
        self._evaluate_all(executor, epoch)
        best = rank_members(self.population)[0]
        logger.info("Epoch %d done: best member %d fitness %.3f, %d env steps",
                    epoch, best.member_id, best.fitness, self.total_env_steps)
        if not last:
            exchange(self.population, self.evolution, self.rng, epoch, self.space)
        self._record(epoch)
        return last

    def run(self) -> EvolutionResult:
        """
        Execute warmup and all epochs; write artifacts when a store is attached.

        Raises:
            NumericError: with member id, epoch and phase context
        """
        self.setup()
        epochs = self.evolution.epochs
        threads = self.config.num_threads
        executor: Optional[ThreadPoolExecutor] = (
            ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        )
        try:
            if epochs == 0:
                self._evaluate_all(executor, 0)
                self._record(0)
            for epoch in range(1, epochs + 1):
                logger.info("Epoch %d/%d starting", epoch, epochs)
                if self.run_epoch(executor, epoch, epoch == epochs) and epoch < epochs:
                    logger.info("Env-step budget reached after epoch %d", epoch)
                    break
        except NumericError as exc:
            logger.error("Numeric failure: %s", exc)
            if self.store is not None:
                self.store.fail(str(exc))
            raise
        finally:
            if executor is not None:
                executor.shutdown(wait=True)

        records = pd.DataFrame(self.records)
        result = EvolutionResult(self.population, records, self.total_env_steps, self.store)
        if self.store is not None:
            self._write_artifacts(result)
        return result

    def _write_artifacts(self, result: EvolutionResult) -> None:
        store = self.store
        assert store is not None
        store.write_table("population.csv", result.records)
        for member in self.population:
            member.agent.save(
                store.checkpoint_path(f"member_{member.member_id:03d}.npz"),
                meta={
                    "member_id": member.member_id,
                    "fitness": member.fitness,
                    "seed": self.config.seed,
                    "config_hash": store.config_hash,
                    "env_id": self.config.env_id,
                    "k_max": int(self.space.k.max),
                },
            )
        best = result.best
        store.update_total_steps(result.total_env_steps)
        store.finish({
            "best_member": best.member_id,
            "best_fitness": best.fitness,
            "mean_fitness": float(np.mean([m.fitness for m in self.population])),
            "epochs": self.evolution.epochs,
        })
