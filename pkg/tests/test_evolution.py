"""
aac-lab - Evolution BDD Tests

This module contains BDD style test scenarios for the population-based
outer loop: initialization, fitness, exchange and the epoch runner.

Context:
- Members draw (a, c, h, k, g) uniformly from the search ranges
- Fitness is the mean deterministic return at the member's own k
- Exchange: the worst ceil(M * 0.2) members copy a shuffled elite's full
  learner state, then perturb and clamp their hyperparameters
- Mock agents stand in for learners where only hyperparameters matter
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from aac_lab.agent import Agent
from aac_lab.evolution import (
    EvolutionRunner,
    PopulationMember,
    effective_search_space,
    evaluate_fitness,
    exchange,
    init_population,
    perturb_hyperparams,
    rank_members,
    sample_hyperparams,
)
from aac_lab.models import (
    AgentConfig,
    EvolutionConfig,
    HYPERPARAM_NAMES,
    HyperParams,
    ParamRange,
    RunConfig,
    SearchSpace,
)
from aac_lab.run_store import RunStore
from aac_lab.utils import InvalidInputError, NumericError, StateError


@dataclass
class MockAgent:
    """Learner stand-in: hyperparameters plus a token identifying its weights."""
    hyperparams: HyperParams
    weights: int
    action_dim: int = 1
    alpha: float = 0.1

    def copy_from(self, other: "MockAgent") -> None:
        self.weights = other.weights
        self.hyperparams = other.hyperparams.model_copy()


def mock_population(fitness, rng: Optional[np.random.Generator] = None, space=None):
    rng = rng or np.random.default_rng(0)
    space = space or SearchSpace()
    return [
        PopulationMember(member_id=i, agent=MockAgent(sample_hyperparams(space, rng), weights=i),
                         fitness=float(f))
        for i, f in enumerate(fitness)
    ]


def tiny_run_config(**evolution) -> RunConfig:
    settings = dict(
        population_size=3, epochs=2, steps_per_epoch=10, eval_episodes=1, warmup_samples=100,
        buffer_capacity=10_000,
        search={"a": {"max": 2}, "c": {"max": 3}, "k": {"max": 4}},
    )
    settings.update(evolution)
    return RunConfig(
        mode="aac", env_id="pendulum", seed=7,
        evolution=settings,
        agent=AgentConfig(hidden_sizes=(8, 8), batch_size=16),
        env={"pendulum": {"max_steps": 40}},
    )


class TestInitialization:
    """
    Feature: Population initialization

    As the evolution loop
    I want members drawn uniformly from the search ranges
    So that the initial population covers the hyperparameter space
    """

    @pytest.mark.evolution
    def test_members_lie_inside_ranges(self, bdd):
        """
        Scenario: Build a default population of 20

        Given the default search ranges
        When I initialize 20 members on the pendulum
        Then every hyperparameter should lie within its range and k within the task's maximum
        """
        config = EvolutionConfig(population_size=20)
        members = init_population(config, np.random.default_rng(0), "pendulum",
                                  AgentConfig(hidden_sizes=(4, 4)))
        bdd.when("I initialize the population", members)
        bdd.then("there are 20 members", len(members) == 20)
        bdd.then("ids are 0..19", [m.member_id for m in members] == list(range(20)))
        bdd.then("every member is inside the ranges",
                 all(m.hyperparams.within(config.search) for m in members))
        bdd.then("wrappers run the member's k", all(m.wrapper.k == m.hyperparams.k for m in members))

    @pytest.mark.evolution
    @pytest.mark.statistical
    def test_real_draws_are_uniform(self):
        """
        Scenario: Kolmogorov-Smirnov test of h draws

        Given the default h range [0.25, 1.75]
        When I draw 10,000 hyperparameter sets
        Then h should pass a KS test against U(0.25, 1.75) at the 0.1% level
        """
        rng = np.random.default_rng(11)
        space = SearchSpace()
        h = [sample_hyperparams(space, rng).h for _ in range(10_000)]
        assert stats.kstest(h, "uniform", args=(0.25, 1.5)).pvalue > 0.001

    @pytest.mark.evolution
    def test_integer_draws_cover_both_bounds(self):
        rng = np.random.default_rng(2)
        space = SearchSpace()
        ks = {sample_hyperparams(space, rng).k for _ in range(2000)}
        assert ks == set(range(1, 16))

    @pytest.mark.evolution
    def test_two_members_make_groups_of_one(self):
        assert EvolutionConfig(population_size=2).group_size == 1

    @pytest.mark.evolution
    def test_k_range_is_capped_by_the_task(self):
        """
        Scenario: Newsvendor allows k up to 5

        Given the default k range 1..15
        When I cap it at 5
        Then k should range over 1..5 and the other ranges stay unchanged
        """
        space = effective_search_space(SearchSpace(), 5)
        assert space.k_values == [1, 2, 3, 4, 5]
        assert space.h == SearchSpace().h
        with pytest.raises(InvalidInputError):
            effective_search_space(SearchSpace(k={"min": 6, "max": 9}), 5)

    @pytest.mark.evolution
    def test_partial_range_override_keeps_defaults(self):
        space = SearchSpace(a={"max": 2})
        assert (space.a.min, space.a.max, space.a.delta, space.a.integer) == (1, 2, 2, True)


class TestFitness:
    """
    Feature: Fitness evaluation

    As the evolution loop
    I want each member scored by its deterministic return at its own k
    So that members are compared on what they would actually do
    """

    @pytest.mark.evolution
    def test_fitness_counts_all_inner_rewards(self, scripted_factory, make_agent):
        """
        Scenario: Constant reward at k = 4

        Given a task paying 0.25 per base step for 200 steps and a member with k = 4
        When I evaluate its fitness
        Then the fitness should be 50 and not marked inherited
        """
        hp = HyperParams(a=1, c=1, h=1.0, k=4, g=-4.0)
        member = PopulationMember(member_id=0, agent=make_agent(hp=hp), inherited_fitness=True)
        fitness = evaluate_fitness(member, scripted_factory(reward=0.25), episodes=2, seed=1)
        assert fitness == pytest.approx(50.0)
        assert member.fitness == fitness and not member.inherited_fitness

    @pytest.mark.evolution
    def test_fitness_is_reproducible(self, make_agent):
        from aac_lab.envs import env_factory
        factory = env_factory("pendulum", {"max_steps": 30})
        hp = HyperParams(a=1, c=1, h=1.0, k=2, g=-4.0)
        member = PopulationMember(member_id=0, agent=make_agent(obs_dim=4, hp=hp))
        assert evaluate_fitness(member, factory, 2, seed=5) == evaluate_fitness(member, factory, 2, seed=5)


class TestExchange:
    """
    Feature: Elite/bad exchange

    As the evolution loop
    I want the worst members replaced by perturbed copies of the best
    So that good hyperparameters spread while exploration continues
    """

    @pytest.mark.evolution
    def test_worked_example_with_real_agents(self, make_agent, filled_buffer):
        """
        Scenario: Five members with fitness [3, 1, 5, 2, 4]

        Given five trained agents with those fitnesses
        When I run one exchange at epoch 2
        Then member 1 should carry member 2's networks, Adam states and alpha,
        And inherit fitness 5 with a lineage entry, while the others are untouched
        """
        # Given
        members = []
        for i, f in enumerate([3.0, 1.0, 5.0, 2.0, 4.0]):
            agent = make_agent(seed=i, config=AgentConfig(hidden_sizes=(8, 8), batch_size=8))
            agent.train_step(filled_buffer)
            members.append(PopulationMember(member_id=i, agent=agent, fitness=f))
        elite_actor = members[2].agent.actor.copy()
        untouched = {i: members[i].agent.actor.copy() for i in (0, 3, 4)}
        config = EvolutionConfig(population_size=5)

        # When
        exchange(members, config, np.random.default_rng(0), epoch=2)

        # Then
        bad, elite = members[1], members[2]
        assert bad.agent.actor.equals(elite_actor), "Bad member should carry the elite's actor"
        assert all(b.equals(e) for b, e in zip(bad.agent.critics, elite.agent.critics))
        assert bad.agent.actor_opt.equals(elite.agent.actor_opt)
        assert bad.agent.critic_opts[0].equals(elite.agent.critic_opts[0])
        assert np.array_equal(bad.agent.log_alpha, elite.agent.log_alpha)
        assert bad.fitness == 5.0 and bad.inherited_fitness
        assert bad.lineage == [(2, 2)] and bad.lineage_text() == "2:2"
        assert bad.hyperparams.within(config.search)
        assert elite.agent.actor.equals(elite_actor), "Elite must not change"
        for i, actor in untouched.items():
            assert members[i].agent.actor.equals(actor), f"Member {i} must not change"

    @pytest.mark.evolution
    def test_ties_prefer_lower_ids(self):
        """
        Scenario: All fitnesses equal

        Given five members with fitness 7
        When I rank them
        Then member 0 should be the elite and member 4 the bad
        """
        members = mock_population([7.0] * 5)
        ranked = rank_members(members)
        assert ranked[0].member_id == 0 and ranked[-1].member_id == 4
        exchange(members, EvolutionConfig(population_size=5), np.random.default_rng(1))
        assert members[4].agent.weights == 0
        assert members[4].lineage == [(0, 0)]

    @pytest.mark.evolution
    def test_unevaluated_member_blocks_exchange(self):
        members = mock_population([1.0, 2.0])
        members[0].fitness = None
        with pytest.raises(StateError):
            exchange(members, EvolutionConfig(population_size=2), np.random.default_rng(0))

    @pytest.mark.evolution
    def test_ranking_is_invariant_to_affine_fitness_maps(self):
        rng = np.random.default_rng(3)
        fitness = rng.normal(size=12)
        a = [m.member_id for m in rank_members(mock_population(fitness))]
        b = [m.member_id for m in rank_members(mock_population(3.0 * fitness + 7.0))]
        assert a == b

    @pytest.mark.evolution
    def test_perturbation_clamps_at_bounds(self):
        """
        Scenario: Push every parameter past its upper bound

        Given h = 1.75, k = 15, a = 10, c = 40, g = -1 and draws at the top of each window
        When I perturb
        Then every value should stay at its maximum
        """
        class TopRng:
            def integers(self, low, high):
                return high - 1

            def uniform(self, low, high):
                return high

        hp = HyperParams(a=10, c=40, h=1.75, k=15, g=-1.0)
        out = perturb_hyperparams(hp, SearchSpace(), TopRng())
        assert (out.a, out.c, out.h, out.k, out.g) == (10, 40, 1.75, 15, -1.0)

    @pytest.mark.evolution
    @pytest.mark.slow
    def test_matches_independent_oracle(self):
        """
        Scenario: Compare 10,000 exchanges with a re-implementation

        Given random populations of 2..50 mock members, some with tied fitness
        When I run exchange and an oracle on identically seeded generators
        Then sources, perturbed hyperparameters and untouched members should agree
        """
        space = SearchSpace()
        draws = np.random.default_rng(2025)
        for trial in range(10_000):
            # Given
            m = int(draws.integers(2, 51))
            if trial % 3 == 0:
                fitness = draws.integers(0, 4, size=m).astype(float)
            else:
                fitness = draws.normal(size=m)
            members = mock_population(fitness, draws, space)
            before = [m_.hyperparams for m_ in members]
            config = EvolutionConfig(population_size=m)

            # Oracle
            oracle_rng = np.random.default_rng(trial)
            n = math.ceil(m * 0.2)
            order = np.lexsort((np.arange(m), -fitness))
            elites, bads = order[:n], order[m - n:]
            bad_perm, elite_perm = oracle_rng.permutation(n), oracle_rng.permutation(n)
            expected = {}
            for bi, ei in zip(bad_perm, elite_perm):
                bad, elite = int(bads[bi]), int(elites[ei])
                values = {}
                for name in HYPERPARAM_NAMES:
                    prange = getattr(space, name)
                    current = getattr(before[elite], name)
                    if prange.integer:
                        width = max(1, math.ceil(prange.delta))
                        moved = current + int(oracle_rng.integers(-width + 1, width))
                    else:
                        moved = current + oracle_rng.uniform(-prange.delta, prange.delta)
                    values[name] = min(prange.max, max(prange.min, moved))
                expected[bad] = (elite, values)

            # When
            exchange(members, config, np.random.default_rng(trial))

            # Then
            for member in members:
                i = member.member_id
                if i in expected:
                    source, values = expected[i]
                    assert member.agent.weights == source
                    for name, value in values.items():
                        assert getattr(member.hyperparams, name) == pytest.approx(value)
                    assert member.hyperparams.within(space)
                else:
                    assert member.agent.weights == i
                    assert member.hyperparams == before[i]

    @pytest.mark.evolution
    @pytest.mark.statistical
    def test_selection_drives_toward_optimum(self):
        """
        Scenario: Fitness depends on h alone

        Given 20 independent populations of 10 mock members with fitness -(h - 1)^2
        When I run 50 epochs of evaluation and exchange
        Then the best distance to h = 1 should never grow,
        And a sign test over populations should show improvement at the 1% level
        """
        improved, worsened = 0, 0
        for rep in range(20):
            rng = np.random.default_rng(rep)
            members = mock_population(np.zeros(10), rng)
            config = EvolutionConfig(population_size=10)
            history = []
            for epoch in range(50):
                for member in members:
                    member.fitness = -(member.hyperparams.h - 1.0) ** 2
                history.append(min(abs(mm.hyperparams.h - 1.0) for mm in members))
                exchange(members, config, rng, epoch)
            assert all(b <= a for a, b in zip(history, history[1:])), f"Best got worse in rep {rep}"
            improved += history[-1] < history[0]
            worsened += history[-1] > history[0]
        assert worsened == 0
        assert stats.binomtest(improved, improved + worsened, 0.5, alternative="greater").pvalue < 0.01


class TestEvolutionRunner:
    """
    Feature: Epoch runner

    As an experimenter
    I want warmup, training, evaluation and exchange run end to end
    So that one call produces a reproducible population history
    """

    @pytest.mark.evolution
    def test_each_iteration_adds_one_transition_per_member(self):
        """
        Scenario: One epoch of one iteration

        Given M = 3, T = 1 and 100 warmup samples
        When I run the loop
        Then the buffer should hold 103 transitions
        """
        runner = EvolutionRunner(tiny_run_config(epochs=1, steps_per_epoch=1))
        runner.run()
        assert len(runner.buffer) == 103

    @pytest.mark.evolution
    def test_zero_epochs_only_evaluates(self):
        """
        Scenario: E = 0

        Given a configuration with zero epochs
        When I run it
        Then one row per member should be recorded for epoch 0 with no exchange
        """
        result = EvolutionRunner(tiny_run_config(epochs=0)).run()
        records = result.records
        assert len(records) == 3 and set(records["epoch"]) == {0}
        assert records["fitness"].notna().all()
        assert (records["lineage"] == "").all()

    @pytest.mark.evolution
    def test_records_follow_the_epochs(self):
        result = EvolutionRunner(tiny_run_config()).run()
        records = result.records
        assert list(records["epoch"]) == [1, 1, 1, 2, 2, 2]
        assert result.total_env_steps == records["total_env_steps"].iloc[-1]
        for name in HYPERPARAM_NAMES:
            assert name in records.columns
        assert result.best.fitness == records[records["epoch"] == 2]["fitness"].max()

    @pytest.mark.evolution
    def test_env_step_budget_stops_early(self):
        config = tiny_run_config(epochs=5).model_copy(update={"total_env_steps": 20})
        result = EvolutionRunner(config).run()
        assert set(result.records["epoch"]) == {1}
        assert result.total_env_steps >= 20

    @pytest.mark.evolution
    @pytest.mark.slow
    def test_population_csv_is_reproducible_and_thread_independent(self, tmp_path):
        """
        Scenario: Same seed, one thread versus three

        Given the same configuration run twice single-threaded and once with 3 threads
        When I compare the written population tables
        Then all three files should be byte-identical
        """
        tables = []
        for name, threads in (("a", 1), ("b", 1), ("c", 3)):
            config = tiny_run_config().model_copy(update={"num_threads": threads})
            store = RunStore.create(config, tmp_path / name)
            EvolutionRunner(config, store).run()
            tables.append((tmp_path / name / "population.csv").read_bytes())
        assert tables[0] == tables[1] == tables[2]

    @pytest.mark.evolution
    def test_artifacts_are_written(self, tmp_path):
        config = tiny_run_config(epochs=1)
        store = RunStore.create(config, tmp_path / "run")
        EvolutionRunner(config, store).run()
        manifest = RunStore.open(tmp_path / "run").manifest
        assert manifest.status == "complete"
        assert len(store.checkpoints()) == 3
        table = pd.read_csv(tmp_path / "run" / "population.csv")
        assert {"seed", "config_hash"} <= set(table.columns)

    @pytest.mark.evolution
    def test_numeric_failure_names_the_member(self, tmp_path, monkeypatch):
        """
        Scenario: A learner produces NaN

        Given a train step that raises a NumericError
        When the runner trains
        Then the error should carry member id, epoch and phase and the run be marked failed
        """
        def broken(self, buffer):
            raise NumericError("non-finite critic loss")

        monkeypatch.setattr(Agent, "train_step", broken)
        config = tiny_run_config()
        store = RunStore.create(config, tmp_path / "run")
        with pytest.raises(NumericError) as excinfo:
            EvolutionRunner(config, store).run()
        assert excinfo.value.context == {"member_id": 0, "epoch": 1, "phase": "train"}
        assert RunStore.open(tmp_path / "run").manifest.status == "failed"

    @pytest.mark.evolution
    def test_runner_requires_evolution_section(self):
        with pytest.raises(ValueError):
            EvolutionRunner(RunConfig(mode="sac"))
