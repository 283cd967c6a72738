"""
aac-lab - Replay Buffer BDD Tests

This module contains BDD style test scenarios for the shared replay buffer.
Tests cover FIFO eviction, uniform sampling, concurrent writers, warmup
quotas and snapshots.

Context:
- One buffer is shared by the whole population
- Sampling is uniform with replacement over the stored transitions
- Warmup splits random-policy experience evenly over the k range
"""

import threading

import numpy as np
import pytest
from scipy import stats

from aac_lab.envs import PersistenceWrapper, Transition
from aac_lab.replay import Batch, ReplayBuffer, split_evenly, warmup
from aac_lab.utils import InvalidInputError, RunInputError, StateError
from tests.conftest import random_transition


def tagged(value: float, k_max: int = 3) -> Transition:
    """Transition whose every field encodes `value`."""
    rewards = np.zeros(k_max)
    rewards[0] = value
    return Transition(
        state=np.array([value, value]),
        action=np.array([0.0]),
        rewards=rewards,
        next_state=np.array([value, value]),
        done=False,
        k=1,
    )


class TestFifoStorage:
    """
    Feature: Fixed-capacity FIFO storage

    As a population of learners
    I want the oldest experience evicted first
    So that memory stays bounded while data stays fresh
    """

    @pytest.mark.replay
    def test_oldest_transitions_are_evicted(self, bdd):
        """
        Scenario: Push five transitions into a buffer of three

        Given an empty buffer with capacity 3
        When I push transitions tagged 1..5
        Then the buffer should hold 3, 4, 5 in that order
        """
        buffer = ReplayBuffer(3, obs_dim=2, action_dim=1, k_max=3)
        bdd.given("an empty buffer", len(buffer) == 0)

        buffer.push_many(tagged(float(v)) for v in range(1, 6))
        bdd.when("I read the contents", buffer.contents())

        bdd.then("three transitions are kept", len(buffer) == 3 and buffer.is_full)
        bdd.then("they are the newest, oldest first",
                 list(bdd.result.rewards[:, 0]) == [3.0, 4.0, 5.0])

    @pytest.mark.replay
    def test_sampling_empty_buffer_fails(self):
        buffer = ReplayBuffer(3, obs_dim=2, action_dim=1, k_max=3)
        with pytest.raises(StateError):
            buffer.sample(4, np.random.default_rng(0))

    @pytest.mark.replay
    @pytest.mark.parametrize("scenario", [
        {
            "given": "a state of the wrong width",
            "transition": Transition(np.zeros(3), np.zeros(1), np.zeros(3), np.zeros(3), False, 1),
        },
        {
            "given": "a reward past the commanded k",
            "transition": Transition(np.zeros(2), np.zeros(1), np.array([1.0, 1.0, 0.0]),
                                     np.zeros(2), False, 1),
        },
        {
            "given": "k above k_max",
            "transition": Transition(np.zeros(2), np.zeros(1), np.zeros(3), np.zeros(2), False, 4),
        },
        {
            "given": "an action outside [-1, 1]",
            "transition": Transition(np.zeros(2), np.array([2.0]), np.zeros(3), np.zeros(2), False, 1),
        },
    ])
    def test_malformed_transitions_are_rejected(self, scenario):
        """
        Scenario: Reject malformed transitions

        Given a buffer with obs_dim 2, |A| 1, k_max 3
        When I push a malformed transition
        Then an InvalidInputError should be raised and nothing stored
        """
        buffer = ReplayBuffer(10, obs_dim=2, action_dim=1, k_max=3)
        with pytest.raises(InvalidInputError):
            buffer.push(scenario["transition"])
        assert len(buffer) == 0


class TestSampling:
    """
    Feature: Uniform sampling

    As a learner
    I want every stored transition equally likely in a batch
    So that updates are unbiased over the shared experience
    """

    @pytest.mark.replay
    @pytest.mark.statistical
    def test_sampling_is_uniform(self):
        """
        Scenario: Chi-square test of sample frequencies

        Given a full buffer of 10 distinct transitions
        When I draw 20,000 samples
        Then a chi-square test should not reject uniformity at the 0.1% level
        """
        buffer = ReplayBuffer(10, obs_dim=2, action_dim=1, k_max=3)
        buffer.push_many(tagged(float(v)) for v in range(10))
        batch = buffer.sample(20_000, np.random.default_rng(7))
        counts = np.bincount(batch.rewards[:, 0].astype(int), minlength=10)
        assert stats.chisquare(counts).pvalue > 0.001

    @pytest.mark.replay
    def test_batch_rows_are_stored_transitions(self, filled_buffer):
        batch = filled_buffer.sample(32, np.random.default_rng(0))
        stored = filled_buffer.contents()
        assert len(batch) == 32
        for i in range(len(batch)):
            row = batch.transition(i)
            assert any(np.array_equal(row.state, s) for s in stored.states)

    @pytest.mark.replay
    def test_batch_from_transitions_requires_rows(self):
        with pytest.raises(InvalidInputError):
            Batch.from_transitions([])


class TestConcurrentWriters:
    """
    Feature: Thread-safe pushes

    As a parallel population
    I want concurrent pushes to never interleave within a record
    So that every stored transition is internally consistent
    """

    @pytest.mark.replay
    def test_no_torn_records_under_concurrency(self):
        """
        Scenario: Twenty writers push 1000 transitions each

        Given a buffer large enough for every push
        When twenty threads push tagged transitions concurrently
        Then all 20,000 should be stored and each record's fields should agree
        """
        # Given
        buffer = ReplayBuffer(20_000, obs_dim=2, action_dim=1, k_max=3)

        def writer(wid: int) -> None:
            for i in range(1000):
                buffer.push(tagged(float(wid * 1000 + i)))

        # When
        threads = [threading.Thread(target=writer, args=(w,)) for w in range(20)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        # Then
        contents = buffer.contents()
        assert len(buffer) == 20_000
        tags = contents.rewards[:, 0]
        assert np.array_equal(contents.states[:, 0], tags)
        assert np.array_equal(contents.next_states[:, 1], tags)
        assert len(np.unique(tags)) == 20_000, "Every push should be stored exactly once"


class TestWarmup:
    """
    Feature: Random-policy warmup

    As a population of learners
    I want the buffer seeded with experience across the k range
    So that early updates see every persistence value
    """

    @pytest.mark.replay
    @pytest.mark.parametrize("scenario", [
        {"n": 10, "k_values": [1, 2, 3], "expected": {1: 4, 2: 3, 3: 3}},
        {"n": 2, "k_values": [1, 2, 3], "expected": {1: 1, 2: 1, 3: 0}},
        {"n": 9, "k_values": [4], "expected": {4: 9}},
    ])
    def test_split_evenly(self, scenario):
        assert split_evenly(scenario["n"], scenario["k_values"]) == scenario["expected"]

    @pytest.mark.replay
    def test_warmup_fills_quotas(self, scripted_factory):
        """
        Scenario: Warm up 30 transitions over k = 1..3

        Given an empty buffer and a scripted task with short episodes
        When I run warmup for 30 transitions
        Then each k should contribute 10 stored transitions
        """
        buffer = ReplayBuffer(100, obs_dim=2, action_dim=1, k_max=3)
        wrapper = PersistenceWrapper(scripted_factory(max_steps=6)(0), k_max=3)
        collected = warmup(buffer, wrapper, [1, 2, 3], 30, np.random.default_rng(0))
        assert collected == {1: 10, 2: 10, 3: 10}
        assert buffer.k_counts() == {1: 10, 2: 10, 3: 10}

    @pytest.mark.replay
    def test_empty_k_range_is_rejected(self):
        with pytest.raises(InvalidInputError):
            split_evenly(5, [])


class TestSnapshots:
    """
    Feature: Replay snapshots

    As an experimenter
    I want to save and restore buffer contents
    So that a run's experience can be inspected offline
    """

    @pytest.mark.replay
    def test_snapshot_restores_contents_and_order(self, tmp_path):
        rng = np.random.default_rng(1)
        buffer = ReplayBuffer(5, obs_dim=2, action_dim=1, k_max=3)
        buffer.push_many(random_transition(rng) for _ in range(8))

        restored = ReplayBuffer.load(buffer.save(tmp_path / "replay"))

        original, loaded = buffer.contents(), restored.contents()
        assert len(restored) == 5 and restored.capacity == 5
        for name in ("states", "actions", "rewards", "next_states", "dones", "ks"):
            assert np.array_equal(getattr(original, name), getattr(loaded, name)), name

    @pytest.mark.replay
    def test_missing_snapshot_names_path(self, tmp_path):
        with pytest.raises(RunInputError) as excinfo:
            ReplayBuffer.load(tmp_path / "missing.npz")
        assert "missing.npz" in str(excinfo.value)
