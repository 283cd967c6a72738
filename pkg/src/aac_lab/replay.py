"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: replay.py
Description: Shared fixed-capacity replay buffer
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Store the experience of every population member in one FIFO ring and
    serve uniformly sampled mini-batches:
    - ReplayBuffer: preallocated column storage, oldest-first eviction
    - push / sample: atomic at record granularity under a lock
    - warmup: random-policy collection split evenly over a k range
    - save / load: versioned .npz snapshot for run resumption

Storage Layout:
    states (N, obs_dim), actions (N, |A|), rewards (N, k_max),
    next_states (N, obs_dim), dones (N,), ks (N,)
    where obs_dim includes the appended k slot.
=============================================================================
"""

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .envs import PersistenceWrapper, Transition, random_policy
from .utils import InvalidInputError, RunInputError, StateError

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "aac-lab-replay"
SNAPSHOT_VERSION = 1


@dataclass
class Batch:
    """A mini-batch of transitions in column form."""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    ks: np.ndarray

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def transition(self, i: int) -> Transition:
        return Transition(
            state=self.states[i].copy(),
            action=self.actions[i].copy(),
            rewards=self.rewards[i].copy(),
            next_state=self.next_states[i].copy(),
            done=bool(self.dones[i]),
            k=int(self.ks[i]),
        )

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        if not transitions:
            raise InvalidInputError("cannot build a batch from zero transitions")
        return cls(
            states=np.stack([t.state for t in transitions]),
            actions=np.stack([t.action for t in transitions]),
            rewards=np.stack([t.rewards for t in transitions]),
            next_states=np.stack([t.next_state for t in transitions]),
            dones=np.array([t.done for t in transitions], dtype=np.float64),
            ks=np.array([t.k for t in transitions], dtype=np.int64),
        )


class ReplayBuffer:
    """
    Fixed-capacity FIFO ring of Transitions shared by the whole population.

    Attributes:
        capacity: Maximum number of stored transitions
        obs_dim: Observation width including the k slot
        action_dim: |A|
        k_max: Reward-array length
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, k_max: int):
        if capacity < 1 or obs_dim < 1 or action_dim < 1 or k_max < 1:
            raise InvalidInputError(
                f"invalid buffer shape: capacity={capacity}, obs_dim={obs_dim}, "
                f"action_dim={action_dim}, k_max={k_max}"
            )
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.k_max = int(k_max)

        self._states = np.zeros((self.capacity, self.obs_dim))
        self._actions = np.zeros((self.capacity, self.action_dim))
        self._rewards = np.zeros((self.capacity, self.k_max))
        self._next_states = np.zeros((self.capacity, self.obs_dim))
        self._dones = np.zeros(self.capacity)
        self._ks = np.zeros(self.capacity, dtype=np.int64)

        self._cursor = 0
        self._count = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._count

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def is_full(self) -> bool:
        return self._count == self.capacity

    def push(self, transition: Transition) -> None:
        """Append one transition, evicting the oldest when full."""
        self._check(transition)
        with self._lock:
            i = self._cursor
            self._states[i] = transition.state
            self._actions[i] = transition.action
            self._rewards[i] = transition.rewards
            self._next_states[i] = transition.next_state
            self._dones[i] = float(transition.done)
            self._ks[i] = transition.k
            self._cursor = (i + 1) % self.capacity
            self._count = min(self._count + 1, self.capacity)

    def push_many(self, transitions: Iterable[Transition]) -> None:
        for transition in transitions:
            self.push(transition)

    def _check(self, t: Transition) -> None:
        if t.state.shape != (self.obs_dim,) or t.next_state.shape != (self.obs_dim,):
            raise InvalidInputError(
                f"state shape {t.state.shape} / {t.next_state.shape} != ({self.obs_dim},)"
            )
        if t.action.shape != (self.action_dim,):
            raise InvalidInputError(f"action shape {t.action.shape} != ({self.action_dim},)")
        t.validate(self.k_max)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """
        Draw `batch_size` stored transitions uniformly with replacement.

        Raises:
            StateError: if the buffer is empty
        """
        if batch_size < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {batch_size}")
        with self._lock:
            if self._count == 0:
                raise StateError("cannot sample from an empty replay buffer")
            idx = rng.integers(0, self._count, size=batch_size)
            return self._gather(idx)

    def _gather(self, idx: np.ndarray) -> Batch:
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            dones=self._dones[idx],
            ks=self._ks[idx],
        )

    def _ordered_indices(self) -> np.ndarray:
        if self._count < self.capacity:
            return np.arange(self._count)
        return (np.arange(self.capacity) + self._cursor) % self.capacity

    def contents(self) -> Batch:
        """All stored transitions, oldest first."""
        with self._lock:
            return self._gather(self._ordered_indices())

    def k_counts(self) -> Dict[int, int]:
        """Number of stored transitions per commanded k."""
        with self._lock:
            ks, counts = np.unique(self._ks[: self._count], return_counts=True)
        return {int(k): int(n) for k, n in zip(ks, counts)}

    def save(self, path: Union[str, Path]) -> Path:
        """Write the stored transitions (oldest first) to a versioned .npz file."""
        path = Path(path)
        if path.suffix != ".npz":
            path = path.with_suffix(".npz")
        batch = self.contents()
        header = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "capacity": self.capacity,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "k_max": self.k_max,
            "count": len(batch),
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            __header__=np.array(json.dumps(header, sort_keys=True)),
            states=batch.states,
            actions=batch.actions,
            rewards=batch.rewards,
            next_states=batch.next_states,
            dones=batch.dones,
            ks=batch.ks,
        )
        logger.info("Saved %d transitions to %s", len(batch), path)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ReplayBuffer":
        """Rebuild a buffer from a snapshot written by save()."""
        path = Path(path)
        if not path.exists():
            raise RunInputError(path, "replay snapshot not found")
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data["__header__"]))
                if header.get("format") != SNAPSHOT_FORMAT:
                    raise RunInputError(path, "not an aac-lab replay snapshot")
                if header.get("version", 0) > SNAPSHOT_VERSION:
                    raise RunInputError(path, f"snapshot version {header['version']} unsupported")
                buffer = cls(header["capacity"], header["obs_dim"],
                             header["action_dim"], header["k_max"])
                n = header["count"]
                buffer._states[:n] = data["states"]
                buffer._actions[:n] = data["actions"]
                buffer._rewards[:n] = data["rewards"]
                buffer._next_states[:n] = data["next_states"]
                buffer._dones[:n] = data["dones"]
                buffer._ks[:n] = data["ks"]
                buffer._count = n
                buffer._cursor = n % buffer.capacity
        except (KeyError, ValueError, OSError) as exc:
            raise RunInputError(path, f"corrupt replay snapshot ({exc})") from exc
        return buffer


def split_evenly(n: int, k_values: Sequence[int]) -> Dict[int, int]:
    """Per-k quotas summing to n that differ by at most one."""
    if not k_values:
        raise InvalidInputError("k range is empty")
    base, extra = divmod(int(n), len(k_values))
    return {int(k): base + (1 if i < extra else 0) for i, k in enumerate(k_values)}


def warmup(
    buffer: ReplayBuffer,
    wrapper: PersistenceWrapper,
    k_values: Sequence[int],
    n: int,
    rng: np.random.Generator,
) -> Dict[int, int]:
    """
    Fill the buffer with random-policy experience split evenly over k values.

    Args:
        buffer: Destination buffer
        wrapper: Environment wrapper used for collection (its k is changed)
        k_values: Persistence values to cycle through
        n: Total number of transitions
        rng: Source of the uniform random actions

    Returns:
        Number of transitions collected per k
    """
    quotas = split_evenly(n, k_values)
    policy = random_policy(rng, wrapper.spec.action_dim)
    collected: Dict[int, int] = {}
    for k, quota in quotas.items():
        collected[k] = 0
        if quota == 0:
            continue
        wrapper.set_k(k)
        obs = wrapper.reset()
        while collected[k] < quota:
            step = wrapper.step_persistent(policy(obs))
            buffer.push(step.transition)
            collected[k] += 1
            obs = wrapper.reset() if step.episode_over else step.transition.next_state
    logger.info("Warmup collected %d transitions over k=%s", sum(collected.values()),
                list(collected))
    return collected
