"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: agent.py
Description: SAC-style learner with self-regularized, persistence-aware critics
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    One actor-critic learner as used by every population member:
    - Tanh-squashed Gaussian actor, two critics (clipped double Q)
    - Learned entropy temperature alpha = exp(log_alpha)
    - td_target: reward-array TD target with a gamma^(k + 1) bootstrap
    - critic_update: TD loss plus a penalty on changes of Q(s', a') (no
      target networks)
    - actor_update: reparameterized policy step, then the alpha step
    - train_step: c critic updates then a actor updates, each on a fresh batch

Target Computation:
    y = sum_j gamma^j r[j]
        + (1 - d) gamma^(k + e) (min_i Q_i(s', a') - alpha log pi(a'|s'))
    with a' ~ pi(.|s') and e = AgentConfig.extra_discount_steps (default 1).
    The bootstrap term is treated as a constant.
=============================================================================
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .models import AgentConfig, HyperParams, TrainMetrics
from .neural_core import (
    AdamState,
    Checkpoint,
    DenseNet,
    LOG_STD_MAX,
    LOG_STD_MIN,
    GaussianPolicyHead,
    NetGradients,
    adam_step,
    load_checkpoint,
    sample_squashed,
    save_checkpoint,
    squashed_output_gradient,
)
from .replay import Batch, ReplayBuffer
from .utils import InvalidInputError, NumericError, check_finite

logger = logging.getLogger(__name__)


class CriticLike(Protocol):
    """Anything with DenseNet's forward/backward contract and a scalar output."""

    def forward(self, x: np.ndarray) -> np.ndarray: ...

    def backward(self, grad_output: np.ndarray) -> NetGradients: ...


def build_actor(obs_dim: int, action_dim: int, hidden: Sequence[int],
                rng: np.random.Generator) -> DenseNet:
    """Actor network: observation -> [mean, raw log-std]."""
    return DenseNet((obs_dim, *hidden, 2 * action_dim), rng=rng)


def build_critic(obs_dim: int, action_dim: int, hidden: Sequence[int],
                 rng: np.random.Generator) -> DenseNet:
    """Critic network: observation ++ action -> Q."""
    return DenseNet((obs_dim + action_dim, *hidden, 1), rng=rng)


def policy_head(actor: DenseNet, states: np.ndarray, action_dim: int,
                log_std_range: Tuple[float, float] = (LOG_STD_MIN, LOG_STD_MAX),
                ) -> GaussianPolicyHead:
    """Run the actor on a batch of states and read off the Gaussian head."""
    return GaussianPolicyHead.from_output(actor.forward(np.atleast_2d(states)), action_dim,
                                          log_std_range)


def discount_weights(gamma: float, length: int) -> np.ndarray:
    """[gamma^0, gamma^1, ..., gamma^(length-1)]."""
    return gamma ** np.arange(length, dtype=np.float64)


@dataclass
class SoftNextValue:
    """Entropy-adjusted next-state value and the sampled next actions."""
    value: np.ndarray
    next_inputs: np.ndarray
    per_critic: List[np.ndarray]
    log_prob: np.ndarray


def soft_next_value(
    batch: Batch,
    actor: DenseNet,
    critics: Sequence[CriticLike],
    alpha: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    log_std_range: Tuple[float, float] = (LOG_STD_MIN, LOG_STD_MAX),
) -> SoftNextValue:
    """
    min_i Q_i(s', a') - alpha * log pi(a'|s') with a' freshly sampled at s'.
    """
    action_dim = batch.actions.shape[1]
    head = policy_head(actor, batch.next_states, action_dim, log_std_range)
    drawn = sample_squashed(head, rng=rng, noise=noise)
    next_inputs = np.concatenate([batch.next_states, drawn.action], axis=1)
    per_critic = [np.asarray(c.forward(next_inputs)).reshape(-1) for c in critics]
    value = np.minimum.reduce(per_critic) - alpha * drawn.log_prob
    return SoftNextValue(value=value, next_inputs=next_inputs,
                         per_critic=per_critic, log_prob=drawn.log_prob)


def assemble_td_target(
    batch: Batch,
    gamma: float,
    next_value: np.ndarray,
    extra_discount_steps: int = 1,
) -> np.ndarray:
    """Discounted reward array plus the (1 - d) gamma^(k + e) bootstrap."""
    if not 0.0 < gamma < 1.0:
        raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
    reward_sum = batch.rewards @ discount_weights(gamma, batch.rewards.shape[1])
    bootstrap = (1.0 - batch.dones) * gamma ** (batch.ks + extra_discount_steps) * next_value
    target = reward_sum + bootstrap
    check_finite("TD target", target)
    return target


def td_target(
    batch: Batch,
    gamma: float,
    actor: DenseNet,
    critics: Sequence[CriticLike],
    alpha: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    extra_discount_steps: int = 1,
    log_std_range: Tuple[float, float] = (LOG_STD_MIN, LOG_STD_MAX),
) -> np.ndarray:
    """
    Persistence-aware soft TD target, one value per batch row.

    Args:
        batch: Sampled transitions
        gamma: Discount in (0, 1)
        actor: Policy network used to sample a' at s'
        critics: Critics used for the (clipped) bootstrap
        alpha: Entropy temperature
        rng / noise: Source of the a' sample
        extra_discount_steps: e in gamma^(k + e)
        log_std_range: Clamp of the actor log-std
    """
    soft = soft_next_value(batch, actor, critics, alpha, rng=rng, noise=noise,
                           log_std_range=log_std_range)
    return assemble_td_target(batch, gamma, soft.value, extra_discount_steps)


def regularized_critic_step(
    critic: DenseNet,
    optimizer: AdamState,
    inputs: np.ndarray,
    targets: np.ndarray,
    next_inputs: Optional[np.ndarray] = None,
    frozen_next: Optional[np.ndarray] = None,
) -> Tuple[float, float]:
    """
    One Adam step on mean[(Q(s,a) - y)^2] + mean[(frozen Q(s',a') - Q(s',a'))^2].

    Without next_inputs the second term is omitted (plain TD regression).
    Without frozen_next the critic's own current Q(s', a') is frozen.

    Returns:
        (TD loss, regularizer) evaluated before the step
    """
    n = inputs.shape[0]
    if next_inputs is None:
        q = critic.forward(inputs).reshape(-1)
        td = q - targets
        grad = (2.0 / n) * td
        reg_value = 0.0
    else:
        out = critic.forward(np.concatenate([inputs, next_inputs], axis=0)).reshape(-1)
        q, q_next = out[:n], out[n:]
        if frozen_next is None:
            frozen_next = q_next.copy()
        td = q - targets
        drift = frozen_next - q_next
        grad = np.concatenate([(2.0 / n) * td, (-2.0 / n) * drift])
        reg_value = float(np.mean(drift * drift))
    td_value = float(np.mean(td * td))
    if not math.isfinite(td_value + reg_value):
        raise NumericError("non-finite critic loss")
    grads = critic.backward(grad[:, None])
    adam_step(critic.parameters(), grads.as_list(), optimizer)
    return td_value, reg_value


class Agent:
    """
    SAC-style learner without target networks.

    Attributes:
        actor: Policy network (mean and raw log-std heads)
        critics: The two Q networks
        log_alpha: Entropy temperature in log space, shape (1,)
        actor_opt / critic_opts / alpha_opt: Adam states
        hyperparams: (a, c, h, k, g)
        config: Network and optimizer settings
        rng: Generator for batches and policy noise
    """

    regularize_next_value = True

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        hyperparams: HyperParams,
        config: Optional[AgentConfig] = None,
        rng: Optional[np.random.Generator] = None,
        batch_size: int = 256,
    ):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.hyperparams = hyperparams
        self.config = config or AgentConfig()
        self.rng = rng if rng is not None else np.random.default_rng()
        self.batch_size = int(self.config.batch_size or batch_size)

        hidden = self.config.hidden_sizes
        self.actor = build_actor(self.obs_dim, self.action_dim, hidden, self.rng)
        self.critics = (
            build_critic(self.obs_dim, self.action_dim, hidden, self.rng),
            build_critic(self.obs_dim, self.action_dim, hidden, self.rng),
        )
        self.log_alpha = np.array([math.log(self.config.initial_alpha)])

        self.actor_opt = AdamState.for_params(self.actor.parameters(), self.config.actor_lr)
        self.critic_opts = tuple(
            AdamState.for_params(c.parameters(), self.config.critic_lr) for c in self.critics
        )
        self.alpha_opt = AdamState.for_params([self.log_alpha], self.config.alpha_lr)
        self.update_counts: Dict[str, int] = {"critic": 0, "actor": 0}
        self.last_entropy = float("nan")

    @property
    def alpha(self) -> float:
        return float(math.exp(self.log_alpha[0]))

    @property
    def gamma(self) -> float:
        return self.hyperparams.gamma

    @property
    def target_entropy(self) -> float:
        return self.hyperparams.target_entropy(self.action_dim)

    def bootstrap_critics(self) -> Sequence[CriticLike]:
        """Critics evaluated at s' in the TD target (the online critics here)."""
        return self.critics

    def act(self, state: np.ndarray, stochastic: bool = True) -> np.ndarray:
        """
        Choose an action for one observation.

        Args:
            state: Observation including the k slot
            stochastic: Sample (training) or tanh(mean) (evaluation)
        """
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (self.obs_dim,):
            raise InvalidInputError(f"expected state of shape ({self.obs_dim},), got {state.shape}")
        head = policy_head(self.actor, state, self.action_dim, self.config.log_std_range)
        if stochastic:
            return sample_squashed(head, rng=self.rng).action[0]
        return head.deterministic()[0]

    def critic_update(self, buffer: ReplayBuffer, gamma: float) -> float:
        """
        One self-regularized update of each critic on a fresh batch.

        Returns:
            Sum over critics of TD loss plus regularizer (pre-step values)
        """
        batch = buffer.sample(self.batch_size, self.rng)
        alpha = self.alpha
        soft = soft_next_value(batch, self.actor, self.bootstrap_critics(), alpha, rng=self.rng,
                               log_std_range=self.config.log_std_range)
        targets = assemble_td_target(batch, gamma, soft.value, self.config.extra_discount_steps)
        inputs = np.concatenate([batch.states, batch.actions], axis=1)

        total = 0.0
        for i, (critic, opt) in enumerate(zip(self.critics, self.critic_opts)):
            if self.regularize_next_value:
                # penalize drift of this critic's own Q(s', a') from its pre-step value
                td, reg = regularized_critic_step(critic, opt, inputs, targets, soft.next_inputs)
            else:
                td, reg = regularized_critic_step(critic, opt, inputs, targets)
            total += td + reg
        self.update_counts["critic"] += 1
        return total

    def policy_loss_step(self, states: np.ndarray) -> Tuple[float, np.ndarray]:
        """
        One Adam step of the actor on a batch of states.

        Returns:
            (actor loss, log pi of the sampled actions) before the step
        """
        n = states.shape[0]
        alpha = self.alpha
        head = policy_head(self.actor, states, self.action_dim, self.config.log_std_range)
        drawn = sample_squashed(head, rng=self.rng)
        inputs = np.concatenate([states, drawn.action], axis=1)
        q_values = [np.asarray(c.forward(inputs)).reshape(-1) for c in self.critics]
        first_is_min = q_values[0] <= q_values[1]
        q_min = np.where(first_is_min, q_values[0], q_values[1])

        entropy_weight = alpha if self.config.entropy_in_actor_loss else 0.0
        loss = float(np.mean(entropy_weight * drawn.log_prob - q_min))
        if not math.isfinite(loss):
            raise NumericError("non-finite actor loss")

        # gradients reach the critics' inputs only; critic parameters are untouched
        masks = (first_is_min, ~first_is_min)
        grad_inputs = np.zeros_like(inputs)
        for critic, mask in zip(self.critics, masks):
            upstream = np.where(mask, -1.0 / n, 0.0)[:, None]
            grad_inputs += critic.backward(upstream).input
        grad_action = grad_inputs[:, self.obs_dim:]
        grad_log_prob = np.full(n, entropy_weight / n)
        grad_out = squashed_output_gradient(head, drawn, grad_action, grad_log_prob)
        grads = self.actor.backward(grad_out)
        adam_step(self.actor.parameters(), grads.as_list(), self.actor_opt)
        return loss, drawn.log_prob

    def alpha_step(self, log_prob: np.ndarray, target_entropy: float) -> float:
        """One Adam step on mean[-log_alpha * (log pi + H)]; returns the new alpha."""
        grad = np.array([-float(np.mean(log_prob + target_entropy))])
        adam_step([self.log_alpha], [grad], self.alpha_opt)
        return self.alpha

    def actor_update(self, buffer: ReplayBuffer, target_entropy: float) -> Tuple[float, float]:
        """
        Actor step then temperature step on one fresh batch.

        Returns:
            (actor loss, new alpha)
        """
        batch = buffer.sample(self.batch_size, self.rng)
        loss, log_prob = self.policy_loss_step(batch.states)
        self.last_entropy = float(-np.mean(log_prob))
        alpha = self.alpha_step(log_prob, target_entropy)
        self.update_counts["actor"] += 1
        return loss, alpha

    def train_step(self, buffer: ReplayBuffer) -> TrainMetrics:
        """c critic updates followed by a actor updates."""
        hp = self.hyperparams
        gamma = hp.gamma
        h_target = hp.target_entropy(self.action_dim)
        critic_losses = [self.critic_update(buffer, gamma) for _ in range(hp.c)]
        actor_results = [self.actor_update(buffer, h_target) for _ in range(hp.a)]
        return TrainMetrics(
            critic_loss=float(np.mean(critic_losses)),
            actor_loss=float(np.mean([loss for loss, _ in actor_results])),
            alpha=self.alpha,
            entropy=self.last_entropy,
            gamma=gamma,
            target_entropy=h_target,
            critic_updates=hp.c,
            actor_updates=hp.a,
        )

    def copy_from(self, other: "Agent") -> None:
        """Take over another agent's networks, optimizer states, alpha and hyperparameters."""
        self.actor.load_parameters_from(other.actor)
        for mine, theirs in zip(self.critics, other.critics):
            mine.load_parameters_from(theirs)
        self.actor_opt = other.actor_opt.copy()
        self.critic_opts = tuple(opt.copy() for opt in other.critic_opts)
        self.alpha_opt = other.alpha_opt.copy()
        self.log_alpha = other.log_alpha.copy()
        self.hyperparams = other.hyperparams.model_copy()

    def networks(self) -> Dict[str, DenseNet]:
        return {"actor": self.actor, "critic1": self.critics[0], "critic2": self.critics[1]}

    def optimizers(self) -> Dict[str, AdamState]:
        return {
            "actor": self.actor_opt,
            "critic1": self.critic_opts[0],
            "critic2": self.critic_opts[1],
            "log_alpha": self.alpha_opt,
        }

    def save(self, path: Union[str, Path], meta: Optional[Dict] = None) -> Path:
        """Checkpoint networks, Adam states, log-alpha and hyperparameters."""
        payload = {
            "hyperparams": self.hyperparams.model_dump(),
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            **(meta or {}),
        }
        return save_checkpoint(path, self.networks(), self.optimizers(),
                               arrays={"log_alpha": self.log_alpha}, meta=payload)

    @classmethod
    def load(cls, path: Union[str, Path], config: Optional[AgentConfig] = None,
             rng: Optional[np.random.Generator] = None) -> "Agent":
        """Rebuild an agent from save(); network sizes come from the checkpoint."""
        ckpt = load_checkpoint(path)
        meta = ckpt.meta
        hidden = ckpt.nets["actor"].layer_sizes[1:-1]
        config = (config or AgentConfig()).model_copy(update={"hidden_sizes": hidden})
        agent = cls(meta["obs_dim"], meta["action_dim"], HyperParams(**meta["hyperparams"]),
                    config, rng=rng)
        agent.actor = ckpt.nets["actor"]
        agent.critics = (ckpt.nets["critic1"], ckpt.nets["critic2"])
        agent.actor_opt = ckpt.optimizers["actor"]
        agent.critic_opts = (ckpt.optimizers["critic1"], ckpt.optimizers["critic2"])
        agent.alpha_opt = ckpt.optimizers["log_alpha"]
        agent.log_alpha = ckpt.arrays["log_alpha"]
        agent.restore_extra(ckpt)
        return agent

    def restore_extra(self, ckpt: Checkpoint) -> None:
        """Hook for subclasses holding more state than the base checkpoint."""
