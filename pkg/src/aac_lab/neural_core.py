"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: neural_core.py
Description: Minimal dense-network toolkit for the actor and critic networks
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Everything the actor-critic learners need from a neural network library,
    and nothing more:
    - DenseNet: ReLU multilayer perceptron with a recorded forward tape
    - Reverse-mode gradients for parameters and inputs from that tape
    - AdamState / adam_step: bias-corrected Adam with explicit state
    - GaussianPolicyHead: tanh-squashed Gaussian with log-prob correction
    - Versioned .npz checkpoints that round-trip bit-exactly

Numerics:
    float64 throughout. Weights and biases are initialized uniformly in
    +-1/sqrt(fan_in). Any NaN or infinity raises NumericError.

Ownership:
    A DenseNet holds mutable tape state between forward() and backward(), so
    one network must only be driven by one thread at a time.
=============================================================================
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .utils import InvalidInputError, RunInputError, StateError, check_finite

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "aac-lab-checkpoint"
CHECKPOINT_VERSION = 1

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class NetGradients:
    """Gradients of a scalar loss w.r.t. every parameter and the network input."""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: np.ndarray

    def as_list(self) -> List[np.ndarray]:
        """Interleaved [dW0, db0, dW1, db1, ...], matching DenseNet.parameters()."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


class DenseNet:
    """
    Fully connected ReLU network with a linear output layer.

    Attributes:
        layer_sizes: (input, hidden..., output) widths
        weights: Weight matrices, weights[i] has shape (in_i, out_i)
        biases: Bias vectors, biases[i] has shape (out_i,)
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        rng: Optional[np.random.Generator] = None,
        weights: Optional[List[np.ndarray]] = None,
        biases: Optional[List[np.ndarray]] = None,
    ):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 3:
            raise InvalidInputError(
                f"need at least one hidden and one output layer, got sizes {sizes}"
            )
        if any(s <= 0 for s in sizes):
            raise InvalidInputError(f"layer sizes must be positive, got {sizes}")
        self.layer_sizes = sizes

        if weights is not None and biases is not None:
            self.weights = [np.array(w, dtype=np.float64) for w in weights]
            self.biases = [np.array(b, dtype=np.float64) for b in biases]
            self._validate_shapes()
        else:
            rng = rng if rng is not None else np.random.default_rng()
            self.weights = []
            self.biases = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.biases.append(rng.uniform(-bound, bound, size=(fan_out,)))

        self._tape: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None
        self._squeeze = False

    def _validate_shapes(self) -> None:
        expected = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise InvalidInputError("parameter count does not match layer sizes")
        for i, ((fan_in, fan_out), w, b) in enumerate(zip(expected, self.weights, self.biases)):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise InvalidInputError(
                    f"layer {i}: expected W{(fan_in, fan_out)} b{(fan_out,)}, "
                    f"got W{w.shape} b{b.shape}"
                )

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_parameters(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def parameters(self) -> List[np.ndarray]:
        """Interleaved [W0, b0, W1, b1, ...]; the arrays are live references."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """
        Evaluate the network and record the tape for backward().

        Args:
            x: Input vector (n,) or batch (B, n)

        Returns:
            Output vector (m,) or batch (B, m), matching the input rank
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise InvalidInputError(
                f"expected input of width {self.input_size}, got shape {np.shape(x)}"
            )
        check_finite("network input", x)

        tape: List[Tuple[np.ndarray, np.ndarray]] = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            tape.append((h, z))
            h = np.maximum(z, 0.0) if i < last else z
        check_finite("network output", h)

        self._tape = tape
        self._squeeze = squeeze
        return h[0] if squeeze else h

    def backward(self, grad_output: np.ndarray) -> NetGradients:
        """
        Back-propagate dLoss/dOutput through the recorded forward pass.

        Args:
            grad_output: Same shape as the last forward() output

        Returns:
            NetGradients for every parameter and for the input
        """
        if self._tape is None:
            raise StateError("backward() called without a recorded forward pass")
        g = np.asarray(grad_output, dtype=np.float64)
        if self._squeeze:
            g = g[None, :]
        batch = self._tape[0][0].shape[0]
        if g.shape != (batch, self.output_size):
            raise InvalidInputError(
                f"expected output gradient of shape {(batch, self.output_size)}, got {g.shape}"
            )
        check_finite("output gradient", g)

        n_layers = len(self.weights)
        grad_w: List[np.ndarray] = [np.empty(0)] * n_layers
        grad_b: List[np.ndarray] = [np.empty(0)] * n_layers
        for i in range(n_layers - 1, -1, -1):
            h_in, z = self._tape[i]
            if i < n_layers - 1:
                g = g * (z > 0.0)
            grad_w[i] = h_in.T @ g
            grad_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T

        self._tape = None
        grad_in = g[0] if self._squeeze else g
        return NetGradients(weights=grad_w, biases=grad_b, input=grad_in)

    def copy(self) -> "DenseNet":
        """Deep copy of the parameters (the tape is not copied)."""
        return DenseNet(self.layer_sizes, weights=self.weights, biases=self.biases)

    def load_parameters_from(self, other: "DenseNet") -> None:
        """Overwrite this network's parameters with another's, in place."""
        if other.layer_sizes != self.layer_sizes:
            raise InvalidInputError(
                f"layer sizes differ: {self.layer_sizes} vs {other.layer_sizes}"
            )
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def equals(self, other: "DenseNet") -> bool:
        """Bit-exact parameter comparison."""
        return self.layer_sizes == other.layer_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())
        )


@dataclass
class AdamState:
    """
    Adam optimizer state for one parameter list.

    Attributes:
        lr: Learning rate (> 0)
        m: First-moment accumulators, same shapes as the parameters
        v: Second-moment accumulators, same shapes as the parameters
        step: Number of updates applied so far
    """
    lr: float
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float) -> "AdamState":
        if lr <= 0:
            raise InvalidInputError(f"learning rate must be positive, got {lr}")
        return cls(
            lr=float(lr),
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )

    def copy(self) -> "AdamState":
        return AdamState(
            lr=self.lr,
            m=[a.copy() for a in self.m],
            v=[a.copy() for a in self.v],
            step=self.step,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )

    def equals(self, other: "AdamState") -> bool:
        return (
            self.step == other.step
            and self.lr == other.lr
            and (self.beta1, self.beta2, self.eps) == (other.beta1, other.beta2, other.eps)
            and all(np.array_equal(a, b) for a, b in zip(self.m, other.m))
            and all(np.array_equal(a, b) for a, b in zip(self.v, other.v))
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
) -> Tuple[Sequence[np.ndarray], AdamState]:
    """
    Apply one bias-corrected Adam update in place.

    Args:
        params: Parameter arrays (modified in place)
        grads: Gradients with the same shapes
        state: Optimizer state (modified in place)

    Returns:
        (params, state) for convenience
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInputError(
            f"parameter/gradient/state counts differ: {len(params)}, {len(grads)}, {len(state.m)}"
        )
    if state.lr <= 0:
        raise InvalidInputError(f"learning rate must be positive, got {state.lr}")
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise InvalidInputError(
                f"shape mismatch at parameter {i}: param {p.shape}, grad {g.shape}, state {m.shape}"
            )
        check_finite("gradient", g, parameter=i)

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class GaussianPolicyHead:
    """
    Diagonal Gaussian read off the actor network's output.

    The first |A| output units are the mean; the second |A| are the raw
    log-std, clamped (not squashed) into [LOG_STD_MIN, LOG_STD_MAX].
    """
    mean: np.ndarray
    raw_log_std: np.ndarray
    log_std_min: float = LOG_STD_MIN
    log_std_max: float = LOG_STD_MAX
    log_std: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=np.float64))
        self.raw_log_std = np.atleast_2d(np.asarray(self.raw_log_std, dtype=np.float64))
        if self.mean.shape != self.raw_log_std.shape:
            raise InvalidInputError(
                f"mean {self.mean.shape} and log-std {self.raw_log_std.shape} differ in shape"
            )
        check_finite("policy mean", self.mean)
        check_finite("policy log-std", self.raw_log_std)
        self.log_std = np.clip(self.raw_log_std, self.log_std_min, self.log_std_max)

    @classmethod
    def from_output(
        cls,
        output: np.ndarray,
        action_dim: int,
        log_std_range: Tuple[float, float] = (LOG_STD_MIN, LOG_STD_MAX),
    ) -> "GaussianPolicyHead":
        out = np.atleast_2d(output)
        if out.shape[1] != 2 * action_dim:
            raise InvalidInputError(
                f"actor output width {out.shape[1]} != 2 * action_dim ({2 * action_dim})"
            )
        low, high = log_std_range
        return cls(mean=out[:, :action_dim], raw_log_std=out[:, action_dim:],
                   log_std_min=low, log_std_max=high)

    @property
    def action_dim(self) -> int:
        return self.mean.shape[1]

    def deterministic(self) -> np.ndarray:
        """Evaluation action tanh(mean)."""
        return np.tanh(self.mean)


@dataclass
class SquashedSample:
    """One reparameterized draw from a GaussianPolicyHead."""
    action: np.ndarray
    log_prob: np.ndarray
    pre_tanh: np.ndarray
    noise: np.ndarray


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def sample_squashed(
    head: GaussianPolicyHead,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> SquashedSample:
    """
    Draw a = tanh(mean + std * z) with its change-of-variables log-probability.

    Args:
        head: Policy distribution parameters
        rng: Source of the standard-normal noise z
        noise: Explicit z (overrides rng), same shape as head.mean

    Returns:
        SquashedSample with per-row log-probabilities summed over dimensions
    """
    if noise is None:
        if rng is None:
            raise InvalidInputError("sample_squashed needs either rng or noise")
        z = rng.standard_normal(head.mean.shape)
    else:
        z = np.broadcast_to(np.asarray(noise, dtype=np.float64), head.mean.shape).copy()
    std = np.exp(head.log_std)
    u = head.mean + std * z
    action = np.tanh(u)
    log_prob = (
        -0.5 * z * z - head.log_std - _HALF_LOG_2PI - _log_one_minus_tanh_sq(u)
    ).sum(axis=1)
    check_finite("policy log-probability", log_prob)
    return SquashedSample(action=action, log_prob=log_prob, pre_tanh=u, noise=z)


def squashed_output_gradient(
    head: GaussianPolicyHead,
    sample: SquashedSample,
    grad_action: np.ndarray,
    grad_log_prob: np.ndarray,
) -> np.ndarray:
    """
    Chain dLoss/dAction and dLoss/dLogProb back to the actor's raw output.

    The noise is held fixed (reparameterization). Log-std units whose raw
    value lies outside the clamp range receive zero gradient.

    Returns:
        Gradient of shape (B, 2 * |A|): [d mean, d raw log-std]
    """
    a = sample.action
    std = np.exp(head.log_std)
    g_logp = np.asarray(grad_log_prob, dtype=np.float64).reshape(-1, 1)
    # d logp / du = 2 tanh(u); d a / du = 1 - tanh(u)^2
    grad_u = grad_action * (1.0 - a * a) + g_logp * 2.0 * a
    grad_mean = grad_u
    grad_log_std = grad_u * std * sample.noise - g_logp
    inside = (head.raw_log_std >= head.log_std_min) & (head.raw_log_std <= head.log_std_max)
    return np.concatenate([grad_mean, grad_log_std * inside], axis=1)


def save_checkpoint(
    path: Union[str, Path],
    nets: Dict[str, DenseNet],
    optimizers: Optional[Dict[str, AdamState]] = None,
    arrays: Optional[Dict[str, np.ndarray]] = None,
    meta: Optional[Dict] = None,
) -> Path:
    """
    Write networks, optimizer states and loose arrays to one .npz file.

    Args:
        path: Target file (".npz" is appended by numpy if missing)
        nets: Named networks
        optimizers: Named Adam states
        arrays: Named extra arrays (e.g. log-alpha), stored bit-exactly
        meta: JSON-serializable metadata (e.g. hyperparameters)

    Returns:
        The path written
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    optimizers = optimizers or {}
    arrays = arrays or {}
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "nets": {name: list(net.layer_sizes) for name, net in nets.items()},
        "optimizers": {
            name: {
                "lr": opt.lr,
                "step": opt.step,
                "beta1": opt.beta1,
                "beta2": opt.beta2,
                "eps": opt.eps,
                "count": len(opt.m),
            }
            for name, opt in optimizers.items()
        },
        "arrays": sorted(arrays),
        "meta": meta or {},
    }
    payload: Dict[str, np.ndarray] = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, net in nets.items():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            payload[f"net/{name}/W{i}"] = w
            payload[f"net/{name}/b{i}"] = b
    for name, opt in optimizers.items():
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            payload[f"adam/{name}/m{i}"] = m
            payload[f"adam/{name}/v{i}"] = v
    for name, arr in arrays.items():
        payload[f"array/{name}"] = np.asarray(arr)

    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **payload)
    logger.debug("Wrote checkpoint %s (%d nets)", path, len(nets))
    return path


@dataclass
class Checkpoint:
    """Contents of a loaded checkpoint file."""
    header: Dict
    nets: Dict[str, DenseNet]
    optimizers: Dict[str, AdamState]
    arrays: Dict[str, np.ndarray]

    @property
    def meta(self) -> Dict:
        return self.header.get("meta", {})


def read_checkpoint_header(path: Union[str, Path]) -> Dict:
    """Read and validate only the JSON header of a checkpoint."""
    path = Path(path)
    if not path.exists():
        raise RunInputError(path, "checkpoint not found")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["__header__"]))
    except (OSError, KeyError, ValueError) as exc:
        raise RunInputError(path, f"unreadable checkpoint ({exc})") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise RunInputError(path, f"not an aac-lab checkpoint (format={header.get('format')!r})")
    if header.get("version", 0) > CHECKPOINT_VERSION:
        raise RunInputError(path, f"checkpoint version {header['version']} is newer than supported")
    return header


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Load a checkpoint written by save_checkpoint()."""
    path = Path(path)
    header = read_checkpoint_header(path)
    nets: Dict[str, DenseNet] = {}
    optimizers: Dict[str, AdamState] = {}
    arrays: Dict[str, np.ndarray] = {}
    try:
        with np.load(path, allow_pickle=False) as data:
            for name, sizes in header["nets"].items():
                n_layers = len(sizes) - 1
                nets[name] = DenseNet(
                    sizes,
                    weights=[data[f"net/{name}/W{i}"] for i in range(n_layers)],
                    biases=[data[f"net/{name}/b{i}"] for i in range(n_layers)],
                )
            for name, spec in header["optimizers"].items():
                count = spec["count"]
                optimizers[name] = AdamState(
                    lr=spec["lr"],
                    m=[np.array(data[f"adam/{name}/m{i}"]) for i in range(count)],
                    v=[np.array(data[f"adam/{name}/v{i}"]) for i in range(count)],
                    step=spec["step"],
                    beta1=spec["beta1"],
                    beta2=spec["beta2"],
                    eps=spec["eps"],
                )
            for name in header["arrays"]:
                arrays[name] = np.array(data[f"array/{name}"])
    except KeyError as exc:
        raise RunInputError(path, f"checkpoint is missing entry {exc}") from exc
    return Checkpoint(header=header, nets=nets, optimizers=optimizers, arrays=arrays)

