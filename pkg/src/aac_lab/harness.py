"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: harness.py
Description: Configuration, run orchestration and evaluation protocols
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Everything between the command line and the learners:
    - load_run_config: TOML file + dotted `key=value` overrides -> RunConfig
    - run_training: create the run directory and dispatch to the
      evolution or baseline runner
    - EnsemblePolicy: mean deterministic action of a set of actors
    - eval_frequency_sweep: returns across persistence values, normal or
      misleading k reporting
    - emit_plot_data: tidy return and hyperparameter CSVs over many runs
    - inspect_checkpoint: header and parameter counts of a checkpoint

Plot Data:
    returns.csv      env, algorithm, seed, step, return
    hyperparams.csv  env, seed, epoch, param, value   (best member, AAC only)
=============================================================================
"""

import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import Agent
from .baselines import BaselineRunner
from .envs import EnvFactory, env_factory, evaluate_returns
from .evolution import EvolutionRunner
from .models import HYPERPARAM_NAMES, RunConfig, RunResult
from .neural_core import DenseNet, GaussianPolicyHead, load_checkpoint, read_checkpoint_header
from .run_store import RunStore
from .utils import InvalidInputError, RunInputError, discounted_return

logger = logging.getLogger(__name__)

__all__ = [
    "EnsemblePolicy",
    "deterministic_policy",
    "discounted_return",
    "emit_plot_data",
    "eval_frequency_sweep",
    "inspect_checkpoint",
    "load_run_config",
    "parse_override",
    "run_training",
    "sweep_run",
]

Policy = Callable[[np.ndarray], np.ndarray]


# -----------------------------------------------------------------------------
# Configuration
# -----------------------------------------------------------------------------

def parse_value(text: str) -> Any:
    """Parse a TOML scalar or array; fall back to the raw string."""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> tuple:
    """Split 'dotted.key=value' into (key, parsed value)."""
    if "=" not in item:
        raise InvalidInputError(f"override {item!r} is not of the form key=value")
    key, _, raw = item.partition("=")
    key = key.strip()
    if not key:
        raise InvalidInputError(f"override {item!r} has an empty key")
    return key, parse_value(raw.strip())


def set_dotted(target: Dict[str, Any], key: str, value: Any) -> None:
    """target['a']['b']['c'] = value for key 'a.b.c', creating sections."""
    parts = key.split(".")
    node = target
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise InvalidInputError(f"cannot set {key!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = value


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    values: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Build a validated RunConfig.

    Args:
        path: Optional TOML file with dotted sections
        overrides: 'key=value' strings applied after the file
        values: Already-parsed dotted keys (CLI flags), applied last

    Raises:
        RunInputError: config file missing or not valid TOML
        InvalidInputError: invalid keys or values
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise RunInputError(path, "config file not found")
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise RunInputError(path, f"invalid config file ({exc})") from exc

    for item in overrides:
        key, value = parse_override(item)
        set_dotted(data, key, value)
    for key, value in (values or {}).items():
        if value is not None:
            set_dotted(data, key, value)

    try:
        return RunConfig(**data)
    except ValidationError as exc:
        raise InvalidInputError(f"invalid configuration: {exc}") from exc


# -----------------------------------------------------------------------------
# Training
# -----------------------------------------------------------------------------

def run_training(config: RunConfig, run_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """Train one run and write its artifacts."""
    store = RunStore.create(config, run_dir)
    if config.mode == "aac":
        result = EvolutionRunner(config, store).run()
        best = result.best
        message = (f"AAC finished: best member {best.member_id} fitness {best.fitness:.3f} "
                   f"after {result.total_env_steps} env steps")
        data = {"best_fitness": best.fitness, "total_env_steps": result.total_env_steps}
    else:
        result = BaselineRunner(config, store).run()
        message = (f"{config.mode} finished: return {result.score:.3f} "
                   f"after {result.total_env_steps} env steps")
        data = {"final_return": result.score, "total_env_steps": result.total_env_steps}
    logger.info(message)
    return RunResult(verb="train", run_dir=str(store.run_dir), message=message, data=data)


# -----------------------------------------------------------------------------
# Policies
# -----------------------------------------------------------------------------

def deterministic_policy(agent: Agent) -> Policy:
    """Observation -> tanh(mean) of the agent's actor."""
    def act(obs: np.ndarray) -> np.ndarray:
        return agent.act(obs, stochastic=False)
    return act


class EnsemblePolicy:
    """
    Mean deterministic action of several actors.

    Attributes:
        actors: Actor networks (observation -> [mean, raw log-std])
        action_dim: |A|
    """

    def __init__(self, actors: Sequence[DenseNet], action_dim: int):
        if not actors:
            raise InvalidInputError("an ensemble needs at least one actor")
        widths = {a.input_size for a in actors}
        if len(widths) != 1:
            raise InvalidInputError(f"actors disagree on observation width: {sorted(widths)}")
        self.actors = list(actors)
        self.action_dim = int(action_dim)

    def __len__(self) -> int:
        return len(self.actors)

    def member_actions(self, obs: np.ndarray) -> np.ndarray:
        """(members, |A|) deterministic actions."""
        return np.stack([
            GaussianPolicyHead.from_output(actor.forward(obs)[None, :], self.action_dim)
            .deterministic()[0]
            for actor in self.actors
        ])

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        actions = self.member_actions(np.asarray(obs, dtype=np.float64))
        # shifted mean: identical members reproduce their action exactly
        mean = actions[0] + (actions - actions[0]).mean(axis=0)
        return np.clip(mean, -1.0, 1.0)

    @classmethod
    def from_agents(cls, agents: Sequence[Agent]) -> "EnsemblePolicy":
        if not agents:
            raise InvalidInputError("an ensemble needs at least one agent")
        return cls([a.actor for a in agents], agents[0].action_dim)

    @classmethod
    def from_checkpoints(cls, paths: Sequence[Union[str, Path]]) -> "EnsemblePolicy":
        """Ensemble of the actors stored in agent checkpoints."""
        if not paths:
            raise InvalidInputError("no checkpoints given")
        actors = []
        action_dim = None
        for path in paths:
            ckpt = load_checkpoint(path)
            if "actor" not in ckpt.nets:
                raise RunInputError(path, "checkpoint holds no actor network")
            actors.append(ckpt.nets["actor"])
            action_dim = int(ckpt.meta.get("action_dim", ckpt.nets["actor"].output_size // 2))
        return cls(actors, action_dim)

    @classmethod
    def from_run(cls, run_dir: Union[str, Path]) -> "EnsemblePolicy":
        """All final checkpoints of a run (the whole population for AAC)."""
        return cls.from_checkpoints(RunStore.open(run_dir).checkpoints())


# -----------------------------------------------------------------------------
# Evaluation protocols
# -----------------------------------------------------------------------------

def eval_frequency_sweep(
    policy: Union[Policy, Agent],
    factory: EnvFactory,
    k_values: Sequence[int],
    episodes: int = 10,
    misleading: bool = False,
    seed: Optional[int] = 0,
    k_max: Optional[int] = None,
    reported_k: int = 1,
) -> pd.DataFrame:
    """
    Deterministic returns of a policy at each persistence value.

    Every k is evaluated on an environment built from the same seed, with a
    budget of floor(max_steps / k) wrapped steps per episode. In misleading
    mode the observation reports `reported_k` while the true k is executed.

    Returns:
        DataFrame with columns k, mode, mean_return, std_return, episodes
    """
    if not k_values:
        raise InvalidInputError("k list is empty")
    if seed is not None and seed < 0:
        raise InvalidInputError(f"seed must be non-negative, got {seed}")
    act = deterministic_policy(policy) if isinstance(policy, Agent) else policy
    k_max = k_max or max(k_values)
    rows = []
    for k in k_values:
        returns = evaluate_returns(act, factory, int(k), k_max, episodes, seed,
                                   misleading=misleading, reported_k=reported_k)
        rows.append({
            "k": int(k),
            "mode": "misleading" if misleading else "normal",
            "mean_return": float(np.mean(returns)),
            "std_return": float(np.std(returns)),
            "episodes": episodes,
        })
    return pd.DataFrame(rows)


def sweep_run(
    run_dir: Union[str, Path],
    k_values: Sequence[int],
    episodes: int = 10,
    seed: int = 0,
    reported_k: int = 1,
) -> pd.DataFrame:
    """Normal and misleading sweeps of a finished run's ensemble; writes sweep.csv."""
    store = RunStore.open(run_dir)
    config = store.read_config()
    policy = EnsemblePolicy.from_run(run_dir)
    factory = env_factory(config.env_id, config.env.get(config.env_id, {}))
    table = pd.concat(
        [
            eval_frequency_sweep(policy, factory, k_values, episodes, misleading, seed,
                                 reported_k=reported_k)
            for misleading in (False, True)
        ],
        ignore_index=True,
    )
    store.write_table("sweep.csv", table)
    return table


# -----------------------------------------------------------------------------
# Plot data
# -----------------------------------------------------------------------------

def _returns_rows(store: RunStore) -> pd.DataFrame:
    manifest = store.manifest
    if manifest.mode == "aac":
        pop = store.read_table("population.csv")
        curve = pop.groupby("epoch", sort=True).agg(
            step=("total_env_steps", "max"), value=("fitness", "max")
        ).reset_index(drop=True)
    else:
        metrics = store.read_table("metrics.csv")
        curve = metrics[["step", "return"]].rename(columns={"return": "value"})
    return pd.DataFrame({
        "env": manifest.env_id,
        "algorithm": manifest.algorithm,
        "seed": manifest.seed,
        "step": curve["step"].astype(int),
        "return": curve["value"].astype(float),
    })


def best_members(population: pd.DataFrame) -> pd.DataFrame:
    """Best row per epoch: highest fitness, lowest member id on ties."""
    ordered = population.sort_values(["epoch", "fitness", "member_id"],
                                     ascending=[True, False, True])
    return ordered.groupby("epoch", sort=True).head(1)


def _hyperparam_rows(store: RunStore) -> pd.DataFrame:
    manifest = store.manifest
    best = best_members(store.read_table("population.csv"))
    rows = [
        {"env": manifest.env_id, "seed": manifest.seed, "epoch": int(row["epoch"]),
         "param": name, "value": float(row[name])}
        for _, row in best.iterrows()
        for name in HYPERPARAM_NAMES
    ]
    return pd.DataFrame(rows, columns=["env", "seed", "epoch", "param", "value"])


def emit_plot_data(run_dirs: Sequence[Union[str, Path]], output_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Collect tidy plotting tables from finished runs.

    Every run is read before anything is written, so a bad run directory
    leaves no partial output.

    Raises:
        InvalidInputError: empty run list
        RunInputError: missing or corrupt run directory (names the path)
    """
    if not run_dirs:
        raise InvalidInputError("no run directories given")
    returns: List[pd.DataFrame] = []
    hyper: List[pd.DataFrame] = []
    for run_dir in run_dirs:
        store = RunStore.open(run_dir)
        returns.append(_returns_rows(store))
        if store.manifest.mode == "aac":
            hyper.append(_hyperparam_rows(store))

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"returns": out / "returns.csv"}
    pd.concat(returns, ignore_index=True).to_csv(paths["returns"], index=False)
    if hyper:
        paths["hyperparams"] = out / "hyperparams.csv"
        pd.concat(hyper, ignore_index=True).to_csv(paths["hyperparams"], index=False)
    for path in paths.values():
        logger.info("Wrote %s", path)
    return paths


# -----------------------------------------------------------------------------
# Checkpoints
# -----------------------------------------------------------------------------

def inspect_checkpoint(path: Union[str, Path]) -> Dict[str, Any]:
    """Header, layer sizes and parameter counts of a checkpoint file."""
    header = read_checkpoint_header(path)
    ckpt = load_checkpoint(path)
    nets = {
        name: {"layer_sizes": list(net.layer_sizes), "parameters": net.num_parameters}
        for name, net in ckpt.nets.items()
    }
    return {
        "path": str(path),
        "format": header.get("format"),
        "version": header.get("version"),
        "meta": ckpt.meta,
        "networks": nets,
        "total_parameters": sum(n["parameters"] for n in nets.values()),
        "optimizers": sorted(ckpt.optimizers),
        "arrays": sorted(ckpt.arrays),
    }
