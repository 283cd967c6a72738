"""
=============================================================================
CONTEXT BLOCK
=============================================================================
Module: run_store.py
Description: Run-directory reader/writer for aac-lab artifacts
Author: Hive Mind Collective (Queen + Workers)
Created: 2026-10-18

Purpose:
    Own the on-disk layout of one run so that training code only hands over
    rows and checkpoints:
    - config.json: validated RunConfig snapshot
    - manifest.json: mode, algorithm, seed, config hash, status, files
    - CSV tables through pandas (population.csv, metrics.csv, per_k_eval.csv)
    - checkpoints/: per-member or single-agent .npz checkpoints

Artifact Rules:
    Every CSV row carries `seed` and `config_hash` columns. Nothing written
    depends on wall-clock time, so a single-thread rerun reproduces the
    files byte for byte.
=============================================================================
"""

import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Union

import pandas as pd

from .models import RunConfig, RunManifest
from .utils import RunInputError, config_hash

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_DIR = "checkpoints"


def run_config_hash(config: RunConfig) -> str:
    """Hash of the run-defining fields (output location excluded)."""
    return config_hash(config.model_dump(mode="json", exclude={"output_dir"}))


def algorithm_name(config: RunConfig) -> str:
    """Display name used in manifests and plot data."""
    return {
        "aac": "AAC",
        "sac": "SAC",
        "sr-sac": "SR-SAC",
        "k-sac": "k-SAC",
        "rand-sac": "Rand-SAC",
    }[config.mode]


class RunStore:
    """
    Reads and writes the files of one run directory.

    Attributes:
        run_dir: Directory holding the artifacts
        seed: Run seed stamped into every table row
        config_hash: Configuration hash stamped into every table row
    """

    def __init__(self, run_dir: Union[str, Path], seed: int = 0, config_hash: str = ""):
        self.run_dir = Path(run_dir)
        self.seed = seed
        self.config_hash = config_hash
        self._manifest: Optional[RunManifest] = None

    @classmethod
    def create(cls, config: RunConfig, run_dir: Optional[Union[str, Path]] = None) -> "RunStore":
        """
        Create the directory for a run and snapshot its config.

        An existing directory is reset: tables and checkpoints from an
        earlier run in it are removed before anything is written.

        Args:
            config: Validated run configuration
            run_dir: Explicit directory; defaults to
                     <output_dir>/<mode>-<env>-seed<seed>-<hash>
        """
        digest = run_config_hash(config)
        if run_dir is None:
            run_dir = Path(config.output_dir) / f"{config.mode}-{config.env_id}-seed{config.seed}-{digest}"
        store = cls(run_dir, seed=config.seed, config_hash=digest)
        store.run_dir.mkdir(parents=True, exist_ok=True)
        store._clear_artifacts()
        store._write_json(CONFIG_FILE, config.model_dump(mode="json"))
        store._manifest = RunManifest(
            mode=config.mode,
            algorithm=algorithm_name(config),
            env_id=config.env_id,
            seed=config.seed,
            config_hash=digest,
            num_threads=config.num_threads,
            files=[CONFIG_FILE],
        )
        store._save_manifest()
        logger.info("Run directory %s", store.run_dir)
        return store

    @classmethod
    def open(cls, run_dir: Union[str, Path]) -> "RunStore":
        """Open an existing run directory for reading."""
        run_dir = Path(run_dir)
        if not run_dir.is_dir():
            raise RunInputError(run_dir, "run directory not found")
        store = cls(run_dir)
        manifest = store.read_manifest()
        store.seed = manifest.seed
        store.config_hash = manifest.config_hash
        store._manifest = manifest
        return store

    @property
    def manifest(self) -> RunManifest:
        if self._manifest is None:
            self._manifest = self.read_manifest()
        return self._manifest

    @property
    def checkpoint_dir(self) -> Path:
        path = self.run_dir / CHECKPOINT_DIR
        path.mkdir(parents=True, exist_ok=True)
        return path

    # -------------------------------------------------------------------------
    # Writing
    # -------------------------------------------------------------------------

    def _write_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        path = self.run_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def _clear_artifacts(self) -> None:
        # only files a previous manifest registered; unrelated files stay
        if not (self.run_dir / MANIFEST_FILE).exists():
            return
        try:
            previous = self.read_manifest()
        except RunInputError:
            logger.warning("Unreadable manifest in %s left in place", self.run_dir)
            return
        stale = [self.run_dir / name for name in previous.files]
        for path in stale:
            if path.is_file():
                path.unlink()
        checkpoints = self.run_dir / CHECKPOINT_DIR
        if checkpoints.is_dir() and not any(checkpoints.iterdir()):
            shutil.rmtree(checkpoints)
        logger.info("Cleared %d files of the previous run in %s", len(stale), self.run_dir)

    def _save_manifest(self) -> None:
        self._write_json(MANIFEST_FILE, self.manifest.model_dump(mode="json"))

    def _register(self, name: str) -> None:
        if name not in self.manifest.files:
            self.manifest.files.append(name)
            self._save_manifest()

    def _stamp(self, df: pd.DataFrame) -> pd.DataFrame:
        df = df.copy()
        df["seed"] = self.seed
        df["config_hash"] = self.config_hash
        return df

    def write_table(self, name: str, rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]]) -> Path:
        """Write (replace) a CSV table; rows are stamped with seed and config hash."""
        df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
        path = self.run_dir / name
        self._stamp(df).to_csv(path, index=False)
        self._register(name)
        logger.info("Wrote %d rows to %s", len(df), path)
        return path

    def append_rows(self, name: str, rows: Iterable[Dict[str, Any]]) -> Path:
        """Append rows to a CSV table, writing the header on first use."""
        df = pd.DataFrame(list(rows))
        path = self.run_dir / name
        if df.empty:
            return path
        exists = path.exists()
        self._stamp(df).to_csv(path, mode="a", header=not exists, index=False)
        self._register(name)
        return path

    def checkpoint_path(self, name: str) -> Path:
        path = self.checkpoint_dir / name
        self._register(f"{CHECKPOINT_DIR}/{name}")
        return path

    def update_total_steps(self, total_env_steps: int) -> None:
        self.manifest.total_env_steps = int(total_env_steps)
        self._save_manifest()

    def finish(self, summary: Optional[Dict[str, Any]] = None) -> None:
        """Mark the run complete."""
        self.manifest.status = "complete"
        self.manifest.summary = dict(summary or {})
        self._save_manifest()

    def fail(self, error: str) -> None:
        """Mark the run failed with a diagnostic message."""
        self.manifest.status = "failed"
        self.manifest.error = error
        self._save_manifest()

    # -------------------------------------------------------------------------
    # Reading
    # -------------------------------------------------------------------------

    def _read_json(self, name: str) -> Dict[str, Any]:
        path = self.run_dir / name
        if not path.exists():
            raise RunInputError(path, "file not found")
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise RunInputError(path, f"corrupt JSON ({exc.msg})") from exc

    def read_manifest(self) -> RunManifest:
        try:
            return RunManifest(**self._read_json(MANIFEST_FILE))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, RunInputError):
                raise
            raise RunInputError(self.run_dir / MANIFEST_FILE, f"invalid manifest ({exc})") from exc

    def read_config(self) -> RunConfig:
        try:
            return RunConfig(**self._read_json(CONFIG_FILE))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, RunInputError):
                raise
            raise RunInputError(self.run_dir / CONFIG_FILE, f"invalid config ({exc})") from exc

    def read_table(self, name: str) -> pd.DataFrame:
        """
        Read a CSV table of this run.

        Raises:
            RunInputError: if the file is missing or unreadable
        """
        path = self.run_dir / name
        if not path.exists():
            raise RunInputError(path, "table not found")
        try:
            return pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
            raise RunInputError(path, f"corrupt CSV ({exc})") from exc

    def checkpoints(self) -> List[Path]:
        """Checkpoint files of this run in name order."""
        path = self.run_dir / CHECKPOINT_DIR
        if not path.is_dir():
            raise RunInputError(path, "no checkpoints directory")
        return sorted(path.glob("*.npz"))
