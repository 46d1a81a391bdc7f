"""Content-addressed storage for checkpoints and datasets.

Artifacts are keyed by the SHA-256 of the canonical JSON of the config that
produced them, so any config change yields a different key. The cache
directory defaults to <out>/cache and can be overridden with the
SHADOWSEARCH_CACHE environment variable.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from . import shadow as sh
from .sim import TaskDataset, load_dataset, save_dataset

CACHE_ENV_VAR = "SHADOWSEARCH_CACHE"


def config_hash(config: dict) -> str:
    """First 16 hex digits of sha256 over the sorted-key JSON encoding."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def resolve_cache_dir(default_dir) -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    path = Path(env) if env else Path(default_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


class ArtifactCache:
    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def checkpoint_path(self, key: str) -> Path:
        return self.dir / f"ckpt-{key}.bin"

    def has_checkpoint(self, key: str) -> bool:
        return self.checkpoint_path(key).exists()

    def save_model(self, key: str, model: sh.ShadowModel) -> Path:
        path = self.checkpoint_path(key)
        sh.save_checkpoint(model, path)
        return path

    def load_model(self, key: str) -> sh.ShadowModel:
        return sh.load_checkpoint(self.checkpoint_path(key))

    def dataset_dir(self, key: str) -> Path:
        return self.dir / f"data-{key}"

    def has_dataset(self, key: str) -> bool:
        d = self.dataset_dir(key)
        return d.exists() and any(d.glob("task*.bin"))

    def save_tasks(self, key: str, tasks: list[TaskDataset]) -> Path:
        d = self.dataset_dir(key)
        d.mkdir(parents=True, exist_ok=True)
        for i, t in enumerate(tasks):
            save_dataset(t, d / f"task{i:05d}.bin")
        return d

    def load_tasks(self, key: str) -> list[TaskDataset]:
        d = self.dataset_dir(key)
        return [load_dataset(p) for p in sorted(d.glob("task*.bin"))]
