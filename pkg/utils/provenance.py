"""Run manifests, checksums and the append-only run log."""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import pathlib
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Optional

import numpy as np

CHUNK_SIZE = 1 << 20  # 1 MiB
MANIFEST_NAME = "manifest.json"
RUN_LOG_NAME = "runs.jsonl"


def _ensure_directory(path: pathlib.Path) -> None:
    path.mkdir(parents=True, exist_ok=True)


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_checksum(path: pathlib.Path, chunk_size: int = CHUNK_SIZE) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def git_describe(cwd: Optional[pathlib.Path] = None) -> str:
    """``git describe --always --dirty`` of the working tree, or ``"unknown"``."""
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=10,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return completed.stdout.strip() or "unknown"


def to_jsonable(value: Any) -> Any:
    """Convert dataclass trees, enums, paths and numpy scalars for ``json.dump``."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, enum.Enum):
        return value.name if value.name is not None else value.value
    if isinstance(value, pathlib.PurePath):
        return str(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and value != value:
        return None
    return value


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    resolved_config: Any
    seed: Optional[int]
    git_describe: str = field(default_factory=git_describe)
    started: str = field(default_factory=utc_timestamp)
    finished: Optional[str] = None
    outputs: dict[str, str] = field(default_factory=dict)
    # wall time in seconds per experiment cell
    timings: dict[str, float] = field(default_factory=dict)
    status: str = "running"

    def record_outputs(self, paths: Iterable[pathlib.Path], root: pathlib.Path) -> None:
        for path in paths:
            self.outputs[str(path.relative_to(root))] = sha256_checksum(path)

    def finish(self, status: str) -> None:
        self.status = status
        self.finished = utc_timestamp()


def write_manifest(out_dir: pathlib.Path, manifest: RunManifest) -> pathlib.Path:
    _ensure_directory(out_dir)
    target = out_dir / MANIFEST_NAME
    with target.open("w", encoding="utf-8") as fh:
        json.dump(to_jsonable(manifest), fh, indent=2)
    return target


def read_manifest(path: pathlib.Path) -> dict[str, Any]:
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def append_run_log(out_dir: pathlib.Path, entry: dict[str, Any]) -> pathlib.Path:
    _ensure_directory(out_dir)
    log_entry = {**to_jsonable(entry), "timestamp_utc": utc_timestamp()}
    history_file = out_dir / RUN_LOG_NAME
    with history_file.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(log_entry) + "\n")
    return history_file


__all__ = [
    "RunManifest",
    "sha256_checksum",
    "git_describe",
    "to_jsonable",
    "write_manifest",
    "read_manifest",
    "append_run_log",
]
