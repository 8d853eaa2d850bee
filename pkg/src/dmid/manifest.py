"""Append-only run manifests for reproducibility.

Each CLI run appends one JSON line holding the fully resolved configuration,
input hashes, seeds, tool version, output paths and wall-clock timing. Any
entry can be re-executed to bit-identical outputs (PGM/RAW paths).
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from pathlib import Path

from . import __version__

_write_lock = threading.Lock()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def append_entry(manifest_path, command: str, config: dict, inputs: dict,
                 outputs: list, wall_ms: float) -> dict:
    entry = {
        "command": command,
        "config": config,
        "inputs": {name: sha256_file(p) for name, p in inputs.items()},
        "input_paths": {name: str(p) for name, p in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_ms": wall_ms,
        "timestamp": time.time(),
    }
    line = json.dumps(entry, sort_keys=True) + "\n"
    with _write_lock:
        with open(manifest_path, "a") as f:
            f.write(line)
    return entry


def read_entries(manifest_path) -> list[dict]:
    path = Path(manifest_path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def rerun(entry: dict, output_override: dict | None = None) -> list[str]:
    """Re-execute a manifest entry with its recorded configuration.

    Returns the list of (possibly overridden) output paths written. Imports
    the CLI lazily to avoid a module cycle.
    """
    from . import cli

    return cli.execute_snapshot(entry["command"], dict(entry["config"]),
                                output_override or {})
