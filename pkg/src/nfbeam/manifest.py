"""Run manifests: the reproducibility record written next to every artifact."""

from __future__ import annotations

import dataclasses
import json
import os
import subprocess
import time
from dataclasses import dataclass, field

from .config import RunConfig, config_digest


@dataclass
class RunManifest:
    command: str
    config_hash: str
    master_seed: int
    artifacts: list[str] = field(default_factory=list)
    wall_clock_s: float = 0.0
    git_describe: str = "unknown"
    argv: list[str] = field(default_factory=list)


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(
    artifact_path: str,
    command: str,
    run_cfg: RunConfig,
    master_seed: int,
    artifacts: list[str],
    started: float,
    argv: list[str],
) -> str:
    """Atomically write `<artifact>.manifest.json` and return its path."""
    manifest = RunManifest(
        command=command,
        config_hash=config_digest(run_cfg),
        master_seed=master_seed,
        artifacts=[os.path.abspath(a) for a in artifacts],
        wall_clock_s=time.time() - started,
        git_describe=git_describe(),
        argv=list(argv),
    )
    path = artifact_path + ".manifest.json"
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(dataclasses.asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path
