"""Run manifests and atomic output persistence.

Replaying (config, master seed) reproduces all outputs byte-identically on
the same platform, so a manifest is a complete re-run recipe.  Outputs are
written temp-then-rename so a failed run never leaves partial files.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(canonical_json(cfg_dict).encode("utf-8")).hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_manifest(out_dir: Path, subcommand: str, cfg_dict: dict, seed: int,
                   outputs: list[str], assumption_snapshot: dict | None = None,
                   extra: dict | None = None) -> Path:
    """Write manifest.json (before outputs) and return its path."""
    from . import __version__
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "master_seed": seed,
        "code_version": __version__,
        "timestamp_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": outputs,
        "assumption_report": assumption_snapshot,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def ensemble_to_csv(path: Path, ensemble) -> None:
    """One row per trajectory per checkpoint: traj_id, step, theta_0..theta_{d-1}."""
    d = ensemble.samples.shape[2]
    lines = ["traj_id,step," + ",".join(f"theta_{i}" for i in range(d))]
    for i in range(ensemble.samples.shape[0]):
        for j, step in enumerate(ensemble.checkpoints):
            vals = ",".join(repr(float(v)) for v in ensemble.samples[i, j])
            lines.append(f"{i},{step},{vals}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_ensemble_csv(path: Path) -> tuple[list[int], dict[int, np.ndarray]]:
    """Returns (checkpoints, {checkpoint: (n_traj, d) array})."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["traj_id", "step"]:
            raise ValueError(f"{path} is not an ensemble CSV")
        by_step: dict[int, list] = {}
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            step = int(parts[1])
            by_step.setdefault(step, []).append([float(v) for v in parts[2:]])
    steps = sorted(by_step)
    return steps, {s: np.asarray(by_step[s]) for s in steps}


def rows_to_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        if isinstance(v, float):
            return repr(v)
        return str(v)
    lines = [",".join(columns)]
    lines += [",".join(fmt(row.get(c)) for c in columns) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")
