"""Checkpoint directories: manifest.json plus one raw little-endian f8 file per array."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], hyperparams: dict, epoch: int, extra=None):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "epoch": int(epoch),
        "seed": hyperparams.get("seed"),
        "hyperparams": hyperparams,
        "shapes": {k: list(v.shape) for k, v in sorted(params.items())},
    }
    if extra:
        manifest.update(extra)
    for name, arr in params.items():
        np.ascontiguousarray(arr, dtype="<f8").tofile(out / f"{name}.f64")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    src = Path(path)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{src}: manifest.json not found") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{src}: unsupported format version {manifest.get('format_version')}")
    params = {}
    for name, shape in manifest["shapes"].items():
        raw = np.fromfile(src / f"{name}.f64", dtype="<f8")
        if raw.size != int(np.prod(shape)):
            raise CheckpointError(f"{src}/{name}.f64: {raw.size} values, manifest shape {shape}")
        params[name] = raw.reshape(shape).astype(np.float64)
    return params, manifest
