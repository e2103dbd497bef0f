"""Flat float64 checkpoints, JSONL logs and PGM map exports."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .data.pnm import write_pnm
from .tensor_core import Module

FORMAT = "adaspatial-params-v1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(modules: dict[str, Module], directory, config: dict | None = None) -> Path:
    """Write ``params.bin`` (little-endian f64, manifest order) and ``manifest.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for prefix, mod in modules.items():
        for name, p in mod.named_parameters():
            entries.append({"name": f"{prefix}.{name}", "shape": list(p.shape), "offset": offset, "count": p.size})
            chunks.append(p.data.astype("<f8").reshape(-1))
            offset += p.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f8")
    (out / "params.bin").write_bytes(blob.tobytes())
    manifest = {"format": FORMAT, "dtype": "<f8", "total": offset, "params": entries, "config": config or {}}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    return manifest


def load_checkpoint(modules: dict[str, Module], directory) -> dict:
    """Fill ``modules`` in place from a checkpoint; returns the stored config."""
    manifest = read_manifest(directory)
    blob = np.frombuffer((Path(directory) / "params.bin").read_bytes(), dtype="<f8")
    if blob.size != manifest["total"]:
        raise CheckpointError(f"params.bin holds {blob.size} values, manifest expects {manifest['total']}")
    stored = {e["name"]: e for e in manifest["params"]}
    wanted = {f"{prefix}.{name}": p for prefix, mod in modules.items() for name, p in mod.named_parameters()}
    if set(stored) != set(wanted):
        missing, extra = sorted(set(wanted) - set(stored)), sorted(set(stored) - set(wanted))
        raise CheckpointError(f"parameter mismatch: missing={missing} unexpected={extra}")
    for name, p in wanted.items():
        e = stored[name]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"{name}: stored shape {e['shape']} vs model {list(p.shape)}")
        p.data[...] = blob[e["offset"] : e["offset"] + e["count"]].reshape(p.shape)
    return manifest["config"]


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def export_maps(maps: np.ndarray, directory, names: list[str]) -> list[Path]:
    """Write ``[N,H,W]`` maps in [0, 1] as 8-bit PGM, value ``round(255 * v)``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if len(maps) != len(names):
        raise ValueError(f"{len(maps)} maps but {len(names)} names")
    paths = []
    for m, name in zip(maps, names):
        path = out / f"{name}.pgm"
        write_pnm(path, np.asarray(m))
        paths.append(path)
    return paths
