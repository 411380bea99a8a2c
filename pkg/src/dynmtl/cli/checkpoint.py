"""One file per component: a JSON header line followed by little-endian float64 arrays."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError

FORMAT = "dynmtl-checkpoint"
VERSION = 1
COMPONENTS = ("anchor", "affinity", "edge", "weight")


@dataclass
class Checkpoint:
    component: str
    arrays: dict
    config_hash: str
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    index, blobs, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format": FORMAT, "version": VERSION, "component": ckpt.component,
              "config_hash": ckpt.config_hash, "seed": ckpt.seed, "meta": ckpt.meta,
              "arrays": index, "nbytes": offset}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path, component: str, config_hash: str | None = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint: missing {path}") from exc
    head, _, blob = raw.partition(b"\n")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"checkpoint {path}: unreadable header") from exc
    if header.get("format") != FORMAT or header.get("version") != VERSION:
        raise ConfigError(f"checkpoint {path}: unsupported format or version")
    if header["component"] != component:
        raise ConfigError(f"checkpoint {path}: holds {header['component']!r}, expected {component!r}")
    if config_hash is not None and header["config_hash"] != config_hash:
        raise ConfigError(f"checkpoint {path}: config hash mismatch; it was trained with a "
                          "different suite/anchor/train/seed configuration")
    if len(blob) != header["nbytes"]:
        raise ConfigError(f"checkpoint {path}: truncated payload")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                              offset=entry["offset"]).reshape(entry["shape"]).copy()
    return Checkpoint(component, arrays, header["config_hash"], header["seed"], header["meta"])
