"""JSON run configuration: strict parsing, defaults and the training hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..benchsynth import TaskSuiteSpec
from ..trainer import AnchorConfig, TrainConfig


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; the message names the offending field."""


@dataclass
class EvalConfig:
    reference: list | None = None     # hypervolume reference, defaults to 2.0 per task
    grid: int | None = None           # simplex points per c value; None -> N + 1 + 20
    c_values: list = field(default_factory=lambda: [0.0, 1.0])
    grid_eta: float = 0.2
    hv_prefs: int = 20
    probes: int = 64
    split: str = "test"

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError(f"split must be train, val or test, got {self.split!r}")
        if any(not 0.0 <= c <= 1.0 for c in self.c_values):
            raise ValueError("c_values must lie in [0, 1]")
        if self.probes < 2 or self.hv_prefs < 1:
            raise ValueError("need at least 2 probes and 1 hypervolume preference")

    def reference_for(self, n_tasks: int) -> list[float]:
        ref = [2.0] * n_tasks if self.reference is None else [float(v) for v in self.reference]
        if len(ref) != n_tasks:
            raise ConfigError(f"eval.reference: needs {n_tasks} entries, got {len(ref)}")
        return ref


SECTIONS = {"suite": TaskSuiteSpec, "anchor": AnchorConfig, "train": TrainConfig,
            "eval": EvalConfig}
# The suite seed is the run seed, so it is not settable per section.
_HIDDEN = {"suite": {"seed"}}


@dataclass
class RunConfig:
    seed: int
    suite: TaskSuiteSpec
    anchor: AnchorConfig
    train: TrainConfig
    eval: EvalConfig
    out: str | None = None

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "out": self.out}
        for name in SECTIONS:
            sec = asdict(getattr(self, name))
            for hidden in _HIDDEN.get(name, ()):
                sec.pop(hidden)
            d[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def training_hash(self) -> str:
        """Digest of everything that shapes trained weights (not eval or out)."""
        d = self.to_dict()
        keep = {k: d[k] for k in ("seed", "suite", "anchor", "train")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()


def _check_type(path: str, value, default) -> None:
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")


def _build(name: str, cls, raw) -> object:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)} if dataclasses.is_dataclass(cls) else {}
    allowed = set(fields) - _HIDDEN.get(name, set())
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown field")
    defaults = cls()
    for key, value in raw.items():
        _check_type(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config(raw: dict, seed: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be an object")
    for key in raw:
        if key not in ("seed", "out", *SECTIONS):
            raise ConfigError(f"{key}: unknown field")
    if seed is None:
        if "seed" not in raw:
            raise ConfigError("seed: required field missing (set it in the config or pass --seed)")
        seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {seed!r}")
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError(f"out: expected a path string, got {out!r}")
    sections = {name: _build(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    sections["suite"].seed = seed
    cfg = RunConfig(seed=seed, out=out, **sections)
    if cfg.anchor.width < 1 or cfg.anchor.n_layers < 1:
        raise ConfigError("anchor: width and n_layers must be >= 1")
    cfg.eval.reference_for(cfg.suite.n_tasks)
    if cfg.train.w is not None and len(cfg.train.w) != cfg.suite.n_tasks:
        raise ConfigError(f"train.w: needs {cfg.suite.n_tasks} entries")
    return cfg


def load_config(path, seed: int | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config: no such file {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return parse_config(raw, seed)
