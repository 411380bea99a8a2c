"""Synthetic multi-task regression suites with known task clusters.

Tasks in one cluster regress the same frozen random teacher, each through its own
orthogonal output rotation, so they share intermediate representations while
tasks in different clusters do not.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numkernel.sampling import Rng

SPLITS = ("train", "val", "test")


@dataclass
class TaskSuiteSpec:
    n_tasks: int = 3
    input_dim: int = 16
    output_dim: int = 8
    teacher_hidden: int = 32
    n_train: int = 4096
    n_val: int = 1024
    n_test: int = 1024
    clusters: list = field(default_factory=lambda: [0, 0, 1])
    noise: float = 0.1
    identity_rotations: bool = False
    seed: int = 0

    def __post_init__(self):
        self.clusters = [int(c) for c in self.clusters]
        if self.n_tasks < 2:
            raise ValueError("a suite needs at least 2 tasks")
        if len(self.clusters) != self.n_tasks:
            raise ValueError(f"clusters must list one id per task ({self.n_tasks}), "
                             f"got {self.clusters}")
        if min(self.n_train, self.n_val, self.n_test, self.input_dim, self.output_dim) < 1:
            raise ValueError("split sizes and dimensions must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")

    @property
    def task_names(self) -> list[str]:
        return [f"task{k}" for k in range(self.n_tasks)]


@dataclass
class TaskDataset:
    spec: TaskSuiteSpec
    inputs: dict            # split -> (n, input_dim)
    targets: dict           # split -> (N, n, output_dim)
    task_names: list

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[name], self.targets[name]

    def permuted(self, order) -> "TaskDataset":
        """Same inputs with tasks reordered; task names travel with their targets."""
        order = list(order)
        return TaskDataset(self.spec, self.inputs,
                           {s: t[order] for s, t in self.targets.items()},
                           [self.task_names[k] for k in order])


def _teacher(rng: Rng, spec: TaskSuiteSpec):
    w1 = rng.normal((spec.input_dim, spec.teacher_hidden), scale=1.0 / np.sqrt(spec.input_dim))
    b1 = rng.normal((spec.teacher_hidden,), scale=0.5)
    w2 = rng.normal((spec.teacher_hidden, spec.output_dim), scale=1.0 / np.sqrt(spec.teacher_hidden))
    return lambda x: np.tanh(x @ w1 + b1) @ w2


def _rotation(rng: Rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((n, n)))
    return q * np.sign(np.diag(r))


def generate(spec: TaskSuiteSpec) -> TaskDataset:
    root = Rng(spec.seed).child("suite")
    sizes = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    total = sum(sizes.values())
    x = root.child("inputs").normal((total, spec.input_dim))
    reps = {}
    for c in sorted(set(spec.clusters)):
        z = _teacher(root.child("teacher").child(c), spec)(x)
        reps[c] = (z - z.mean(axis=0)) / z.std(axis=0)
    ys = []
    for t, c in enumerate(spec.clusters):
        rot = (np.eye(spec.output_dim) if spec.identity_rotations
               else _rotation(root.child("rotation").child(t), spec.output_dim))
        y = reps[c] @ rot
        if spec.noise > 0:
            y = y + root.child("noise").child(t).normal(y.shape, scale=spec.noise)
        ys.append(y)
    y_all = np.stack(ys)
    inputs, targets = {}, {}
    start = 0
    for s in SPLITS:
        stop = start + sizes[s]
        inputs[s] = x[start:stop]
        targets[s] = y_all[:, start:stop]
        start = stop
    return TaskDataset(spec, inputs, targets, spec.task_names)


def save_dataset(ds: TaskDataset, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps({"spec": asdict(ds.spec),
                                               "task_names": ds.task_names}, indent=2) + "\n")
    _write_rows(out / "inputs.csv", ds.inputs,
                [f"x{i}" for i in range(ds.spec.input_dim)])
    for k, name in enumerate(ds.task_names):
        _write_rows(out / f"targets_task{k}.csv", {s: ds.targets[s][k] for s in SPLITS},
                    [f"y{i}" for i in range(ds.spec.output_dim)])


def _write_rows(path: Path, by_split: dict, columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split"] + columns)
        for s in SPLITS:
            for row in by_split[s]:
                writer.writerow([s] + [repr(float(v)) for v in row])


def _read_rows(path: Path) -> dict:
    rows: dict = {s: [] for s in SPLITS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            rows[rec[0]].append([float(v) for v in rec[1:]])
    return {s: np.array(v) for s, v in rows.items()}


def load_dataset(directory) -> TaskDataset:
    src = Path(directory)
    meta = json.loads((src / "meta.json").read_text())
    spec = TaskSuiteSpec(**meta["spec"])
    inputs = _read_rows(src / "inputs.csv")
    per_task = [_read_rows(src / f"targets_task{k}.csv") for k in range(spec.n_tasks)]
    targets = {s: np.stack([t[s] for t in per_task]) for s in SPLITS}
    return TaskDataset(spec, inputs, targets, meta["task_names"])
