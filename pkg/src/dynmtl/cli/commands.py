"""Pipeline commands shared by the console entry point and the scripts."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from ..benchsynth import TaskDataset, generate, save_dataset
from ..controller import EdgeHypernet, Preference, WeightHypernet, predict
from ..metricsoracle import (ControllerBundle, GridSpec, SweepResult, front_hypervolume,
                             preference_sweep, seeded_preferences)
from ..numkernel.sampling import Rng
from ..objectives import TaskAffinity, rsa_affinity
from ..searchspace import AnchorNet, resource_usage
from ..trainer import train_anchor, train_edge, train_weight
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig

log = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-6


def _ckpt_path(out: Path, component: str) -> Path:
    return out / f"{component}.ckpt"


def write_anchor_report(reports: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stream", "step", "loss"])
        for name, rows in reports.items():
            for step, loss in rows:
                writer.writerow([name, step, repr(float(loss))])


def cmd_gen_data(cfg: RunConfig, out) -> TaskDataset:
    ds = generate(cfg.suite)
    save_dataset(ds, out)
    return ds


def cmd_train(cfg: RunConfig, out) -> dict:
    """Anchor, affinity, edge and weight stages; returns the written paths by name."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.dumps())
    root = Rng(cfg.seed)
    digest = cfg.training_hash()
    data = generate(cfg.suite)
    paths = {"config": out / "config.json"}

    def save(component, arrays, **meta):
        paths[component] = _ckpt_path(out, component)
        save_checkpoint(Checkpoint(component, arrays, digest, cfg.seed, meta), paths[component])

    log.info("training anchor streams")
    reports: dict = {}
    anchor = train_anchor(cfg.anchor, data, root.child("anchor"), reports)
    save("anchor", anchor.arrays(), task_names=anchor.task_names)
    paths["anchor_report"] = out / "report_anchor.csv"
    write_anchor_report(reports, paths["anchor_report"])

    x_train, _ = data.split("train")
    if cfg.eval.probes > x_train.shape[0]:
        raise ConfigError(f"eval.probes: {cfg.eval.probes} exceeds the training set size")
    probes = x_train[root.child("affinity").permutation(x_train.shape[0])[:cfg.eval.probes]]
    affinity = rsa_affinity(anchor, probes)
    save("affinity", {"A": affinity.A}, task_names=anchor.task_names, probes=cfg.eval.probes)
    paths["affinity_csv"] = out / "affinity.csv"
    affinity.to_csv(paths["affinity_csv"], anchor.task_names)

    log.info("training edge hypernet (%d steps)", cfg.train.edge_steps)
    h, edge_report = train_edge(cfg.train, anchor, affinity, data, root.child("edge"))
    save("edge", h.numpy_params(), n_tasks=h.n_tasks, n_layers=h.n_layers)
    paths["edge_report"] = out / "report_edge.csv"
    edge_report.to_csv(paths["edge_report"])

    log.info("training weight hypernet (%d steps)", cfg.train.weight_steps)
    hbar, weight_report = train_weight(cfg.train, anchor, h, data, root.child("weight"))
    save("weight", hbar.numpy_params(), n_tasks=hbar.n_tasks, widths=hbar.widths)
    paths["weight_report"] = out / "report_weight.csv"
    weight_report.to_csv(paths["weight_report"])
    return paths


def load_bundle(cfg: RunConfig, out) -> ControllerBundle:
    """Rebuild the trained controller from checkpoints, rejecting any config mismatch."""
    out = Path(out)
    digest = cfg.training_hash()
    a = load_checkpoint(_ckpt_path(out, "anchor"), "anchor", digest)
    anchor = AnchorNet.from_arrays(a.arrays, a.meta["task_names"])
    e = load_checkpoint(_ckpt_path(out, "edge"), "edge", digest)
    h = EdgeHypernet(e.meta["n_tasks"], e.meta["n_layers"], Rng(0))
    h.load_params(e.arrays)
    w = load_checkpoint(_ckpt_path(out, "weight"), "weight", digest)
    hbar = WeightHypernet(w.meta["n_tasks"], w.meta["widths"], Rng(0))
    hbar.load_params(w.arrays)
    x, y = generate(cfg.suite).split(cfg.eval.split)
    return ControllerBundle(anchor, h, hbar, x, y)


def load_affinity(cfg: RunConfig, out) -> TaskAffinity:
    ck = load_checkpoint(_ckpt_path(Path(out), "affinity"), "affinity", cfg.training_hash())
    return TaskAffinity(ck.arrays["A"], K=int(ck.meta["probes"]))


def parse_preference(r_text: str, c: float, n_tasks: int) -> Preference:
    try:
        r = np.array([float(v) for v in r_text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"--r: expected comma-separated numbers, got {r_text!r}") from exc
    if r.size != n_tasks:
        raise ConfigError(f"--r: expected {n_tasks} entries, got {r.size}")
    if not np.all(np.isfinite(r)) or np.any(r < 0) or r.sum() <= 0:
        raise ConfigError(f"--r: entries must be finite, nonnegative and not all zero")
    if abs(r.sum() - 1.0) > SUM_TOLERANCE:
        log.warning("--r sums to %r; normalising to the simplex", float(r.sum()))
    r = r / r.sum()
    if not 0.0 <= c <= 1.0:
        raise ConfigError(f"--c: must lie in [0, 1], got {c}")
    return Preference(tuple(r), float(c))


def cmd_predict(bundle: ControllerBundle, pref: Preference) -> dict:
    tree, _ = predict(bundle.edge, bundle.weight, bundle.anchor, pref)
    res = resource_usage(bundle.anchor, tree)
    return {"r": list(pref.r), "c": pref.c,
            "parent": tree.parent.tolist(),
            "active": tree.active.tolist(),
            "cross_task_edges": [list(e) for e in tree.cross_task_edges],
            "param_count": res.param_count, "flop_count": res.flop_count,
            "resource_ratio": res.ratio_to_anchor,
            "signature": tree.signature()}


def cmd_sweep(cfg: RunConfig, bundle: ControllerBundle, out, grid: int | None = None
              ) -> SweepResult:
    spec = GridSpec(points=grid if grid is not None else cfg.eval.grid,
                    c_values=tuple(cfg.eval.c_values), eta=cfg.eval.grid_eta, seed=cfg.seed)
    result = preference_sweep(bundle, spec, cfg.eval.reference_for(bundle.anchor.n_tasks))
    out = Path(out)
    result.to_csv(out / "sweep.csv")
    result.write_summary(out / "sweep_summary.json")
    return result


def cmd_eval_hv(cfg: RunConfig, bundle: ControllerBundle) -> dict:
    """Hypervolume over seeded preferences, with and without weight adaptation."""
    n = bundle.anchor.n_tasks
    ref = cfg.eval.reference_for(n)
    prefs = seeded_preferences(n, cfg.eval.hv_prefs, cfg.eval.grid_eta, cfg.seed)
    rows = {}
    for c in cfg.eval.c_values:
        rows[repr(float(c))] = {
            "adapted": front_hypervolume(bundle, prefs, c, ref, use_weight=True),
            "unadapted": front_hypervolume(bundle, prefs, c, ref, use_weight=False)}
    return {"reference": ref, "n_prefs": len(prefs), "by_c": rows}


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
