"""Evaluation metrics for trained controllers and brute-force oracles used to check them."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controller import EdgeHypernet, Preference, WeightHypernet, predict
from .numkernel.sampling import Rng, sample_dirichlet
from .searchspace import AnchorNet, resource_usage

ENUMERATION_CAP = 10**6
KL_CLAMP = 1e-12


# ---------------------------------------------------------------- hypervolume

def _clip_front(points, reference) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, ref.size)
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(ref)):
        raise ValueError("front and reference must be finite")
    return pts[np.all(pts < ref, axis=1)], ref


def _nondominated(pts: np.ndarray) -> np.ndarray:
    pts = np.unique(pts, axis=0)
    keep = [i for i, p in enumerate(pts)
            if not np.any(np.all(pts <= p, axis=1) & np.any(pts < p, axis=1))]
    return pts[keep]


def _sweep(pts: np.ndarray, ref: np.ndarray) -> float:
    if pts.shape[1] == 1:
        return float(ref[0] - pts[:, 0].min())
    pts = pts[np.argsort(pts[:, -1], kind="stable")]
    total = 0.0
    for k in range(len(pts)):
        upper = pts[k + 1, -1] if k + 1 < len(pts) else ref[-1]
        depth = upper - pts[k, -1]
        if depth > 0:
            total += depth * _sweep(_nondominated(pts[:k + 1, :-1]), ref[:-1])
    return total


def hypervolume(points, reference) -> float:
    """Exact volume dominated by ``points`` (minimisation) and bounded by ``reference``.

    Slices along the last coordinate and recurses; supports up to 4 objectives.
    Points with any coordinate at or beyond the reference contribute nothing.
    """
    ref = np.asarray(reference, dtype=np.float64)
    if ref.size > 4:
        raise ValueError(f"exact hypervolume supports up to 4 objectives, got {ref.size}; "
                         "use hypervolume_mc")
    pts, ref = _clip_front(points, ref)
    if len(pts) == 0:
        return 0.0
    return _sweep(_nondominated(pts), ref)


def hypervolume_mc(points, reference, samples: int, rng: Rng) -> tuple[float, float]:
    """Monte-Carlo hypervolume and its standard error."""
    if samples < 10**4:
        raise ValueError("use at least 10^4 samples")
    pts, ref = _clip_front(points, reference)
    if len(pts) == 0:
        return 0.0, 0.0
    lower = pts.min(axis=0)
    volume = float(np.prod(ref - lower))
    if volume <= 0:
        return 0.0, 0.0
    hits = 0
    chunk = 50_000
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        u = lower + rng.gen.random((m, ref.size)) * (ref - lower)
        dominated = np.zeros(m, dtype=bool)
        for p in pts:
            dominated |= np.all(p <= u, axis=1)
        hits += int(dominated.sum())
        done += m
    frac = hits / samples
    return volume * frac, volume * np.sqrt(frac * (1.0 - frac) / samples)


# ---------------------------------------------------------------- uniformity

def uniformity(pref, losses) -> float:
    """1 - KL(normalised weighted losses || uniform), natural log."""
    r = pref.vector if isinstance(pref, Preference) else np.asarray(pref, dtype=np.float64)
    weighted = r * np.asarray(losses, dtype=np.float64)
    total = weighted.sum()
    if not total > 0:
        raise ValueError("preference-weighted losses must have a positive sum")
    share = np.maximum(weighted / total, KL_CLAMP)
    n = share.size
    return float(1.0 - np.sum(share * np.log(share * n)))


# ---------------------------------------------------------------- tree oracles

def enumerate_trees(n_tasks: int, n_layers: int) -> np.ndarray:
    """Every parent table as an array of shape (N^(N*L), L, N)."""
    count = n_tasks ** (n_tasks * n_layers)
    if count > ENUMERATION_CAP:
        raise ValueError(f"{count} trees exceeds the enumeration cap of {ENUMERATION_CAP}")
    flat = np.array(list(itertools.product(range(n_tasks), repeat=n_tasks * n_layers)),
                    dtype=np.int64)
    return flat.reshape(count, n_layers, n_tasks)


def _usage_masks(trees: np.ndarray) -> np.ndarray:
    count, L, N = trees.shape
    used = np.zeros((count, L + 1, N), dtype=bool)
    used[:, L] = True
    for b in range(L - 1, -1, -1):
        for j in range(N):
            hit = used[:, b + 1, j]
            used[hit, b, trees[hit, b, j]] = True
    return used


def p_use_oracle(nu) -> np.ndarray:
    """Node-usage marginals by summing over every parent assignment."""
    nu = np.asarray(nu, dtype=np.float64)
    L, N, _ = nu.shape
    trees = enumerate_trees(N, L)
    prob = np.ones(len(trees))
    for b in range(L):
        for j in range(N):
            prob *= nu[b, j, trees[:, b, j]]
    return np.tensordot(prob, _usage_masks(trees).astype(np.float64), axes=1)


def finite_diff(fn: Callable[[np.ndarray], float], point, h: float = 1e-6,
                coords=None) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``point``.

    ``coords`` restricts evaluation to a subset of flat indices; other entries stay 0.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), grad.reshape(-1)
    for i in (range(flat_x.size) if coords is None else coords):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = fn(x)
        flat_x[i] = orig - h
        down = fn(x)
        flat_x[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite evaluation at coordinate {i}")
        flat_g[i] = (up - down) / (2.0 * h)
    return grad


# ---------------------------------------------------------------- sweeps

@dataclass
class GridSpec:
    points: int | None = None      # defaults to N corners + uniform + 20 Dirichlet draws
    c_values: tuple = (0.0, 1.0)
    eta: float = 0.2
    seed: int = 0

    def simplex_points(self, n_tasks: int) -> list[tuple]:
        total = n_tasks + 1 + 20 if self.points is None else self.points
        if total < n_tasks + 1:
            raise ValueError(f"grid needs at least {n_tasks + 1} points for N={n_tasks}")
        pts = [tuple(np.eye(n_tasks)[k]) for k in range(n_tasks)]
        pts.append(tuple(np.full(n_tasks, 1.0 / n_tasks)))
        pts.extend(seeded_preferences(n_tasks, total - n_tasks - 1, self.eta, self.seed))
        return pts


def seeded_preferences(n_tasks: int, count: int, eta: float = 0.2, seed: int = 0) -> list[tuple]:
    rng = Rng(seed).child("grid")
    return [tuple(sample_dirichlet(rng.child(k), np.full(n_tasks, eta))) for k in range(count)]


@dataclass
class ControllerBundle:
    anchor: AnchorNet
    edge: EdgeHypernet
    weight: WeightHypernet | None
    x_eval: np.ndarray
    y_eval: np.ndarray


@dataclass
class SweepRow:
    pref: Preference
    ratio: float
    losses: np.ndarray
    signature: str


@dataclass
class SweepResult:
    rows: list
    reference: np.ndarray
    summary: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        n = len(self.reference)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"pref_{i + 1}" for i in range(n)] + ["c", "resource_ratio"]
                            + [f"loss_{i + 1}" for i in range(n)] + ["tree_signature"])
            for row in self.rows:
                writer.writerow([repr(v) for v in row.pref.r] + [repr(row.pref.c), repr(row.ratio)]
                                + [repr(float(v)) for v in row.losses] + [row.signature])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate_preference(bundle: ControllerBundle, pref: Preference,
                        use_weight: bool = True) -> SweepRow:
    tree, model = predict(bundle.edge, bundle.weight if use_weight else None, bundle.anchor, pref)
    out = model(bundle.x_eval)
    losses = np.mean((out - bundle.y_eval) ** 2, axis=(1, 2))
    return SweepRow(pref, resource_usage(bundle.anchor, tree).ratio_to_anchor, losses,
                    tree.signature())


def _aggregate(rows: list, reference: np.ndarray) -> dict:
    return {"hv": hypervolume([r.losses for r in rows], reference)
            if len(reference) <= 4 else None,
            "mean_uniformity": float(np.mean([uniformity(r.pref, r.losses) for r in rows])),
            "mean_ratio": float(np.mean([r.ratio for r in rows]))}


def preference_sweep(bundle: ControllerBundle, grid: GridSpec, reference,
                     use_weight: bool = True) -> SweepResult:
    """Predict and evaluate a controller over a preference grid.

    The summary holds hypervolume, mean uniformity and mean resource ratio over all
    rows, plus the same aggregates for each cost level under ``by_c``.
    """
    n = bundle.anchor.n_tasks
    reference = np.asarray(reference, dtype=np.float64)
    rows = [evaluate_preference(bundle, Preference(r, c), use_weight)
            for c in grid.c_values for r in grid.simplex_points(n)]
    summary = _aggregate(rows, reference)
    summary["by_c"] = {repr(float(c)): _aggregate([r for r in rows if r.pref.c == c], reference)
                       for c in grid.c_values}
    return SweepResult(rows, reference, summary)


def front_hypervolume(bundle: ControllerBundle, simplex: list, c: float, reference,
                      use_weight: bool = True) -> float:
    """Hypervolume of the eval losses reached at each simplex point for one cost level."""
    losses = [evaluate_preference(bundle, Preference(r, c), use_weight).losses for r in simplex]
    return hypervolume(losses, reference)


CONTROL_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)


def task_control_curve(bundle: ControllerBundle, task: int, levels=CONTROL_LEVELS,
                       draws: int = 10, c_values=(0.0, 1.0), seed: int = 0,
                       use_weight: bool = True) -> np.ndarray:
    """Mean eval loss of ``task`` as its preference takes each value in ``levels``.

    The remaining mass is split over the other tasks by seeded Dirichlet(1) draws,
    reused at every level, and results are averaged over draws and ``c_values``.
    """
    n = bundle.anchor.n_tasks
    others = [k for k in range(n) if k != task]
    rng = Rng(seed).child("control").child(task)
    splits = [sample_dirichlet(rng.child(k), np.ones(n - 1)) for k in range(draws)]
    curve = []
    for level in levels:
        vals = []
        for split in splits:
            r = np.zeros(n)
            r[task] = level
            r[others] = (1.0 - level) * split
            r /= r.sum()
            for c in c_values:
                vals.append(evaluate_preference(bundle, Preference(tuple(r), c),
                                                use_weight).losses[task])
        curve.append(float(np.mean(vals)))
    return np.array(curve)
