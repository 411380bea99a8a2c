"""Losses for the edge hypernet and the RSA task affinity they are weighted by."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import Preference
from .numkernel import autodiff as ad
from .numkernel.autodiff import Tensor
from .numkernel.sampling import Rng, sample_gumbel
from .searchspace import AnchorNet, TreeArchitecture, compute_p_use, forward_hard

log = logging.getLogger(__name__)

LAMBDA_ACTIVE = 1.0
LAMBDA_INACTIVE = 0.1


def default_tau(n_tasks: int) -> float:
    return 0.6 / n_tasks


@dataclass(frozen=True)
class TaskDichotomy:
    active: tuple
    inactive: tuple
    tau: float


@dataclass
class LossWeights:
    w: np.ndarray
    lambda_active: float = LAMBDA_ACTIVE
    lambda_inactive: float = LAMBDA_INACTIVE

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if np.any(self.w <= 0):
            raise ValueError(f"task loss scales must be positive, got {self.w}")
        if self.lambda_active < 0 or self.lambda_inactive < 0:
            raise ValueError("regulariser weights must be nonnegative")


def task_loss(pref: Preference, w, losses):
    """Scalarised loss sum_i r_i w_i L_i. ``losses`` may be an array or a Tensor."""
    w = np.asarray(w, dtype=np.float64)
    coef = pref.vector * w
    if isinstance(losses, Tensor):
        if np.any(losses.data < 0):
            raise ValueError("task losses must be nonnegative")
        return ad.tsum(ad.mul(coef, losses))
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0) or not np.all(np.isfinite(losses)):
        raise ValueError(f"task losses must be finite and nonnegative, got {losses}")
    return float(np.sum(coef * losses))


def dichotomize(pref: Preference, tau: float) -> TaskDichotomy:
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    r = pref.vector
    return TaskDichotomy(tuple(int(i) for i in np.flatnonzero(r >= tau)),
                         tuple(int(i) for i in np.flatnonzero(r < tau)), float(tau))


def gumbel_softmax(alpha, zeta: float, rng: Rng | None = None, noise=None) -> Tensor:
    """Relaxed one-hot rows softmax((alpha + G) / zeta) with G standard Gumbel.

    ``alpha`` holds logits. Pass ``noise`` to reuse a fixed Gumbel draw.
    """
    if not zeta > 0:
        raise ValueError(f"temperature must be positive, got {zeta}")
    alpha = ad.as_tensor(alpha)
    if noise is None:
        if rng is None:
            raise ValueError("need an rng or explicit noise")
        noise = sample_gumbel(rng, alpha.shape)
    return ad.softmax(ad.div(ad.add(alpha, noise), zeta), axis=-1)


def _row_distance(nu: Tensor, i: int, j: int) -> Tensor:
    """||nu[:, i] - nu[:, j]||^2 for every block, shape (L,)."""
    return ad.squared_distance(nu[:, i, :], nu[:, j, :], axis=-1)


def active_loss(nu, dich: TaskDichotomy, affinity, p_use) -> Tensor:
    """Affinity- and usage-weighted disagreement between active tasks' parent choices.

    Ordered pairs (i, j), i != j. Block b feeds node layer b+1 and is weighted by
    (L - b - 1) / L, so the block feeding the heads contributes nothing.
    """
    nu, p_use = ad.as_tensor(nu), ad.as_tensor(p_use)
    L = nu.shape[0]
    if len(dich.active) < 2:
        return ad.as_tensor(0.0)
    depth_weight = (L - 1 - np.arange(L)) / L
    aff = np.asarray(affinity, dtype=np.float64)
    total = None
    for i in dich.active:
        for j in dich.active:
            if i == j:
                continue
            usage = ad.mul(p_use[1:, i], p_use[1:, j])
            term = ad.mul(aff[i, j] * depth_weight, ad.mul(usage, _row_distance(nu, i, j)))
            total = term if total is None else ad.add(total, term)
    return ad.tsum(total)


def inactive_loss(nu, dich: TaskDichotomy) -> Tensor:
    """Distance from each inactive task's rows to the closest active task, per block."""
    nu = ad.as_tensor(nu)
    if not dich.inactive:
        return ad.as_tensor(0.0)
    if not dich.active:
        log.warning("no active task at tau=%s; inactive loss set to 0", dich.tau)
        return ad.as_tensor(0.0)
    total = None
    for j in dich.inactive:
        dists = ad.stack([_row_distance(nu, i, j) for i in dich.active], axis=0)  # (|A|, L)
        term = ad.tsum(ad.tmin(dists, axis=0))
        total = term if total is None else ad.add(total, term)
    return total


@dataclass
class RegularizerTerms:
    omega: Tensor
    active: Tensor
    inactive: Tensor


def regularizer(pref: Preference, dich: TaskDichotomy, nu, affinity,
                weights: LossWeights, p_use=None) -> RegularizerTerms:
    """c * lambda_A * L_active + lambda_I * L_inactive, all from the same ``nu`` sample."""
    nu = ad.as_tensor(nu)
    if p_use is None:
        p_use = compute_p_use(nu)
    la = active_loss(nu, dich, affinity, p_use)
    li = inactive_loss(nu, dich)
    omega = ad.add(ad.mul(pref.c * weights.lambda_active, la), ad.mul(weights.lambda_inactive, li))
    return RegularizerTerms(omega, la, li)


# ---------------------------------------------------------------- task affinity

@dataclass
class TaskAffinity:
    A: np.ndarray
    K: int
    similarity: list = field(default_factory=list)       # S_l, (N, K, K)
    dissimilarity: list = field(default_factory=list)    # D_l, (N, N)
    normalized: list = field(default_factory=list)       # row-scaled D_l

    def to_csv(self, path, task_names) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(task_names)
            for row in self.A:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> tuple["TaskAffinity", list[str]]:
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        return cls(np.array([[float(v) for v in r] for r in rows[1:]]), K=0), rows[0]


def _cosine_matrix(feats: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(feats, axis=1)
    zero = norms == 0
    if np.any(zero):
        log.warning("%d probe feature vectors have zero norm; their similarities are set to 0",
                    int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    unit = feats / safe[:, None]
    unit[zero] = 0.0
    return unit @ unit.T


def _row_minmax(D: np.ndarray) -> np.ndarray:
    lo = D.min(axis=1, keepdims=True)
    span = D.max(axis=1, keepdims=True) - lo
    return np.where(span > 0, (D - lo) / np.where(span > 0, span, 1.0), 0.0)


def affinity_from_features(features: list[np.ndarray]) -> TaskAffinity:
    """RSA affinity from per-layer features, each (N, K, dim)."""
    sims, dists, scaled = [], [], []
    K = features[0].shape[1]
    for f in features:
        S = np.stack([_cosine_matrix(f[i]) for i in range(f.shape[0])])
        flat = S.reshape(S.shape[0], -1)
        D = np.sqrt(((flat[:, None, :] - flat[None, :, :]) ** 2).sum(-1))
        sims.append(S)
        dists.append(D)
        scaled.append(_row_minmax(D))
    A = np.mean([1.0 - d for d in scaled], axis=0)
    np.fill_diagonal(A, 1.0)
    return TaskAffinity(A, K, sims, dists, scaled)


def anchor_features(anchor: AnchorNet, x) -> list[np.ndarray]:
    """Post-activation outputs of every node when each stream runs on its own, (N, K, width)."""
    trace: dict = {}
    forward_hard(anchor, TreeArchitecture.identity(anchor.n_tasks, anchor.n_layers), x, trace=trace)
    return [np.stack([trace[(l, i)] for i in range(anchor.n_tasks)])
            for l in range(anchor.n_layers + 1)]


def rsa_affinity(anchor: AnchorNet, probes) -> TaskAffinity:
    probes = np.asarray(probes, dtype=np.float64)
    if probes.ndim != 2 or probes.shape[0] < 2:
        raise ValueError(f"need at least 2 probe inputs, got shape {probes.shape}")
    return affinity_from_features(anchor_features(anchor, probes))

