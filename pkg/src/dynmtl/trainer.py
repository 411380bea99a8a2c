"""Three training stages: single-task anchor streams, edge hypernet, weight hypernet."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .benchsynth import TaskDataset
from .controller import EdgeHypernet, Preference, WeightHypernet, edge_forward, weight_forward
from .numkernel import autodiff as ad
from .numkernel.adam import AdamState, adam_step
from .numkernel.autodiff import Tensor
from .numkernel.sampling import Rng, sample_dirichlet, sample_gumbel
from .objectives import (LossWeights, RegularizerTerms, TaskAffinity, default_tau, dichotomize,
                         gumbel_softmax, regularizer, task_loss)
from .searchspace import AnchorNet, compute_p_use, forward_soft

log = logging.getLogger(__name__)

BN_EPS = 1e-5
# Reference schedule: 30K steps, temperature decayed every 300 steps. Shorter runs
# shrink the decay interval by the same factor so the anneal reaches the same end point.
REFERENCE_STEPS = 30_000
REFERENCE_ZETA_INTERVAL = 300


@dataclass
class AnchorConfig:
    width: int = 32
    n_layers: int = 4
    pretrain_steps: int = 1000
    steps: int = 1000
    lr: float = 3e-3
    finetune_lr: float = 1e-3
    batch_size: int = 128


@dataclass
class TrainConfig:
    edge_steps: int = 3000
    weight_steps: int = 2000
    lr: float = 1e-3
    lr_decay: float = 0.3
    milestones: tuple = (14 / 30, 28 / 30)
    batch_size: int = 64
    eta: float = 0.2
    tau: float | None = None
    lambda_active: float = 1.0
    lambda_inactive: float = 0.1
    w: list | None = None
    zeta_init: float = 5.0
    zeta_decay: float = 0.97
    zeta_interval: int | None = None
    diag_bias: float = 4.0
    exact_p_use: bool = True

    def __post_init__(self):
        for name in ("edge_steps", "weight_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.zeta_interval is None:
            self.zeta_interval = max(1, round(REFERENCE_ZETA_INTERVAL * self.edge_steps / REFERENCE_STEPS))
        if self.zeta_interval < 1:
            raise ValueError("zeta_interval must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.zeta_init <= 0 or not 0 < self.zeta_decay <= 1:
            raise ValueError("temperature schedule must stay positive")
        self.milestones = tuple(self.milestones)

    def tau_for(self, n_tasks: int) -> float:
        return default_tau(n_tasks) if self.tau is None else self.tau

    def loss_weights(self, n_tasks: int) -> LossWeights:
        w = np.ones(n_tasks) if self.w is None else np.asarray(self.w, dtype=np.float64)
        if w.shape != (n_tasks,):
            raise ValueError(f"w must have {n_tasks} entries")
        return LossWeights(w, self.lambda_active, self.lambda_inactive)


@dataclass
class TrainReport:
    n_tasks: int
    records: list = field(default_factory=list)
    wall_clock: float = 0.0

    def log(self, step: int, pref: Preference, zeta: float, task: float, active: float = 0.0,
            inactive: float = 0.0, omega: float = 0.0) -> None:
        if self.records and step <= self.records[-1]["step"]:
            raise ValueError("report steps must increase")
        self.records.append({"step": step, "task_loss": task, "active": active,
                             "inactive": inactive, "omega": omega, "zeta": zeta,
                             "c": pref.c, "r": pref.r})

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "task_loss", "active", "inactive", "omega", "zeta", "c"]
                            + [f"r_{i + 1}" for i in range(self.n_tasks)])
            for rec in self.records:
                writer.writerow([rec["step"]] + [repr(float(rec[k])) for k in
                                 ("task_loss", "active", "inactive", "omega", "zeta", "c")]
                                + [repr(float(v)) for v in rec["r"]])


def sample_preference(rng: Rng, eta) -> Preference:
    r = sample_dirichlet(rng.child("r"), eta)
    c = float(rng.child("c").gen.random())
    return Preference(tuple(r), c)


def temperature(step: int, config: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be nonnegative")
    return config.zeta_init * config.zeta_decay ** (step // config.zeta_interval)


def learning_rate(step: int, total: int, lr0: float, decay: float = 0.3,
                  milestones=(14 / 30, 28 / 30)) -> float:
    passed = sum(1 for m in milestones if step >= int(round(m * total)))
    return lr0 * decay ** passed


def per_task_mse(outputs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error per task from (N, batch, out) predictions."""
    return ad.mean(ad.square(ad.sub(outputs, targets)), axis=(1, 2))


# ---------------------------------------------------------------- anchor

def _stream_params(rng: Rng, in_dim: int, width: int, n_layers: int, out_dim: int) -> dict:
    params = {}
    fan_in = in_dim
    for l in range(n_layers + 1):
        params[f"W{l}"] = ad.parameter(rng.child(f"W{l}").normal((fan_in, width),
                                                                  scale=np.sqrt(2.0 / fan_in)))
        params[f"b{l}"] = ad.parameter(np.zeros(width))
        params[f"g{l}"] = ad.parameter(np.ones(width))
        params[f"beta{l}"] = ad.parameter(np.zeros(width))
        fan_in = width
    params["head_w"] = ad.parameter(rng.child("head").normal((width, out_dim),
                                                             scale=np.sqrt(1.0 / width)))
    params["head_b"] = ad.parameter(np.zeros(out_dim))
    return params


def _stream_forward(params: dict, x, n_layers: int) -> Tensor:
    h = ad.as_tensor(x)
    for l in range(n_layers + 1):
        z = ad.affine(h, params[f"W{l}"], params[f"b{l}"])
        h = ad.relu(ad.batch_normalize(z, params[f"g{l}"], params[f"beta{l}"], BN_EPS))
    return ad.affine(h, params["head_w"], params["head_b"])


def _population_stats(params: dict, x: np.ndarray, n_layers: int) -> tuple[list, list]:
    """Per-layer mean/std of pre-normalisation activations, with earlier layers frozen."""
    mus, sigmas = [], []
    h = x
    for l in range(n_layers + 1):
        z = h @ params[f"W{l}"].data + params[f"b{l}"].data
        mu = z.mean(axis=0)
        sigma = np.sqrt(z.var(axis=0) + BN_EPS)
        mus.append(mu)
        sigmas.append(sigma)
        z = (z - mu) / sigma * params[f"g{l}"].data + params[f"beta{l}"].data
        h = np.where(z > 0, z, 0.0)
    return mus, sigmas


def pretrain_backbone(x: np.ndarray, y: np.ndarray, cfg: AnchorConfig, rng: Rng,
                      task_names=None) -> dict:
    """Shared backbone fitted to all tasks at once through one wide head.

    Plays the role of a common pretrained initialisation for every stream. Targets
    are laid out in sorted task-name order, so the result ignores task order.
    """
    n_tasks, _, out_dim = y.shape
    order = np.argsort(task_names, kind="stable") if task_names is not None else range(n_tasks)
    params = _stream_params(rng.child("init"), x.shape[1], cfg.width, cfg.n_layers,
                            n_tasks * out_dim)
    joint = np.concatenate([y[k] for k in order], axis=1)
    _fit(params, x, joint, cfg.pretrain_steps, cfg.lr, cfg, rng.child("pretrain"))
    return params


def _fit(params: dict, x: np.ndarray, y: np.ndarray, steps: int, lr: float, cfg: AnchorConfig,
         rng: Rng, report: list | None = None) -> None:
    state = AdamState(params, lr=lr)
    n = x.shape[0]
    for step in range(steps):
        idx = rng.child(step).integers(n, (cfg.batch_size,))
        loss, grads = ad.forward_backward(
            lambda p, xb, yb: ad.mse(_stream_forward(p, xb, cfg.n_layers), yb),
            params, x[idx], y[idx])
        adam_step(state, grads, lr=learning_rate(step, steps, lr))
        if report is not None:
            report.append((step, loss))


def train_stream(x: np.ndarray, y: np.ndarray, cfg: AnchorConfig, rng: Rng,
                 init: dict | None = None, report: list | None = None) -> dict:
    """Fine-tune one single-task stream with batch-statistics normalisation."""
    params = _stream_params(rng.child("head"), x.shape[1], cfg.width, cfg.n_layers, y.shape[1])
    if init is not None:
        for k, v in init.items():
            if not k.startswith("head"):
                params[k].data = v.data.copy()
    _fit(params, x, y, cfg.steps, cfg.finetune_lr, cfg, rng.child("batches"), report)
    return params


def train_anchor(cfg: AnchorConfig, data: TaskDataset, rng: Rng,
                 reports: dict | None = None) -> AnchorNet:
    """Train every stream on its own task and freeze its normalisation statistics.

    Every stream is fine-tuned from one backbone pretrained on all tasks jointly,
    with the same batch order, which keeps their feature bases aligned enough for
    cross-stream edges to be usable. The backbone does not depend on task order and
    streams never interact afterwards, so reordering tasks reorders streams exactly.
    """
    x, y = data.split("train")
    backbone = None
    if cfg.pretrain_steps:
        backbone = pretrain_backbone(x, y, cfg, rng.child("backbone"), data.task_names)
    streams = []
    for k, name in enumerate(data.task_names):
        rep = [] if reports is not None else None
        params = train_stream(x, y[k], cfg, rng.child("stream"), backbone, rep)
        if reports is not None:
            reports[name] = rep
        mus, sigmas = _population_stats(params, x, cfg.n_layers)
        streams.append((params, mus, sigmas))
        log.info("anchor stream %s trained", name)
    L = cfg.n_layers
    stack = lambda key: [np.stack([s[0][f"{key}{l}"].data for s in streams]) for l in range(L + 1)]
    return AnchorNet(
        weights=stack("W"), biases=stack("b"), gamma=stack("g"), beta=stack("beta"),
        mu=[np.stack([s[1][l] for s in streams]) for l in range(L + 1)],
        sigma=[np.stack([s[2][l] for s in streams]) for l in range(L + 1)],
        head_w=np.stack([s[0]["head_w"].data for s in streams]),
        head_b=np.stack([s[0]["head_b"].data for s in streams]),
        task_names=list(data.task_names))


# ---------------------------------------------------------------- edge hypernet

@dataclass
class EdgeStepTerms:
    total: Tensor
    task: Tensor
    reg: RegularizerTerms


def edge_objective(h: EdgeHypernet, anchor: AnchorNet, affinity: TaskAffinity,
                   pref: Preference, xb, yb, noise: np.ndarray, zeta: float,
                   weights: LossWeights, tau: float, exact_p_use: bool = True) -> EdgeStepTerms:
    """L_task + Omega for one preference, batch and Gumbel draw."""
    alpha = edge_forward(h, pref)
    nu = gumbel_softmax(alpha, zeta, noise=noise)
    losses = per_task_mse(forward_soft(anchor, nu, xb), yb)
    lt = task_loss(pref, weights.w, losses)
    reg = regularizer(pref, dichotomize(pref, tau), nu, affinity.A, weights,
                      p_use=compute_p_use(nu, exact=None if exact_p_use else False))
    return EdgeStepTerms(ad.add(lt, reg.omega), lt, reg)


def _batch(rng: Rng, data: TaskDataset, size: int) -> tuple[np.ndarray, np.ndarray]:
    x, y = data.split("train")
    idx = rng.integers(x.shape[0], (size,))
    return x[idx], y[:, idx]


def train_edge(cfg: TrainConfig, anchor: AnchorNet, affinity: TaskAffinity, data: TaskDataset,
               rng: Rng, h: EdgeHypernet | None = None,
               sampler: Callable[[Rng], Preference] | None = None
               ) -> tuple[EdgeHypernet, TrainReport]:
    """Fit the edge hypernet; ``sampler`` replaces the Dirichlet preference draw if given."""
    n = anchor.n_tasks
    if h is None:
        h = EdgeHypernet(n, anchor.n_layers, rng.child("init"), diag_bias=cfg.diag_bias)
    weights = cfg.loss_weights(n)
    tau = cfg.tau_for(n)
    eta = np.full(n, cfg.eta)
    state = AdamState(h.params, lr=cfg.lr)
    report = TrainReport(n)
    start = time.perf_counter()
    for step in range(cfg.edge_steps):
        srng = rng.child("steps").child(step)
        pref = (sampler or (lambda r: sample_preference(r, eta)))(srng.child("pref"))
        xb, yb = _batch(srng.child("batch"), data, cfg.batch_size)
        zeta = temperature(step, cfg)
        noise = sample_gumbel(srng.child("gumbel"), (anchor.n_layers, n, n))
        terms: list[EdgeStepTerms] = []

        def objective(params, *_):
            terms.append(edge_objective(h, anchor, affinity, pref, xb, yb, noise, zeta,
                                        weights, tau, cfg.exact_p_use))
            return terms[-1].total

        total, grads = ad.forward_backward(objective, h.params)
        adam_step(state, grads, lr=learning_rate(step, cfg.edge_steps, cfg.lr, cfg.lr_decay,
                                                 cfg.milestones))
        t = terms[-1]
        report.log(step, pref, zeta, t.task.item(), t.reg.active.item(),
                   t.reg.inactive.item(), t.reg.omega.item())
    report.wall_clock = time.perf_counter() - start
    return h, report


# ---------------------------------------------------------------- weight hypernet

def weight_objective(hbar: WeightHypernet, anchor: AnchorNet, alpha: np.ndarray,
                     pref: Preference, xb, yb, noise: np.ndarray, zeta: float,
                     w: np.ndarray) -> Tensor:
    nu = gumbel_softmax(alpha, zeta, noise=noise)
    mods = weight_forward(hbar, pref)
    return task_loss(pref, w, per_task_mse(forward_soft(anchor, nu, xb, mods), yb))


def train_weight(cfg: TrainConfig, anchor: AnchorNet, h: EdgeHypernet, data: TaskDataset,
                 rng: Rng, hbar: WeightHypernet | None = None
                 ) -> tuple[WeightHypernet, TrainReport]:
    """Fit normalisation deltas under the frozen edge hypernet's sampled routings.

    The Gumbel temperature continues the edge-stage schedule from where it ended.
    """
    n = anchor.n_tasks
    if hbar is None:
        hbar = WeightHypernet.for_anchor(anchor, rng.child("init"))
    w = cfg.loss_weights(n).w
    eta = np.full(n, cfg.eta)
    state = AdamState(hbar.params, lr=cfg.lr)
    report = TrainReport(n)
    start = time.perf_counter()
    for step in range(cfg.weight_steps):
        srng = rng.child("steps").child(step)
        pref = sample_preference(srng.child("pref"), eta)
        xb, yb = _batch(srng.child("batch"), data, cfg.batch_size)
        zeta = temperature(cfg.edge_steps + step, cfg)
        alpha = edge_forward(h, pref).data
        noise = sample_gumbel(srng.child("gumbel"), alpha.shape)
        loss, grads = ad.forward_backward(
            lambda p: weight_objective(hbar, anchor, alpha, pref, xb, yb, noise, zeta, w),
            hbar.params)
        adam_step(state, grads, lr=learning_rate(step, cfg.weight_steps, cfg.lr, cfg.lr_decay,
                                                 cfg.milestones))
        report.log(step, pref, zeta, loss)
    report.wall_clock = time.perf_counter() - start
    return hbar, report
