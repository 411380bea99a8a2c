"""N-stream anchor network and the tree-structured branching space over it.

Node layers are indexed 0..L. Layer-0 nodes read the network input directly;
branching block ``b`` (0 <= b < L) lets every child node (b+1, j) pick one parent
among the nodes (b, i). ``alpha[b, j, i]`` / ``nu[b, j, i]`` is the score /
probability of child (b+1, j) taking parent (b, i). Task heads sit on the
layer-L node of their own stream, so every layer-L node is always in use.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numkernel import autodiff as ad
from .numkernel.autodiff import ShapeError, Tensor


@dataclass
class NormDeltas:
    """Per-node shifts of the normalisation affine: lists over node layers of (N, width)."""
    dgamma: list
    dbeta: list

    @classmethod
    def zeros(cls, anchor: "AnchorNet") -> "NormDeltas":
        return cls([np.zeros((anchor.n_tasks, w)) for w in anchor.widths],
                   [np.zeros((anchor.n_tasks, w)) for w in anchor.widths])

    def numpy(self) -> "NormDeltas":
        return NormDeltas([ad.as_tensor(g).data for g in self.dgamma],
                          [ad.as_tensor(b).data for b in self.dbeta])


@dataclass
class AnchorNet:
    """Frozen N-stream backbone. Arrays per node layer are stacked over streams."""
    weights: list       # (N, in, width_l)
    biases: list        # (N, width_l)
    gamma: list         # (N, width_l)
    beta: list          # (N, width_l)
    mu: list            # (N, width_l)
    sigma: list         # (N, width_l)
    head_w: np.ndarray  # (N, width_L, out)
    head_b: np.ndarray  # (N, out)
    task_names: list = field(default_factory=list)

    def __post_init__(self):
        n = self.head_w.shape[0]
        if not self.task_names:
            self.task_names = [f"task{i}" for i in range(n)]
        for l, w in enumerate(self.weights):
            if w.shape[0] != n:
                raise ShapeError(f"layer {l}: {w.shape[0]} streams, expected {n}")
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[2]:
                raise ShapeError(f"layer {l} input width {w.shape[1]} != previous width")
        if any(np.any(s <= 0) for s in self.sigma):
            raise ValueError("normalisation sigma must be positive")

    @property
    def n_tasks(self) -> int:
        return self.head_w.shape[0]

    @property
    def n_layers(self) -> int:
        """Number of branching blocks L (there are L + 1 node layers)."""
        return len(self.weights) - 1

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.head_w.shape[2]

    @property
    def widths(self) -> list[int]:
        return [w.shape[2] for w in self.weights]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for l in range(len(self.weights)):
            for key in ("weights", "biases", "gamma", "beta", "mu", "sigma"):
                out[f"{key}.{l}"] = getattr(self, key)[l]
        out["head_w"] = self.head_w
        out["head_b"] = self.head_b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, task_names=None) -> "AnchorNet":
        n_node_layers = sum(1 for k in arrays if k.startswith("weights."))
        kw = {key: [np.asarray(arrays[f"{key}.{l}"]) for l in range(n_node_layers)]
              for key in ("weights", "biases", "gamma", "beta", "mu", "sigma")}
        return cls(head_w=np.asarray(arrays["head_w"]), head_b=np.asarray(arrays["head_b"]),
                   task_names=list(task_names or []), **kw)


@dataclass
class TreeArchitecture:
    parent: np.ndarray  # (L, N) int; parent[b, j] = parent stream of child (b+1, j)

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.int64)
        n = self.parent.shape[1] if self.parent.ndim == 2 else 0
        if self.parent.ndim != 2 or np.any(self.parent < 0) or np.any(self.parent >= n):
            raise ValueError(f"parent indices must form an (L, N) table in [0, N): {self.parent}")

    @property
    def n_layers(self) -> int:
        return self.parent.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.parent.shape[1]

    @property
    def active(self) -> np.ndarray:
        """(L+1, N) mask of nodes reachable from some task head."""
        L, N = self.parent.shape
        mask = np.zeros((L + 1, N), dtype=bool)
        mask[L] = True
        for b in range(L - 1, -1, -1):
            mask[b, self.parent[b, mask[b + 1]]] = True
        return mask

    @property
    def cross_task_edges(self) -> list[tuple[int, int, int]]:
        """(child layer, parent stream, child stream) for active edges that switch streams."""
        act = self.active
        return [(b + 1, int(self.parent[b, j]), j)
                for b in range(self.n_layers) for j in range(self.n_tasks)
                if act[b + 1, j] and self.parent[b, j] != j]

    def signature(self) -> str:
        return "-".join(str(int(p)) for p in self.parent.ravel())

    @classmethod
    def identity(cls, n_tasks: int, n_layers: int) -> "TreeArchitecture":
        return cls(np.tile(np.arange(n_tasks), (n_layers, 1)))

    def one_hot(self) -> np.ndarray:
        L, N = self.parent.shape
        nu = np.zeros((L, N, N))
        for b in range(L):
            nu[b, np.arange(N), self.parent[b]] = 1.0
        return nu


@dataclass
class ResourceReport:
    param_count: int
    flop_count: int
    ratio_to_anchor: float


def _check_input(anchor: AnchorNet, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != anchor.in_dim:
        raise ShapeError(f"input must be (batch, {anchor.in_dim}), got {x.shape}")
    return x


def _check_routing(anchor: AnchorNet, shape: tuple) -> None:
    want = (anchor.n_layers, anchor.n_tasks, anchor.n_tasks)
    if tuple(shape) != want:
        raise ShapeError(f"routing tensor must be {want}, got {tuple(shape)}")


def forward_soft(anchor: AnchorNet, nu, x, mods: NormDeltas | None = None) -> Tensor:
    """Relaxed forward pass; returns per-task outputs stacked as (N, batch, out).

    Child inputs are convex combinations of parent outputs weighted by the rows of
    ``nu``. Normalisation uses the frozen statistics plus optional deltas.
    """
    x = _check_input(anchor, x)
    nu = ad.as_tensor(nu)
    _check_routing(anchor, nu.shape)
    h_in = x
    y = None
    for l in range(anchor.n_layers + 1):
        gamma, beta = anchor.gamma[l], anchor.beta[l]
        if mods is not None:
            gamma = ad.add(gamma, mods.dgamma[l])
            beta = ad.add(beta, mods.dbeta[l])
        h = ad.affine(h_in, anchor.weights[l], anchor.biases[l][:, None, :])
        z = ad.normalize(h, anchor.mu[l][:, None, :], anchor.sigma[l][:, None, :],
                         ad.reshape(gamma, (anchor.n_tasks, 1, -1)),
                         ad.reshape(beta, (anchor.n_tasks, 1, -1)))
        y = ad.relu(z)
        if l < anchor.n_layers:
            h_in = ad.convex_combination(nu[l], y)
    return ad.affine(y, anchor.head_w, anchor.head_b[:, None, :])


def forward_hard(anchor: AnchorNet, tree: TreeArchitecture, x,
                 mods: NormDeltas | None = None, trace: dict | None = None) -> np.ndarray:
    """Evaluate only the active nodes of ``tree``; returns (N, batch, out).

    ``trace``, if given, receives every evaluated node's output keyed by (layer, stream).
    """
    x = _check_input(anchor, x).data
    if tree.parent.shape != (anchor.n_layers, anchor.n_tasks):
        raise ShapeError(f"tree shape {tree.parent.shape} does not fit the anchor")
    mods = mods.numpy() if mods is not None else None
    active = tree.active
    outputs: dict[tuple[int, int], np.ndarray] = {}
    for l in range(anchor.n_layers + 1):
        for j in np.flatnonzero(active[l]):
            src = x if l == 0 else outputs[(l - 1, int(tree.parent[l - 1, j]))]
            gamma, beta = anchor.gamma[l][j], anchor.beta[l][j]
            if mods is not None:
                gamma = gamma + mods.dgamma[l][j]
                beta = beta + mods.dbeta[l][j]
            h = np.matmul(src, anchor.weights[l][j]) + anchor.biases[l][j]
            z = (h - anchor.mu[l][j]) / anchor.sigma[l][j] * gamma + beta
            outputs[(l, int(j))] = np.where(z > 0, z, 0.0)
            if trace is not None:
                trace[(l, int(j))] = outputs[(l, int(j))]
    top = anchor.n_layers
    return np.stack([np.matmul(outputs[(top, j)], anchor.head_w[j]) + anchor.head_b[j]
                     for j in range(anchor.n_tasks)])


def decode_architecture(alpha) -> TreeArchitecture:
    """Most likely tree: each child takes its highest-scoring parent (lowest index on ties)."""
    alpha = ad.as_tensor(alpha).data
    if not np.all(np.isfinite(alpha)):
        raise ValueError("branching logits must be finite")
    return TreeArchitecture(np.argmax(alpha, axis=-1))


# ---------------------------------------------------------------- node usage

@lru_cache(maxsize=None)
def _usage_tables(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constants for the exact usage DP over subsets of used nodes.

    Returns the gather index (N^N, N) into a flattened (child, parent) row table,
    the transition incidence (2^N * 2^N, N^N) and the membership matrix (2^N, N).
    """
    assigns = np.array(list(itertools.product(range(n), repeat=n)), dtype=np.int64)
    gather = np.arange(n)[None, :] * n + assigns
    n_sub = 1 << n
    incidence = np.zeros((n_sub, n_sub, len(assigns)))
    bits = 1 << assigns
    for used in range(n_sub):
        children = [k for k in range(n) if used >> k & 1]
        image = np.zeros(len(assigns), dtype=np.int64)
        for k in children:
            image |= bits[:, k]
        incidence[used, image, np.arange(len(assigns))] = 1.0
    member = np.array([[(s >> i) & 1 for i in range(n)] for s in range(n_sub)], dtype=np.float64)
    return gather, incidence.reshape(n_sub * n_sub, len(assigns)), member


EXACT_P_USE_MAX_TASKS = 5


def compute_p_use(nu, exact: bool | None = None):
    """Probability that each node (l, i) appears in a tree sampled from ``nu``.

    Returns an (L+1, N) matrix with the top row equal to 1. The exact method
    propagates the distribution of the *set* of used nodes layer by layer, which
    accounts for siblings sharing parents; ``exact=False`` uses the per-node
    product recurrence, which treats sibling usage as independent and so is
    exact only for a single branching block. The default is exact for N <= 5.

    Accepts a Tensor (result is differentiable) or an array (returns an array).
    """
    is_tensor = isinstance(nu, Tensor)
    nu_t = ad.as_tensor(nu)
    if nu_t.ndim != 3 or nu_t.shape[1] != nu_t.shape[2]:
        raise ShapeError(f"nu must be (L, N, N), got {nu_t.shape}")
    n = nu_t.shape[1]
    if exact is None:
        exact = n <= EXACT_P_USE_MAX_TASKS
    out = _p_use_exact(nu_t) if exact else _p_use_recurrence(nu_t)
    return out if is_tensor else out.data


def _p_use_exact(nu: Tensor) -> Tensor:
    L, n, _ = nu.shape
    if n > EXACT_P_USE_MAX_TASKS:
        raise ValueError(f"exact usage DP supports N <= {EXACT_P_USE_MAX_TASKS}, got {n}")
    gather, incidence, member = _usage_tables(n)
    n_sub = 1 << n
    dist = np.zeros((1, n_sub))
    dist[0, n_sub - 1] = 1.0
    dist = ad.as_tensor(dist)
    rows = [ad.as_tensor(np.ones((1, n)))]
    for b in range(L - 1, -1, -1):
        picked = ad.getitem(ad.reshape(nu[b], (n * n,)), gather)  # (N^N, N)
        weight = picked[:, 0]
        for k in range(1, n):
            weight = ad.mul(weight, picked[:, k])
        trans = ad.reshape(ad.matmul(incidence, ad.reshape(weight, (-1, 1))), (n_sub, n_sub))
        dist = ad.matmul(dist, trans)
        rows.append(ad.matmul(dist, member))
    rows.reverse()
    return ad.reshape(ad.concatenate(rows, axis=0), (L + 1, n))


def _p_use_recurrence(nu: Tensor) -> Tensor:
    L, n, _ = nu.shape
    prev = ad.as_tensor(np.ones(n))
    rows = [prev]
    for b in range(L - 1, -1, -1):
        # miss[k, i]: child k is not a used child picking parent i
        miss = ad.sub(1.0, ad.mul(ad.reshape(prev, (n, 1)), nu[b]))
        keep = miss[0]
        for k in range(1, n):
            keep = ad.mul(keep, miss[k])
        prev = ad.sub(1.0, keep)
        rows.append(prev)
    rows.reverse()
    return ad.stack(rows, axis=0)


# ---------------------------------------------------------------- resources

def node_cost(in_dim: int, width: int) -> tuple[int, int]:
    """(parameters, FLOPs per sample) of one affine + normalisation + ReLU node."""
    params = in_dim * width + width + 2 * width
    flops = 2 * in_dim * width + 3 * width
    return params, flops


def head_cost(width: int, out_dim: int) -> tuple[int, int]:
    return width * out_dim + out_dim, 2 * width * out_dim


def _cost(anchor: AnchorNet, active: np.ndarray) -> tuple[int, int]:
    params = flops = 0
    for l, w in enumerate(anchor.weights):
        p, f = node_cost(w.shape[1], w.shape[2])
        count = int(active[l].sum())
        params += count * p
        flops += count * f
    p, f = head_cost(anchor.widths[-1], anchor.out_dim)
    return params + anchor.n_tasks * p, flops + anchor.n_tasks * f


def resource_usage(anchor: AnchorNet, tree: TreeArchitecture) -> ResourceReport:
    if tree.parent.shape != (anchor.n_layers, anchor.n_tasks):
        raise ShapeError(f"tree shape {tree.parent.shape} does not fit the anchor")
    params, flops = _cost(anchor, tree.active)
    full_params, _ = _cost(anchor, np.ones((anchor.n_layers + 1, anchor.n_tasks), dtype=bool))
    return ResourceReport(params, flops, params / full_params)
