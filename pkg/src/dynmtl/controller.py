"""Preference-conditioned hypernetworks: the edge net predicts branching logits,
the weight net predicts normalisation deltas for the anchor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkernel import autodiff as ad
from .numkernel.autodiff import Tensor
from .numkernel.sampling import Rng
from .searchspace import AnchorNet, NormDeltas, TreeArchitecture, decode_architecture, forward_hard

EMBED_DIM = 32
HIDDEN = 100


@dataclass(frozen=True)
class Preference:
    r: tuple
    c: float

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        if r.ndim != 1 or r.size == 0 or np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError(f"task preference must be a nonnegative vector, got {self.r}")
        if abs(r.sum() - 1.0) > 1e-9:
            raise ValueError(f"task preference must sum to 1, got sum {r.sum()!r}")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"cost preference must lie in [0, 1], got {self.c}")
        object.__setattr__(self, "r", tuple(float(v) for v in r))
        object.__setattr__(self, "c", float(self.c))

    @property
    def n_tasks(self) -> int:
        return len(self.r)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.r)


def _embedding_params(prefix: str, n_tasks: int, rng: Rng) -> dict[str, Tensor]:
    return {f"{prefix}.tasks": ad.parameter(rng.normal((n_tasks, EMBED_DIM))),
            f"{prefix}.cost": ad.parameter(rng.normal((EMBED_DIM,)))}


def embed(pref: Preference, tasks, cost) -> Tensor:
    """p = sum_i r_i e_i + c e_c, as a (1, 32) row."""
    tasks, cost = ad.as_tensor(tasks), ad.as_tensor(cost)
    if tasks.shape[0] != pref.n_tasks:
        raise ValueError(f"preference has {pref.n_tasks} tasks, embedding has {tasks.shape[0]}")
    p = ad.add(ad.matmul(pref.vector[None, :], tasks), ad.mul(pref.c, cost))
    return p


def _dense(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal((fan_in, fan_out), scale=np.sqrt(2.0 / fan_in))


def _trunk_params(n_hidden: int, rng: Rng) -> dict[str, Tensor]:
    params = {}
    fan_in = EMBED_DIM
    for k in range(n_hidden):
        params[f"fc{k}.W"] = ad.parameter(_dense(rng.child(f"fc{k}"), fan_in, HIDDEN))
        params[f"fc{k}.b"] = ad.parameter(np.zeros(HIDDEN))
        fan_in = HIDDEN
    return params


def _trunk(params: dict[str, Tensor], n_hidden: int, p: Tensor) -> Tensor:
    h = p
    for k in range(n_hidden):
        h = ad.relu(ad.affine(h, params[f"fc{k}.W"], params[f"fc{k}.b"]))
    return h


class _Hypernet:
    n_hidden: int
    params: dict[str, Tensor]

    def numpy_params(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_params(self, arrays: dict) -> None:
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"'{k}': stored shape {arrays[k].shape} != {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    def features(self, pref: Preference) -> Tensor:
        p = embed(pref, self.params["emb.tasks"], self.params["emb.cost"])
        return _trunk(self.params, self.n_hidden, p)


class EdgeHypernet(_Hypernet):
    """Preference -> (L, N, N) branching logits via a 2-hidden-layer MLP with L heads."""
    n_hidden = 2

    def __init__(self, n_tasks: int, n_layers: int, rng: Rng, diag_bias: float = 4.0,
                 head_scale: float = 0.01):
        self.n_tasks, self.n_layers = n_tasks, n_layers
        self.params = _embedding_params("emb", n_tasks, rng.child("emb"))
        self.params.update(_trunk_params(self.n_hidden, rng.child("trunk")))
        bias = diag_bias * np.eye(n_tasks).ravel()
        for l in range(n_layers):
            head = rng.child(f"head{l}").normal((HIDDEN, n_tasks * n_tasks), scale=head_scale)
            self.params[f"head{l}.W"] = ad.parameter(head)
            self.params[f"head{l}.b"] = ad.parameter(bias.copy())


class WeightHypernet(_Hypernet):
    """Preference -> (dgamma, dbeta) for every anchor node via a 3-hidden-layer MLP.

    The output head starts at zero so an untrained net leaves the anchor untouched.
    """
    n_hidden = 3

    def __init__(self, n_tasks: int, widths: list[int], rng: Rng):
        self.n_tasks, self.widths = n_tasks, list(widths)
        self.params = _embedding_params("emb", n_tasks, rng.child("emb"))
        self.params.update(_trunk_params(self.n_hidden, rng.child("trunk")))
        n_out = 2 * n_tasks * sum(self.widths)
        self.params["head.W"] = ad.parameter(np.zeros((HIDDEN, n_out)))
        self.params["head.b"] = ad.parameter(np.zeros(n_out))

    @classmethod
    def for_anchor(cls, anchor: AnchorNet, rng: Rng) -> "WeightHypernet":
        return cls(anchor.n_tasks, anchor.widths, rng)


def edge_forward(h: EdgeHypernet, pref: Preference) -> Tensor:
    feat = h.features(pref)
    n = h.n_tasks
    rows = [ad.reshape(ad.affine(feat, h.params[f"head{l}.W"], h.params[f"head{l}.b"]), (1, n, n))
            for l in range(h.n_layers)]
    return ad.concatenate(rows, axis=0)


def weight_forward(hbar: WeightHypernet, pref: Preference) -> NormDeltas:
    feat = hbar.features(pref)
    flat = ad.reshape(ad.affine(feat, hbar.params["head.W"], hbar.params["head.b"]), (-1,))
    n = hbar.n_tasks
    dgamma, dbeta = [], []
    start = 0
    for w in hbar.widths:
        size = n * w
        dgamma.append(ad.reshape(flat[start:start + size], (n, w)))
        dbeta.append(ad.reshape(flat[start + size:start + 2 * size], (n, w)))
        start += 2 * size
    return NormDeltas(dgamma, dbeta)


@dataclass
class ModulatedModel:
    anchor: AnchorNet
    tree: TreeArchitecture
    mods: NormDeltas | None

    def __call__(self, x) -> np.ndarray:
        return forward_hard(self.anchor, self.tree, x, self.mods)


def predict(h: EdgeHypernet, hbar: WeightHypernet | None, anchor: AnchorNet,
            pref: Preference) -> tuple[TreeArchitecture, ModulatedModel]:
    """Maximum-likelihood tree for ``pref`` plus the anchor modulated for it. No sampling."""
    tree = decode_architecture(edge_forward(h, pref))
    mods = weight_forward(hbar, pref).numpy() if hbar is not None else None
    return tree, ModulatedModel(anchor, tree, mods)
