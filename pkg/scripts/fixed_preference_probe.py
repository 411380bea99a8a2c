"""Train the edge hypernet on one fixed task preference at two cost levels.

Shows whether the stage-1 objective alone separates trees by c, independently of
how well the amortised hypernet generalises across preferences.

    python3 scripts/fixed_preference_probe.py --r 0.5,0.5,0 --steps 1500
"""
import argparse
import json
from pathlib import Path

import numpy as np

from dynmtl.benchsynth import generate
from dynmtl.cli import load_config
from dynmtl.controller import Preference, predict
from dynmtl.numkernel import Rng
from dynmtl.objectives import rsa_affinity
from dynmtl.searchspace import resource_usage
from dynmtl.trainer import TrainConfig, train_anchor, train_edge


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path("configs/default.json"))
    ap.add_argument("--r", default="0.5,0.5,0")
    ap.add_argument("--c", type=float, nargs="+", default=[0.0, 1.0])
    ap.add_argument("--steps", type=int, default=1500)
    args = ap.parse_args()

    cfg = load_config(args.config)
    data = generate(cfg.suite)
    root = Rng(cfg.seed)
    anchor = train_anchor(cfg.anchor, data, root.child("anchor"))
    x = data.split("train")[0]
    affinity = rsa_affinity(anchor, x[root.child("affinity").permutation(len(x))[:cfg.eval.probes]])
    r = np.array([float(v) for v in args.r.split(",")])
    x_test, y_test = data.split("test")
    rows = []
    for c in args.c:
        pref = Preference(tuple(r / r.sum()), c)
        tcfg = TrainConfig(edge_steps=args.steps)
        h, _ = train_edge(tcfg, anchor, affinity, data, root.child("edge"),
                          sampler=lambda _rng, pref=pref: pref)
        tree, model = predict(h, None, anchor, pref)
        losses = np.mean((model(x_test) - y_test) ** 2, axis=(1, 2))
        rows.append({"c": c, "signature": tree.signature(),
                     "ratio": resource_usage(anchor, tree).ratio_to_anchor,
                     "losses": np.round(losses, 4).tolist()})
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
