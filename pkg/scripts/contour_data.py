"""Resource ratio over a regular simplex lattice for several cost levels (contour-plot data).

    python3 scripts/contour_data.py --out runs/default --step 0.05 --c 0 0.5 1
"""
import argparse
import csv
import itertools
from pathlib import Path

import numpy as np

from dynmtl.cli import load_bundle, load_config
from dynmtl.controller import Preference, predict
from dynmtl.searchspace import resource_usage


def lattice(n_tasks: int, step: float) -> list[np.ndarray]:
    k = int(round(1.0 / step))
    return [np.array(c + (k - sum(c),)) / k
            for c in itertools.product(range(k + 1), repeat=n_tasks - 1) if sum(c) <= k]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True, help="trained run directory")
    ap.add_argument("--step", type=float, default=0.05)
    ap.add_argument("--c", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    args = ap.parse_args()

    cfg = load_config(args.out / "config.json")
    bundle = load_bundle(cfg, args.out)
    n = bundle.anchor.n_tasks
    path = args.out / "contour.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"pref_{i + 1}" for i in range(n)] + ["c", "resource_ratio",
                                                               "tree_signature"])
        for c in args.c:
            for r in lattice(n, args.step):
                tree, _ = predict(bundle.edge, None, bundle.anchor, Preference(tuple(r), c))
                ratio = resource_usage(bundle.anchor, tree).ratio_to_anchor
                writer.writerow([repr(float(v)) for v in r] + [repr(c), repr(ratio),
                                                               tree.signature()])
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
