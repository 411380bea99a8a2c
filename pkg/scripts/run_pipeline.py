"""Train the default pipeline and write every evaluation artefact into one directory.

    python3 scripts/run_pipeline.py --config configs/default.json --out runs/default
"""
import argparse
import csv
import json
import logging
from pathlib import Path

from dynmtl.cli import cmd_eval_hv, cmd_sweep, cmd_train, load_bundle, load_config
from dynmtl.metricsoracle import CONTROL_LEVELS, task_control_curve


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path("configs/default.json"))
    ap.add_argument("--out", type=Path, default=Path("runs/default"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--grid", type=int, default=25)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = load_config(args.config, args.seed)
    cmd_train(cfg, args.out)
    bundle = load_bundle(cfg, args.out)
    summary = cmd_sweep(cfg, bundle, args.out, args.grid).summary
    hv = cmd_eval_hv(cfg, bundle)
    (args.out / "eval_hv.json").write_text(json.dumps(hv, indent=2, sort_keys=True) + "\n")

    with open(args.out / "task_control.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "r_task", "mean_loss"])
        for task in range(bundle.anchor.n_tasks):
            for level, loss in zip(CONTROL_LEVELS, task_control_curve(bundle, task)):
                writer.writerow([task, level, repr(float(loss))])

    print(json.dumps({"sweep": summary, "eval_hv": hv["by_c"]}, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
