"""Train the reduced network on synthetic bumps and compare it with the baselines.

    python3 scripts/desk_experiment.py --out runs/desk
"""

import argparse
import dataclasses
import json
from pathlib import Path

from stpconv import experiment
from stpconv.model import save_model
from stpconv.train import write_loss_log


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--batch-size", type=int, default=1)
    ap.add_argument("--filters", type=int, nargs="+", default=[8, 8])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    exp = experiment.DeskExperiment()
    exp.train = dataclasses.replace(exp.train, min_epochs=args.epochs, batch_size=args.batch_size, workers=args.workers)
    exp.model = dataclasses.replace(exp.model, filters=args.filters)

    def show(row, _state):
        print(f"epoch {row.epoch:3d}  lr {row.lr:.1e}  train MAE {row.train_mae:.6f}  ({row.wall_seconds:.1f}s)", flush=True)

    res = experiment.run(exp, on_epoch=show)
    out = Path(args.out)
    save_model(out / "model", exp.model, res.state)
    write_loss_log(res.fit.log, out / "loss.csv")
    summary = {}
    for (method, strategy), rep in sorted(res.reports.items()):
        rep.write(out / f"{method}_{strategy}.csv", out / f"{method}_{strategy}.json")
        summary[f"{method}/{strategy}"] = rep.summary()
        print(f"{method:8s} {strategy:8s} MAE {rep.mae:.6f}  RMSE {rep.rmse:.6f}  unfilled {rep.n_excluded}")
    (out / "summary.json").write_text(json.dumps({"train_seconds": res.train_seconds, "reports": summary}, indent=2))
    print(f"training took {res.train_seconds:.0f}s; results in {out}")


if __name__ == "__main__":
    main()
