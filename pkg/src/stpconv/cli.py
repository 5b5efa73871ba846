"""Command-line entry point.

Every subcommand takes ``-c run.ini`` plus any number of ``--set section.key=value``
overrides, and archives the resolved configuration next to its outputs.
Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines
from .blocks import (
    BlockGrid,
    generate_synthetic,
    load_block,
    load_dataset,
    merge_with_observations,
    predict_raster,
    render_pgm,
    save_block,
    save_dataset,
)
from .config import RunConfig
from .errors import ConfigError, StpconvError
from .evaluation import validate_gapfilling, validate_one_step_ahead
from .maskgen import apply_gaps, make_gap_mask
from .model import build, load_model, predict, save_model
from .tensor import MaskedBlock
from .train import fit, write_loss_log

log = logging.getLogger("stpconv")

METHODS = ("stpconv", "mean", "interp")


def _threads(cfg: RunConfig) -> int:
    return cfg.run.threads or os.cpu_count() or 1


def _predictor(cfg: RunConfig, method: str):
    if method == "mean":
        return baselines.predict_block_mean
    if method == "interp":
        return baselines.predict_time_interp
    spec, state = load_model(cfg.run.model_dir)
    return lambda block: predict(state, spec, block)


def _as_saved(pred: MaskedBlock, original: MaskedBlock, merge: bool) -> MaskedBlock:
    """Unpredicted voxels become missing; ``merge`` puts observations back."""
    if merge:
        data = merge_with_observations(pred, original)
        mask = np.maximum(pred.mask, original.mask)
    else:
        data, mask = pred.data, pred.mask
    return MaskedBlock(np.where(mask > 0, data, 0).astype(np.float32), mask.astype(np.float32))


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def cmd_generate(cfg: RunConfig, args) -> int:
    blocks = generate_synthetic(cfg.run.n_blocks, cfg.run.block_shape, cfg.synthetic, seed=cfg.run.data_seed)
    paths = save_dataset(cfg.run.data_dir, blocks)
    cfg.write(Path(cfg.run.data_dir) / "run.ini")
    print(f"wrote {len(paths)} blocks to {cfg.run.data_dir}")
    return 0


def cmd_simulate_gaps(cfg: RunConfig, args) -> int:
    paths, blocks = load_dataset(cfg.run.data_dir)
    out = Path(cfg.run.output_dir) / "gapped"
    out.mkdir(parents=True, exist_ok=True)
    removed = 0
    for i, (path, block) in enumerate(zip(paths, blocks)):
        gapped, targets = apply_gaps(block, make_gap_mask(block.shape, cfg.gaps, block_id=i))
        save_block(out / path.name, gapped)
        removed += int(targets.sum())
    cfg.write(Path(cfg.run.output_dir) / "run.ini")
    print(f"wrote {len(paths)} gapped blocks to {out} ({removed} voxels withheld)")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    _, blocks = load_dataset(cfg.run.data_dir)
    train_cfg = cfg.train
    if cfg.run.threads is not None and cfg.run.threads != train_cfg.workers:
        train_cfg = dataclasses.replace(train_cfg, workers=cfg.run.threads)
    state = build(cfg.model, seed=cfg.run.model_seed)
    t0 = time.perf_counter()
    result = fit(
        blocks,
        cfg.model,
        state,
        cfg.gaps,
        train_cfg,
        on_epoch=lambda row, _state: print(f"epoch {row.epoch:3d}  lr {row.lr:.2e}  train MAE {row.train_mae:.6g}"),
    )
    elapsed = time.perf_counter() - t0
    model_dir = save_model(cfg.run.model_dir, cfg.model, result.state)
    write_loss_log(result.log, model_dir / "loss.csv")
    cfg.write(model_dir / "run.ini")
    print(f"trained {result.steps} steps in {elapsed:.1f}s; model saved to {model_dir}")
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    predictor = _predictor(cfg, args.method)
    t_io = time.perf_counter()
    paths, blocks = load_dataset(cfg.run.data_dir)
    io_seconds = time.perf_counter() - t_io

    t0 = time.perf_counter()
    preds = [predictor(b) for b in blocks]
    predict_seconds = time.perf_counter() - t0

    out = Path(cfg.run.output_dir) / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    t_io = time.perf_counter()
    for path, block, pred in zip(paths, blocks, preds):
        save_block(out / path.name, _as_saved(pred, block, args.merge))
    io_seconds += time.perf_counter() - t_io

    timing = {"method": args.method, "n_blocks": len(blocks), "predict_seconds": predict_seconds, "io_seconds": io_seconds}
    _write_json(Path(cfg.run.output_dir) / "timing.json", timing)
    cfg.write(Path(cfg.run.output_dir) / "run.ini")
    print(f"predicted {len(blocks)} blocks with {args.method}: prediction {predict_seconds:.3f}s, I/O {io_seconds:.3f}s")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    predictor = _predictor(cfg, args.method)
    _, blocks = load_dataset(cfg.run.data_dir)
    workers = _threads(cfg)
    if args.strategy == "gaps":
        report = validate_gapfilling(blocks, predictor, cfg.gaps, workers=workers)
    else:
        report = validate_one_step_ahead(blocks, predictor, workers=workers)
    report.method = args.method
    out = Path(cfg.run.output_dir)
    stem = f"{args.method}_{args.strategy}"
    report.write(out / f"{stem}.csv", out / f"{stem}.json")
    cfg.write(out / "run.ini")
    if not report.applicable:
        print(f"{args.method} is not applicable to strategy {args.strategy}")
    else:
        print(
            f"{args.method} {args.strategy}: MAE {report.mae:.6g}  RMSE {report.rmse:.6g}  "
            f"scored {report.n_scored}  unfilled {report.n_excluded}  prediction {report.prediction_seconds:.3f}s"
        )
    return 0


def cmd_stitch(cfg: RunConfig, args) -> int:
    if not cfg.run.raster:
        raise ConfigError("stitch needs run.raster (a BlockFile holding the full raster)")
    raster = load_block(cfg.run.raster)
    block = tuple(cfg.run.block_shape[:3])
    grid = BlockGrid(raster.shape[:3], block, tuple(cfg.run.margin))
    predictor = _predictor(cfg, args.method)
    t0 = time.perf_counter()
    pred = predict_raster(raster, grid, predictor, workers=_threads(cfg))
    predict_seconds = time.perf_counter() - t0
    out = Path(cfg.run.output_dir)
    result = _as_saved(pred, raster, args.merge)
    out.mkdir(parents=True, exist_ok=True)
    save_block(out / "stitched.stpb", result)
    images = render_pgm(result, out / "slices", vmin=cfg.run.render_vmin, vmax=cfg.run.render_vmax)
    _write_json(out / "timing.json", {"method": args.method, "blocks": len(grid.placements()), "predict_seconds": predict_seconds})
    cfg.write(out / "run.ini")
    print(f"stitched {len(grid.placements())} blocks into {out / 'stitched.stpb'}; {len(images)} slices rendered")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "simulate-gaps": cmd_simulate_gaps,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "stitch": cmd_stitch,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stpconv", description="Spatiotemporal partial-convolution gap filling.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="run configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
        if name in ("predict", "evaluate", "stitch"):
            p.add_argument("--method", choices=METHODS, default="stpconv")
        if name in ("predict", "stitch"):
            p.add_argument("--merge", action="store_true", help="keep observed voxels in the output")
        if name == "evaluate":
            p.add_argument("--strategy", choices=("gaps", "onestep"), default="gaps")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except StpconvError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
