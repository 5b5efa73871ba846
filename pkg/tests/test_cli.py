import csv
import json

import numpy as np
import pytest

from stpconv.baselines import predict_block_mean
from stpconv.blocks import BlockGrid, generate_synthetic, load_block, load_dataset, save_block
from stpconv.cli import main
from stpconv.config import RunConfig
from stpconv.errors import ConfigError
from stpconv.evaluation import validate_gapfilling
from stpconv.maskgen import GapConfig
from stpconv.model import load_model


@pytest.fixture
def run_ini(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        f"""
[run]
data_dir = '{tmp_path / "data"}'
output_dir = '{tmp_path / "out"}'
model_dir = '{tmp_path / "model"}'
n_blocks = 3
block_shape = (16, 16, 8, 1)
threads = 1

[model]
filters = [2, 2]

[train]
min_epochs = 1
batch_size = 2

[gaps]
seed = 4
"""
    )
    assert main(["generate", "-c", str(path)]) == 0
    return path


def test_config_round_trip(tmp_path):
    cfg = RunConfig.load(overrides=["model.filters=[4, 4]", "train.batch_size=3", "run.margin=(2, 2, 0)"])
    cfg.write(tmp_path / "a.ini")
    again = RunConfig.load(tmp_path / "a.ini")
    assert again == cfg
    assert again.model.filters == [4, 4] and again.run.margin == (2, 2, 0)


def test_unknown_key_is_named(tmp_path):
    (tmp_path / "bad.ini").write_text("[train]\nlearning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        RunConfig.load(tmp_path / "bad.ini")
    assert main(["train", "-c", str(tmp_path / "bad.ini")]) == 1


def test_usage_error_exit_code():
    assert main(["predict", "--method", "kriging"]) == 1


def test_generate_is_deterministic(run_ini, tmp_path):
    first = [p.read_bytes() for p in sorted((tmp_path / "data").glob("*.stpb"))]
    assert len(first) == 3
    assert main(["generate", "-c", str(run_ini)]) == 0
    assert first == [p.read_bytes() for p in sorted((tmp_path / "data").glob("*.stpb"))]
    assert (tmp_path / "data" / "run.ini").exists()


def test_evaluate_baseline_reports(run_ini, tmp_path):
    assert main(["evaluate", "-c", str(run_ini), "--method", "mean", "--strategy", "gaps"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "mean_gaps.csv")))
    assert len(rows) == 3
    summary = json.loads((tmp_path / "out" / "mean_gaps.json").read_text())
    _, blocks = load_dataset(tmp_path / "data")
    ref = validate_gapfilling(blocks, predict_block_mean, GapConfig(seed=4))
    assert summary["mae"] == pytest.approx(ref.mae, rel=1e-12)
    assert (tmp_path / "out" / "run.ini").exists()


def test_predict_mean_matches_library(run_ini, tmp_path):
    assert main(["predict", "-c", str(run_ini), "--method", "mean"]) == 0
    paths, blocks = load_dataset(tmp_path / "data")
    for path, block in zip(paths, blocks):
        saved = load_block(tmp_path / "out" / "predictions" / path.name)
        np.testing.assert_array_equal(saved.data, predict_block_mean(block).data)
    timing = json.loads((tmp_path / "out" / "timing.json").read_text())
    assert timing["predict_seconds"] >= 0 and timing["io_seconds"] >= 0


def test_predict_merge_keeps_observations(run_ini, tmp_path):
    assert main(["predict", "-c", str(run_ini), "--method", "interp", "--merge"]) == 0
    paths, blocks = load_dataset(tmp_path / "data")
    saved = load_block(tmp_path / "out" / "predictions" / paths[0].name)
    v = blocks[0].valid
    assert saved.data[v].tobytes() == blocks[0].data[v].tobytes()


def test_train_smoke_then_predict(run_ini, tmp_path):
    assert main(["train", "-c", str(run_ini), "--set", "run.n_blocks=1"]) == 0
    spec, state = load_model(tmp_path / "model")
    assert spec.filters == [2, 2]
    rows = list(csv.DictReader(open(tmp_path / "model" / "loss.csv")))
    assert len(rows) == 1
    assert main(["evaluate", "-c", str(run_ini), "--strategy", "onestep"]) == 0
    assert (tmp_path / "out" / "stpconv_onestep.csv").exists()


def test_missing_model_is_data_error(run_ini, tmp_path):
    assert main(["predict", "-c", str(run_ini), "--set", f"run.model_dir='{tmp_path / 'none'}'"]) == 2


def test_simulate_gaps(run_ini, tmp_path):
    assert main(["simulate-gaps", "-c", str(run_ini)]) == 0
    paths, blocks = load_dataset(tmp_path / "data")
    gapped = load_block(tmp_path / "out" / "gapped" / paths[0].name)
    assert np.all(gapped.mask <= blocks[0].mask) and gapped.mask.sum() < blocks[0].mask.sum()


def test_stitch_renders_slices(tmp_path):
    (raster,) = generate_synthetic(1, (40, 36, 4, 1), seed=8)
    save_block(tmp_path / "raster.stpb", raster)
    args = [
        "stitch",
        "--method",
        "interp",
        "--merge",
        "--set",
        f"run.raster='{tmp_path / 'raster.stpb'}'",
        "--set",
        f"run.output_dir='{tmp_path / 'out'}'",
        "--set",
        "run.block_shape=(16, 16, 4, 1)",
        "--set",
        "run.margin=(2, 2, 0)",
    ]
    assert main(args) == 0
    out = load_block(tmp_path / "out" / "stitched.stpb")
    assert out.shape == raster.shape
    assert out.data[raster.valid].tobytes() == raster.data[raster.valid].tobytes()
    assert len(list((tmp_path / "out" / "slices").glob("*.pgm"))) == 4
    assert BlockGrid((40, 36, 4), (16, 16, 4), (2, 2, 0)).counts == (4, 3, 1)
