import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from stpconv.errors import ConfigError, ShapeError
from stpconv.maskgen import GapConfig, apply_gaps, make_gap_mask, simulate_field
from stpconv.tensor import MaskedBlock


def lag1_autocorr(f):
    f = f - f.mean()
    return float((f[1:] * f[:-1]).sum() / (f * f).sum())


def test_small_correlation_length_is_white_noise():
    f = simulate_field(128, 128, GapConfig(correlation_length=1e-3, seed=1))
    assert abs(lag1_autocorr(f)) < 0.1
    assert abs(lag1_autocorr(f.T)) < 0.1


def test_long_correlation_length_is_smooth():
    f = simulate_field(128, 128, GapConfig(correlation_length=10, seed=1))
    assert lag1_autocorr(f) > 0.8
    assert abs(f.mean()) < 1e-9 and f.std() == pytest.approx(1.0)


def test_field_determinism():
    cfg = GapConfig(seed=5)
    assert np.array_equal(simulate_field(32, 16, cfg), simulate_field(32, 16, cfg))


def test_exact_masked_fraction():
    m = make_gap_mask((128, 128, 3, 1), GapConfig(correlation_length=10, mask_fraction=0.3, seed=2))
    assert [(m[:, :, t, 0] == 0).sum() for t in range(3)] == [4915] * 3


def test_gaps_are_blobs():
    m = make_gap_mask((128, 128, 4, 1), GapConfig(correlation_length=10, mask_fraction=0.3, seed=3))
    sizes = []
    for t in range(4):
        labels, n = ndimage.label(m[:, :, t, 0] == 0)
        sizes.extend(np.bincount(labels.ravel())[1:])
    assert np.mean(sizes) > 20


def test_slices_are_independent_and_reproducible():
    cfg = GapConfig(seed=4)
    m = make_gap_mask((32, 32, 2, 2), cfg, block_id=7)
    assert not np.array_equal(m[:, :, 0], m[:, :, 1])
    assert np.array_equal(m[..., 0], m[..., 1])
    assert np.array_equal(m, make_gap_mask((32, 32, 2, 2), cfg, block_id=7))
    assert not np.array_equal(m, make_gap_mask((32, 32, 2, 2), cfg, block_id=8))
    assert not np.array_equal(m, make_gap_mask((32, 32, 2, 2), cfg, block_id=7, epoch=1))


@pytest.mark.parametrize("kw", [{"correlation_length": 0}, {"mask_fraction": 0}, {"mask_fraction": 1.0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        GapConfig(**kw)


def test_apply_gaps_examples():
    ones = np.ones((4, 4, 2, 1), np.float32)
    block = MaskedBlock(np.arange(32, dtype=np.float32).reshape(4, 4, 2, 1) + 1, ones)
    gap = ones.copy()
    gap[0, 0, 0] = gap[1, 2, 1] = 0
    x, targets = apply_gaps(block, gap)
    assert targets.sum() == 2
    assert x.data[0, 0, 0, 0] == 0 and x.mask[0, 0, 0, 0] == 0

    x, targets = apply_gaps(block, ones)
    assert np.array_equal(x.data, block.data) and not targets.any()

    holey = block.copy()
    holey.mask[0, 0, 0] = 0
    holey.data[0, 0, 0] = 0
    _, targets = apply_gaps(holey, gap)
    assert targets.sum() == 1 and not targets[0, 0, 0, 0]

    with pytest.raises(ShapeError):
        apply_gaps(block, np.ones((4, 4, 1, 1)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), frac=st.floats(0.05, 0.95), p=st.floats(0, 1))
def test_apply_gaps_properties(seed, frac, p):
    rng = np.random.default_rng(seed)
    mask = (rng.random((16, 12, 3, 1)) < p).astype(np.float32)
    block = MaskedBlock(rng.random(mask.shape).astype(np.float32) * mask, mask)
    gap = make_gap_mask(block.shape, GapConfig(correlation_length=2, mask_fraction=frac, seed=seed))
    x, targets = apply_gaps(block, gap)
    assert np.all(x.mask <= block.mask)
    assert not (targets & x.valid).any()
    assert x.is_canonical()
    assert np.array_equal(targets | x.valid, block.valid)
