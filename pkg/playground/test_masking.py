import math

import numpy as np
import pytest

from MaskUtil import MaskError, MaskSpec, coverage_union, get_mask, write_mask_pgm
from masking.abc_mask import band_index


def test_alternating_checkerboard_first_attempt():
    mask = get_mask(MaskSpec('alternating_checkerboard', 2), 0, 4, 4)
    expected = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]])
    np.testing.assert_array_equal(mask, expected)


@pytest.mark.parametrize('grid, height, width', [(2, 4, 4), (8, 16, 16), (8, 28, 28), (3, 10, 7), (16, 16, 16)])
def test_alternating_attempts_are_complements(grid, height, width):
    spec = MaskSpec('alternating_checkerboard', grid)
    for a in range(4):
        np.testing.assert_array_equal(get_mask(spec, a, height, width) + get_mask(spec, a + 1, height, width),
                                      np.ones((height, width)))


def test_fixed_checkerboard_repeats():
    spec = MaskSpec('fixed_checkerboard', 8)
    first = get_mask(spec, 0, 16, 16)
    for a in range(1, 5):
        np.testing.assert_array_equal(get_mask(spec, a, 16, 16), first)
    assert first.mean() == 0.5


def test_center_mask_on_16():
    mask = get_mask(MaskSpec('center'), 0, 16, 16)
    assert (mask == 0).sum() == 64
    np.testing.assert_array_equal(mask[4:12, 4:12], 0)
    assert mask.sum() == 256 - 64


def test_center_mask_odd_dims_round_offsets_down():
    mask = get_mask(MaskSpec('center'), 0, 9, 9)
    # side = floor(sqrt(81) / 2) = 4, offset floor(5 / 2) = 2
    zeros = np.argwhere(mask == 0)
    assert len(zeros) == 16
    assert zeros.min(axis=0).tolist() == [2, 2]


def test_random_patch_counts_and_redraws():
    spec = MaskSpec('random_patch', 8)
    rng = np.random.default_rng(0)
    first, second = get_mask(spec, 0, 16, 16, rng), get_mask(spec, 1, 16, 16, rng)
    for mask in (first, second):
        assert (mask == 0).mean() == pytest.approx(math.ceil(64 / 2) / 64)
    assert not np.array_equal(first, second)


def test_random_patch_deterministic_per_seed():
    spec = MaskSpec('random_patch', 4)
    a = get_mask(spec, 0, 16, 16, np.random.default_rng(5))
    b = get_mask(spec, 0, 16, 16, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize('length, grid', [(16, 8), (28, 8), (10, 3), (7, 7)])
def test_bands_differ_by_at_most_one_pixel(length, grid):
    sizes = np.bincount(band_index(length, grid), minlength=grid)
    assert sizes.sum() == length
    assert sizes.max() - sizes.min() <= 1


def test_divisible_checkerboards_zero_half():
    for variant in ('alternating_checkerboard', 'fixed_checkerboard'):
        for grid in (2, 4, 8, 16):
            assert (get_mask(MaskSpec(variant, grid), 3, 16, 16) == 0).mean() == 0.5


def test_grid_larger_than_image_rejected():
    with pytest.raises(MaskError):
        get_mask(MaskSpec('alternating_checkerboard', 16), 0, 8, 8)


def test_negative_attempt_rejected():
    with pytest.raises(MaskError):
        get_mask(MaskSpec(), -1, 16, 16)


def test_degenerate_mask_rejected():
    with pytest.raises(MaskError):
        get_mask(MaskSpec('alternating_checkerboard', 1), 0, 8, 8)


def test_mask_spec_validation():
    with pytest.raises(NotImplementedError):
        MaskSpec('stripes')
    with pytest.raises(MaskError):
        MaskSpec('center', cover_fraction=1.0)
    with pytest.raises(MaskError):
        MaskSpec('alternating_checkerboard', 0)
    assert MaskSpec().label == 'alternating_checkerboard_8x8'
    assert MaskSpec('center').label == 'center'


def test_coverage_union():
    assert coverage_union(MaskSpec('alternating_checkerboard', 8), 2, 16, 16) == 1.0
    assert coverage_union(MaskSpec('alternating_checkerboard', 8), 1, 16, 16) == 0.5
    assert coverage_union(MaskSpec('fixed_checkerboard', 8), 7, 16, 16) == 0.5
    assert coverage_union(MaskSpec('center'), 5, 16, 16) == 0.25
    assert 0.5 <= coverage_union(MaskSpec('random_patch', 8), 3, 16, 16, np.random.default_rng(0)) <= 1.0
    with pytest.raises(MaskError):
        coverage_union(MaskSpec(), 0, 16, 16)


def test_write_mask_pgm(tmp_path):
    mask = get_mask(MaskSpec('alternating_checkerboard', 2), 0, 4, 6)
    path = tmp_path / 'mask.pgm'
    write_mask_pgm(mask, path)
    raw = path.read_bytes()
    header = b'P5\n6 4\n255\n'
    assert raw.startswith(header)
    pixels = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(4, 6)
    np.testing.assert_array_equal(pixels, mask * 255)
