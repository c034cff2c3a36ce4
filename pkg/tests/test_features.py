import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from pedattr import features as F


@pytest.fixture(scope="module")
def bank():
    return F.FilterBankConfig.default()


def test_default_bank_counts(bank):
    assert len(bank.gabor) == 8 and len(bank.schmid) == 13
    assert bank.n_channels == 29
    assert bank.schmid[0] == (2.0, 1.0) and bank.schmid[-1] == (10.0, 4.0)
    assert len({(g.orientation, g.wavelength) for g in bank.gabor}) == 4


def test_bank_round_trip(tmp_path, bank):
    p = tmp_path / "bank.json"
    p.write_text(json.dumps(bank.to_dict()))
    assert F.FilterBankConfig.from_json(p) == bank


def test_bank_wrong_size(bank):
    with pytest.raises(ValueError, match="8 Gabor"):
        F.FilterBankConfig(bank.gabor[:7], bank.schmid)


@pytest.mark.parametrize("kernel", [
    lambda b: F.gabor_kernel(b.gabor[3]),
    lambda b: F.schmid_kernel(6.0, 2.0),
])
def test_kernels_zero_mean_unit_l1(kernel, bank):
    k = kernel(bank)
    assert abs(k.sum()) < 1e-12
    assert np.abs(k).sum() == pytest.approx(1.0)
    assert k.shape[0] % 2 == 1


def test_pure_red_channels(bank):
    img = np.zeros((4, 4, 3), np.uint8)
    img[..., 0] = 255
    stack = F.compute_channels(img, bank)
    assert stack.shape == (29, 4, 4)
    assert np.all(stack[0] == 1.0)
    assert np.all(stack[1] == 0.0) and np.all(stack[2] == 0.0)


def test_uniform_gray_texture_constant(bank):
    stack = F.compute_channels(np.full((40, 24, 3), 128, np.uint8), bank)
    tex = stack[F.N_COLOR:]
    assert np.all(tex.max(axis=(1, 2)) == tex.min(axis=(1, 2)))


def test_checkerboard_more_texture_variance(bank):
    rows, cols = np.mgrid[0:64, 0:32]
    board = (((rows // 2) + (cols // 2)) % 2 * 255).astype(np.uint8)
    board = np.repeat(board[..., None], 3, axis=2)
    flat = np.full_like(board, 128)
    vb = F.compute_channels(board, bank)[F.N_COLOR:].var(axis=(1, 2))
    vf = F.compute_channels(flat, bank)[F.N_COLOR:].var(axis=(1, 2))
    assert np.any(vb > vf)


def test_channels_in_unit_interval(bank, rng):
    img = rng.integers(0, 256, (50, 30, 3), dtype=np.uint8)
    stack = F.compute_channels(img, bank)
    assert stack.min() >= 0.0 and stack.max() <= 1.0


def test_zero_area_rejected(bank):
    with pytest.raises(ValueError, match="zero-area"):
        F.compute_channels(np.zeros((0, 5, 3), np.uint8), bank)


def test_constant_half_single_bin():
    fv = F.strip_histograms(np.full((1, 10, 7), 0.5), None, strips=1, bins=16)
    assert np.flatnonzero(fv.values).tolist() == [8]
    assert fv.values[8] == 1.0


def test_descriptor_dimensions():
    fv = F.strip_histograms(np.zeros((29, 128, 48)), None)
    assert fv.dim == 29 * 6 * 16 == 2784


@pytest.mark.parametrize("strips, bins", [(0, 16), (6, 0)])
def test_bad_strip_bin_counts(strips, bins):
    with pytest.raises(ValueError):
        F.strip_histograms(np.zeros((2, 12, 4)), None, strips, bins)


def test_empty_region_is_zero_block():
    stack = np.full((2, 12, 4), 0.3)
    mask = np.zeros((12, 4), bool)
    mask[:2] = True  # only the first of six strips
    h = F.strip_histograms(stack, mask).values.reshape(2, 6, 16)
    assert np.all(h[:, 0].sum(axis=1) == 1.0)
    assert np.all(h[:, 1:] == 0.0)


@given(stack=hnp.arrays(np.float64, (3, 12, 5), elements=st.floats(0, 1)),
       seed=st.integers(0, 2 ** 32 - 1))
def test_within_strip_permutation_invariant(stack, seed):
    strip = F.strip_bounds(12, 6)
    r0, r1 = strip[2], strip[3]
    perm = np.random.default_rng(seed).permutation((r1 - r0) * 5)
    shuffled = stack.copy()
    block = shuffled[:, r0:r1].reshape(3, -1)[:, perm]
    shuffled[:, r0:r1] = block.reshape(3, r1 - r0, 5)
    np.testing.assert_array_equal(F.strip_histograms(stack).values,
                                  F.strip_histograms(shuffled).values)


@given(stack=hnp.arrays(np.float64, (2, 12, 6), elements=st.floats(0, 1)),
       mask=hnp.arrays(bool, (12, 6)))
def test_fore_back_partition_counts(stack, mask):
    whole = F.region_counts(stack, None, 6, 16)
    fore = F.region_counts(stack, mask, 6, 16)
    back = F.region_counts(stack, ~mask, 6, 16)
    np.testing.assert_array_equal(fore + back, whole)


@given(stack=hnp.arrays(np.float64, (2, 12, 6), elements=st.floats(0, 1)))
def test_blocks_are_normalised(stack):
    h = F.strip_histograms(stack).values.reshape(2, 6, 16)
    np.testing.assert_allclose(h.sum(axis=2), 1.0)


def _vec(values, layout=(1, 1, 4)):
    return F.FeatureVector(np.asarray(values, float), "x", *layout)


def test_compose_identity_and_concat():
    fore, back, whole = _vec([1, 0, 0, 0]), _vec([0, 1, 0, 0]), _vec([0, 0, 1, 0])
    np.testing.assert_array_equal(F.compose_scheme(fore, back, whole, "whole").values, whole.values)
    fw = F.compose_scheme(fore, back, whole, "fore-whole")
    assert fw.scheme == "fore+whole" and fw.dim == 8
    np.testing.assert_array_equal(fw.values[:4], fore.values)
    np.testing.assert_array_equal(F.compose_scheme(fore, back, whole, "fore+back").values[4:],
                                  back.values)


def test_compose_layout_mismatch():
    with pytest.raises(ValueError, match="layout"):
        F.compose_scheme(_vec([1, 0, 0, 0]), None, _vec([1, 0, 0, 0], (2, 1, 2)), "fore+whole")


def test_unknown_scheme():
    with pytest.raises(ValueError):
        F.canonical_scheme("back")


def test_extract_dims_and_determinism(bank, small_synth):
    s = small_synth[1][0]
    for scheme, dim in [("whole", 2784), ("fore", 2784), ("fore+back", 5568), ("fore+whole", 5568)]:
        a = F.extract(s.image, s.mask, scheme, bank)
        b = F.extract(s.image, s.mask, scheme, bank)
        assert a.dim == dim
        np.testing.assert_array_equal(a.values, b.values)


def test_missing_mask_means_whole_crop(bank, small_synth):
    s = small_synth[1][0]
    fw = F.extract(s.image, None, "fore+whole", bank).values
    np.testing.assert_array_equal(fw[:2784], fw[2784:])
    fb = F.extract(s.image, None, "fore+back", bank).values
    assert not fb[2784:].any()


def test_resize_to_working_size(bank, small_synth):
    s = small_synth[1][0]
    big = np.repeat(np.repeat(s.image, 2, axis=0), 2, axis=1)
    assert F.extract(big, None, "whole", bank).dim == 2784


def test_feature_cache_round_trip(tmp_path, bank, small_synth):
    fs = F.extract_many(small_synth[1][:4], "fore", bank)
    F.save_features(tmp_path / "f.npz", fs)
    back = F.load_features(tmp_path / "f.npz")
    assert back.ids == fs.ids and back.scheme == "fore" and back.layout == (29, 6, 16)
    np.testing.assert_array_equal(back.X, fs.X)
    np.testing.assert_array_equal(back.rows([fs.ids[2]])[0], fs.X[2])
