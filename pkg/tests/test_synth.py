import numpy as np
import pytest

from pedattr.synth import ATTRIBUTES, generate_synthetic, outfit_labels


def test_noise_free_labels_follow_rendering():
    reg, samples, outfits = generate_synthetic(60, attrs=6, seed=4, return_outfits=True)
    assert reg.names == ATTRIBUTES
    for s, o in zip(samples, outfits):
        assert dict(s.labels) == outfit_labels(o)


def test_same_seed_same_dataset():
    a = generate_synthetic(30, seed=9)[1]
    b = generate_synthetic(30, seed=9)[1]
    for x, y in zip(a, b):
        assert x.id == y.id and x.split == y.split and dict(x.labels) == dict(y.labels)
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)
    c = generate_synthetic(30, seed=10)[1]
    assert any(not np.array_equal(x.image, z.image) for x, z in zip(a, c))


def test_noise_flips_about_the_requested_fraction():
    _, samples, outfits = generate_synthetic(400, attrs=6, noise=0.2, seed=2, return_outfits=True)
    flips = [s.labels[a] != outfit_labels(o)[a] for s, o in zip(samples, outfits) for a in ATTRIBUTES]
    assert 0.17 < np.mean(flips) < 0.23


def test_masks_cover_figure_only():
    _, samples = generate_synthetic(20, seed=0)
    for s in samples:
        frac = s.mask.mean()
        assert 0.1 < frac < 0.6
        assert s.image.shape == (128, 48, 3) and s.mask.shape == (128, 48)


def test_splits_and_registry():
    reg, samples = generate_synthetic(100, attrs=2, seed=1)
    assert [sum(s.split == sp for s in samples) for sp in ("train", "verify", "test")] == [50, 10, 40]
    assert sum(p + n for p, n in reg.counts["UpperRed"].values()) == 100


@pytest.mark.parametrize("kwargs", [dict(n=3), dict(n=10, attrs=0), dict(n=10, attrs=7),
                                    dict(n=10, noise=1.0), dict(n=10, noise=-0.1)])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        generate_synthetic(**kwargs)
