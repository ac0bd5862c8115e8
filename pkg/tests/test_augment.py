import numpy as np
import pytest

from augment import AugmentParams, apply_augmentation, augment, sample_augmentation, small_view
from synthetic import MAX_SHAPES, MIN_SHAPES, generate_corpus, generate_image, write_corpus


@pytest.fixture
def image(rng):
    return rng.uniform(size=(64, 64, 3))


class TestAugment:
    def test_identity_params_leave_image_unchanged(self, image):
        out = apply_augmentation(image, AugmentParams.identity(64), out_size=64)
        np.testing.assert_array_equal(out, image)

    def test_double_flip_is_original_crop(self, image):
        flipped = AugmentParams(top=4, left=8, size=40, flip=True, color_scale=(1.0, 1.0, 1.0))
        once = apply_augmentation(image, flipped, out_size=40)
        twice = apply_augmentation(once, AugmentParams(0, 0, 40, True, (1.0, 1.0, 1.0)), out_size=40)
        np.testing.assert_array_equal(twice, image[4:44, 8:48])

    def test_seeded_views_are_identical(self, image):
        a = augment(image, np.random.default_rng(7))
        b = augment(image, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (56, 56, 3)

    def test_output_clamped(self, image):
        params = AugmentParams(0, 0, 64, False, (1.4, 1.4, 1.4))
        out = apply_augmentation(image, params, out_size=56)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_sampled_crop_fits(self, rng):
        for _ in range(200):
            p = sample_augmentation(rng, 64)
            assert 32 <= p.size <= 64
            assert p.top + p.size <= 64 and p.left + p.size <= 64

    def test_crop_outside_image(self, image):
        with pytest.raises(ValueError):
            apply_augmentation(image, AugmentParams(40, 0, 32, False, (1.0, 1.0, 1.0)), 32)


class TestSmallView:
    def test_half_resolution(self, image, rng):
        assert small_view(image, rng).shape == (28, 28, 3)

    def test_constant_image_gives_constant_view(self, rng):
        flat = np.full((64, 64, 3), 0.5)
        view = small_view(flat, rng)
        for ch in range(3):
            np.testing.assert_allclose(view[:, :, ch], view[0, 0, ch], atol=1e-6)

    def test_seeded(self, image):
        np.testing.assert_array_equal(
            small_view(image, np.random.default_rng(3)), small_view(image, np.random.default_rng(3))
        )


class TestSynthetic:
    def test_shape_count_and_distinct_colors(self, rng):
        for _ in range(50):
            img = generate_image(rng)
            assert MIN_SHAPES <= img.n_shapes <= MAX_SHAPES
            assert len(set(img.colors)) == img.n_shapes
            assert img.pixels.shape == (64, 64, 3)
            assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0

    def test_same_seed_same_corpus(self):
        a, b = generate_corpus(5, seed=11), generate_corpus(5, seed=11)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.pixels, y.pixels)

    def test_write_corpus(self, tmp_path):
        write_corpus(generate_corpus(3, seed=0), str(tmp_path))
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["image_0000.png", "image_0001.png", "image_0002.png", "manifest.csv"]

    def test_empty_corpus_leaves_empty_dir(self, tmp_path):
        out = tmp_path / "empty"
        assert write_corpus(generate_corpus(0, seed=0), str(out)) == []
        assert list(out.iterdir()) == []
