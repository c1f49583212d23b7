import numpy as np
import pytest
from scipy import ndimage

from upgan.degrade import (
    MotionSeverity,
    centered_mask,
    rigid_transform,
    simulate_motion,
    undersample_kspace,
)
from upgan.metrics import ssim


def phantom(size=64, seed=0):
    rng = np.random.default_rng(seed)
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / h
    img = np.zeros((h, w))
    img[((yy - 0.5) ** 2 / 0.12 + (xx - 0.5) ** 2 / 0.09) <= 1.0] = 0.4
    img[((yy - 0.45) ** 2 / 0.01 + (xx - 0.55) ** 2 / 0.02) <= 1.0] = 0.9
    img += 0.05 * ndimage.gaussian_filter(rng.normal(0, 1, (h, w)), 1.0)
    return np.clip(img, 0, 1)


class TestUndersample:
    def test_full_fraction_is_identity(self):
        img = phantom()
        out = undersample_kspace(img, keep_fraction=1.0)
        assert np.max(np.abs(out - img)) <= 1e-6

    def test_constant_image_any_fraction(self):
        img = np.full((64, 64), 0.37)
        for frac in (0.01, 0.08, 0.5):
            out = undersample_kspace(img, keep_fraction=frac)
            assert np.max(np.abs(out - img)) <= 1e-6

    def test_exact_coefficient_count_256(self):
        # ceil(0.08 * 256 * 256) = 5243, i.e. 12.5x acceleration
        mask = centered_mask(256, 256, int(np.ceil(0.08 * 256 * 256)))
        assert int(mask.sum()) == 5243
        img = phantom(256)
        out = undersample_kspace(img, keep_fraction=0.08)
        assert np.mean((out - img) ** 2) > 0

    def test_mask_is_centered_square_core(self):
        # complete Chebyshev shells form a centered square
        mask = centered_mask(32, 32, 25)
        ys, xs = np.nonzero(mask)
        assert ys.min() == 16 - 2 and ys.max() == 16 + 2
        assert xs.min() == 16 - 2 and xs.max() == 16 + 2

    def test_lines_mode(self):
        mask = centered_mask(64, 64, 5 * 64, mode="lines")
        rows = np.nonzero(mask.any(axis=1))[0]
        assert len(rows) == 5
        assert 32 in rows
        assert mask[rows].all()

    def test_validation(self):
        with pytest.raises(ValueError):
            undersample_kspace(phantom(), keep_fraction=0.0)
        with pytest.raises(ValueError):
            undersample_kspace(phantom(), keep_fraction=1.5)
        with pytest.raises(ValueError):
            undersample_kspace(np.zeros((63, 64)), keep_fraction=0.5)

    def test_energy_concentration(self):
        # keeping more of k-space can only improve reconstruction
        img = phantom()
        errs = [np.mean((undersample_kspace(img, f) - img) ** 2) for f in (0.05, 0.2, 0.6)]
        assert errs[0] > errs[1] > errs[2]


class TestMotion:
    def test_zero_severity_is_identity(self):
        img = phantom()
        out = simulate_motion(img, MotionSeverity(4, 0.0, 0.0), seed=3)
        assert np.max(np.abs(out - img)) <= 1e-6

    def test_deterministic_per_seed(self):
        img = phantom()
        sev = MotionSeverity(4, 5.0, 3.0)
        out1 = simulate_motion(img, sev, seed=11)
        out2 = simulate_motion(img, sev, seed=11)
        assert np.array_equal(out1, out2)
        assert not np.array_equal(out1, simulate_motion(img, sev, seed=12))

    def test_artefacts_visible_and_ghosting(self):
        img = phantom()
        out = simulate_motion(img, MotionSeverity(4, 5.0, 3.0), seed=5)
        assert ssim(out, img, data_range=1.0) < 1.0
        # ghosting: energy appears outside the (dilated) object support
        support = ndimage.binary_dilation(img > 0.05, iterations=3)
        outside = ~support
        assert outside.sum() > 0
        assert np.abs(out[outside] - img[outside]).mean() > 1e-4

    def test_severity_validation(self):
        with pytest.raises(ValueError):
            MotionSeverity(segments=0)
        with pytest.raises(ValueError):
            MotionSeverity(max_rotation_deg=-1.0)


class TestRigidTransform:
    def test_identity_settings_exact(self):
        img = phantom()
        assert np.array_equal(rigid_transform(img, 0.0, (0.0, 0.0)), img)

    def test_translation_shifts_mass(self):
        img = np.zeros((32, 32))
        img[16, 16] = 1.0
        out = rigid_transform(img, 0.0, (3.0, -2.0))
        peak = np.unravel_index(np.argmax(out), out.shape)
        assert peak == (19, 14)

    def test_rotation_preserves_center(self):
        img = np.zeros((33, 33))
        img[16, 16] = 1.0
        out = rigid_transform(img, 30.0, (0.0, 0.0))
        assert np.unravel_index(np.argmax(out), out.shape) == (16, 16)
