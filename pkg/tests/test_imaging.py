import io
import math

import numpy as np
import pytest

from radmatch.errors import ContractError, FormatError
from radmatch.imaging import (
    AffineTransform,
    DeformationLimits,
    Heatmap,
    Image2D,
    LabelMask,
    apply_to_point,
    gaussian_blur,
    gaussian_kernel1d,
    load_pgm,
    random_affine,
    save_pgm,
    splat_heatmap,
    warp_affine,
    warp_mask,
)


def write_pgm_bytes(path, width, height, maxval, payload):
    header = f"P5\n{width} {height}\n{maxval}\n".encode()
    path.write_bytes(header + payload)


class TestPgm:
    def test_load_image_normalizes_by_maxval(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm_bytes(p, 2, 2, 255, bytes([0, 255, 128, 64]))
        img = load_pgm(p, kind="image")
        assert img.width == 2 and img.height == 2
        np.testing.assert_allclose(img.data, [0.0, 1.0, 128 / 255, 64 / 255])

    def test_load_mask_keeps_literal_values(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm_bytes(p, 2, 2, 255, bytes([0, 255, 128, 64]))
        mask = load_pgm(p, kind="mask")
        np.testing.assert_array_equal(mask.labels.reshape(-1), [0, 255, 128, 64])

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm_bytes(p, 2, 2, 255, bytes([0, 255, 128]))
        with pytest.raises(FormatError, match="unexpected end of data"):
            load_pgm(p, kind="image")

    def test_malformed_header_names_byte_offset(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n2 x\n255\n" + bytes(4))
        with pytest.raises(FormatError, match="byte 5"):
            load_pgm(p, kind="image")

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P2\n2 2\n255\n0 1 2 3")
        with pytest.raises(FormatError, match="P5"):
            load_pgm(p, kind="image")

    def test_zero_dimension_rejected(self, tmp_path):
        p = tmp_path / "a.pgm"
        write_pgm_bytes(p, 0, 2, 255, b"")
        with pytest.raises(FormatError, match="nonzero"):
            load_pgm(p, kind="image")

    def test_16bit_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = Image2D(rng.uniform(size=(7, 5)))
        p = tmp_path / "a.pgm"
        save_pgm(img, p, maxval=65535)
        back = load_pgm(p, kind="image")
        np.testing.assert_allclose(back.pixels, img.pixels, atol=0.5 / 65535)

    def test_mask_roundtrip_16bit(self, tmp_path):
        labels = np.array([[0, 1, 2], [300, 7, 65535]], dtype=np.int64)
        p = tmp_path / "m.pgm"
        save_pgm(LabelMask(labels), p)
        back = load_pgm(p, kind="mask")
        np.testing.assert_array_equal(back.labels, labels)

    def test_comments_in_header(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        img = load_pgm(p, kind="image")
        assert img.width == 2


class TestGaussianBlur:
    def test_constant_image_invariant(self):
        img = Image2D(np.full((9, 9), 0.5))
        for sigma in (0.5, 1.0, 2.5):
            out = gaussian_blur(img, sigma)
            np.testing.assert_allclose(out.pixels, 0.5, atol=1e-12)

    def test_impulse_matches_dense_convolution_oracle(self):
        # independent oracle: direct dense 2D convolution with the outer-product kernel
        a = np.zeros((9, 9))
        a[4, 4] = 1.0
        sigma = 1.0
        out = gaussian_blur(Image2D(a), sigma).pixels

        k1 = gaussian_kernel1d(sigma)
        k2 = np.outer(k1, k1)
        r = (len(k1) - 1) // 2
        dense = np.zeros_like(a)
        for y in range(9):
            for x in range(9):
                acc = 0.0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        yy, xx = y + dy, x + dx
                        # reflect padding (numpy 'reflect': edge not repeated)
                        if yy < 0:
                            yy = -yy
                        if yy > 8:
                            yy = 16 - yy
                        if xx < 0:
                            xx = -xx
                        if xx > 8:
                            xx = 16 - xx
                        acc += k2[dy + r, dx + r] * a[yy, xx]
                dense[y, x] = acc
        np.testing.assert_allclose(out, dense, atol=1e-10)
        assert out[4, 4] == pytest.approx(k2[r, r], abs=1e-12)

    def test_interior_impulse_preserves_sum(self):
        a = np.zeros((31, 31))
        a[15, 15] = 1.0
        out = gaussian_blur(Image2D(a), 2.0).pixels
        assert out.sum() == pytest.approx(1.0, abs=1e-8)

    def test_sigma_nonpositive_rejected(self):
        img = Image2D(np.zeros((4, 4)))
        with pytest.raises(ContractError):
            gaussian_blur(img, 0.0)
        with pytest.raises(ContractError):
            gaussian_blur(img, -1.0)


class TestWarpAffine:
    def test_identity_bit_exact(self):
        rng = np.random.default_rng(1)
        img = Image2D(rng.uniform(size=(12, 17)))
        out = warp_affine(img, AffineTransform.identity(), "bilinear")
        assert np.array_equal(out.pixels, img.pixels)

    def test_integer_translation_bilinear(self):
        rng = np.random.default_rng(2)
        img = Image2D(rng.uniform(size=(10, 10)))
        t = AffineTransform.translation(3, -2)
        out = warp_affine(img, t, "bilinear")
        for y in range(10):
            for x in range(10):
                sx, sy = x - 3, y + 2
                if 0 <= sx < 10 and 0 <= sy < 10:
                    assert out.pixels[y, x] == pytest.approx(img.pixels[sy, sx], abs=1e-12)
                else:
                    assert out.pixels[y, x] == 0.0

    def test_four_quarter_turns_recover_original(self):
        rng = np.random.default_rng(3)
        img = Image2D(rng.uniform(size=(16, 16)))
        c = (16 - 1) / 2
        th = math.pi / 2
        rot = AffineTransform(np.array([
            [math.cos(th), -math.sin(th), c - (math.cos(th) * c - math.sin(th) * c)],
            [math.sin(th), math.cos(th), c - (math.sin(th) * c + math.cos(th) * c)],
        ]))
        out = img
        for _ in range(4):
            out = warp_affine(out, rot, "nearest")
        np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-6)

    def test_singular_transform_rejected(self):
        with pytest.raises(ContractError, match="singular"):
            AffineTransform(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))

    def test_mask_warp_never_invents_labels(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 5, size=(20, 20))
        mask = LabelMask(labels)
        for seed in range(10):
            t = random_affine(seed, DeformationLimits(20, 5, 0.2, 0.1), center=(9.5, 9.5))
            warped = warp_mask(mask, t)
            assert set(np.unique(warped.labels)) <= set(np.unique(labels)) | {0}


class TestAffineTransform:
    def test_apply_identity(self):
        t = AffineTransform.identity()
        assert apply_to_point(t, (5.5, 7.25)) == (5.5, 7.25)

    def test_apply_translation(self):
        t = AffineTransform.translation(3, -2)
        assert apply_to_point(t, (0, 0)) == (3.0, -2.0)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(5)
        for seed in range(20):
            t = random_affine(seed, DeformationLimits(30, 12, 0.15, 0.2), center=(50, 60))
            p = tuple(rng.uniform(-100, 100, size=2))
            q = t.apply(p)
            back = t.inverse().apply(q)
            assert back[0] == pytest.approx(p[0], abs=1e-9)
            assert back[1] == pytest.approx(p[1], abs=1e-9)

    def test_inverse_compose_is_identity(self):
        t = random_affine(7, DeformationLimits(25, 8, 0.1, 0.15), center=(10, 20))
        ident = t.inverse().compose(t)
        np.testing.assert_allclose(ident.matrix, AffineTransform.identity().matrix, atol=1e-9)

    def test_text_roundtrip(self):
        t = random_affine(11, DeformationLimits(), center=(80, 96))
        back = AffineTransform.from_text(t.to_text())
        np.testing.assert_array_equal(back.matrix, t.matrix)


class TestRandomAffine:
    def test_zero_limits_identity(self):
        t = random_affine(123, DeformationLimits(0, 0, 0, 0), center=(10, 10))
        np.testing.assert_array_equal(t.matrix, AffineTransform.identity().matrix)

    def test_deterministic(self):
        lim = DeformationLimits(15, 10, 0.1, 0.05)
        a = random_affine(42, lim, center=(30, 40))
        b = random_affine(42, lim, center=(30, 40))
        np.testing.assert_array_equal(a.matrix, b.matrix)

    def test_rotation_within_limit_polar_oracle(self):
        # polar decomposition: for L = s*R (no shear) the orthogonal factor is R
        lim = DeformationLimits(10, 10, 0.1, 0.0)
        for seed in range(50):
            t = random_affine(seed, lim, center=(0, 0))
            lin = t.matrix[:, :2]
            u, _, vt = np.linalg.svd(lin)
            rot = u @ vt
            angle = math.degrees(math.atan2(rot[1, 0], rot[0, 0]))
            assert -10.0 - 1e-9 <= angle <= 10.0 + 1e-9

    def test_negative_limit_rejected(self):
        with pytest.raises(ContractError):
            DeformationLimits(-1, 0, 0, 0)


class TestSplatHeatmap:
    def test_peak_normalized_and_local(self):
        hm = splat_heatmap([(10.0, 12.0)], 32, 32, sigma=2.0)
        assert hm.values.max() == pytest.approx(1.0)
        assert hm.values[12, 10] == pytest.approx(1.0)
        # far away (beyond kernel support) stays exactly zero
        assert hm.values[30, 30] == 0.0

    def test_empty_point_list_is_zero(self):
        hm = splat_heatmap([], 16, 16, sigma=2.0)
        assert hm.values.max() == 0.0
