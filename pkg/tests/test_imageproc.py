import numpy as np
import pytest

from oracles import brute_black_hat, brute_close
from skintone_debias.color import ita_from_values, rgb_array_to_lab
from skintone_debias.imageproc import (
    ImageTooSmallError, PatchSpec, ToneConfig, black_hat, edge_patch_layout, estimate_skin_tone,
    hair_mask, morph_close, patch_ita, square_kernel, to_gray,
)
from skintone_debias.synthimg import (
    draw_line, make_hair_fixture, make_planted_corner_fixture, paint_disc, uniform_image,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestToGray:
    def test_white_and_black(self):
        assert np.all(to_gray(uniform_image(4, 3, (255, 255, 255))) == 255)
        assert np.all(to_gray(uniform_image(4, 3, (0, 0, 0))) == 0)

    def test_pure_red(self):
        # 0.299 * 255 = 76.245
        assert to_gray(uniform_image(1, 1, (255, 0, 0)))[0, 0] == 76

    def test_shape(self):
        assert to_gray(uniform_image(7, 5, (1, 2, 3))).shape == (5, 7)


class TestMorphology:
    def test_flat_unchanged(self):
        img = np.full((9, 9), 120)
        assert np.array_equal(morph_close(img, square_kernel(3)), img)
        assert np.all(black_hat(img, square_kernel(3)) == 0)

    def test_dark_pixel_filled(self):
        img = np.full((9, 9), 200)
        img[4, 4] = 10
        closed = morph_close(img, square_kernel(3))
        assert closed[4, 4] == 200

    def test_thin_line_responds(self):
        img = np.full((20, 20), 200)
        img[:, 9:11] = 30
        bh = black_hat(img, square_kernel(5))
        assert np.all(bh[:, 9:11] == 170)
        assert np.all(bh[:, :8] == 0)

    def test_brute_force_random(self, rng):
        for size in (3, 5):
            img = rng.integers(0, 256, (8, 8))
            k = square_kernel(size)
            assert morph_close(img, k).tolist() == brute_close(img.tolist(), k.tolist())
            assert black_hat(img, k).tolist() == brute_black_hat(img.tolist(), k.tolist())

    def test_non_rectangular_element(self, rng):
        cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        img = rng.integers(0, 256, (10, 12))
        assert morph_close(img, cross).tolist() == brute_close(img.tolist(), cross.tolist())

    def test_closing_properties(self, rng):
        img = rng.integers(0, 256, (16, 16))
        k = square_kernel(5)
        once = morph_close(img, k)
        assert np.all(once >= img)
        assert np.array_equal(morph_close(once, k), once)

    def test_kernel_larger_than_image(self):
        with pytest.raises(ValueError, match="larger than image"):
            morph_close(np.zeros((4, 4), dtype=int), square_kernel(5))

    @pytest.mark.parametrize("kernel", [np.zeros((3, 3), bool), np.ones((2, 2), bool)])
    def test_bad_kernel(self, kernel):
        with pytest.raises(ValueError):
            black_hat(np.zeros((8, 8), dtype=int), kernel)


class TestHairMask:
    def test_flat_image_clean(self):
        assert not hair_mask(uniform_image(40, 40, (200, 160, 140))).any()

    def test_threshold_255_clean(self):
        img = uniform_image(40, 40, (220, 220, 220))
        img[:, 10:12] = 0
        assert not hair_mask(img, threshold=255).any()

    def test_drawn_lines(self, rng):
        img = uniform_image(120, 100, (210, 170, 150))
        lines = np.zeros((100, 120), dtype=bool)
        for _ in range(6):
            lines |= draw_line(img, rng.uniform(0, 120), rng.uniform(0, 100),
                               rng.uniform(0, np.pi), 2.0, (40, 30, 25))
        mask = hair_mask(img, kernel_size=17, threshold=10)
        assert mask[lines].mean() >= 0.9
        assert mask[~lines].mean() <= 0.02

    @pytest.mark.parametrize("size", [1, 4, 16])
    def test_degenerate_kernel(self, size):
        with pytest.raises(ValueError):
            hair_mask(uniform_image(40, 40, (1, 1, 1)), kernel_size=size)


class TestLayout:
    def test_hundred_square(self):
        got = [(p.x, p.y) for p in edge_patch_layout(100, 100, 20, 0)]
        assert got == [(0, 0), (80, 0), (0, 80), (80, 80), (40, 0), (40, 80), (0, 40), (80, 40)]

    def test_minimum_size(self):
        specs = edge_patch_layout(40, 40, 20, 0)
        assert len(specs) == 8
        assert all(0 <= p.x <= 20 and 0 <= p.y <= 20 for p in specs)

    def test_too_small(self):
        with pytest.raises(ImageTooSmallError) as err:
            edge_patch_layout(30, 30, 20, 10)
        assert (err.value.min_width, err.value.min_height) == (40, 40)

    def test_margin_insets(self):
        specs = edge_patch_layout(200, 150, 20, 5)
        assert specs[0] == PatchSpec(5, 5, 20)
        assert specs[3] == PatchSpec(175, 125, 20)

    def test_deterministic(self):
        assert edge_patch_layout(321, 123) == edge_patch_layout(321, 123)


class TestPatchIta:
    def test_uniform(self):
        img = uniform_image(40, 40, (200, 150, 120))
        L, _, b = rgb_array_to_lab(np.array([200, 150, 120]))
        got = patch_ita(img, None, PatchSpec(0, 0))
        assert got == pytest.approx(ita_from_values(L, b))

    def test_fully_masked(self):
        img = uniform_image(40, 40, (200, 150, 120))
        mask = np.ones((40, 40), dtype=bool)
        assert patch_ita(img, mask, PatchSpec(0, 0)) is None

    def test_two_colour_mean(self):
        img = uniform_image(40, 40, (200, 150, 120))
        img[:10, :] = (120, 80, 60)
        lab = rgb_array_to_lab(img[:20, :20].astype(float))
        # per-pixel average written out longhand
        L = sum(lab[i, j, 0] for i in range(20) for j in range(20)) / 400
        b = sum(lab[i, j, 2] for i in range(20) for j in range(20)) / 400
        assert patch_ita(img, None, PatchSpec(0, 0)) == pytest.approx(ita_from_values(L, b), abs=1e-9)

    def test_masked_pixels_excluded(self):
        img = uniform_image(40, 40, (200, 150, 120))
        img[:5, :] = (0, 0, 0)
        mask = np.zeros((40, 40), dtype=bool)
        mask[:5, :] = True
        assert patch_ita(img, mask, PatchSpec(0, 0)) == pytest.approx(
            patch_ita(uniform_image(40, 40, (200, 150, 120)), None, PatchSpec(0, 0)))

    def test_coverage_threshold(self):
        img = uniform_image(40, 40, (200, 150, 120))
        mask = np.zeros((40, 40), dtype=bool)
        mask[:11, :20] = True  # 55% masked
        assert patch_ita(img, mask, PatchSpec(0, 0), min_coverage=0.5) is None
        assert patch_ita(img, mask, PatchSpec(0, 0), min_coverage=0.4) is not None

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            patch_ita(uniform_image(30, 30, (1, 1, 1)), None, PatchSpec(15, 0))


class TestEstimate:
    def test_planted_corner(self, rng):
        img, corner, light = make_planted_corner_fixture(rng)
        est = estimate_skin_tone(img)
        L, _, b = rgb_array_to_lab(np.array(light))
        assert est.chosen_index == corner
        assert est.ita == pytest.approx(ita_from_values(L, b), abs=0.5)

    def test_uniform_ties_pick_first(self):
        est = estimate_skin_tone(uniform_image(100, 80, (170, 130, 110)))
        vals = [v for _, v in est.per_patch_ita]
        assert len(set(vals)) == 1
        assert est.chosen_index == 0

    def test_lesion_and_hair(self, rng):
        for _ in range(5):
            fx = make_hair_fixture(rng)
            est = estimate_skin_tone(fx.image)
            assert abs(est.ita - fx.true_ita) <= 1.0

    def test_argmax_consistency(self, rng):
        fx = make_hair_fixture(rng)
        est = estimate_skin_tone(fx.image)
        defined = [v for _, v in est.per_patch_ita if v is not None]
        assert est.ita == max(defined)
        assert est.fitzpatrick in range(1, 7)

    def test_lesion_invariance(self, rng):
        fx = make_hair_fixture(rng, n_hairs=(0, 0))
        before = estimate_skin_tone(fx.image)
        img = fx.image.copy()
        paint_disc(img, 80, 60, 15, (255, 0, 255))
        after = estimate_skin_tone(img)
        assert after.ita == before.ita and after.chosen_patch == before.chosen_patch

    def test_no_hair_response_equals_unmasked(self):
        img = uniform_image(100, 100, (180, 140, 120))
        paint_disc(img, 50, 50, 25, (60, 40, 30))
        masked = estimate_skin_tone(img)
        unmasked = estimate_skin_tone(img, ToneConfig(mask_hair=False))
        assert masked.per_patch_ita == unmasked.per_patch_ita

    def test_fallback_when_all_masked(self):
        img = uniform_image(60, 60, (200, 160, 140))
        img[::2, :] = (20, 15, 10)  # hair-like stripes everywhere
        est = estimate_skin_tone(img, ToneConfig(min_coverage=1.0))
        assert est.fallback
        assert all(v is None for _, v in est.per_patch_ita)
        assert est.fitzpatrick in range(1, 7)

    def test_too_small(self):
        with pytest.raises(ImageTooSmallError):
            estimate_skin_tone(uniform_image(30, 15, (1, 1, 1)))
