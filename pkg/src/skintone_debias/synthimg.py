"""Synthetic lesion images with known ground truth for tone-estimation tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import ita_from_values, rgb_array_to_lab
from .imageproc import edge_patch_layout


@dataclass
class LesionFixture:
    image: np.ndarray
    skin_rgb: tuple[int, int, int]
    hair_pixels: np.ndarray
    lesion_pixels: np.ndarray

    @property
    def true_ita(self) -> float:
        L, _, b = rgb_array_to_lab(np.array(self.skin_rgb))
        return ita_from_values(float(L), float(b))


def uniform_image(width: int, height: int, rgb) -> np.ndarray:
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = np.asarray(rgb, dtype=np.uint8)
    return img


def random_skin_rgb(rng: np.random.Generator) -> tuple[int, int, int]:
    """A plausible skin colour: red >= green >= blue, spanning light to dark."""
    base = rng.uniform(70, 235)
    r = base
    g = base * rng.uniform(0.72, 0.9)
    b = g * rng.uniform(0.7, 0.92)
    return int(round(r)), int(round(g)), int(round(b))


def add_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return image
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def paint_disc(image: np.ndarray, cx: float, cy: float, radius: float, rgb) -> np.ndarray:
    """Paint a filled disc in place; returns the painted-pixel mask."""
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    image[disc] = np.asarray(rgb, dtype=np.uint8)
    return disc


def draw_line(image: np.ndarray, x: float, y: float, angle: float, width: float, rgb) -> np.ndarray:
    """Draw an infinite straight line of given width through (x, y), in place."""
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    # perpendicular distance from pixel centres to the line
    dist = np.abs((xx - x) * np.sin(angle) - (yy - y) * np.cos(angle))
    line = dist < width / 2.0
    image[line] = np.asarray(rgb, dtype=np.uint8)
    return line


def make_hair_fixture(
    rng: np.random.Generator,
    width: int = 160,
    height: int = 120,
    n_hairs: tuple[int, int] = (5, 15),
    hair_width: float = 2.0,
    noise_sigma: float = 1.0,
) -> LesionFixture:
    """Skin field, dark centred lesion, and dark hairs crossing edge patches."""
    skin = random_skin_rgb(rng)
    img = uniform_image(width, height, skin)
    lesion_rgb = tuple(int(c * rng.uniform(0.3, 0.55)) for c in skin)
    radius = rng.uniform(0.2, 0.3) * min(width, height)
    lesion = paint_disc(img, width / 2, height / 2, radius, lesion_rgb)

    hairs = np.zeros((height, width), dtype=bool)
    layout = edge_patch_layout(width, height)

    def point_in(p):
        # keep clear of the patch border so the hair really crosses it
        return p.x + rng.uniform(3, p.side - 3), p.y + rng.uniform(3, p.side - 3)

    # the first four hairs pair the eight patches up so every patch is crossed
    order = rng.permutation(len(layout))
    segments = [(layout[order[i]], layout[order[i + 1]]) for i in range(0, len(order), 2)]
    n = max(int(rng.integers(n_hairs[0], n_hairs[1] + 1)), len(segments))
    for k in range(n):
        if k < len(segments):
            (xa, ya), (xb, yb) = point_in(segments[k][0]), point_in(segments[k][1])
            x, y, angle = xa, ya, np.arctan2(yb - ya, xb - xa)
        else:
            x, y = point_in(layout[int(rng.integers(len(layout)))])
            angle = rng.uniform(0, np.pi)
        shade = rng.uniform(10, 45)
        hair_rgb = (int(shade * 1.2), int(shade), int(shade * 0.8))
        hairs |= draw_line(img, x, y, angle, hair_width, hair_rgb)
    img = add_noise(img, noise_sigma, rng)
    return LesionFixture(img, skin, hairs, lesion)


def make_planted_corner_fixture(
    rng: np.random.Generator, width: int = 120, height: int = 100, lift: float = 25.0,
) -> tuple[np.ndarray, int, tuple[int, int, int]]:
    """Field of one skin colour with a lighter square planted on one corner patch.

    Returns the image, the layout index of the planted corner (0..3) and the
    planted colour.
    """
    base = random_skin_rgb(rng)
    base = tuple(min(c, 200) for c in base)
    img = uniform_image(width, height, base)
    corner = int(rng.integers(4))
    p = edge_patch_layout(width, height)[corner]
    light = tuple(int(min(255, c + lift)) for c in base)
    img[p.y:p.y + p.side, p.x:p.x + p.side] = light
    return img, corner, light
