"""sRGB to CIELAB conversion, individual typology angle and Fitzpatrick typing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# IEC 61966-2-1 primaries, D65. White is taken as M @ (1, 1, 1) so that
# sRGB white maps exactly onto the Lab reference white.
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
WHITE_D65 = SRGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0

# Lower bounds of ITA for types 1..5; anything at or below 10 is type 6.
FITZPATRICK_THRESHOLDS = (55.0, 41.0, 28.0, 19.0, 10.0)


@dataclass(frozen=True)
class Rgb8:
    r: int
    g: int
    b: int

    def __post_init__(self) -> None:
        for name in ("r", "g", "b"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValueError(f"channel {name}={v} outside [0, 255]")


@dataclass(frozen=True)
class LabColor:
    L: float
    a: float
    b: float


def srgb_to_linear(channel):
    """Decode 8-bit sRGB channel value(s) to linear intensity in [0, 1].

    Accepts a scalar or an array; arrays are decoded elementwise.
    """
    c = np.asarray(channel, dtype=np.float64) / 255.0
    out = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    if out.ndim == 0:
        return float(out)
    return out


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an ``(..., 3)`` array of 8-bit sRGB values to CIELAB (D65).

    Returns a float64 array of the same leading shape with channels L, a, b.
    """
    rgb = np.asarray(rgb)
    if rgb.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {rgb.shape}")
    lin = srgb_to_linear(rgb)
    xyz = lin @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / WHITE_D65)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def rgb_to_lab(pixel: Rgb8) -> LabColor:
    L, a, b = rgb_array_to_lab(np.array([pixel.r, pixel.g, pixel.b]))
    return LabColor(float(L), float(a), float(b))


def ita_from_values(L: float, b: float) -> float:
    """ITA in degrees for a lightness/blue-yellow pair.

    ``b == 0`` resolves to +90, -90 or 0 depending on the sign of ``L - 50``.
    """
    if b == 0:
        d = L - 50.0
        return 90.0 if d > 0 else (-90.0 if d < 0 else 0.0)
    return math.degrees(math.atan((L - 50.0) / b))


def ita(lab: LabColor) -> float:
    """Individual typology angle of a Lab colour, in [-90, 90] degrees."""
    return ita_from_values(lab.L, lab.b)


def fitzpatrick_from_ita(ita_deg: float) -> int:
    """Map an ITA angle to a Fitzpatrick type 1 (lightest) .. 6 (darkest).

    Intervals are half-open on the left: 55 maps to type 2, 10 to type 6.
    """
    for skin_type, lower in enumerate(FITZPATRICK_THRESHOLDS, start=1):
        if ita_deg > lower:
            return skin_type
    return 6
