"""Hair masking and edge-patch skin tone estimation.

Images are ``(height, width, 3)`` uint8 numpy arrays in sRGB. Grey images and
masks are ``(height, width)`` arrays. A lesion is assumed to be darker than the
skin around it, so the lightest of eight border patches is taken as the
healthy-skin sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .color import fitzpatrick_from_ita, ita_from_values, rgb_array_to_lab

REC601 = np.array([0.299, 0.587, 0.114])


class ImageTooSmallError(ValueError):
    """Raised when an image cannot hold the patch layout."""

    def __init__(self, width: int, height: int, min_width: int, min_height: int):
        self.min_width = min_width
        self.min_height = min_height
        super().__init__(
            f"image {width}x{height} is too small for the patch layout; "
            f"need at least {min_width}x{min_height}"
        )


@dataclass(frozen=True)
class PatchSpec:
    x: int
    y: int
    side: int = 20


@dataclass(frozen=True)
class ToneConfig:
    """Parameters for :func:`estimate_skin_tone`."""

    kernel_size: int = 17
    threshold: int = 10
    min_coverage: float = 0.5
    patch_side: int = 20
    margin: int = 0
    mask_hair: bool = True


@dataclass
class SkinToneEstimate:
    chosen_patch: PatchSpec
    chosen_index: int
    ita: float
    fitzpatrick: int
    per_patch_ita: list[tuple[PatchSpec, float | None]]
    masked_fraction: float
    fallback: bool = False
    patch_coverage: list[float] = field(default_factory=list)

    @property
    def ita_spread(self) -> float:
        """Max minus min of the defined per-patch ITAs (lighting diagnostic)."""
        vals = [v for _, v in self.per_patch_ita if v is not None]
        return max(vals) - min(vals) if vals else 0.0


def to_gray(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, rounded half up to integers in [0, 255]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    luma = image.astype(np.float64) @ REC601
    return np.floor(luma + 0.5).astype(np.int32)


def square_kernel(size: int) -> np.ndarray:
    if size < 1:
        raise ValueError(f"kernel size must be positive, got {size}")
    return np.ones((size, size), dtype=bool)


def _check_kernel(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=bool)
    if kernel.ndim != 2 or not kernel.any():
        raise ValueError("structuring element must be a non-empty 2-D array")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"structuring element must have odd sides, got {kernel.shape}")
    h, w = gray.shape
    if kh > h or kw > w:
        raise ValueError(f"structuring element {kh}x{kw} larger than image {h}x{w}")
    return kernel


def _window_reduce(img: np.ndarray, kernel: np.ndarray, pad_value, reducer) -> np.ndarray:
    kh, kw = kernel.shape
    padded = np.pad(
        img.astype(np.float64), ((kh // 2, kh // 2), (kw // 2, kw // 2)),
        constant_values=pad_value,
    )
    if kernel.all():
        # rectangular element: separable, two 1-D passes
        rows = reducer(sliding_window_view(padded, kh, axis=0), axis=-1)
        return reducer(sliding_window_view(rows, kw, axis=1), axis=-1)
    windows = sliding_window_view(padded, kernel.shape)
    return reducer(windows[..., kernel], axis=-1)


def dilate(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kernel = _check_kernel(gray, kernel)
    # dilation uses the reflected element; out-of-image samples are ignored
    return _window_reduce(gray, kernel[::-1, ::-1], -np.inf, np.max).astype(gray.dtype)


def erode(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kernel = _check_kernel(gray, kernel)
    return _window_reduce(gray, kernel, np.inf, np.min).astype(gray.dtype)


def morph_close(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Grayscale closing: dilation followed by erosion with the same element."""
    gray = np.asarray(gray)
    return erode(dilate(gray, kernel), kernel)


def black_hat(gray: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Closing minus input; large on thin dark structures such as hairs."""
    gray = np.asarray(gray)
    closed = morph_close(gray, kernel)
    return np.maximum(closed.astype(np.int64) - gray.astype(np.int64), 0).astype(gray.dtype)


def hair_mask(image: np.ndarray, kernel_size: int = 17, threshold: int = 10) -> np.ndarray:
    """Boolean mask, True where a pixel looks like hair and should be excluded."""
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {threshold}")
    return black_hat(to_gray(image), square_kernel(kernel_size)) > threshold


def edge_patch_layout(width: int, height: int, side: int = 20, margin: int = 0) -> list[PatchSpec]:
    """Four corners then four edge midpoints, each inset by ``margin``.

    Order: top-left, top-right, bottom-left, bottom-right, top-mid, bottom-mid,
    left-mid, right-mid.
    """
    min_dim = 2 * margin + side
    if width < min_dim or height < min_dim:
        raise ImageTooSmallError(width, height, min_dim, min_dim)
    x0, y0 = margin, margin
    x1, y1 = width - margin - side, height - margin - side
    xm, ym = (width - side) // 2, (height - side) // 2
    coords = [
        (x0, y0), (x1, y0), (x0, y1), (x1, y1),
        (xm, y0), (xm, y1), (x0, ym), (x1, ym),
    ]
    return [PatchSpec(x, y, side) for x, y in coords]


def _patch_slice(patch: PatchSpec) -> tuple[slice, slice]:
    return slice(patch.y, patch.y + patch.side), slice(patch.x, patch.x + patch.side)


def _mean_lab_ita(lab_pixels: np.ndarray) -> float:
    mean = lab_pixels.reshape(-1, 3).mean(axis=0)
    return ita_from_values(float(mean[0]), float(mean[2]))


def patch_ita(
    image: np.ndarray,
    mask: np.ndarray | None,
    patch: PatchSpec,
    min_coverage: float = 0.5,
    lab: np.ndarray | None = None,
) -> float | None:
    """ITA of the mean L and b over unmasked pixels of a patch.

    Returns None when the unmasked fraction is below ``min_coverage``. A
    precomputed Lab image may be passed as ``lab`` to avoid reconversion.
    """
    if not 0 < min_coverage <= 1:
        raise ValueError(f"min_coverage must be in (0, 1], got {min_coverage}")
    h, w = image.shape[:2]
    if patch.x < 0 or patch.y < 0 or patch.x + patch.side > w or patch.y + patch.side > h:
        raise ValueError(f"{patch} lies outside a {w}x{h} image")
    rows, cols = _patch_slice(patch)
    region = lab[rows, cols] if lab is not None else rgb_array_to_lab(image[rows, cols])
    keep = np.ones(region.shape[:2], dtype=bool) if mask is None else ~mask[rows, cols]
    if keep.mean() < min_coverage:
        return None
    return _mean_lab_ita(region[keep])


def estimate_skin_tone(image: np.ndarray, config: ToneConfig | None = None) -> SkinToneEstimate:
    """Estimate the skin tone of a lesion image from its lightest edge patch."""
    config = config or ToneConfig()
    image = np.asarray(image)
    h, w = image.shape[:2]
    layout = edge_patch_layout(w, h, config.patch_side, config.margin)
    if config.mask_hair:
        mask = hair_mask(image, config.kernel_size, config.threshold)
    else:
        mask = np.zeros((h, w), dtype=bool)
    lab = rgb_array_to_lab(image)

    coverage = [float((~mask[_patch_slice(p)]).mean()) for p in layout]
    per_patch = [
        (p, patch_ita(image, mask, p, config.min_coverage, lab=lab)) for p in layout
    ]
    defined = [(i, v) for i, (_, v) in enumerate(per_patch) if v is not None]
    fallback = not defined
    if defined:
        # max() keeps the first maximal element, i.e. the lowest layout index
        idx, best = max(defined, key=lambda iv: iv[1])
    else:
        idx = max(range(len(layout)), key=lambda i: coverage[i])
        rows, cols = _patch_slice(layout[idx])
        keep = ~mask[rows, cols]
        region = lab[rows, cols]
        best = _mean_lab_ita(region[keep] if keep.any() else region)
    return SkinToneEstimate(
        chosen_patch=layout[idx],
        chosen_index=idx,
        ita=best,
        fitzpatrick=fitzpatrick_from_ita(best),
        per_patch_ita=per_patch,
        masked_fraction=1.0 - coverage[idx],
        fallback=fallback,
        patch_coverage=coverage,
    )
