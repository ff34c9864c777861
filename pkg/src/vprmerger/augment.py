"""TrivialAugment-style augmentation for 64x32 grayscale frames.

Each call samples one operation kind and one magnitude bin (0..30) uniformly
and applies it once, then flips the frame horizontally with probability 0.5.
Images are float arrays of shape (32, 64) in [0, 1]; every op clamps its
result back into that range. Geometric ops resample bilinearly and fill
uncovered pixels with mid-gray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .baseline import INPUT_HEIGHT, INPUT_WIDTH

N_BINS = 31
FILL = 0.5

KINDS = (
    "identity",
    "rotate",
    "shear-x",
    "shear-y",
    "translate-x",
    "translate-y",
    "brightness",
    "contrast",
    "sharpness",
    "posterize",
    "solarize",
    "autocontrast",
    "equalize",
)

# strength at bin 30
MAX_ROTATE_DEG = 30.0
MAX_SHEAR = 0.3
MAX_TRANSLATE = 0.3  # fraction of the image dimension
MAX_ENHANCE = 0.9  # factor range 1 -/+ 0.9
MIN_POSTERIZE_BITS = 2


@dataclass(frozen=True)
class AugmentOp:
    kind: str
    magnitude_bin: int = 0
    sign: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0 <= self.magnitude_bin < N_BINS:
            raise ValueError(f"magnitude bin must be in [0, {N_BINS - 1}], got {self.magnitude_bin}")
        if self.sign not in (-1, 1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def strength(self) -> float:
        """Signed magnitude in [-1, 1]."""
        return self.sign * self.magnitude_bin / (N_BINS - 1)


def as_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.size != INPUT_HEIGHT * INPUT_WIDTH:
        raise ValueError(f"expected a {INPUT_WIDTH}x{INPUT_HEIGHT} image, got {img.shape}")
    return img.reshape(INPUT_HEIGHT, INPUT_WIDTH)


def _affine(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Resample with output (row, col) -> input ``matrix @ (p - c) + c``."""
    center = (np.array(img.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - matrix @ center
    return ndimage.affine_transform(img, matrix, offset=offset, order=1, mode="constant", cval=FILL)


def _rotate(img, s):
    theta = np.deg2rad(MAX_ROTATE_DEG * s)
    c, sn = np.cos(theta), np.sin(theta)
    return _affine(img, np.array([[c, -sn], [sn, c]]))


def _shear_x(img, s):
    return _affine(img, np.array([[1.0, 0.0], [MAX_SHEAR * s, 1.0]]))


def _shear_y(img, s):
    return _affine(img, np.array([[1.0, MAX_SHEAR * s], [0.0, 1.0]]))


def _shift(img: np.ndarray, pixels: int, axis: int) -> np.ndarray:
    out = np.full_like(img, FILL)
    n = img.shape[axis]
    if abs(pixels) >= n:
        return out
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    if pixels >= 0:
        src[axis], dst[axis] = slice(0, n - pixels), slice(pixels, n)
    else:
        src[axis], dst[axis] = slice(-pixels, n), slice(0, n + pixels)
    out[tuple(dst)] = img[tuple(src)]
    return out


def translate_pixels(strength: float, size: int) -> int:
    return int(round(MAX_TRANSLATE * size * strength))


def _translate_x(img, s):
    return _shift(img, translate_pixels(s, img.shape[1]), axis=1)


def _translate_y(img, s):
    return _shift(img, translate_pixels(s, img.shape[0]), axis=0)


def _blend(degenerate, img, factor):
    return degenerate + factor * (img - degenerate)


def _brightness(img, s):
    return _blend(np.zeros_like(img), img, 1.0 + MAX_ENHANCE * s)


def _contrast(img, s):
    return _blend(np.full_like(img, img.mean()), img, 1.0 + MAX_ENHANCE * s)


_SMOOTH = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


def _sharpness(img, s):
    smooth = ndimage.convolve(img, _SMOOTH, mode="nearest")
    # border pixels keep their original value, as in PIL
    smooth[0, :], smooth[-1, :], smooth[:, 0], smooth[:, -1] = img[0, :], img[-1, :], img[:, 0], img[:, -1]
    return _blend(smooth, img, 1.0 + MAX_ENHANCE * s)


def _to_levels(img):
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _posterize(img, s):
    bits = 8 - int(round((8 - MIN_POSTERIZE_BITS) * abs(s)))
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return (_to_levels(img) & mask) / 255.0


def _solarize(img, s):
    threshold = 1.0 - abs(s)
    return np.where(img > threshold, 1.0 - img, img)


def _autocontrast(img, s):
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return img.copy()
    return (img - lo) / (hi - lo)


def _equalize(img, s):
    levels = _to_levels(img)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    total = cdf[-1]
    if total == cdf_min:
        return img.copy()
    lut = (cdf - cdf_min) / (total - cdf_min)
    return np.clip(lut, 0.0, 1.0)[levels]


_OPS = {
    "identity": lambda img, s: img.copy(),
    "rotate": _rotate,
    "shear-x": _shear_x,
    "shear-y": _shear_y,
    "translate-x": _translate_x,
    "translate-y": _translate_y,
    "brightness": _brightness,
    "contrast": _contrast,
    "sharpness": _sharpness,
    "posterize": _posterize,
    "solarize": _solarize,
    "autocontrast": _autocontrast,
    "equalize": _equalize,
}


def apply_op(img: np.ndarray, op: AugmentOp) -> np.ndarray:
    out = _OPS[op.kind](as_image(img), op.strength)
    return np.clip(out, 0.0, 1.0)


def sample_op(rng: np.random.Generator) -> AugmentOp:
    kind = KINDS[rng.integers(len(KINDS))]
    magnitude_bin = int(rng.integers(N_BINS))
    sign = 1 if rng.random() < 0.5 else -1
    return AugmentOp(kind, magnitude_bin, sign)


def trivial_augment(img: np.ndarray, rng: np.random.Generator, op: AugmentOp | None = None) -> np.ndarray:
    """Apply one uniformly sampled op; ``op`` forces a specific one.

    The rng is advanced identically whether or not ``op`` is forced.
    """
    sampled = sample_op(rng)
    return apply_op(img, op or sampled)


def hflip(img: np.ndarray) -> np.ndarray:
    return as_image(img)[:, ::-1].copy()


def random_hflip(img: np.ndarray, rng: np.random.Generator, flip: bool | None = None) -> np.ndarray:
    draw = rng.random() < 0.5
    if flip is None:
        flip = draw
    return hflip(img) if flip else as_image(img).copy()


def augment_pipeline(img: np.ndarray, rng: np.random.Generator, op: AugmentOp | None = None,
                     flip: bool | None = None) -> np.ndarray:
    return random_hflip(trivial_augment(img, rng, op), rng, flip)
