"""Noise models: additive white Gaussian, salt-and-pepper, horizontal stripes, JPEG blocking.

All parameters are in 8-bit pixel units. ``apply_noise`` accepts a single image
or a stack of images (the last two axes are rows and columns) and returns real
values without clipping.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn

KINDS = ("awg", "salt_pepper", "stripe", "jpeg_block")

# Standard JPEG luminance quantization table (quality 50).
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "awg"
    sigma: float = 25.0
    p: float = 0.1
    sigma_s: float = 25.0
    quality: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.sigma_s < 0:
            raise ValueError(f"sigma_s must be >= 0, got {self.sigma_s}")
        if not 0 <= self.p <= 1:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality must lie in [1, 100], got {self.quality}")

    @property
    def stochastic(self):
        return self.kind != "jpeg_block"

    def describe(self):
        value = {"awg": f"sigma={self.sigma:g}", "salt_pepper": f"p={self.p:g}",
                 "stripe": f"sigma_s={self.sigma_s:g}", "jpeg_block": f"quality={self.quality}"}[self.kind]
        return f"{self.kind}({value})"


def jpeg_quant_table(quality):
    """IJG scaling of the luminance table."""
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    q = np.floor((JPEG_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(q, 1, 255)


def jpeg_block(img, quality):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    ph, pw = -h % 8, -w % 8
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    x = np.pad(img, pad, mode="edge") - 128.0
    H, W = x.shape[-2:]
    lead = x.shape[:-2]
    blocks = x.reshape(*lead, H // 8, 8, W // 8, 8).swapaxes(-3, -2)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    q = jpeg_quant_table(quality)
    coef = np.round(coef / q) * q
    out = idctn(coef, axes=(-2, -1), norm="ortho").swapaxes(-3, -2).reshape(x.shape) + 128.0
    return out[..., :h, :w]


def apply_noise(img, spec: NoiseSpec, rng):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 2 or img.size == 0:
        raise ValueError(f"expected a non-empty image, got shape {img.shape}")
    if spec.kind == "awg":
        if spec.sigma == 0:
            return img.copy()
        return img + rng.normal(0.0, spec.sigma, size=img.shape)
    if spec.kind == "salt_pepper":
        hit = rng.random(img.shape) < spec.p
        salt = rng.random(img.shape) < 0.5
        return np.where(hit, np.where(salt, 255.0, 0.0), img)
    if spec.kind == "stripe":
        if spec.sigma_s == 0:
            return img.copy()
        offsets = rng.normal(0.0, spec.sigma_s, size=img.shape[:-1] + (1,))
        return img + offsets
    return jpeg_block(img, spec.quality)
