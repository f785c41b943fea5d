"""Patch extraction, sliding-window denoising and PSNR.

Images are 2-D float64 arrays in 8-bit pixel units (values may leave [0, 255]
after noise). Nets see normalized values ``(v - 127.5) / 255``.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .mlp import forward


def normalize(v):
    return (np.asarray(v, dtype=np.float64) - 127.5) / 255.0


def denormalize(n):
    return np.asarray(n, dtype=np.float64) * 255.0 + 127.5


@dataclass(frozen=True)
class PatchGeometry:
    input_edge: int
    output_edge: int
    stride: int = 1

    def __post_init__(self):
        if self.output_edge < 1 or self.input_edge < self.output_edge:
            raise ValueError(f"need input_edge >= output_edge >= 1, got {self.input_edge}/{self.output_edge}")
        if (self.input_edge - self.output_edge) % 2:
            raise ValueError(f"input_edge - output_edge must be even, got {self.input_edge}-{self.output_edge}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def offset(self):
        """Offset of the output patch inside the input patch."""
        return (self.input_edge - self.output_edge) // 2

    @classmethod
    def for_arch(cls, arch, stride=1):
        return cls(arch.input_edge, arch.output_edge, stride)


def gather_patches(img, rows, cols, edge):
    """Patches with top-left corners ``(rows[i], cols[i])``, flattened to rows."""
    view = sliding_window_view(img, (edge, edge))
    return view[np.asarray(rows), np.asarray(cols)].reshape(len(rows), edge * edge)


def extract_pairs(clean, noisy, g: PatchGeometry, rng, n=None):
    """Yield ``(noisy input patch, clean center target)`` pairs, both normalized.

    Positions are uniform over all valid input patch locations. Runs forever
    unless ``n`` is given.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ValueError(f"clean {clean.shape} and noisy {noisy.shape} differ in shape")
    h, w = clean.shape
    if h < g.input_edge or w < g.input_edge:
        raise ValueError(f"image {h}x{w} smaller than input patch {g.input_edge}")
    o, e, k = g.offset, g.output_edge, g.input_edge
    count = 0
    while n is None or count < n:
        r = int(rng.integers(0, h - k + 1))
        c = int(rng.integers(0, w - k + 1))
        x = noisy[r:r + k, c:c + k].ravel()
        t = clean[r + o:r + o + e, c + o:c + o + e].ravel()
        yield normalize(x), normalize(t)
        count += 1


def _positions(length, lo, hi, stride):
    pos = list(range(lo, hi + 1, stride))
    if pos[-1] != hi:
        pos.append(hi)
    return np.array(pos, dtype=np.intp)


def mirror_pad(img, pad):
    return np.pad(img, pad, mode="symmetric")


def aggregate(shape, g: PatchGeometry, predict, batch_size=4096):
    """Average overlapping output patches over an image of ``shape``.

    ``predict(rows, cols)`` receives output-patch corners in the padded frame
    (padding ``offset + output_edge - 1`` on every side) and returns normalized
    predictions, one flattened patch per row.
    """
    h, w = shape
    o, e = g.offset, g.output_edge
    if g.stride > e:
        raise ValueError(f"stride {g.stride} exceeds output edge {e}; some pixels would get no prediction")
    pad = o + e - 1
    hp, wp = h + 2 * pad, w + 2 * pad
    rows = _positions(hp, o, hp - o - e, g.stride)
    cols = _positions(wp, o, wp - o - e, g.stride)
    acc = np.zeros((hp, wp))
    cnt = np.zeros((hp, wp))
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    for start in range(0, len(rr), batch_size):
        r = rr[start:start + batch_size]
        c = cc[start:start + batch_size]
        pred = np.asarray(predict(r, c)).reshape(len(r), e, e)
        # corners are distinct, so each (di, dj) slice touches distinct pixels;
        # a running mean keeps identical predictions exact
        for di in range(e):
            for dj in range(e):
                idx = (r + di, c + dj)
                cnt[idx] += 1.0
                acc[idx] += (pred[:, di, dj] - acc[idx]) / cnt[idx]
    return denormalize(acc[pad:pad + h, pad:pad + w])


def denoise_image(mlp, noisy, g: PatchGeometry, batch_size=4096):
    """Sliding-window denoising with overlap averaging and mirror-padded borders."""
    noisy = np.asarray(noisy, dtype=np.float64)
    arch = mlp.arch
    if (g.input_edge, g.output_edge) != (arch.input_edge, arch.output_edge):
        raise ValueError(f"geometry {g.input_edge}/{g.output_edge} does not match net {arch} "
                         f"({arch.input_edge}/{arch.output_edge})")
    o, e = g.offset, g.output_edge
    padded = normalize(mirror_pad(noisy, o + e - 1))
    if arch.bm is not None:
        from .blockmatch import BmSpec, bm_inputs
        spec = BmSpec(arch.bm.k, arch.bm.patch_edge, arch.bm.window_edge)

        def predict(r, c):
            return forward(mlp, bm_inputs(padded, r, c, spec))
    else:
        def predict(r, c):
            return forward(mlp, gather_patches(padded, r - o, c - o, g.input_edge))
    return aggregate(noisy.shape, g, predict, batch_size)


def psnr(clean, estimate):
    """10 log10(255^2 / MSE); ``math.inf`` for identical images."""
    clean = np.asarray(clean, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if clean.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {estimate.shape}")
    mse = float(np.mean((clean - estimate) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def psnr_from_normalized_mse(mse):
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def format_psnr(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"
