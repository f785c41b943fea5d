"""8-bit grayscale image files (binary PGM and PNG) and patch montages."""

import os
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


def read_image(path):
    """Read an image as float64 pixel values; colour inputs are reduced to BT.601 luma."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "1", "I", "I;16", "F"):
            if im.mode in ("P", "1"):
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)
            if arr.ndim == 2:
                return arr
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)


def write_image(path, img):
    """Clip to [0, 255], round, and write as PGM (P5) or PNG depending on suffix."""
    path = Path(path)
    data = to_uint8(img)
    if path.suffix.lower() == ".pgm":
        h, w = data.shape
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(data.tobytes())
    else:
        Image.fromarray(data, mode="L").save(path)


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image_dir(directory):
    """``[(name, image)]`` for every image file in ``directory``, sorted by name."""
    return [(p.name, read_image(p)) for p in list_images(directory)]


def scale_patch(patch):
    """Independent min/max scaling to [0, 255]; constant patches map to 128."""
    patch = np.asarray(patch, dtype=np.float64)
    lo, hi = patch.min(), patch.max()
    if hi == lo:
        return np.full(patch.shape, 128.0)
    return (patch - lo) * (255.0 / (hi - lo))


def montage(patches, cols, pad=1, fill=128):
    """Grid of per-patch scaled tiles separated by ``pad`` pixels of ``fill``."""
    patches = [np.asarray(p, dtype=np.float64) for p in patches]
    if not patches:
        raise ValueError("montage needs at least one patch")
    ph, pw = patches[0].shape
    cols = max(1, min(cols, len(patches)))
    rows = -(-len(patches) // cols)
    H = rows * ph + (rows - 1) * pad
    W = cols * pw + (cols - 1) * pad
    out = np.full((H, W), float(fill))
    for i, p in enumerate(patches):
        if p.shape != (ph, pw):
            raise ValueError(f"patch {i} has shape {p.shape}, expected {(ph, pw)}")
        r, c = divmod(i, cols)
        y, x = r * (ph + pad), c * (pw + pad)
        out[y:y + ph, x:x + pw] = scale_patch(p)
    return to_uint8(out)


def emit_montage(patches, cols, path, pad=1):
    grid = montage(patches, cols, pad)
    write_image(path, grid)
    return grid


def ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
