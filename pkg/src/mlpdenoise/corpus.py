"""Small natural-image corpus for desk-scale experiments.

Crops of the photographs bundled with scikit-image (no download needed).
Training and test crops come from disjoint source photographs.
"""

from pathlib import Path

import numpy as np

from .imageio import write_image
from .numerics import make_rng

TRAIN_SOURCES = ("astronaut", "brick", "chelsea", "coins", "grass", "gravel", "moon",
                 "stereo_motorcycle", "rocket", "page", "immunohistochemistry")
TEST_SOURCES = ("camera", "cell", "coffee", "text", "clock")


def _gray(name):
    import skimage.data

    img = getattr(skimage.data, name)()
    if name == "stereo_motorcycle":
        img = img[0]
    img = np.asarray(img)
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64)
        return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return img.astype(np.float64)


def _crops(sources, count, size, rng):
    grays = [_gray(s) for s in sources]
    out = []
    for i in range(count):
        g = grays[i % len(grays)]
        r = int(rng.integers(0, g.shape[0] - size + 1))
        c = int(rng.integers(0, g.shape[1] - size + 1))
        out.append(np.rint(g[r:r + size, c:c + size]))
    return out


def build_desk_corpus(root, n_train=24, n_test=10, train_size=96, test_size=64, seed=7):
    """Write ``root/train`` and ``root/test`` PGM crops; returns the two directories."""
    root = Path(root)
    rng = make_rng(seed)
    dirs = []
    for name, sources, count, size in (("train", TRAIN_SOURCES, n_train, train_size),
                                       ("test", TEST_SOURCES, n_test, test_size)):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(_crops(sources, count, size, rng)):
            write_image(d / f"{name}_{i:03d}.pgm", img)
        dirs.append(d)
    return tuple(dirs)
