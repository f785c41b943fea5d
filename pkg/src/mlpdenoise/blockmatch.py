"""Block matching: the reference patch plus its k-1 nearest neighbours in a search window."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .patches import normalize


@dataclass(frozen=True)
class BmSpec:
    k: int
    patch_edge: int
    window_edge: int
    candidate_stride: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.window_edge < self.patch_edge or self.patch_edge < 1:
            raise ValueError(f"window_edge {self.window_edge} must be >= patch_edge {self.patch_edge} >= 1")
        if (self.window_edge - self.patch_edge) % 2:
            raise ValueError("window_edge - patch_edge must be even so the window centers on the reference")
        if self.candidate_stride < 1:
            raise ValueError(f"candidate_stride must be >= 1, got {self.candidate_stride}")
        if self.k > len(self.candidate_offsets()):
            raise ValueError(f"k={self.k} exceeds the {len(self.candidate_offsets())} candidate positions")

    @property
    def margin(self):
        return (self.window_edge - self.patch_edge) // 2

    def candidate_offsets(self):
        """Candidate corners relative to the window corner, in row-major scan order."""
        steps = np.arange(0, self.window_edge - self.patch_edge + 1, self.candidate_stride)
        rr, cc = np.meshgrid(steps, steps, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _ranked(noisy, r, c, spec):
    """Neighbour corners (excluding the reference) and distances, best first."""
    m, e = spec.margin, spec.patch_edge
    wr, wc = r - m, c - m
    if wr < 0 or wc < 0 or wr + spec.window_edge > noisy.shape[0] or wc + spec.window_edge > noisy.shape[1]:
        raise ValueError(f"search window at ({wr}, {wc}) of size {spec.window_edge} does not fit image {noisy.shape}")
    offs = spec.candidate_offsets()
    offs = offs[~((offs[:, 0] == m) & (offs[:, 1] == m))]
    if spec.k - 1 > len(offs):
        raise ValueError(f"k={spec.k} exceeds the {len(offs) + 1} candidate positions")
    window = noisy[wr:wr + spec.window_edge, wc:wc + spec.window_edge]
    cands = sliding_window_view(window, (e, e))[offs[:, 0], offs[:, 1]]
    ref = noisy[r:r + e, c:c + e]
    dist = np.sum((cands - ref) ** 2, axis=(1, 2))
    order = np.argsort(dist, kind="stable")[:spec.k - 1]
    return offs[order] + (wr, wc), dist[order]


def find_neighbors(noisy, ref_pos, spec: BmSpec):
    """Corners of the reference patch followed by its k-1 nearest neighbours.

    ``ref_pos`` is the reference patch's top-left corner; the window is centered
    on the reference patch. Ties keep row-major scan order.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    r, c = int(ref_pos[0]), int(ref_pos[1])
    corners, _ = _ranked(noisy, r, c, spec)
    return [(r, c)] + [(int(a), int(b)) for a, b in corners]


def neighbor_distances(noisy, ref_pos, spec: BmSpec):
    noisy = np.asarray(noisy, dtype=np.float64)
    _, dist = _ranked(noisy, int(ref_pos[0]), int(ref_pos[1]), spec)
    return dist


def assemble_bm_input(noisy, positions, spec: BmSpec, normalized=False):
    """Concatenate the patches at ``positions`` in rank order, normalized."""
    noisy = np.asarray(noisy, dtype=np.float64)
    e = spec.patch_edge
    parts = [noisy[r:r + e, c:c + e].ravel() for r, c in positions]
    out = np.concatenate(parts)
    return out if normalized else normalize(out)


def bm_inputs(padded_normalized, rows, cols, spec: BmSpec):
    """Block-matching net inputs for many reference corners of an already normalized image."""
    out = np.empty((len(rows), spec.k * spec.patch_edge ** 2))
    for i, (r, c) in enumerate(zip(rows, cols)):
        pos = find_neighbors(padded_normalized, (r, c), spec)
        out[i] = assemble_bm_input(padded_normalized, pos, spec, normalized=True)
    return out
