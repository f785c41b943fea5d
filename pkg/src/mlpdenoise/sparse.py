"""The last weight layer as a dictionary of output-patch atoms.

Two uses: approximating clean patches with codes confined to [-1, 1] (the
range a tanh layer can produce), solved by projected gradient; and sparse
coding of noisy patches by orthogonal matching pursuit.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .mlp import CheckpointError, Mlp, _Reader, read_layer, write_layer
from .numerics import make_rng, power_iteration
from .patches import PatchGeometry, aggregate, gather_patches, mirror_pad, normalize, psnr


@dataclass
class Dictionary:
    atoms: np.ndarray                 # output_dim x n_atoms
    bias: np.ndarray                  # subtracted from targets before coding
    source: str = "external"
    normalized: bool = False
    column_norms: np.ndarray = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.bias is None:
            self.bias = np.zeros(self.atoms.shape[0])
        if self.column_norms is None:
            self.column_norms = np.linalg.norm(self.atoms, axis=0)

    @property
    def dim(self):
        return self.atoms.shape[0]

    @property
    def n_atoms(self):
        return self.atoms.shape[1]

    @property
    def edge(self):
        e = math.isqrt(self.dim)
        if e * e != self.dim:
            raise ValueError(f"dictionary dimension {self.dim} is not a square patch")
        return e

    def normalize_columns(self):
        """Copy with unit-norm atoms (zero atoms are left at zero)."""
        norms = np.linalg.norm(self.atoms, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        return Dictionary(self.atoms / safe, self.bias.copy(), self.source, True, norms)


def extract_dictionary(mlp: Mlp) -> Dictionary:
    return Dictionary(mlp.weights[-1].copy(), mlp.biases[-1].copy(), "mlp_last_layer")


def dct_dictionary(edge, atoms_per_dim):
    """Overcomplete separable DCT dictionary with unit-norm atoms (constant atom first)."""
    k = np.arange(atoms_per_dim)
    n = np.arange(edge)
    D1 = np.cos(np.outer(n, k) * np.pi / atoms_per_dim)
    D1[:, 1:] -= D1[:, 1:].mean(axis=0)
    D1 /= np.linalg.norm(D1, axis=0)
    D = np.kron(D1, D1)
    return Dictionary(D, np.zeros(edge * edge), "external", True)


def save_dictionary(D: Dictionary, path):
    """Same binary layout as one checkpoint layer: rows, cols, atoms row-major, bias."""
    buf = io.BytesIO()
    write_layer(buf, D.atoms, D.bias)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_dictionary(path) -> Dictionary:
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    atoms, bias = read_layer(r, "dictionary")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after dictionary bias")
    return Dictionary(atoms, bias, "external")


# -- box-constrained approximation --

@dataclass
class BoxLsResult:
    alpha: np.ndarray
    residual: float               # ||x - D alpha||
    objective: list = field(default_factory=list)   # ||x - D alpha||^2 per iteration
    iterations: int = 0


def lipschitz(D: Dictionary, rng=None):
    """Largest eigenvalue of D^T D by power iteration (on the smaller Gram matrix)."""
    A = D.atoms
    G = A @ A.T if A.shape[0] <= A.shape[1] else A.T @ A
    return power_iteration(G, rng if rng is not None else make_rng(0))


def box_ls_batch(X, D: Dictionary, max_iters=500, tol=1e-10, L=None, alpha0=None):
    """Projected gradient on ||x - D alpha||^2 with alpha clamped to [-1, 1], many targets at once.

    ``X`` holds one target per column. Returns ``(alpha, objective_history)``
    where the history has one row per iteration (objective of every column).
    Stops when no column's objective decreases by ``tol`` or more.
    """
    A = D.atoms
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != A.shape[0]:
        raise ValueError(f"targets have dimension {X.shape[0]}, dictionary has {A.shape[0]}")
    L = lipschitz(D) if L is None else L
    step = 1.0 / L if L > 0 else 0.0
    alpha = np.zeros((A.shape[1], X.shape[1])) if alpha0 is None else np.clip(alpha0, -1, 1)
    R = X - A @ alpha
    obj = np.sum(R * R, axis=0)
    history = [obj]
    for _ in range(max_iters):
        alpha = np.clip(alpha + step * (A.T @ R), -1.0, 1.0)
        R = X - A @ alpha
        new = np.sum(R * R, axis=0)
        history.append(new)
        decrease = obj - new
        obj = new
        if np.all(decrease < tol):
            break
    return alpha, np.array(history)


def box_ls_approx(x, D: Dictionary, max_iters=500, tol=1e-10, L=None) -> BoxLsResult:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (D.dim,):
        raise ValueError(f"target has shape {x.shape}, dictionary expects ({D.dim},)")
    alpha, hist = box_ls_batch(x[:, None], D, max_iters, tol, L)
    objective = [float(v) for v in hist[:, 0]]
    return BoxLsResult(alpha[:, 0], math.sqrt(objective[-1]), objective, len(objective) - 1)


def _check_geometry(D, geometry):
    if geometry.output_edge != D.edge:
        raise ValueError(f"geometry output edge {geometry.output_edge} does not match dictionary patch edge {D.edge}")


def approx_image(clean, D: Dictionary, geometry: PatchGeometry, max_iters=500, tol=1e-10, batch_size=4096):
    """Patch-wise box-constrained approximation of a clean image with overlap averaging.

    Returns ``(approximation, psnr)``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    _check_geometry(D, geometry)
    e = geometry.output_edge
    g = PatchGeometry(e, e, geometry.stride)
    padded = normalize(mirror_pad(clean, e - 1))
    L = lipschitz(D)

    def predict(r, c):
        X = gather_patches(padded, r, c, e).T - D.bias[:, None]
        alpha, _ = box_ls_batch(X, D, max_iters, tol, L)
        return (D.atoms @ alpha + D.bias[:, None]).T

    approx = aggregate(clean.shape, g, predict, batch_size)
    return approx, psnr(clean, approx)


# -- orthogonal matching pursuit --

@dataclass
class SparseCode:
    support: list
    coefficients: np.ndarray
    residual_norm: float
    stop_reason: str = "residual"
    residual_history: list = field(default_factory=list)

    def dense(self, n_atoms):
        a = np.zeros(n_atoms)
        a[self.support] = self.coefficients
        return a


_ROUNDOFF = 64 * np.finfo(np.float64).eps


def omp(y, D: Dictionary, epsilon, max_atoms=None) -> SparseCode:
    """Greedy sparse code with ||y - D alpha||^2 <= epsilon.

    Atoms must have unit norm. Each step adds the atom most correlated with the
    residual (lowest index on ties) and re-fits all coefficients by least
    squares. ``stop_reason`` is ``residual``, ``max_atoms`` or ``stalled``.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    A = D.atoms
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.shape[0],):
        raise ValueError(f"signal has shape {y.shape}, dictionary expects ({A.shape[0]},)")
    limit = min(A.shape[0], A.shape[1]) if max_atoms is None else min(max_atoms, A.shape[0], A.shape[1])
    support = []
    coef = np.zeros(0)
    r = y.copy()
    res2 = float(r @ r)
    history = [math.sqrt(res2)]
    reason = "residual"
    # a residual at roundoff level counts as an exact fit, so epsilon = 0 terminates
    target = max(epsilon, (_ROUNDOFF * math.sqrt(res2)) ** 2)
    while res2 > target:
        if len(support) >= limit:
            reason = "max_atoms"
            break
        corr = np.abs(A.T @ r)
        if support:
            corr[support] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 1e-14 * math.sqrt(res2):
            reason = "stalled"
            break
        trial = support + [j]
        sub = A[:, trial]
        c, *_ = np.linalg.lstsq(sub, y, rcond=None)
        r_new = y - sub @ c
        new2 = float(r_new @ r_new)
        if new2 >= res2:
            reason = "stalled"
            break
        support, coef, r, res2 = trial, c, r_new, new2
        history.append(math.sqrt(res2))
    return SparseCode(support, coef, math.sqrt(res2), reason, history)


def omp_epsilon(n, C, sigma, normalized=True):
    """KSVD-style error target n (C sigma)^2, sigma given in 8-bit units."""
    s = sigma / 255.0 if normalized else sigma
    return n * (C * s) ** 2


def omp_denoise_image(noisy, D: Dictionary, geometry: PatchGeometry, sigma, C=1.05, max_atoms=None,
                      batch_size=2048):
    """Sliding-window OMP denoising with overlap averaging.

    ``D`` should have unit-norm atoms; the bias is removed before coding and
    added back to the reconstruction.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    noisy = np.asarray(noisy, dtype=np.float64)
    _check_geometry(D, geometry)
    e = geometry.output_edge
    g = PatchGeometry(e, e, geometry.stride)
    padded = normalize(mirror_pad(noisy, e - 1))
    eps = omp_epsilon(D.dim, C, sigma)

    def predict(r, c):
        Y = gather_patches(padded, r, c, e) - D.bias
        out = np.empty_like(Y)
        for i, y in enumerate(Y):
            code = omp(y, D, eps, max_atoms)
            out[i] = D.atoms[:, code.support] @ code.coefficients + D.bias
        return out

    return aggregate(noisy.shape, g, predict, batch_size)
