"""Dense linear-algebra kernels and seeded random number generation.

Matrices are plain ``float64`` numpy arrays. Random streams come from numpy's
PCG64 bit generator; child streams are derived from ``(seed, index)`` pairs via
``SeedSequence`` so that independent consumers never share state.
"""

import numpy as np

RNG_ALGORITHM = "PCG64"


def make_rng(seed):
    """Return a fresh generator for ``seed``. Equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_rng(seed, index):
    """Independent generator derived from a parent seed and a child index."""
    ss = np.random.SeedSequence([int(seed), int(index)])
    return np.random.Generator(np.random.PCG64(ss))


def gaussian(rng, n, mean=0.0, std=1.0):
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    if std == 0:
        return np.full(n, float(mean))
    return rng.normal(mean, std, size=n)


def mat_vec_mul(A, x):
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.ndim != 2 or x.ndim != 1:
        raise ValueError(f"expected matrix and vector, got shapes {A.shape} and {x.shape}")
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix has {A.shape[1]} columns, vector has length {x.shape[0]}")
    return A @ x


def _round_robin(n):
    """Yield rounds of disjoint column pairs covering every pair once (circle method)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    m = len(players)
    for _ in range(m - 1):
        left = []
        right = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a >= 0 and b >= 0:
                left.append(min(a, b))
                right.append(max(a, b))
        yield np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)
        players = [players[0], players[-1]] + players[1:-1]


def singular_values(A, tol=1e-12, max_sweeps=60):
    """Singular values of ``A`` in descending order, by one-sided Jacobi.

    Columns are orthogonalized pairwise with plane rotations until every pair
    has relative inner product below ``tol``; the singular values are then the
    column norms. Disjoint pairs are rotated together, one round-robin round at
    a time.
    """
    A = np.array(A, dtype=np.float64, copy=True)
    if A.ndim != 2 or min(A.shape) < 1:
        raise ValueError(f"expected a non-empty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("singular_values: matrix contains non-finite entries")
    U = A if A.shape[0] >= A.shape[1] else A.T.copy()
    n = U.shape[1]
    rounds = list(_round_robin(n)) if n > 1 else []
    for _ in range(max_sweeps):
        worst = 0.0
        for p, q in rounds:
            up, uq = U[:, p], U[:, q]
            alpha = np.einsum("ij,ij->j", up, up)
            beta = np.einsum("ij,ij->j", uq, uq)
            gamma = np.einsum("ij,ij->j", up, uq)
            scale = np.sqrt(alpha * beta)
            active = (scale > 0) & (np.abs(gamma) > tol * scale)
            if not np.any(active):
                continue
            worst = max(worst, float(np.max(np.abs(gamma[active]) / scale[active])))
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            up, uq = U[:, p], U[:, q]
            U[:, p] = c * up - s * uq
            U[:, q] = s * up + c * uq
        if worst <= tol:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", U, U))
    return np.sort(sv)[::-1]


def power_iteration(M, rng=None, tol=1e-12, max_iters=10_000):
    """Largest eigenvalue of a symmetric positive semi-definite matrix."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    rng = rng if rng is not None else make_rng(0)
    v = rng.normal(size=n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - lam) <= tol * norm:
            lam = norm
            break
        lam = norm
    return float(v @ (M @ v))
