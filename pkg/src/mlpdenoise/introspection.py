"""Looking inside trained denoisers.

Hidden layers are indexed from 0 (the layer fed by the input). A hidden
unit's *feature detector* is its row in the first weight matrix, shaped like
an input patch; its *feature generator* is its column in the last weight
matrix, shaped like an output patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mlp import Mlp, forward, forward_from
from .numerics import singular_values
from .patches import PatchGeometry, denoise_image, gather_patches, normalize, psnr

ENTROPY_EDGES = (-1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass
class ActivationSample:
    layer: int
    pre: np.ndarray   # units x samples
    post: np.ndarray  # units x samples


@dataclass
class UnitStats:
    unit: int
    mean: float
    variance: float
    entropy_bits: float


def _check_hidden(mlp, layer):
    if not 0 <= layer < mlp.n_hidden:
        raise ValueError(f"layer {layer} is not a hidden layer (net has {mlp.n_hidden})")


def corpus_patch_source(images, edge, noise=None):
    """Source of random normalized ``edge``x``edge`` patches from a list of images.

    With ``noise`` (a NoiseSpec) each drawn patch is corrupted first.
    """
    from .noise import apply_noise
    images = [np.asarray(im, dtype=np.float64) for im in images if min(np.shape(im)) >= edge]
    if not images:
        raise ValueError(f"empty patch source: no image is at least {edge}x{edge}")

    def draw(n, rng):
        out = np.empty((n, edge, edge))
        idx = rng.integers(0, len(images), size=n)
        for i, j in enumerate(idx):
            im = images[j]
            r = int(rng.integers(0, im.shape[0] - edge + 1))
            c = int(rng.integers(0, im.shape[1] - edge + 1))
            out[i] = im[r:r + edge, c:c + edge]
        if noise is not None:
            out = apply_noise(out, noise, rng)
        return normalize(out.reshape(n, edge * edge))

    return draw


def collect_activations(mlp: Mlp, patch_source, layer, n, rng) -> ActivationSample:
    """Forward ``n`` patches and record pre/post activations of hidden ``layer``.

    ``patch_source`` is either an array of normalized input vectors (rows are
    drawn without replacement when possible) or a callable ``(n, rng) -> rows``.
    """
    _check_hidden(mlp, layer)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if callable(patch_source):
        x = np.asarray(patch_source(n, rng), dtype=np.float64)
    else:
        pool = np.asarray(patch_source, dtype=np.float64)
        if pool.ndim != 2 or len(pool) == 0:
            raise ValueError("empty patch source")
        idx = rng.choice(len(pool), size=n, replace=n > len(pool))
        x = pool[idx]
    _, trace = forward(mlp, x, want_trace=True)
    return ActivationSample(layer, trace.pre[layer].T.copy(), trace.post[layer].T.copy())


def unit_entropy(values, tol=1e-9):
    """Entropy in bits of a 4-bin histogram over [-1, 1]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("unit_entropy needs at least one value")
    if np.any(np.abs(v) > 1.0 + tol):
        raise ValueError(f"values must lie in [-1, 1], got range [{v.min()}, {v.max()}]")
    v = np.clip(v, -1.0, 1.0)
    counts = np.histogram(v, bins=ENTROPY_EDGES)[0]
    p = counts[counts > 0] / v.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def unit_stats(sample: ActivationSample):
    post = sample.post
    return [UnitStats(j, float(post[j].mean()), float(post[j].var()), unit_entropy(post[j]))
            for j in range(post.shape[0])]


def binarity_fraction(post, tau=0.8):
    """Fraction of activations with magnitude above ``tau``."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    post = np.asarray(post)
    return float(np.mean(np.abs(post) > tau))


def activation_histogram(post, bins=50):
    counts, edges = np.histogram(np.asarray(post).ravel(), bins=bins, range=(-1.0, 1.0))
    return counts, edges


def weight_spectrum(mlp: Mlp, layer):
    """Singular values of weight matrix ``layer`` (0 = first), descending."""
    if not 0 <= layer < mlp.n_layers:
        raise ValueError(f"layer {layer} out of range (net has {mlp.n_layers} weight matrices)")
    return singular_values(mlp.weights[layer])


def activation_covariance(sample: ActivationSample, m):
    """Covariance of the ``m`` units with highest post-activation variance.

    Returns ``(cov, units)`` with units ordered by decreasing variance.
    """
    post = sample.post
    if not 1 <= m <= post.shape[0]:
        raise ValueError(f"m must lie in [1, {post.shape[0]}], got {m}")
    var = post.var(axis=1)
    units = np.argsort(-var, kind="stable")[:m]
    sel = post[units]
    centered = sel - sel.mean(axis=1, keepdims=True)
    denom = max(post.shape[1] - 1, 1)
    cov = centered @ centered.T / denom
    cov = 0.5 * (cov + cov.T)
    return cov, units


def correlation_from_covariance(cov):
    d = np.sqrt(np.diag(cov))
    d = np.where(d > 0, d, 1.0)
    return cov / np.outer(d, d)


def _input_patch_shape(mlp):
    arch = mlp.arch
    if arch.bm is not None:
        return (arch.bm.k * arch.bm.patch_edge, arch.bm.patch_edge)
    return (arch.input_edge, arch.input_edge)


def feature_detectors(mlp: Mlp):
    shape = _input_patch_shape(mlp)
    return [row.reshape(shape).copy() for row in mlp.weights[0]]


def feature_generators(mlp: Mlp):
    e = mlp.arch.output_edge
    return [col.reshape(e, e).copy() for col in mlp.weights[-1].T]


def output_pattern(mlp: Mlp, layer, unit):
    """Output produced when hidden ``unit`` of ``layer`` is 1 and its neighbours 0."""
    _check_hidden(mlp, layer)
    size = mlp.weights[layer].shape[0]
    if not 0 <= unit < size:
        raise ValueError(f"unit {unit} out of range for layer {layer} with {size} units")
    h = np.zeros(size)
    h[unit] = 1.0
    return forward_from(mlp, layer, h)


def _unit_pre_and_grad(mlp, layer, unit, x):
    """Pre-activation of one hidden unit and its gradient with respect to the input."""
    hs = [x]
    h = x
    for l in range(layer):
        h = np.tanh(mlp.weights[l] @ h + mlp.biases[l])
        hs.append(h)
    w = mlp.weights[layer][unit]
    pre = float(w @ h + mlp.biases[layer][unit])
    g = w
    for l in range(layer - 1, -1, -1):
        g = (g * (1.0 - hs[l + 1] ** 2)) @ mlp.weights[l]
    return pre, g


@dataclass
class ActMaxResult:
    pattern: np.ndarray
    trajectory: np.ndarray
    objective: str = "pre_activation"
    meta: dict = field(default_factory=dict)


def activation_maximization(mlp: Mlp, layer, unit, rng, steps=1000, step_size=0.1):
    """Gradient ascent on a hidden unit's pre-activation.

    Starts from N(0, 1) pixels; after each step the patch is rescaled onto the
    ball of the initial norm whenever it leaves it. The trajectory holds the
    pre-activation before the first step and after every step.
    """
    _check_hidden(mlp, layer)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = rng.normal(0.0, 1.0, size=mlp.arch.input_dim)
    radius = float(np.linalg.norm(x))
    traj = np.empty(steps + 1)
    traj[0], g = _unit_pre_and_grad(mlp, layer, unit, x)
    for s in range(steps):
        x = x + step_size * g
        norm = np.linalg.norm(x)
        if norm > radius:
            x *= radius / norm
        traj[s + 1], g = _unit_pre_and_grad(mlp, layer, unit, x)
    return ActMaxResult(x, traj, meta={"layer": layer, "unit": unit, "steps": steps,
                                        "step_size": step_size, "radius": radius})


@dataclass
class PatchHit:
    activation: float
    image: int
    row: int
    col: int
    patch: np.ndarray


def max_activating_patches(mlp: Mlp, layer, unit, images, top=10, stride=1, batch_size=8192):
    """Exhaustive scan for the clean patches with largest |pre-activation|.

    Ties keep scan order (image, row, column).
    """
    _check_hidden(mlp, layer)
    if not images:
        raise ValueError("max_activating_patches needs a non-empty corpus")
    k = mlp.arch.input_edge
    acts, where = [], []
    for i, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        if img.shape[0] < k or img.shape[1] < k:
            continue
        rows = np.arange(0, img.shape[0] - k + 1, stride)
        cols = np.arange(0, img.shape[1] - k + 1, stride)
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        rr, cc = rr.ravel(), cc.ravel()
        norm_img = normalize(img)
        for s in range(0, len(rr), batch_size):
            x = gather_patches(norm_img, rr[s:s + batch_size], cc[s:s + batch_size], k)
            _, trace = forward(mlp, x, want_trace=True)
            acts.append(trace.pre[layer][:, unit])
            where.append(np.stack([np.full(len(x), i), rr[s:s + batch_size], cc[s:s + batch_size]], axis=1))
    if not acts:
        raise ValueError(f"no image in the corpus is at least {k}x{k}")
    acts = np.concatenate(acts)
    where = np.concatenate(where)
    order = np.argsort(-np.abs(acts), kind="stable")[:top]
    hits = []
    for j in order:
        i, r, c = (int(v) for v in where[j])
        hits.append(PatchHit(float(acts[j]), i, r, c, np.asarray(images[i], dtype=np.float64)[r:r + k, c:c + k].copy()))
    return hits


SATURATION_MODES = ("with_tanh", "bypass_tanh", "hard_threshold")


def saturation_experiment(mlp: Mlp, x, mode, tau=1.0, keep_tanh=True):
    """Output of a one-hidden-layer net with its nonlinearity altered.

    ``hard_threshold`` zeroes pre-activations with magnitude below ``tau`` and,
    unless ``keep_tanh`` is False, applies tanh afterwards.
    """
    if mlp.n_hidden != 1:
        raise ValueError(f"saturation experiment needs a single hidden layer, net has {mlp.n_hidden}")
    if mode not in SATURATION_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(SATURATION_MODES)}")
    x = np.asarray(x, dtype=np.float64)
    a = x @ mlp.weights[0].T + mlp.biases[0]
    if mode == "with_tanh":
        h = np.tanh(a)
    elif mode == "bypass_tanh":
        h = a
    else:
        a = np.where(np.abs(a) < tau, 0.0, a)
        h = np.tanh(a) if keep_tanh else a
    return h @ mlp.weights[1].T + mlp.biases[1]


@dataclass
class ImportanceResult:
    scores: np.ndarray   # mean PSNR over iterations where the detector was kept; nan if never kept
    counts: np.ndarray   # iterations each detector was kept
    baseline: float      # PSNR with every detector active
    iteration_psnr: np.ndarray


def ablate_detectors(mlp: Mlp, keep):
    """Copy of ``mlp`` whose first-layer rows outside ``keep`` are replaced by their own mean."""
    out = mlp.copy()
    W = out.weights[0]
    drop = np.ones(W.shape[0], dtype=bool)
    drop[np.asarray(keep, dtype=np.intp)] = False
    W[drop] = W[drop].mean(axis=1, keepdims=True)
    return out


def detector_importance(mlp: Mlp, clean_images, noisy_images, rng, subset_size=1500, iterations=10, stride=3):
    """Score detectors by the mean test PSNR of random subsets that contain them."""
    n_det = mlp.weights[0].shape[0]
    if iterations < 1:
        raise ValueError("detector_importance needs at least one iteration")
    if not 1 <= subset_size <= n_det:
        raise ValueError(f"subset_size must lie in [1, {n_det}], got {subset_size}")
    g = PatchGeometry.for_arch(mlp.arch, stride)

    def evaluate(net):
        return float(np.mean([psnr(c, denoise_image(net, n, g)) for c, n in zip(clean_images, noisy_images)]))

    baseline = evaluate(mlp)
    total = np.zeros(n_det)
    counts = np.zeros(n_det, dtype=np.int64)
    per_iter = np.empty(iterations)
    for it in range(iterations):
        keep = np.sort(rng.choice(n_det, size=subset_size, replace=False))
        score = baseline if subset_size == n_det else evaluate(ablate_detectors(mlp, keep))
        per_iter[it] = score
        total[keep] += score
        counts[keep] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(counts > 0, total / np.maximum(counts, 1), math.nan)
    return ImportanceResult(scores, counts, baseline, per_iter)
