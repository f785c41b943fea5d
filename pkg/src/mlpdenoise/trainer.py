"""Training loop: streamed noisy/clean patch pairs, SGD with a fine-tuning switch.

Every sample gets fresh noise, so no noisy patch is ever seen twice. Progress
is reported as training PSNR (patch level, over a rolling window of recent
samples) and test PSNR (whole-image denoising averaged over a test set).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import mlp as mlpmod
from .blockmatch import BmSpec, find_neighbors, assemble_bm_input
from .imageio import load_image_dir
from .mlp import Architecture, Mlp, NonFiniteError, backward, forward, init_mlp, parse_architecture, sgd_step
from .noise import NoiseSpec, apply_noise
from .numerics import RNG_ALGORITHM, child_rng
from .patches import PatchGeometry, denoise_image, normalize, psnr, psnr_from_normalized_mse

log = logging.getLogger(__name__)

LOG_HEADER = ("update", "train_psnr", "test_psnr", "lr", "wall_seconds")
CHECKPOINT_NAME = "model.mlpd"
LOG_NAME = "progress.csv"
META_NAME = "progress.meta"

# child stream indices derived from the run seed
_INIT, _SAMPLES, _TEST_NOISE = 0, 1, 2


class TrainingAborted(RuntimeError):
    def __init__(self, message, checkpoint=None, log=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.log = log or []


@dataclass
class TrainConfig:
    corpus_dir: str = ""
    test_dir: Optional[str] = None
    arch: Architecture = field(default_factory=lambda: parse_architecture("(13,2x511)"))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    eval_stride: int = 3
    lr_initial: float = 0.1
    lr_finetune: float = 0.001
    switch_update: Optional[int] = None
    batch: int = 1
    max_updates: int = 100_000
    report_every: int = 5_000
    train_window: int = 2_000_000
    seed: int = 0
    wall_clock: bool = True

    def __post_init__(self):
        if self.switch_update is None:
            self.switch_update = int(0.8 * self.max_updates)
        if self.lr_initial <= 0 or self.lr_finetune <= 0:
            raise ValueError("lr_initial and lr_finetune must be positive")
        if not 0 <= self.switch_update <= self.max_updates:
            raise ValueError(f"switch_update {self.switch_update} must lie in [0, max_updates={self.max_updates}]")
        if self.train_window < 1 or self.batch < 1 or self.report_every < 1 or self.max_updates < 0:
            raise ValueError("train_window, batch and report_every must be >= 1 and max_updates >= 0")

    @property
    def geometry(self):
        return PatchGeometry(self.arch.input_edge, self.arch.output_edge, self.eval_stride)

    def lr_at(self, update):
        return self.lr_initial if update < self.switch_update else self.lr_finetune


@dataclass
class ProgressRecord:
    update: int
    train_psnr: float
    test_psnr: float
    lr: float
    wall_seconds: float

    def row(self):
        return [str(self.update), f"{self.train_psnr:.6f}", f"{self.test_psnr:.6f}",
                f"{self.lr:g}", f"{self.wall_seconds:.3f}"]


@dataclass
class TrainResult:
    mlp: Mlp
    log: list


# -- config files --

_INT_KEYS = {"eval_stride", "switch_update", "batch", "max_updates", "report_every", "train_window", "seed",
             "quality"}
_FLOAT_KEYS = {"lr_initial", "lr_finetune", "sigma", "p", "sigma_s"}
_NOISE_KEYS = {"noise": "kind", "sigma": "sigma", "p": "p", "sigma_s": "sigma_s", "quality": "quality"}
CONFIG_KEYS = ({"corpus_dir", "test_dir", "arch", "wall_clock"} | _INT_KEYS | _FLOAT_KEYS | set(_NOISE_KEYS))


class ConfigError(ValueError):
    pass


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def build_config(values, base_dir=None):
    """Turn string key/values into a TrainConfig; relative paths resolve against ``base_dir``."""
    kw = {}
    noise_kw = {}
    for key, value in values.items():
        if value is None:
            continue
        try:
            if key in _INT_KEYS:
                value = int(value)
            elif key in _FLOAT_KEYS:
                value = float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as a number") from None
        if key in _NOISE_KEYS:
            noise_kw[_NOISE_KEYS[key]] = value
        elif key == "arch":
            kw["arch"] = value if isinstance(value, Architecture) else parse_architecture(value)
        elif key == "wall_clock":
            kw["wall_clock"] = str(value).lower() in ("1", "true", "yes", "on")
        elif key in ("corpus_dir", "test_dir"):
            p = Path(value)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            kw[key] = str(p)
        else:
            kw[key] = value
    if noise_kw:
        kw["noise"] = NoiseSpec(**noise_kw)
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=None):
    values = read_config_file(path)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values, base_dir=Path(path).parent)


# -- sample stream --

class SampleStream:
    """Infinite stream of (noisy input, clean target) pairs from a corpus.

    Each sample picks an image uniformly, a position uniformly, and corrupts
    the input region with freshly drawn noise. Pairs are generated in fixed
    size chunks, so the sequence depends only on the rng seed.
    """

    chunk = 256

    def __init__(self, images, arch: Architecture, noise: NoiseSpec, rng):
        images = [np.asarray(im, dtype=np.float64) for im in images]
        if not images:
            raise ValueError("empty corpus: no usable images")
        k = arch.input_edge
        usable = [im for im in images if im.shape[0] >= k and im.shape[1] >= k]
        if not usable:
            raise ValueError(f"empty corpus: no image is at least {k}x{k}")
        self.images = usable
        self.arch = arch
        self.noise = noise
        self.rng = rng
        self.geometry = PatchGeometry(arch.input_edge, arch.output_edge)
        # deterministic corruption does not depend on the position, so do it once
        self.jpeg = [apply_noise(im, noise, rng) for im in usable] if not noise.stochastic else None
        self._x = np.empty((0, arch.input_dim))
        self._t = np.empty((0, arch.output_dim))
        self._src = np.empty(0, dtype=np.intp)

    def _fill(self):
        n, rng = self.chunk, self.rng
        k, o, e = self.geometry.input_edge, self.geometry.offset, self.geometry.output_edge
        idx = rng.integers(0, len(self.images), size=n)
        clean = np.empty((n, k, k))
        noisy_src = np.empty((n, k, k)) if self.jpeg is not None else None
        for i, j in enumerate(idx):
            im = self.images[j]
            r = int(rng.integers(0, im.shape[0] - k + 1))
            c = int(rng.integers(0, im.shape[1] - k + 1))
            clean[i] = im[r:r + k, c:c + k]
            if noisy_src is not None:
                noisy_src[i] = self.jpeg[j][r:r + k, c:c + k]
        noisy = noisy_src if noisy_src is not None else apply_noise(clean, self.noise, rng)
        target = normalize(clean[:, o:o + e, o:o + e].reshape(n, e * e))
        if self.arch.bm is None:
            x = normalize(noisy.reshape(n, k * k))
        else:
            bm = self.arch.bm
            spec = BmSpec(bm.k, bm.patch_edge, bm.window_edge)
            x = np.empty((n, self.arch.input_dim))
            for i in range(n):
                pos = find_neighbors(noisy[i], (o, o), spec)
                x[i] = assemble_bm_input(noisy[i], pos, spec)
        self._x = np.concatenate([self._x, x])
        self._t = np.concatenate([self._t, target])
        self._src = np.concatenate([self._src, idx])

    def next_batch(self, n):
        while len(self._x) < n:
            self._fill()
        x, t = self._x[:n], self._t[:n]
        self._x, self._t, self._src = self._x[n:], self._t[n:], self._src[n:]
        return x, t

    def next_with_source(self, n):
        while len(self._x) < n:
            self._fill()
        src = self._src[:n]
        x, t = self.next_batch(n)
        return x, t, src

    def __iter__(self):
        while True:
            x, t = self.next_batch(1)
            yield x[0], t[0]


def sample_stream(config: TrainConfig, rng=None):
    images = [im for _, im in load_image_dir(config.corpus_dir)]
    rng = rng if rng is not None else child_rng(config.seed, _SAMPLES)
    return SampleStream(images, config.arch, config.noise, rng)


# -- evaluation --

def noisy_test_set(clean_images, noise: NoiseSpec, rng):
    return [apply_noise(im, noise, rng) for im in clean_images]


def test_psnr(mlp, clean_images, noisy_images, geometry):
    if not clean_images:
        return math.nan
    scores = [psnr(c, denoise_image(mlp, n, geometry)) for c, n in zip(clean_images, noisy_images)]
    return float(np.mean(scores))


def degradation_alarm(log, drop_db=1.0):
    """Positions in ``log`` where test PSNR falls more than ``drop_db`` below its running maximum.

    ``log`` holds ProgressRecords or plain test PSNR values.
    """
    values = [r.test_psnr if isinstance(r, ProgressRecord) else float(r) for r in log]
    flagged = []
    best = -math.inf
    for i, v in enumerate(values):
        if v < best - drop_db:
            flagged.append(i)
        best = max(best, v)
    return flagged


# -- progress files --

def write_meta(out_dir, config: TrainConfig):
    lines = [
        f"arch = {config.arch}",
        f"noise = {config.noise.describe()}",
        f"eval_stride = {config.eval_stride}",
        f"seed = {config.seed}",
        f"rng = {RNG_ALGORITHM}",
        f"lr_initial = {config.lr_initial:g}",
        f"lr_finetune = {config.lr_finetune:g}",
        f"switch_update = {config.switch_update}",
        f"batch = {config.batch}",
        f"train_window = {config.train_window}",
        "init = normalized-uniform",
    ]
    (Path(out_dir) / META_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_progress(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [ProgressRecord(int(r["update"]), float(r["train_psnr"]), float(r["test_psnr"]),
                           float(r["lr"]), float(r["wall_seconds"])) for r in rows]


def initial_net(config: TrainConfig):
    """The net a run with ``config`` starts from."""
    return init_mlp(config.arch, child_rng(config.seed, _INIT))


def train(config: TrainConfig, out_dir=None, images=None, test_images=None) -> TrainResult:
    """Run ``max_updates`` SGD updates, reporting every ``report_every`` updates.

    When ``out_dir`` is given the checkpoint and CSV log are rewritten at every
    report. ``images``/``test_images`` override the directories in ``config``.
    """
    if images is None:
        images = [im for _, im in load_image_dir(config.corpus_dir)]
    if test_images is None:
        test_images = [im for _, im in load_image_dir(config.test_dir)] if config.test_dir else []
    net = initial_net(config)
    stream = SampleStream(images, config.arch, config.noise, child_rng(config.seed, _SAMPLES))
    noisy_tests = noisy_test_set(test_images, config.noise, child_rng(config.seed, _TEST_NOISE))
    geometry = config.geometry

    ckpt_path = log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / CHECKPOINT_NAME
        write_meta(out_dir, config)
        log_file = open(out_dir / LOG_NAME, "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        log_file.flush()

    window = np.zeros(min(config.train_window, max(1, config.max_updates * config.batch)))
    seen = 0
    records = []
    start = time.perf_counter()
    last_good = None
    try:
        for u in range(config.max_updates):
            x, t = stream.next_batch(config.batch)
            lr = config.lr_at(u)
            # divergence is caught by the finiteness checks below
            with np.errstate(over="ignore", invalid="ignore"):
                y, trace = forward(net, x, want_trace=True)
                grads, loss = backward(net, trace, t)
            if not math.isfinite(loss):
                raise TrainingAborted(f"non-finite loss at update {u}", last_good, records)
            try:
                sgd_step(net, grads, lr)
            except NonFiniteError as exc:
                raise TrainingAborted(str(exc), last_good, records) from None
            net.updates += 1
            per_sample = np.mean((y - t) ** 2, axis=1)
            for v in per_sample:
                window[seen % len(window)] = v
                seen += 1
            if (u + 1) % config.report_every == 0:
                filled = window[:min(seen, len(window))]
                train_mse = float(np.mean(filled))
                if not math.isfinite(train_mse):
                    raise TrainingAborted(f"non-finite training loss at update {u + 1}", last_good, records)
                rec = ProgressRecord(
                    update=u + 1,
                    train_psnr=psnr_from_normalized_mse(train_mse),
                    test_psnr=test_psnr(net, test_images, noisy_tests, geometry),
                    lr=lr,
                    wall_seconds=time.perf_counter() - start if config.wall_clock else 0.0,
                )
                records.append(rec)
                log.info("update %d train %.3f dB test %.3f dB lr %g", rec.update, rec.train_psnr,
                         rec.test_psnr, rec.lr)
                if out_dir is not None:
                    mlpmod.save(net, ckpt_path)
                    last_good = ckpt_path
                    writer.writerow(rec.row())
                    log_file.flush()
        if out_dir is not None and (last_good is None or config.max_updates % config.report_every):
            mlpmod.save(net, ckpt_path)
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(net, records)


def replace(config: TrainConfig, **changes):
    return dataclasses.replace(config, **changes)
