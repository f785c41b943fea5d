"""Multi-layer perceptron with tanh hidden layers and a linear output layer.

Architectures are written the compact way, e.g. ``(39,4x2047,17)`` for a net
mapping 39x39 input patches through four hidden layers of 2047 units to 17x17
output patches, ``(13,2x511)`` when input and output patches have the same
size, and ``(39,14x13,4x2047,13)`` for a block-matching net that takes 14
patches of 13x13 found in a 39x39 search window.
"""

from __future__ import annotations

import io
import os
import re
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import RNG_ALGORITHM

MAGIC = b"MLPD"
VERSION = 1


class ArchitectureParseError(ValueError):
    def __init__(self, text, offset, reason):
        self.text = text
        self.offset = offset
        super().__init__(f"cannot parse architecture {text!r} at offset {offset}: {reason}")


class CheckpointError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class BmShape:
    k: int
    patch_edge: int
    window_edge: int


@dataclass(frozen=True)
class Architecture:
    input_edge: int
    hidden_sizes: tuple
    output_edge: int
    bm: Optional[BmShape] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError(f"hidden sizes must be non-empty and positive, got {self.hidden_sizes}")
        if not self.input_edge >= self.output_edge >= 1:
            raise ValueError(
                f"need input_edge >= output_edge >= 1, got {self.input_edge} and {self.output_edge}")
        if self.bm is not None:
            if self.bm.window_edge != self.input_edge or self.bm.patch_edge != self.output_edge:
                raise ValueError("block-matching window/patch must equal input/output edges")
            if self.bm.k < 1:
                raise ValueError(f"block-matching patch count must be >= 1, got {self.bm.k}")

    @property
    def input_dim(self):
        if self.bm is not None:
            return self.bm.k * self.bm.patch_edge ** 2
        return self.input_edge ** 2

    @property
    def output_dim(self):
        return self.output_edge ** 2

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    def __str__(self):
        groups = []
        for h in self.hidden_sizes:
            if groups and groups[-1][1] == h:
                groups[-1][0] += 1
            else:
                groups.append([1, h])
        terms = [f"{n}x{h}" if n > 1 else str(h) for n, h in groups]
        n0, h0 = groups[0]
        if self.bm is None and n0 > 1 and len(groups) > 1 and h0 == self.output_edge < self.input_edge:
            # "kxE" in second place would read as a block-matching term
            terms[0] = ",".join([str(h0)] * n0)
        hidden = ",".join(terms)
        if self.bm is not None:
            return f"({self.input_edge},{self.bm.k}x{self.bm.patch_edge},{hidden},{self.output_edge})"
        if self.input_edge == self.output_edge and len(groups) == 1:
            return f"({self.input_edge},{hidden})"
        return f"({self.input_edge},{hidden},{self.output_edge})"


_TOKEN = re.compile(r"\s*(\d+)\s*(?:(?:x|X|×|\\times)\s*(\d+))?\s*")


def parse_architecture(text: str) -> Architecture:
    """Parse the compact architecture notation.

    Terms are ``N`` or ``AxB`` (``x``, ``X`` or ``×``). The first term is the input
    edge (``39`` or ``39x39``). With two terms the second lists hidden layers
    and the output edge equals the input edge; otherwise the last term is the
    output edge. A second term ``kxE`` with ``E`` equal to a smaller output
    edge, followed by further hidden terms, marks a block-matching net.
    """
    s = text.strip()
    lead = len(text) - len(text.lstrip())
    if not s.startswith("("):
        raise ArchitectureParseError(text, lead, "expected '('")
    if not s.endswith(")"):
        raise ArchitectureParseError(text, lead + len(s), "expected ')'")
    pos = lead + 1
    body = s[1:-1]
    terms = []
    for part in body.split(","):
        m = _TOKEN.fullmatch(part)
        if m is None:
            bad = pos + len(part) - len(part.lstrip())
            raise ArchitectureParseError(text, bad, f"expected N or AxB, got {part.strip()!r}")
        a = int(m.group(1))
        b = int(m.group(2)) if m.group(2) is not None else None
        terms.append((a, b, pos + m.start(1)))
        pos += len(part) + 1
    if len(terms) < 2:
        raise ArchitectureParseError(text, lead + len(s) - 1, "need at least an input edge and one hidden layer")

    def edge(term):
        a, b, off = term
        if b is not None and a != b:
            raise ArchitectureParseError(text, off, f"patch {a}x{b} is not square")
        if a < 1:
            raise ArchitectureParseError(text, off, "edge must be positive")
        return a

    def hidden(term):
        a, b, off = term
        sizes = [a] if b is None else [b] * a
        if not sizes or min(sizes) < 1:
            raise ArchitectureParseError(text, off, "hidden layer group must be non-empty and positive")
        return sizes

    input_edge = edge(terms[0])
    bm = None
    if len(terms) == 2:
        output_edge = input_edge
        middle = terms[1:]
    else:
        output_edge = edge(terms[-1])
        middle = terms[1:-1]
        k, pe, _ = middle[0]
        if pe is not None and pe == output_edge < input_edge and len(middle) >= 2:
            bm = BmShape(k=k, patch_edge=pe, window_edge=input_edge)
            middle = middle[1:]
    sizes = []
    for term in middle:
        sizes.extend(hidden(term))
    try:
        return Architecture(input_edge, tuple(sizes), output_edge, bm)
    except ValueError as exc:
        raise ArchitectureParseError(text, lead, str(exc)) from None


@dataclass
class Mlp:
    arch: Architecture
    weights: list
    biases: list
    updates: int = 0
    rng_algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        dims = self.arch.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError(f"expected {len(dims) - 1} layers, got {len(self.weights)} weights / {len(self.biases)} biases")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise ValueError(f"layer {l}: weight {W.shape} / bias {b.shape} do not match {dims[l]}->{dims[l + 1]}")

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self):
        return Mlp(self.arch, [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.updates, self.rng_algorithm)


@dataclass
class ForwardTrace:
    """Per-layer pre- and post-activations, rows indexed by sample when batched."""
    input: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)


@dataclass
class Gradients:
    weights: list
    biases: list


def init_mlp(arch: Architecture, rng) -> Mlp:
    """Normalized-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    dims = arch.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(arch, weights, biases)


def forward(mlp: Mlp, x, want_trace=False):
    """Evaluate the net on one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.arch.input_dim or x.ndim > 2:
        raise ValueError(f"input has shape {x.shape}, net expects vectors of length {mlp.arch.input_dim}")
    trace = ForwardTrace(input=x.copy()) if want_trace else None
    h = x
    last = mlp.n_layers - 1
    for l, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = h @ W.T + b
        h = np.tanh(a) if l < last else a
        if trace is not None:
            trace.pre.append(a)
            trace.post.append(h)
    return (h, trace) if want_trace else h


def forward_from(mlp: Mlp, layer: int, activation):
    """Continue a forward pass from given post-activations of hidden ``layer``."""
    h = np.asarray(activation, dtype=np.float64)
    last = mlp.n_layers - 1
    for l in range(layer + 1, mlp.n_layers):
        a = h @ mlp.weights[l].T + mlp.biases[l]
        h = np.tanh(a) if l < last else a
    return h


def backward(mlp: Mlp, trace: ForwardTrace, target):
    """Gradients of L = mean over output pixels (and batch rows) of (y - t)^2.

    Returns ``(Gradients, loss)``.
    """
    t = np.asarray(target, dtype=np.float64)
    if len(trace.pre) != mlp.n_layers:
        raise ValueError(f"trace has {len(trace.pre)} layers, net has {mlp.n_layers}")
    for l, W in enumerate(mlp.weights):
        if trace.pre[l].shape[-1] != W.shape[0]:
            raise ValueError(f"stale trace: layer {l} has {trace.pre[l].shape[-1]} units, net has {W.shape[0]}")
    y = trace.post[-1]
    if t.shape != y.shape:
        raise ValueError(f"target shape {t.shape} does not match output shape {y.shape}")
    batched = y.ndim == 2
    n = y.shape[0] if batched else 1
    d = y.shape[-1]
    diff = y - t
    loss = float(np.sum(diff * diff) / (d * n))
    delta = diff * (2.0 / (d * n))
    gw = [None] * mlp.n_layers
    gb = [None] * mlp.n_layers
    for l in range(mlp.n_layers - 1, -1, -1):
        below = trace.post[l - 1] if l > 0 else trace.input
        if batched:
            gw[l] = delta.T @ below
            gb[l] = delta.sum(axis=0)
        else:
            gw[l] = np.outer(delta, below)
            gb[l] = delta.copy()
        if l > 0:
            delta = (delta @ mlp.weights[l]) * (1.0 - below * below)
    return Gradients(gw, gb), loss


def sgd_step(mlp: Mlp, grads: Gradients, lr: float) -> Mlp:
    """In-place update theta <- theta - lr * grad; returns ``mlp``."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for l, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError(f"non-finite gradient in layer {l} at update {mlp.updates}")
    for W, b, gw, gb in zip(mlp.weights, mlp.biases, grads.weights, grads.biases):
        W -= lr * gw
        b -= lr * gb
    return mlp


# -- checkpoints --

def _u64(n):
    return struct.pack("<Q", n)


def _string(s):
    raw = s.encode("utf-8")
    return _u64(len(raw)) + raw


def write_layer(buf, W, b):
    rows, cols = W.shape
    buf.write(_u64(rows))
    buf.write(_u64(cols))
    buf.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def to_bytes(mlp: Mlp) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    buf.write(_string(str(mlp.arch)))
    buf.write(_u64(mlp.n_layers))
    for W, b in zip(mlp.weights, mlp.biases):
        write_layer(buf, W, b)
    buf.write(_u64(mlp.updates))
    buf.write(_string(mlp.rng_algorithm))
    return buf.getvalue()


def save(mlp: Mlp, path):
    """Write a checkpoint atomically (temp file + rename)."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(to_bytes(mlp))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"unexpected end of file while reading {what} at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def string(self, what):
        n = self.u64(f"{what} length")
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{what} is not valid UTF-8") from None

    def floats(self, n, what):
        return np.frombuffer(self.take(8 * n, what), dtype="<f8").astype(np.float64)


def read_layer(reader, label="layer"):
    rows = reader.u64(f"{label} rows")
    cols = reader.u64(f"{label} cols")
    W = reader.floats(rows * cols, f"{label} weights").reshape(rows, cols)
    b = reader.floats(rows, f"{label} bias")
    return W, b


def from_bytes(data: bytes) -> Mlp:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not an MLPD checkpoint")
    version = r.take(1, "version")[0]
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    arch_text = r.string("architecture")
    try:
        arch = parse_architecture(arch_text)
    except ArchitectureParseError as exc:
        raise CheckpointError(f"architecture field: {exc}") from None
    n_layers = r.u64("layer count")
    dims = arch.layer_dims
    if n_layers != len(dims) - 1:
        raise CheckpointError(f"layer count {n_layers} inconsistent with architecture {arch} ({len(dims) - 1} layers)")
    weights, biases = [], []
    for l in range(n_layers):
        rows = r.u64(f"layer {l} rows")
        cols = r.u64(f"layer {l} cols")
        if (rows, cols) != (dims[l + 1], dims[l]):
            raise CheckpointError(
                f"layer {l} rows/cols {rows}x{cols} inconsistent with architecture (expected {dims[l + 1]}x{dims[l]})")
        weights.append(r.floats(rows * cols, f"layer {l} weights").reshape(rows, cols))
        biases.append(r.floats(rows, f"layer {l} bias"))
    updates = r.u64("update counter")
    rng_name = r.string("rng algorithm")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after rng algorithm")
    return Mlp(arch, weights, biases, updates, rng_name)


def load(path) -> Mlp:
    with open(path, "rb") as f:
        return from_bytes(f.read())
