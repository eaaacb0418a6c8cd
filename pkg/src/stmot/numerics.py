"""Minimal dense-tensor kernels with hand-written gradients.

All kernels operate on float64 numpy arrays. Gradients are implemented
analytically per operation (reverse-mode composition by hand for the small
fixed graphs in this codebase); central finite differences are the test
oracle only, never the execution path.

Randomness is funneled through seeded, stream-splittable generators so runs
are reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import BoxBEV, bev_corners, clip_convex, polygon_area


# ---------------------------------------------------------------------------
# RNG and initialization
# ---------------------------------------------------------------------------

def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded 64-bit generator, splittable by stream id."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),)))


def uniform_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    """Weight init uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""
    bound = math.sqrt(1.0 / in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


# ---------------------------------------------------------------------------
# Elementwise ops and reductions
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over a 1-D array; sums to 1."""
    v = np.asarray(v, dtype=float)
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / np.sum(e)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Average a (C, X, Y) map over its spatial axes -> (C,)."""
    if x.ndim != 3:
        raise ValueError(f"expected a (C, X, Y) map, got shape {x.shape}")
    return x.mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# 3x3 convolution, zero padding 1, same spatial size
# ---------------------------------------------------------------------------

def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """2D convolution with 3x3 kernels and zero padding 1.

    x: (C_in, X, Y), w: (C_out, C_in, 3, 3), b: (C_out,) or None.
    Returns (C_out, X, Y). Accumulation order matches the naive nested loop
    (c_in, then kernel row, then kernel column) so results are bit-identical
    to a direct reference implementation.
    """
    if x.ndim != 3 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"bad conv shapes: input {x.shape}, weights {w.shape}")
    c_in, xs, ys = x.shape
    c_out = w.shape[0]
    if w.shape[1] != c_in:
        raise ValueError(f"weight channels {w.shape[1]} != input channels {c_in}")
    padded = np.zeros((c_in, xs + 2, ys + 2))
    padded[:, 1:-1, 1:-1] = x
    out = np.zeros((c_out, xs, ys))
    for co in range(c_out):
        acc = out[co]
        for ci in range(c_in):
            for ky in range(3):
                for kx in range(3):
                    acc += w[co, ci, ky, kx] * padded[ci, ky:ky + xs, kx:kx + ys]
    if b is not None:
        out += b[:, None, None]
    return out


def conv3x3_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray):
    """Gradients of conv3x3: returns (dx, dw, db) for upstream gradient dout."""
    c_in, xs, ys = x.shape
    c_out = w.shape[0]
    padded = np.zeros((c_in, xs + 2, ys + 2))
    padded[:, 1:-1, 1:-1] = x
    dw = np.zeros_like(w)
    dpadded = np.zeros_like(padded)
    for co in range(c_out):
        g = dout[co]
        for ci in range(c_in):
            for ky in range(3):
                for kx in range(3):
                    dw[co, ci, ky, kx] = np.sum(g * padded[ci, ky:ky + xs, kx:kx + ys])
                    dpadded[ci, ky:ky + xs, kx:kx + ys] += w[co, ci, ky, kx] * g
    dx = dpadded[:, 1:-1, 1:-1]
    db = dout.sum(axis=(1, 2))
    return dx, dw, db


# ---------------------------------------------------------------------------
# RoI pooling (bilinear, cell-center sampling) over an oriented BEV box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MapExtent:
    """World-to-pixel mapping for a (C, X, Y) feature map.

    World point (wx, wy) lands at continuous pixel (wx - origin_x) / resolution
    along the X axis (same for Y); cell centers sit at half-integer offsets.
    """

    origin: tuple[float, float] = (0.0, 0.0)
    resolution: float = 1.0


class RoiOutsideMapError(ValueError):
    """Raised when a pooling box does not intersect the feature-map extent."""


def _bilinear(fmap: np.ndarray, u: float, v: float) -> np.ndarray:
    """Sample all channels at continuous pixel coords (u along X, v along Y).

    Cell centers are at integer + 0.5 (align-corners false); out-of-map
    neighbors contribute zero.
    """
    _, xs, ys = fmap.shape
    gu = u - 0.5
    gv = v - 0.5
    i0 = math.floor(gu)
    j0 = math.floor(gv)
    fu = gu - i0
    fv = gv - j0
    out = np.zeros(fmap.shape[0])
    for di, wu in ((0, 1.0 - fu), (1, fu)):
        for dj, wv in ((0, 1.0 - fv), (1, fv)):
            i, j = i0 + di, j0 + dj
            if 0 <= i < xs and 0 <= j < ys and wu != 0.0 and wv != 0.0:
                out += (wu * wv) * fmap[:, i, j]
    return out


def roi_pool(fmap: np.ndarray, box: BoxBEV, grid: tuple[int, int],
             extent: MapExtent = MapExtent()) -> np.ndarray:
    """Pool an h x w grid of bilinear samples over an oriented box footprint.

    fmap: (C, X, Y); grid: (h, w) with rows along the box width axis and
    columns along the length axis. Deterministic. Raises RoiOutsideMapError
    when the footprint misses the map entirely.
    """
    if fmap.ndim != 3:
        raise ValueError(f"expected (C, X, Y) map, got {fmap.shape}")
    h, w = grid
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {grid}")
    _, xs, ys = fmap.shape
    x0, y0 = extent.origin
    res = extent.resolution
    map_rect = np.array([
        [x0, y0],
        [x0 + xs * res, y0],
        [x0 + xs * res, y0 + ys * res],
        [x0, y0 + ys * res],
    ])
    if polygon_area(clip_convex(bev_corners(box), map_rect)) <= 0.0:
        raise RoiOutsideMapError(f"box footprint at {box.center} lies outside the map extent")
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.zeros((fmap.shape[0], h, w))
    for i in range(h):
        ly = ((i + 0.5) / h - 0.5) * box.dims[1]
        for j in range(w):
            lx = ((j + 0.5) / w - 0.5) * box.dims[0]
            wx = box.center[0] + c * lx - s * ly
            wy = box.center[1] + s * lx + c * ly
            out[:, i, j] = _bilinear(fmap, (wx - x0) / res, (wy - y0) / res)
    return out


# ---------------------------------------------------------------------------
# Fully-connected stacks
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "sigmoid", "identity")


def _apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return relu(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class MLPCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    out: np.ndarray
    squeeze: bool


@dataclass
class MLP:
    """Plain fully-connected stack with per-layer activations.

    weights[i] has shape (out, in); forward accepts a single (d,) vector or a
    (n, d) batch.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists must have equal length")
        for i in range(len(self.weights) - 1):
            if self.weights[i + 1].shape[1] != self.weights[i].shape[0]:
                raise ValueError("adjacent layer shapes do not compose")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @staticmethod
    def create(widths: Sequence[int], activations: Sequence[str],
               rng: np.random.Generator) -> "MLP":
        """widths = (in, h1, ..., out); len(activations) == len(widths) - 1."""
        if len(activations) != len(widths) - 1:
            raise ValueError("need one activation per layer")
        weights = [uniform_init(rng, widths[i + 1], widths[i]) for i in range(len(widths) - 1)]
        biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
        return MLP(weights, biases, list(activations))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_with_cache(x)[0]

    def forward_with_cache(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        if a.shape[1] != self.input_dim:
            raise ValueError(f"input width {a.shape[1]} != layer width {self.input_dim}")
        inputs, pre = [], []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(a)
            z = a @ w.T + b
            pre.append(z)
            a = _apply_activation(z, act)
        out = a[0] if squeeze else a
        return out, MLPCache(inputs, pre, a, squeeze)

    def backward(self, cache: MLPCache, dout: np.ndarray):
        """Backprop dL/d(output after final activation) through the stack.

        Returns (dx, grads) with grads a list of (dW, db) per layer.
        """
        d = np.asarray(dout, dtype=float)
        if cache.squeeze:
            d = d[None, ...] if d.ndim >= 1 else np.array([[d]])
        if d.shape != cache.out.shape:
            d = d.reshape(cache.out.shape)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            act = self.activations[i]
            if act == "relu":
                dz = d * (cache.pre[i] > 0)
            elif act == "sigmoid":
                y = sigmoid(cache.pre[i])
                dz = d * y * (1.0 - y)
            else:
                dz = d
            grads[i] = (dz.T @ cache.inputs[i], dz.sum(axis=0))
            d = dz @ self.weights[i]
        dx = d[0] if cache.squeeze else d
        return dx, grads

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        named = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"{prefix}.fc{i}.weight"] = w
            named[f"{prefix}.fc{i}.bias"] = b
        return named


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], float], params: Sequence[np.ndarray],
               analytic: Sequence[np.ndarray], eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    f is a zero-argument scalar function reading `params` by reference; each
    entry is perturbed in place by +-eps. Returns the maximum relative error
    |a - n| / max(|a|, |n|, 1e-4); entries below the floor are effectively
    compared absolutely, which keeps finite-difference roundoff from
    dominating near-zero gradients.
    """
    worst = 0.0
    for p, g in zip(params, analytic):
        if p.shape != np.asarray(g).shape:
            raise ValueError(f"gradient shape {np.shape(g)} != param shape {p.shape}")
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + eps
            f_plus = f()
            p[idx] = orig - eps
            f_minus = f()
            p[idx] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise ValueError("non-finite loss during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(np.asarray(g)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, err)
            it.iternext()
    return worst


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p[...] -= self.lr * grads[name]


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, params: dict[str, np.ndarray], lr: float):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# Weight serialization (JSON, exact float round-trip)
# ---------------------------------------------------------------------------

def save_weights(path, named: dict[str, np.ndarray]) -> None:
    doc = {
        name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=float).ravel().tolist()}
        for name, arr in named.items()
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        doc = json.load(fh)
    named = {}
    for name, entry in doc.items():
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=float)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise ValueError(f"weight {name!r}: {values.size} values for shape {shape}")
        named[name] = values.reshape(shape)
    return named


def assign_weights(params: dict[str, np.ndarray], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into existing parameter storage, validating shapes."""
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise ValueError(f"weight name mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, p in params.items():
        if loaded[name].shape != p.shape:
            raise ValueError(f"weight {name!r}: shape {loaded[name].shape} != expected {p.shape}")
        p[...] = loaded[name]
