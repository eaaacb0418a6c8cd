"""Gated temporal blending of consecutive-frame feature maps.

Two same-sized maps are combined as a per-pixel convex mixture: a small conv
stack over their channel concatenation produces a single sigmoid attention
channel for the current frame, the previous frame gets its complement, and
the blend broadcasts that channel across all feature channels. Camera-view
and BEV streams each carry their own conv weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import conv3x3, conv3x3_backward, relu, sigmoid, uniform_init

VIEW_TAGS = ("camera_view", "bev")


@dataclass(frozen=True)
class FeatureMap:
    """Dense (C, X, Y) feature grid with a frame index and a view tag."""

    data: np.ndarray
    timestamp: int
    view: str = "bev"

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))
        if self.data.ndim != 3:
            raise ValueError(f"feature map must be (C, X, Y), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite feature map")
        if self.view not in VIEW_TAGS:
            raise ValueError(f"unknown view tag {self.view!r}")


def _check_pair(f_t: FeatureMap, f_prev: FeatureMap) -> None:
    if f_t.data.shape != f_prev.data.shape:
        raise ValueError(f"shape mismatch: {f_t.data.shape} vs {f_prev.data.shape}")
    if f_t.view != f_prev.view:
        raise ValueError(f"view mismatch: {f_t.view!r} vs {f_prev.view!r}")
    if f_t.timestamp != f_prev.timestamp + 1:
        raise ValueError(f"frames not consecutive: {f_prev.timestamp} -> {f_t.timestamp}")


class TemporalFusion:
    """Conv weights for one view stream plus the blend forward/backward."""

    def __init__(self, channels: int, depth: int = 1, hidden_channels: int = 8,
                 rng: np.random.Generator | None = None):
        if depth < 1:
            raise ValueError("need at least one conv layer")
        self.channels = channels
        widths = [2 * channels] + [hidden_channels] * (depth - 1) + [1]
        self.conv_w: list[np.ndarray] = []
        self.conv_b: list[np.ndarray] = []
        for i in range(depth):
            c_in, c_out = widths[i], widths[i + 1]
            if rng is None:
                w = np.zeros((c_out, c_in, 3, 3))
            else:
                w = uniform_init(rng, c_out, c_in * 9).reshape(c_out, c_in, 3, 3)
            self.conv_w.append(w)
            self.conv_b.append(np.zeros(c_out))

    def _gate_logits(self, stacked: np.ndarray):
        acts = [stacked]
        z = stacked
        last = len(self.conv_w) - 1
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            z = conv3x3(acts[-1], w, b)
            acts.append(relu(z) if i < last else z)
        return acts[-1], acts

    def attention_maps(self, f_t: FeatureMap, f_prev: FeatureMap):
        """Return (A_t, A_prev): A_t = sigmoid(conv(f_t (+) f_prev)), A_prev = 1 - A_t."""
        _check_pair(f_t, f_prev)
        stacked = np.concatenate([f_t.data, f_prev.data], axis=0)
        logits, _ = self._gate_logits(stacked)
        a_t = sigmoid(logits)
        return a_t, 1.0 - a_t

    def aggregate(self, f_t: FeatureMap, f_prev: FeatureMap) -> FeatureMap:
        return self.aggregate_with_cache(f_t, f_prev)[0]

    def aggregate_with_cache(self, f_t: FeatureMap, f_prev: FeatureMap):
        _check_pair(f_t, f_prev)
        stacked = np.concatenate([f_t.data, f_prev.data], axis=0)
        logits, acts = self._gate_logits(stacked)
        a_t = sigmoid(logits)
        blended = a_t * f_t.data + (1.0 - a_t) * f_prev.data
        out = FeatureMap(blended, timestamp=f_t.timestamp, view=f_t.view)
        cache = {"acts": acts, "a_t": a_t, "f_t": f_t.data, "f_prev": f_prev.data}
        return out, cache

    def backward(self, cache: dict, dout: np.ndarray):
        """Gradients of a scalar loss w.r.t. the conv weights.

        dout is dL/d(blended map), shape (C, X, Y). Input-map gradients are
        not propagated; nothing upstream of the blend is trainable here.
        """
        a_t = cache["a_t"]
        diff = cache["f_t"] - cache["f_prev"]
        # blended = f_prev + A_t * (f_t - f_prev)
        d_a = np.sum(dout * diff, axis=0, keepdims=True)
        d_logits = d_a * a_t * (1.0 - a_t)
        grads = []
        acts = cache["acts"]
        d = d_logits
        for i in range(len(self.conv_w) - 1, -1, -1):
            if i < len(self.conv_w) - 1:
                # hidden layers applied relu after the conv
                d = d * (acts[i + 1] > 0)
            dx, dw, db = conv3x3_backward(acts[i], self.conv_w[i], d)
            grads.insert(0, (dw, db))
            d = dx
        return grads

    def named_parameters(self, prefix: str = "fusion") -> dict[str, np.ndarray]:
        named = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            named[f"{prefix}.conv{i}.weight"] = w
            named[f"{prefix}.conv{i}.bias"] = b
        return named


def aggregate_or_first(fusion: TemporalFusion, f_t: FeatureMap,
                       f_prev: FeatureMap | None) -> FeatureMap:
    """Blend with the previous frame, or pass f_t through at a sequence start."""
    if f_prev is None:
        return f_t
    return fusion.aggregate(f_t, f_prev)
