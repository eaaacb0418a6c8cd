"""Attention-gated message passing over the association graph.

Each iteration updates every node as relu(W_self f + sum_i a_i W_msg f_i)
over its active in-edges, with attention weights a_i formed by a softmax of
cosine similarities scaled by a learnable scalar. Pruned edges are excluded
before the softmax, so pruning removes their influence entirely. The
affinity head maps a tracklet/detection node-feature pair to a score in
(0, 1) through a depth-3 fully-connected stack.

Backward passes are composed by hand (see numerics.grad_check for the
finite-difference oracle used in tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import STGraph
from .numerics import MLP, relu, softmax

# Start the learnable attention scale sharp enough that repeated rounds of
# neighbor averaging do not wash out node identity before training can act.
ATTENTION_INIT = 3.0


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class GNNParams:
    """Per-iteration update matrices, attention scalars, and the affinity head.

    With tied=True the lists hold K references to the same arrays. The head
    consumes L2-normalized node features (head_normalize): message passing
    changes feature magnitudes freely across iterations and scenes, and the
    pair score must depend on directions, not norms, to carry over to unseen
    objects.
    """

    w_self: list[np.ndarray]
    w_msg: list[np.ndarray]
    attn_w: list[np.ndarray]  # 0-d arrays
    head: MLP
    combine: str = "product"  # "product" | "concat"
    gated: bool = True
    tied: bool = False
    head_normalize: bool = True

    def __post_init__(self):
        if len(self.w_self) < 1:
            raise ValueError("need at least one message-passing iteration")
        if self.combine not in ("product", "concat"):
            raise ValueError(f"unknown combine mode {self.combine!r}")

    @staticmethod
    def create(feature_dim: int, iterations: int = 3, head_hidden=(32, 32),
               combine: str = "product", gated: bool = True, tied: bool = False,
               rng: np.random.Generator | None = None) -> "GNNParams":
        if iterations < 1:
            raise ValueError("iteration count must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)

        def make_pair():
            from .numerics import uniform_init
            # Identity-biased self path and damped messages keep the
            # K-iteration recurrence from washing out node identity at init.
            w_self = np.eye(feature_dim) + 0.1 * uniform_init(rng, feature_dim, feature_dim)
            w_msg = 0.3 * uniform_init(rng, feature_dim, feature_dim)
            return w_self, w_msg

        if tied:
            ws, wm = make_pair()
            w_self = [ws] * iterations
            w_msg = [wm] * iterations
            attn_w = [np.array(ATTENTION_INIT)] * iterations
        else:
            w_self, w_msg, attn_w = [], [], []
            for _ in range(iterations):
                ws, wm = make_pair()
                w_self.append(ws)
                w_msg.append(wm)
                attn_w.append(np.array(ATTENTION_INIT))
        head_in = feature_dim if combine == "product" else 2 * feature_dim
        head = MLP.create([head_in, *head_hidden, 1],
                          ["relu"] * len(head_hidden) + ["sigmoid"], rng)
        return GNNParams(w_self, w_msg, attn_w, head, combine, gated, tied)

    @property
    def iterations(self) -> int:
        return len(self.w_self)

    @property
    def feature_dim(self) -> int:
        return self.w_self[0].shape[0]

    def named_parameters(self, prefix: str = "gnn") -> dict[str, np.ndarray]:
        named = {}
        span = 1 if self.tied else self.iterations
        for k in range(span):
            named[f"{prefix}.iter{k}.w_self"] = self.w_self[k]
            named[f"{prefix}.iter{k}.w_msg"] = self.w_msg[k]
            if self.gated:
                named[f"{prefix}.iter{k}.attn_w"] = self.attn_w[k]
        named.update(self.head.named_parameters("affinity"))
        return named


# ---------------------------------------------------------------------------
# Attention weights (public contract)
# ---------------------------------------------------------------------------

def attention_weights(target_feature, source_features, w: float) -> np.ndarray:
    """Softmax over w * cosine(source_k, target) for each source; sums to 1."""
    if len(source_features) < 1:
        raise ValueError("need at least one source feature")
    fb = np.asarray(target_feature, dtype=float)
    nb = float(np.linalg.norm(fb))
    if nb == 0.0:
        raise ValueError("zero-norm target feature")
    sims = np.zeros(len(source_features))
    for k, f in enumerate(source_features):
        fk = np.asarray(f, dtype=float)
        nk = float(np.linalg.norm(fk))
        if nk == 0.0:
            raise ValueError(f"zero-norm source feature at index {k}")
        sims[k] = float(np.dot(fk, fb)) / (nk * nb)
    return softmax(float(w) * sims)


# ---------------------------------------------------------------------------
# Message passing
# ---------------------------------------------------------------------------

@dataclass
class _NodeCache:
    sources: np.ndarray  # active in-edge source indices, edge-list order
    sims: np.ndarray
    attn: np.ndarray
    msgs: np.ndarray     # (n_sources, d): W_msg applied to each source feature
    pre: np.ndarray


@dataclass
class GNNForward:
    feats: list[np.ndarray]           # K+1 entries of shape (N, d); [0] is the input
    sources: list[np.ndarray]         # per-node active in-edge sources
    caches: list[list[_NodeCache]]    # per iteration, per node
    norms: list[np.ndarray]           # per iteration: input-feature norms (N,)
    edge_computations: int

    @property
    def final(self) -> np.ndarray:
        return self.feats[-1]


def _in_sources(graph: STGraph) -> list[np.ndarray]:
    by_dst: list[list[int]] = [[] for _ in graph.nodes]
    for e in graph.edges:
        if e.active:
            by_dst[e.dst].append(e.src)
    return [np.array(s, dtype=int) for s in by_dst]


def message_pass(graph: STGraph, params: GNNParams,
                 features: np.ndarray | None = None) -> GNNForward:
    """Run all iterations synchronously (Jacobi updates against the previous round).

    Nodes without active in-edges update with a zero message term. The
    returned forward record carries everything backward() needs, plus the
    number of per-edge message computations actually performed.
    """
    if features is None:
        features = graph.features()
    feats = np.asarray(features, dtype=float)
    n = len(graph.nodes)
    if feats.shape[0] != n:
        raise ValueError(f"{feats.shape[0]} feature rows for {n} nodes")
    if n > 0 and feats.shape[1] != params.feature_dim:
        raise ValueError(f"feature dim {feats.shape[1]} != params dim {params.feature_dim}")
    sources = _in_sources(graph)
    history = [feats]
    caches: list[list[_NodeCache]] = []
    norms_history: list[np.ndarray] = []
    edge_computations = 0

    for k in range(params.iterations):
        f = history[-1]
        norms = np.linalg.norm(f, axis=1) if n else np.zeros(0)
        w_self, w_msg = params.w_self[k], params.w_msg[k]
        w_attn = float(params.attn_w[k]) if params.gated else 0.0
        nxt = np.zeros_like(f)
        iter_cache: list[_NodeCache] = []
        for b in range(n):
            S = sources[b]
            if len(S):
                us = f[S]
                denom = norms[S] * norms[b]
                sims = np.where(denom > 0.0, (us @ f[b]) / np.where(denom > 0.0, denom, 1.0), 0.0)
                attn = softmax(w_attn * sims)
                msgs = us @ w_msg.T
                msg = attn @ msgs
                edge_computations += len(S)
            else:
                sims = np.zeros(0)
                attn = np.zeros(0)
                msgs = np.zeros((0, f.shape[1]))
                msg = 0.0
            pre = w_self @ f[b] + msg
            nxt[b] = relu(pre)
            iter_cache.append(_NodeCache(S, sims, attn, msgs, pre))
        history.append(nxt)
        caches.append(iter_cache)
        norms_history.append(norms)
    return GNNForward(history, sources, caches, norms_history, edge_computations)


# ---------------------------------------------------------------------------
# Affinity head
# ---------------------------------------------------------------------------

def _combine_pair(f_track: np.ndarray, f_det: np.ndarray, mode: str) -> np.ndarray:
    if mode == "product":
        return f_track * f_det
    return np.concatenate([f_track, f_det])


def _normalize_rows(f: np.ndarray):
    """Unit-norm rows; all-zero rows stay zero. Returns (normalized, norms)."""
    norms = np.linalg.norm(f, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return f / safe[:, None], norms


def _normalize_rows_backward(dg: np.ndarray, g: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """d/df of g = f / ||f|| given upstream dg; zero rows get zero gradient."""
    safe = np.where(norms > 0.0, norms, 1.0)
    proj = np.sum(dg * g, axis=1, keepdims=True)
    df = (dg - proj * g) / safe[:, None]
    df[norms == 0.0] = 0.0
    return df


def affinity_score(f_track, f_det, head: MLP, combine: str = "product",
                   normalize: bool = True) -> float:
    """Association score in (0, 1) for one tracklet/detection feature pair."""
    f_track = np.asarray(f_track, dtype=float)
    f_det = np.asarray(f_det, dtype=float)
    if normalize:
        f_track = _normalize_rows(f_track[None, :])[0][0]
        f_det = _normalize_rows(f_det[None, :])[0][0]
    x = _combine_pair(f_track, f_det, combine)
    return float(head.forward(x))


def affinity_forward(final_feats: np.ndarray, n_tracks: int, n_dets: int,
                     params: GNNParams):
    """Score every (tracklet, detection) pair; returns (matrix, cache).

    The matrix is computed for all pairs regardless of pruning: pruning
    shapes message passing, not scoring.
    """
    if n_tracks == 0 or n_dets == 0:
        return np.zeros((n_tracks, n_dets)), None
    raw_t = final_feats[:n_tracks]
    raw_d = final_feats[n_tracks:n_tracks + n_dets]
    if params.head_normalize:
        f_t, norms_t = _normalize_rows(raw_t)
        f_d, norms_d = _normalize_rows(raw_d)
    else:
        f_t, norms_t = raw_t, None
        f_d, norms_d = raw_d, None
    if params.combine == "product":
        x = (f_t[:, None, :] * f_d[None, :, :]).reshape(n_tracks * n_dets, -1)
    else:
        left = np.repeat(f_t, n_dets, axis=0)
        right = np.tile(f_d, (n_tracks, 1))
        x = np.concatenate([left, right], axis=1)
    out, mlp_cache = params.head.forward_with_cache(x)
    matrix = out[:, 0].reshape(n_tracks, n_dets)
    cache = {"mlp": mlp_cache, "f_t": f_t, "f_d": f_d,
             "norms_t": norms_t, "norms_d": norms_d}
    return matrix, cache


def affinity_backward(cache, d_matrix: np.ndarray, params: GNNParams):
    """Backprop through the affinity head.

    Returns (d_final_feats, head_grads) where d_final_feats has one row per
    graph node (tracklet rows first).
    """
    n_tracks, n_dets = d_matrix.shape
    d = params.feature_dim
    d_feats = np.zeros((n_tracks + n_dets, d))
    if cache is None:
        return d_feats, [(np.zeros_like(w), np.zeros_like(b))
                         for w, b in zip(params.head.weights, params.head.biases)]
    dout = d_matrix.reshape(-1, 1)
    dx, head_grads = params.head.backward(cache["mlp"], dout)
    f_t, f_d = cache["f_t"], cache["f_d"]
    dx = dx.reshape(n_tracks, n_dets, -1)
    if params.combine == "product":
        dg_t = np.einsum("ijc,jc->ic", dx, f_d)
        dg_d = np.einsum("ijc,ic->jc", dx, f_t)
    else:
        dg_t = dx[:, :, :d].sum(axis=1)
        dg_d = dx[:, :, d:].sum(axis=0)
    if params.head_normalize:
        d_feats[:n_tracks] = _normalize_rows_backward(dg_t, f_t, cache["norms_t"])
        d_feats[n_tracks:] = _normalize_rows_backward(dg_d, f_d, cache["norms_d"])
    else:
        d_feats[:n_tracks] = dg_t
        d_feats[n_tracks:] = dg_d
    return d_feats, head_grads


# ---------------------------------------------------------------------------
# Full backward through the iterations
# ---------------------------------------------------------------------------

def backward(graph: STGraph, params: GNNParams, fwd: GNNForward,
             aff_cache, d_matrix: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for a loss whose affinity-matrix gradient is d_matrix.

    Returns a dict keyed exactly like GNNParams.named_parameters().
    """
    d_feats, head_grads = affinity_backward(aff_cache, d_matrix, params)
    k_iters = params.iterations
    g_self = [np.zeros_like(params.w_self[k]) for k in range(k_iters)]
    g_msg = [np.zeros_like(params.w_msg[k]) for k in range(k_iters)]
    g_attn = [0.0] * k_iters

    df = d_feats
    for k in range(k_iters - 1, -1, -1):
        f = fwd.feats[k]
        norms = fwd.norms[k]
        caches = fwd.caches[k]
        w_self, w_msg = params.w_self[k], params.w_msg[k]
        w_attn = float(params.attn_w[k]) if params.gated else 0.0
        d_prev = np.zeros_like(f)
        for b in range(len(graph.nodes)):
            cache = caches[b]
            dpre = df[b] * (cache.pre > 0)
            if not np.any(dpre):
                continue
            g_self[k] += np.outer(dpre, f[b])
            d_prev[b] += w_self.T @ dpre
            S = cache.sources
            if len(S) == 0:
                continue
            attn, sims, msgs = cache.attn, cache.sims, cache.msgs
            us = f[S]
            # message path: d/d(attn_i) and d/d(W_msg), d/d(f_i)
            d_attn = msgs @ dpre
            g_msg[k] += np.outer(dpre, attn @ us)
            d_prev[S] += np.outer(attn, w_msg.T @ dpre)  # sources are distinct
            if params.gated:
                # softmax over logits w * s
                dl = attn * (d_attn - float(attn @ d_attn))
                g_attn[k] += float(dl @ sims)
                ds = w_attn * dl
                nb = norms[b]
                ns = norms[S]
                ok = (ns > 0.0) & (nb > 0.0)
                if np.any(ok):
                    coef = np.where(ok, ds, 0.0)
                    inv = np.where(ok, 1.0 / np.where(ok, ns, 1.0), 0.0)
                    d_prev[S] += coef[:, None] * (f[b][None, :] * (inv / nb)[:, None]
                                                  - sims[:, None] * us * (inv ** 2)[:, None])
                    d_prev[b] += ((coef * inv) @ us) / nb \
                        - float(coef @ sims) * f[b] / (nb * nb)
        df = d_prev

    grads: dict[str, np.ndarray] = {}
    span = 1 if params.tied else k_iters
    for k in range(span):
        if params.tied:
            grads["gnn.iter0.w_self"] = sum(g_self)
            grads["gnn.iter0.w_msg"] = sum(g_msg)
            if params.gated:
                grads["gnn.iter0.attn_w"] = np.array(sum(g_attn))
        else:
            grads[f"gnn.iter{k}.w_self"] = g_self[k]
            grads[f"gnn.iter{k}.w_msg"] = g_msg[k]
            if params.gated:
                grads[f"gnn.iter{k}.attn_w"] = np.array(g_attn[k])
    for i, (dw, db) in enumerate(head_grads):
        grads[f"affinity.fc{i}.weight"] = dw
        grads[f"affinity.fc{i}.bias"] = db
    return grads
