"""Desk-scale heterogeneous transformer encoder with manual backpropagation.

Every layer is post-LN BERT wiring::

    x = LN(x + sum_i head_i(x) @ Wo_i + bo)
    x = LN(x + FF(x))

Head types:

* SA-SDP: softmax(Q K^T / sqrt(d)) V
* SA-WMA: softmax(Q W K^T / sqrt(d)) V with a learned square W
* LT-DFT: real part of the 2-D DFT of V over (sequence, head dim)
* LT-DCT: orthonormal 2-D DCT-II of V
* DSC-k:  depthwise 1-D convolution of V along the sequence, "same" padding

Linear-transform heads own only their V and output maps; the mixing itself
has no parameters. A projection is inserted whenever consecutive layers use
different hidden sizes. Everything runs in float64.
"""
from __future__ import annotations

import difflib
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import design_space as ds
from .design_space import ArchitectureConfig, HeadType
from .errors import BuildError, TrainError

VOCAB = 64
MAX_SEQ = 16
MASK_ID = 0
INIT_STD = 0.02
LEARNING_RATE = 1e-3
BATCH = 8
MASK_RATE = 0.15
LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# fixed transforms

@lru_cache(maxsize=None)
def dft_mats(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n)
    ang = 2.0 * np.pi * np.outer(k, k) / n
    return np.cos(ang), np.sin(ang)


@lru_cache(maxsize=None)
def dct_mat(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    D = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    D[0] /= np.sqrt(2.0)
    return D


def _dft_mix(V: np.ndarray) -> np.ndarray:
    T, d = V.shape[-2:]
    Ct, St = dft_mats(T)
    Cd, Sd = dft_mats(d)
    s = 1.0 / math.sqrt(T * d)
    return s * (Ct @ V @ Cd - St @ V @ Sd)


def _dft_mix_back(dO: np.ndarray) -> np.ndarray:
    # both DFT matrices are symmetric, so the adjoint has the same form
    return _dft_mix(dO)


def _dct_mix(V: np.ndarray) -> np.ndarray:
    T, d = V.shape[-2:]
    return dct_mat(T) @ V @ dct_mat(d).T


def _dct_mix_back(dO: np.ndarray) -> np.ndarray:
    T, d = dO.shape[-2:]
    return dct_mat(T).T @ dO @ dct_mat(d)


# ---------------------------------------------------------------------------
# elementwise pieces

_GC = math.sqrt(2.0 / math.pi)


def gelu(x):
    t = np.tanh(_GC * (x + 0.044715 * x * x * x))
    return 0.5 * x * (1.0 + t), t


def gelu_back(dy, x, t):
    dt = (1.0 - t * t) * _GC * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * g + b, (xh, inv)


def layer_norm_back(dy, g, cache):
    xh, inv = cache
    n = xh.shape[-1]
    dg = (dy * xh).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxh = dy * g
    dx = inv / n * (n * dxh - dxh.sum(-1, keepdims=True) - xh * (dxh * xh).sum(-1, keepdims=True))
    return dx, dg, db


def _xtd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum over batch and time of outer products: ``einsum('bti,btj->ij')``."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def softmax(S):
    S = S - S.max(-1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(-1, keepdims=True)


# ---------------------------------------------------------------------------
# parameters

def head_param_shapes(kind: HeadType, dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    if kind.family == "SA":
        shapes["Wq"] = (hidden, dim)
        shapes["Wk"] = (hidden, dim)
    shapes["Wv"] = (hidden, dim)
    if kind is HeadType.SA_WMA:
        shapes["Wm"] = (dim, dim)
    if kind.family == "DSC":
        shapes["kernel"] = (kind.kernel_size, dim)
    shapes["Wo"] = (dim, hidden)
    return shapes


def mixing_param_count(kind: HeadType, dim: int) -> int:
    """Parameters in the token-mixing operation itself (zero for DFT/DCT)."""
    if kind is HeadType.SA_WMA:
        return dim * dim
    if kind.family == "DSC":
        return kind.kernel_size * dim
    return 0


def param_shapes(arch: ArchitectureConfig, vocab: int = VOCAB, max_seq: int = MAX_SEQ) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map; a pure function of the architecture."""
    shapes: dict[str, tuple[int, ...]] = {}
    h0 = arch.layers[0].hidden_size
    shapes["embed.tok"] = (vocab, h0)
    shapes["embed.pos"] = (max_seq, h0)
    prev = h0
    for j, layer in enumerate(arch.layers):
        h = layer.hidden_size
        p = f"layer{j}"
        if h != prev:
            shapes[f"{p}.proj.W"] = (prev, h)
            shapes[f"{p}.proj.b"] = (h,)
        for i, hd in enumerate(layer.heads):
            for k, s in head_param_shapes(hd.kind, hd.dim, h).items():
                shapes[f"{p}.head{i}.{k}"] = s
        shapes[f"{p}.attn.bo"] = (h,)
        shapes[f"{p}.ln1.g"] = (h,)
        shapes[f"{p}.ln1.b"] = (h,)
        dims = [h, *layer.ff_stack, h]
        for k in range(len(dims) - 1):
            shapes[f"{p}.ff{k}.W"] = (dims[k], dims[k + 1])
            shapes[f"{p}.ff{k}.b"] = (dims[k + 1],)
        shapes[f"{p}.ln2.g"] = (h,)
        shapes[f"{p}.ln2.b"] = (h,)
        prev = h
    shapes["out.W"] = (prev, vocab)
    shapes["out.b"] = (vocab,)
    return shapes


def init_param(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "g":
        return np.ones(shape)
    if leaf in ("b", "bo"):
        return np.zeros(shape)
    if leaf == "Wm":
        return np.eye(shape[0]) + INIT_STD * rng.standard_normal(shape)
    if leaf == "kernel":
        return rng.standard_normal(shape) / math.sqrt(shape[0])
    return INIT_STD * rng.standard_normal(shape)


def _check_buildable(arch: ArchitectureConfig) -> None:
    if not arch.layers:
        raise BuildError("architecture has no layers")
    for j, layer in enumerate(arch.layers):
        if layer.hidden_size <= 0:
            raise BuildError(f"layer {j}: zero hidden size")
        if not layer.heads:
            raise BuildError(f"layer {j}: no heads")
        if any(hd.dim <= 0 for hd in layer.heads):
            raise BuildError(f"layer {j}: zero-dim head")
        if not layer.ff_stack or any(w <= 0 for w in layer.ff_stack):
            raise BuildError(f"layer {j}: zero-width feed-forward layer")


@dataclass
class BlockStats:
    head_grad_norm: dict[tuple[int, int], float] = field(default_factory=dict)
    head_act_grad_norm: dict[tuple[int, int], float] = field(default_factory=dict)
    head_weight_mag: dict[tuple[int, int], float] = field(default_factory=dict)
    ff_weight_mag: dict[tuple[int, int], float] = field(default_factory=dict)
    ff_grad_norm: dict[tuple[int, int], float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        fmt = lambda d: {f"{a}.{b}": v for (a, b), v in d.items()}
        return {"head_grad_norm": fmt(self.head_grad_norm), "head_act_grad_norm": fmt(self.head_act_grad_norm),
                "head_weight_mag": fmt(self.head_weight_mag), "ff_weight_mag": fmt(self.ff_weight_mag),
                "ff_grad_norm": fmt(self.ff_grad_norm)}


class MicroModel:
    def __init__(self, arch: ArchitectureConfig, params: dict[str, np.ndarray], seed: int = 0,
                 vocab: int = VOCAB, max_seq: int = MAX_SEQ):
        self.arch = arch
        self.params = params
        self.seed = seed
        self.vocab = vocab
        self.max_seq = max_seq
        self.opt_state: dict | None = None
        self.steps_trained = 0

    # -- bookkeeping -----------------------------------------------------
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "MicroModel":
        m = MicroModel(self.arch, {k: v.copy() for k, v in self.params.items()}, self.seed, self.vocab, self.max_seq)
        if self.opt_state is not None:
            m.opt_state = {"t": self.opt_state["t"],
                           "m": {k: v.copy() for k, v in self.opt_state["m"].items()},
                           "v": {k: v.copy() for k, v in self.opt_state["v"].items()}}
        m.steps_trained = self.steps_trained
        return m

    def head_params(self, j: int, i: int) -> dict[str, np.ndarray]:
        pre = f"layer{j}.head{i}."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}

    # -- forward -----------------------------------------------------------
    def forward(self, tokens: np.ndarray, return_cache: bool = False):
        P = self.params
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[0] == 0 or tokens.shape[1] == 0:
            raise ValueError("tokens must be a non-empty (batch, seq) array")
        B, T = tokens.shape
        if T > self.max_seq:
            raise ValueError(f"sequence longer than {self.max_seq}")
        x = P["embed.tok"][tokens] + P["embed.pos"][:T]
        caches = []
        prev = x.shape[-1]
        for j, layer in enumerate(self.arch.layers):
            p = f"layer{j}"
            c: dict = {}
            if layer.hidden_size != prev:
                c["proj_in"] = x
                x = x @ P[f"{p}.proj.W"] + P[f"{p}.proj.b"]
            c["x_in"] = x
            attn = np.broadcast_to(P[f"{p}.attn.bo"], x.shape).copy()
            heads = []
            for i, hd in enumerate(layer.heads):
                O, hc = self._head_forward(hd.kind, f"{p}.head{i}.", x)
                attn += O @ P[f"{p}.head{i}.Wo"]
                heads.append((O, hc))
            c["heads"] = heads
            y, c["ln1"] = layer_norm(x + attn, P[f"{p}.ln1.g"], P[f"{p}.ln1.b"])
            c["y"] = y
            z = y
            ff = []
            n_ff = len(layer.ff_stack) + 1
            for k in range(n_ff):
                a = z @ P[f"{p}.ff{k}.W"] + P[f"{p}.ff{k}.b"]
                if k < n_ff - 1:
                    g, t = gelu(a)
                    ff.append((z, a, t))
                    z = g
                else:
                    ff.append((z, None, None))
                    z = a
            c["ff"] = ff
            x, c["ln2"] = layer_norm(y + z, P[f"{p}.ln2.g"], P[f"{p}.ln2.b"])
            caches.append(c)
            prev = layer.hidden_size
        logits = x @ P["out.W"] + P["out.b"]
        if return_cache:
            return logits, {"tokens": tokens, "layers": caches, "x_out": x}
        return logits

    def _head_forward(self, kind: HeadType, pre: str, x: np.ndarray):
        P = self.params
        V = x @ P[pre + "Wv"]
        if kind.family == "SA":
            d = V.shape[-1]
            s = 1.0 / math.sqrt(d)
            Q = x @ P[pre + "Wq"]
            K = x @ P[pre + "Wk"]
            Qm = Q @ P[pre + "Wm"] if kind is HeadType.SA_WMA else Q
            A = softmax(Qm @ K.transpose(0, 2, 1) * s)
            return A @ V, (Q, K, V, Qm, A)
        if kind is HeadType.LT_DFT:
            return _dft_mix(V), (V,)
        if kind is HeadType.LT_DCT:
            return _dct_mix(V), (V,)
        w = P[pre + "kernel"]
        k = w.shape[0]
        pad = k // 2
        T = V.shape[1]
        Vp = np.pad(V, ((0, 0), (pad, pad), (0, 0)))
        O = np.zeros_like(V)
        for s_ in range(k):
            O += w[s_] * Vp[:, s_:s_ + T]
        return O, (Vp,)

    # -- backward ----------------------------------------------------------
    def backward(self, dlogits: np.ndarray, cache: dict):
        """Parameter gradients and per-head output-activation gradient norms."""
        P = self.params
        G = {k: np.zeros_like(v) for k, v in P.items()}
        act = {}
        x = cache["x_out"]
        G["out.W"] = _xtd(x, dlogits)
        G["out.b"] = dlogits.sum(axis=(0, 1))
        dx = dlogits @ P["out.W"].T
        for j in reversed(range(len(self.arch.layers))):
            layer = self.arch.layers[j]
            c = cache["layers"][j]
            p = f"layer{j}"
            dsum, G[f"{p}.ln2.g"], G[f"{p}.ln2.b"] = layer_norm_back(dx, P[f"{p}.ln2.g"], c["ln2"])
            dy = dsum.copy()
            dz = dsum
            for k in reversed(range(len(c["ff"]))):
                zin, a, t = c["ff"][k]
                if a is not None:
                    dz = gelu_back(dz, a, t)
                G[f"{p}.ff{k}.W"] = _xtd(zin, dz)
                G[f"{p}.ff{k}.b"] = dz.sum(axis=(0, 1))
                dz = dz @ P[f"{p}.ff{k}.W"].T
            dy += dz
            dres, G[f"{p}.ln1.g"], G[f"{p}.ln1.b"] = layer_norm_back(dy, P[f"{p}.ln1.g"], c["ln1"])
            xin = c["x_in"]
            dxin = dres.copy()
            G[f"{p}.attn.bo"] = dres.sum(axis=(0, 1))
            for i, hd in enumerate(layer.heads):
                pre = f"{p}.head{i}."
                O, hc = c["heads"][i]
                G[pre + "Wo"] = _xtd(O, dres)
                dO = dres @ P[pre + "Wo"].T
                act[(j, i)] = float(np.linalg.norm(dO))
                dxin += self._head_backward(hd.kind, pre, xin, dO, hc, G)
            if "proj_in" in c:
                G[f"{p}.proj.W"] = _xtd(c["proj_in"], dxin)
                G[f"{p}.proj.b"] = dxin.sum(axis=(0, 1))
                dxin = dxin @ P[f"{p}.proj.W"].T
            dx = dxin
        tokens = cache["tokens"]
        T = tokens.shape[1]
        G["embed.pos"][:T] = dx.sum(axis=0)
        np.add.at(G["embed.tok"], tokens, dx)
        return G, act

    def _head_backward(self, kind, pre, x, dO, hc, G):
        P = self.params
        if kind.family == "SA":
            Q, K, V, Qm, A = hc
            s = 1.0 / math.sqrt(V.shape[-1])
            dA = dO @ V.transpose(0, 2, 1)
            dV = A.transpose(0, 2, 1) @ dO
            dS = A * (dA - (dA * A).sum(-1, keepdims=True)) * s
            dQm = dS @ K
            dK = dS.transpose(0, 2, 1) @ Qm
            if kind is HeadType.SA_WMA:
                G[pre + "Wm"] = _xtd(Q, dQm)
                dQ = dQm @ P[pre + "Wm"].T
            else:
                dQ = dQm
            G[pre + "Wq"] = _xtd(x, dQ)
            G[pre + "Wk"] = _xtd(x, dK)
            G[pre + "Wv"] = _xtd(x, dV)
            return dQ @ P[pre + "Wq"].T + dK @ P[pre + "Wk"].T + dV @ P[pre + "Wv"].T
        if kind is HeadType.LT_DFT:
            dV = _dft_mix_back(dO)
        elif kind is HeadType.LT_DCT:
            dV = _dct_mix_back(dO)
        else:
            (Vp,) = hc
            w = P[pre + "kernel"]
            k = w.shape[0]
            T = dO.shape[1]
            dVp = np.zeros_like(Vp)
            dw = np.zeros_like(w)
            for s_ in range(k):
                dw[s_] = (dO * Vp[:, s_:s_ + T]).sum(axis=(0, 1))
                dVp[:, s_:s_ + T] += dO * w[s_]
            G[pre + "kernel"] = dw
            dV = dVp[:, k // 2:k // 2 + T]
        G[pre + "Wv"] = _xtd(x, dV)
        return dV @ P[pre + "Wv"].T

    # -- loss ----------------------------------------------------------------
    def loss(self, tokens, targets, mask) -> float:
        return masked_cross_entropy(self.forward(tokens), targets, mask)[0]

    def loss_and_grads(self, tokens, targets, mask):
        logits, cache = self.forward(tokens, return_cache=True)
        loss, dlogits = masked_cross_entropy(logits, targets, mask)
        G, act = self.backward(dlogits, cache)
        return loss, G, act


def masked_cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Mean cross-entropy over masked positions and its gradient w.r.t. logits."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise TrainError("batch has no masked positions")
    z = logits - logits.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(-(picked * mask).sum() / n)
    d = np.exp(logp)
    np.put_along_axis(d, targets[..., None], np.take_along_axis(d, targets[..., None], -1) - 1.0, -1)
    d *= mask[..., None] / n
    return loss, d


def build(arch: ArchitectureConfig, seed: int = 0, vocab: int = VOCAB, max_seq: int = MAX_SEQ) -> MicroModel:
    """Deterministic scaled-Gaussian initialization."""
    _check_buildable(arch)
    rng = np.random.default_rng(seed)
    params = {name: init_param(name, shape, rng) for name, shape in param_shapes(arch, vocab, max_seq).items()}
    return MicroModel(arch, params, seed, vocab, max_seq)


# ---------------------------------------------------------------------------
# synthetic corpus

class Corpus:
    """Token stream from a seeded sparse Markov chain over tokens 1..vocab-1.

    Each token has three possible successors (probabilities 0.6/0.3/0.1), so
    masked tokens are predictable from their neighbours.
    """

    def __init__(self, seed: int = 0, vocab: int = VOCAB, length: int = 20000):
        rng = np.random.default_rng(seed)
        self.vocab = vocab
        succ = rng.integers(1, vocab, size=(vocab, 3))
        probs = np.array([0.6, 0.3, 0.1])
        stream = np.empty(length, dtype=np.int64)
        stream[0] = rng.integers(1, vocab)
        picks = rng.choice(3, size=length, p=probs)
        for t in range(1, length):
            stream[t] = succ[stream[t - 1], picks[t]]
        self.stream = stream

    def batch(self, rng: np.random.Generator, batch: int = BATCH, seq: int = MAX_SEQ, mask_rate: float = MASK_RATE):
        """``(inputs, targets, mask)``; every row has at least one masked slot."""
        starts = rng.integers(0, len(self.stream) - seq, size=batch)
        targets = np.stack([self.stream[s:s + seq] for s in starts])
        mask = rng.random((batch, seq)) < mask_rate
        forced = rng.integers(0, seq, size=batch)
        mask[np.arange(batch), forced] = True
        inputs = np.where(mask, MASK_ID, targets)
        return inputs, targets, mask


@lru_cache(maxsize=8)
def corpus(seed: int) -> Corpus:
    return Corpus(seed)


def eval_batches(corpus_seed: int, n: int = 8):
    rng = np.random.default_rng(10_000 + corpus_seed)
    c = corpus(corpus_seed)
    return [c.batch(rng) for _ in range(n)]


def evaluate_loss(model: MicroModel, corpus_seed: int = 0, n_batches: int = 8) -> float:
    """Mean masked-token loss over fixed held-out batches."""
    return float(np.mean([model.loss(*b) for b in eval_batches(corpus_seed, n_batches)]))


# ---------------------------------------------------------------------------
# training

def _adam_update(model: MicroModel, G: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8) -> None:
    if model.opt_state is None:
        model.opt_state = {"t": 0, "m": {k: np.zeros_like(v) for k, v in model.params.items()},
                           "v": {k: np.zeros_like(v) for k, v in model.params.items()}}
    st = model.opt_state
    st["t"] += 1
    t = st["t"]
    for k, g in G.items():
        m = st["m"].setdefault(k, np.zeros_like(g))
        v = st["v"].setdefault(k, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        model.params[k] -= lr * mh / (np.sqrt(vh) + eps)


def block_stats(model: MicroModel, grad_sums: dict, act_sums: dict, n: int,
                ff_sums: dict | None = None) -> BlockStats:
    st = BlockStats()
    ff_sums = ff_sums or {}
    for j, layer in enumerate(model.arch.layers):
        for i in range(len(layer.heads)):
            hp = model.head_params(j, i)
            st.head_grad_norm[(j, i)] = grad_sums.get((j, i), 0.0) / max(n, 1)
            st.head_act_grad_norm[(j, i)] = act_sums.get((j, i), 0.0) / max(n, 1)
            st.head_weight_mag[(j, i)] = float(np.mean(np.concatenate([np.abs(v).ravel() for v in hp.values()])))
        for k in range(len(layer.ff_stack)):
            st.ff_weight_mag[(j, k)] = float(np.mean(np.abs(model.params[f"layer{j}.ff{k}.W"])))
            st.ff_grad_norm[(j, k)] = ff_sums.get((j, k), 0.0) / max(n, 1)
    return st


def train_steps(model: MicroModel, corpus_seed: int, steps: int, lr: float = LEARNING_RATE,
                batch: int = BATCH, seed: int | None = None, callback=None):
    """Adam on the masked-token task; returns ``(model', loss_trace, BlockStats)``.

    The input model is left untouched. Block statistics average over the last
    quarter of the steps.
    """
    if steps < 1:
        raise TrainError("steps must be >= 1")
    m = model.copy()
    c = corpus(corpus_seed)
    rng = np.random.default_rng((model.seed if seed is None else seed, corpus_seed, m.steps_trained))
    window = max(1, steps // 4)
    grad_sums: dict = {}
    act_sums: dict = {}
    ff_sums: dict = {}
    trace = []
    for s in range(steps):
        inputs, targets, mask = c.batch(rng, batch)
        loss, G, act = m.loss_and_grads(inputs, targets, mask)
        if not np.isfinite(loss):
            raise TrainError(f"non-finite loss at step {s}")
        trace.append(loss)
        if s >= steps - window:
            for j, layer in enumerate(m.arch.layers):
                for i in range(len(layer.heads)):
                    pre = f"layer{j}.head{i}."
                    gn = math.sqrt(sum(float(np.sum(G[k] ** 2)) for k in G if k.startswith(pre)))
                    grad_sums[(j, i)] = grad_sums.get((j, i), 0.0) + gn
                    act_sums[(j, i)] = act_sums.get((j, i), 0.0) + act[(j, i)]
                for k in range(len(layer.ff_stack)):
                    pre = f"layer{j}.ff{k}."
                    gn = math.sqrt(float(np.sum(G[pre + "W"] ** 2) + np.sum(G[pre + "b"] ** 2)))
                    ff_sums[(j, k)] = ff_sums.get((j, k), 0.0) + gn
        _adam_update(m, G, lr)
        m.steps_trained += 1
        if callback is not None:
            callback(m, s, loss)
    return m, trace, block_stats(m, grad_sums, act_sums, window, ff_sums)


# ---------------------------------------------------------------------------
# gradient check

def generic_point(model: MicroModel, seed: int = 0) -> MicroModel:
    """Copy of ``model`` with fan-in scaled weights and jittered biases and norms.

    At the small initialization scale the query/key gradients are ~1e-8 and a
    finite-difference comparison only measures roundoff; a generic point keeps
    every gradient well conditioned.
    """
    m = model.copy()
    rng = np.random.default_rng((seed, 11))
    for name, p in m.params.items():
        if p.ndim == 2 and not name.startswith("embed"):
            p[...] = rng.standard_normal(p.shape) / math.sqrt(p.shape[0])
        else:
            p += 0.1 * rng.standard_normal(p.shape)
    return m


def grad_check(model: MicroModel, n_coords: int = 200, eps: float = 1e-3, seed: int = 0,
               corpus_seed: int = 0, generic: bool = True) -> float:
    """Max normwise relative error between analytic and central-difference gradients.

    For every parameter tensor up to ``n_coords`` coordinates are sampled; the
    error of a tensor is ``|g_a - g_n| / (|g_a| + |g_n|)`` over those
    coordinates (vector norms), and the worst tensor is reported. Numerical
    gradients use the fourth-order central stencil. With ``generic`` (default)
    the check runs at :func:`generic_point` of the model rather than at its
    current parameters.
    """
    m = generic_point(model, seed) if generic else model.copy()
    rng = np.random.default_rng(seed)
    batch = corpus(corpus_seed).batch(rng, 2, min(8, m.max_seq))
    _, G, _ = m.loss_and_grads(*batch)
    worst = 0.0
    for name, p in m.params.items():
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        num = np.empty(len(idx))
        for r, q in enumerate(idx):
            old = flat[q]
            f = []
            for step in (2, 1, -1, -2):
                flat[q] = old + step * eps
                f.append(m.loss(*batch))
            flat[q] = old
            num[r] = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * eps)
        ana = G[name].reshape(-1)[idx]
        denom = np.linalg.norm(ana) + np.linalg.norm(num)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst


# ---------------------------------------------------------------------------
# weight transfer

def rp_matrix(n_in: int, n_c: int, rng: np.random.Generator) -> np.ndarray:
    """Random projection ``R^{n_in} -> R^{n_c}`` with entries from N(0, 1/n_c)."""
    return rng.normal(0.0, 1.0 / math.sqrt(n_c), size=(n_in, n_c))


def align_heads(parent_types: list[HeadType], child_types: list[HeadType]) -> dict[int, int]:
    """child head index -> parent head index for heads of matching type, order-preserving."""
    sm = difflib.SequenceMatcher(a=[t.value for t in parent_types], b=[t.value for t in child_types], autojunk=False)
    out = {}
    for a, b, size in sm.get_matching_blocks():
        for k in range(size):
            out[b + k] = a + k
    return out


def _resize(src: np.ndarray, fresh: np.ndarray, method: str, rng: np.random.Generator) -> np.ndarray:
    if src.shape == fresh.shape:
        return src.copy()
    if method == "OT":
        out = fresh.copy()
        sl = tuple(slice(0, min(a, b)) for a, b in zip(src.shape, fresh.shape))
        out[sl] = src[sl]
        return out
    out = src
    for ax, (a, b) in enumerate(zip(src.shape, fresh.shape)):
        if a != b:
            R = rp_matrix(a, b, rng)
            out = np.moveaxis(np.tensordot(np.moveaxis(out, ax, -1), R, axes=([-1], [0])), -1, ax)
    return out


def _parent_name(name: str, head_maps: dict[int, dict[int, int]], parent: MicroModel) -> str | None:
    parts = name.split(".")
    if parts[0].startswith("layer"):
        j = int(parts[0][5:])
        if j >= parent.arch.n_layers:
            return None
        if parts[1].startswith("head"):
            i = int(parts[1][4:])
            pi = head_maps[j].get(i)
            if pi is None:
                return None
            parts[1] = f"head{pi}"
    cand = ".".join(parts)
    return cand if cand in parent.params else None


def transfer_weights(parent: MicroModel, child_arch: ArchitectureConfig, method: str = "OT",
                     seed: int = 0) -> MicroModel:
    """Initialize a child model from a parent.

    Matching blocks are copied verbatim. Blocks with changed dimensions are
    either sliced/padded (``OT``, ordered transfer) or projected (``RP``,
    random projection). Blocks with no counterpart keep their fresh init.
    """
    method = method.upper()
    if method not in ("OT", "RP"):
        raise ValueError(f"unknown transfer method {method!r}")
    child = build(child_arch, seed, parent.vocab, parent.max_seq)
    rng = np.random.default_rng((seed, 7))
    head_maps = {}
    for j, layer in enumerate(child_arch.layers):
        if j < parent.arch.n_layers:
            head_maps[j] = align_heads([h.kind for h in parent.arch.layers[j].heads], [h.kind for h in layer.heads])
    for name in child.params:
        src = _parent_name(name, head_maps, parent)
        if src is None or parent.params[src].ndim != child.params[name].ndim:
            continue
        child.params[name] = _resize(parent.params[src], child.params[name], method, rng)
    return child


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: MicroModel, path) -> None:
    meta = {"format_version": CHECKPOINT_VERSION, "arch": model.arch.to_dict(), "seed": model.seed,
            "vocab": model.vocab, "max_seq": model.max_seq, "steps_trained": model.steps_trained}
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> MicroModel:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
    arch = ArchitectureConfig.from_dict(meta["arch"])
    expected = param_shapes(arch, meta["vocab"], meta["max_seq"])
    if {k: v.shape for k, v in params.items()} != expected:
        raise ValueError("checkpoint tensors do not match the architecture")
    m = MicroModel(arch, params, meta["seed"], meta["vocab"], meta["max_seq"])
    m.steps_trained = meta["steps_trained"]
    return m
