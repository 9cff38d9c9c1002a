"""Model/device co-design: surrogate-driven search over (architecture, device) pairs.

Three small networks share one topology (two input branches of 32-32 units,
merged into a 64-32 trunk):

* ``f`` predicts the performance mean and an aleatoric sigma (Gaussian NLL),
* ``g`` is a dropout-regularized teacher whose MC-dropout spread gives the
  epistemic uncertainty xi,
* ``h`` is a student regressing xi so it can be differentiated cheaply.

Queries come from gradient ascent on ``UCB = mu + k1*sigma + k2*xi_hat`` with
respect to the (relaxed) inputs, or from uncertainty / diversity sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import design_space as ds
from . import sampling
from .design_space import ArchitectureConfig, HeadType
from .devices import DEVICE_IDS, device_encoding
from .errors import DomainError, QueryExhausted, TrainError

ALPHA_P = 0.1
BETA_P = 0.1
K1 = 0.5
K2 = 0.5
P_MIN = -100.0
N_INITIAL = 16
POOL_SIZE = 512
MC_PASSES = 16
DROPOUT = 0.1
RESTARTS = 8
PATIENCE = 50
N_ED = len(DEVICE_IDS)


# ---------------------------------------------------------------------------
# scalarization

@dataclass(frozen=True)
class PerfWeights:
    alpha: float = 0.5
    beta: float = 0.2
    gamma: float = 0.2
    epsilon: float = 0.1

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.epsilon)
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise DomainError("weights must lie in [0, 1]")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise DomainError(f"weights must sum to 1, got {sum(vals)!r}")

    @classmethod
    def parse(cls, text: str) -> "PerfWeights":
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise DomainError("expected four comma-separated weights")
        return cls(*parts)


def performance(acc: float, energy: float, power: float, latency: float,
                w: PerfWeights = PerfWeights()) -> float:
    """Scalar performance of normalized measures (all in [0, 1])."""
    for name, v in (("accuracy", acc), ("energy", energy), ("power", power), ("latency", latency)):
        if not (0.0 <= v <= 1.0):
            raise DomainError(f"{name} = {v!r} outside [0, 1]")
    # correctly rounded sum, so e.g. the all-best case gives exactly 1.0
    return math.fsum((w.alpha * acc, w.beta * (1.0 - energy), w.gamma * (1.0 - power), w.epsilon * (1.0 - latency)))


# ---------------------------------------------------------------------------
# synthetic accuracy oracle

ACCURACY_ORACLE_VERSION = 1


def accuracy_oracle(arch: ArchitectureConfig) -> float:
    """Smooth accuracy proxy in [0, 1] with diminishing returns in depth and width.

    Versioned (:data:`ACCURACY_ORACLE_VERSION`) so search results are reproducible.
    """
    l = arch.n_layers
    width = ds.median_hidden(arch)
    ff = np.mean([sum(layer.ff_stack) for layer in arch.layers])
    sa, fams = [], []
    for layer in arch.layers:
        kinds = [h.kind for h in layer.heads]
        sa.append(sum(k.family == "SA" for k in kinds) / len(kinds))
        fams.append(len({k.family for k in kinds}))
    depth_t = 1.0 - math.exp(-l / 4.0)
    width_t = 1.0 - math.exp(-width / 256.0)
    ff_t = 1.0 - math.exp(-ff / 1024.0)
    heads_t = 1.0 - math.exp(-ds.median_heads(arch) / 4.0)
    mix_t = float(np.mean(sa))
    div_t = (float(np.mean(fams)) - 1.0) / 2.0
    acc = 0.40 + 0.18 * depth_t + 0.14 * width_t + 0.08 * ff_t + 0.06 * heads_t + 0.07 * mix_t + 0.03 * div_t
    return float(min(max(acc, 0.0), 1.0))


# ---------------------------------------------------------------------------
# search spaces

class CodesignSpace(Protocol):
    devices: tuple[str, ...]

    def contains(self, arch: ArchitectureConfig) -> bool: ...
    def sample(self, n: int, rng: np.random.Generator) -> list[ArchitectureConfig]: ...
    def project(self, x_txf: np.ndarray) -> np.ndarray: ...
    def reference_archs(self) -> list[ArchitectureConfig]: ...


class FullSpace:
    """The whole grid design space paired with all devices."""

    def __init__(self, devices: tuple[str, ...] = DEVICE_IDS):
        self.devices = tuple(devices)

    def contains(self, arch):
        return ds.is_valid(arch, grid=True)

    def sample(self, n, rng):
        return sampling.sample(sampling.SamplerKind.LHS, n, int(rng.integers(0, 2**31 - 1)))

    def project(self, x_txf):
        """Round a relaxed normalized embedding to the nearest grid embedding."""
        raw = np.asarray(x_txf, dtype=np.float64) * ds.EMBEDDING_SCALE
        e = np.zeros(ds.EMBEDDING_DIM, dtype=np.int64)
        choices = np.asarray(ds.LAYER_CHOICES)
        l = int(choices[np.argmin(np.abs(choices - raw[0]))])
        e[0] = l
        hs = np.asarray(ds.HIDDEN_SIZES)
        for j in range(l):
            e[1 + 3 * j] = hs[np.argmin(np.abs(hs - raw[1 + 3 * j]))]
            e[2 + 3 * j] = int(np.clip(np.rint(raw[2 + 3 * j]), 1, ds.N_FF_OPS))
            e[3 + 3 * j] = int(np.clip(np.rint(raw[3 + 3 * j]), 1, ds.N_MHA_OPS))
        return e

    def reference_archs(self):
        big = ds.uniform_arch(12, 768, [HeadType.SA_WMA] * 12, [4096] * 3)
        return [big, *sampling.sample(sampling.SamplerKind.LHS, 256, 0)]


class UniformSpace:
    """Enumerable sub-space of identical layers.

    Every architecture repeats one layer ``l`` times; the layer picks a hidden
    size, a head multiset of one of the allowed head counts, and a single FF
    width.
    """

    def __init__(self, layers=(2, 4), hidden=(128, 256), head_counts=(2, 4), ff_widths=(256, 512, 1024),
                 devices: tuple[str, ...] = DEVICE_IDS):
        self.devices = tuple(devices)
        self.layers, self.hidden, self.head_counts, self.ff_widths = layers, hidden, head_counts, ff_widths
        archs = []
        for l in layers:
            for h in hidden:
                for n in head_counts:
                    start, size = ds.mha_block(n)
                    for idx in range(start, start + size):
                        heads = ds.mha_op_decode(idx)
                        for w in ff_widths:
                            archs.append(ds.uniform_arch(l, h, heads, [w]))
        self.archs = archs
        self.embeddings = np.stack([ds.encode(a) for a in archs])
        self._norm = np.stack([ds.normalize_embedding(e) for e in self.embeddings])
        self._index = {tuple(int(v) for v in e): i for i, e in enumerate(self.embeddings)}

    def __len__(self):
        return len(self.archs)

    def contains(self, arch):
        try:
            return tuple(int(v) for v in ds.encode(arch)) in self._index
        except Exception:
            return False

    def sample(self, n, rng):
        return [self.archs[i] for i in rng.integers(0, len(self.archs), size=n)]

    def project(self, x_txf):
        d = np.sum((self._norm - np.asarray(x_txf)[None, :]) ** 2, axis=1)
        return self.embeddings[int(np.argmin(d))].copy()

    def reference_archs(self):
        return self.archs


# ---------------------------------------------------------------------------
# performance oracle

HardwareFn = Callable[[list[ArchitectureConfig], str], np.ndarray]


def device_hardware(devices: dict | None = None) -> HardwareFn:
    """Hardware measures straight from the (noise-free) synthetic devices."""
    from . import devices as dev

    table = devices or dev.load_devices()

    def fn(archs, device_id):
        return np.array([evaluate_clean_tuple(table[device_id], a) for a in archs])

    def evaluate_clean_tuple(d, a):
        m = dev.evaluate_clean(d, a)
        return (m.latency, m.energy, m.peak_power)

    return fn


def surrogate_hardware(states: dict) -> HardwareFn:
    """Hardware measures from per-device profiler surrogates."""
    from . import protran

    def fn(archs, device_id):
        return np.maximum(protran.predict(states[device_id], archs), 1e-12)

    return fn


@dataclass
class PerformanceOracle:
    """``P(arch, device)`` from the accuracy oracle and normalized hardware measures."""
    hardware: HardwareFn
    weights: PerfWeights = PerfWeights()
    accuracy: Callable[[ArchitectureConfig], float] = accuracy_oracle
    normalizers: np.ndarray | None = None
    constraints: dict = field(default_factory=dict)

    def fit_normalizers(self, space: CodesignSpace) -> "PerformanceOracle":
        """Per-measure maxima over the space's reference architectures on every device."""
        ref = space.reference_archs()
        mx = np.zeros(3)
        for d in space.devices:
            mx = np.maximum(mx, self.hardware(ref, d).max(axis=0))
        self.normalizers = mx
        return self

    def measures(self, archs, device_id) -> np.ndarray:
        hw = self.hardware(archs, device_id)
        return np.clip(hw / self.normalizers, 0.0, 1.0)

    def __call__(self, archs: list[ArchitectureConfig], device_id: str) -> np.ndarray:
        if self.normalizers is None:
            raise DomainError("normalizers not fitted")
        hw = self.hardware(archs, device_id)
        norm = np.clip(hw / self.normalizers, 0.0, 1.0)
        out = np.empty(len(archs))
        for i, a in enumerate(archs):
            lat, en, pk = norm[i]
            if self._violates(hw[i]):
                out[i] = P_MIN
            else:
                out[i] = performance(self.accuracy(a), en, pk, lat, self.weights)
        return out

    def _violates(self, hw) -> bool:
        c = self.constraints
        return (hw[0] > c.get("max_latency", np.inf) or hw[1] > c.get("max_energy", np.inf)
                or hw[2] > c.get("max_peak_power", np.inf))


def brute_force(oracle: PerformanceOracle, space: UniformSpace) -> np.ndarray:
    """P for every (arch, device) pair, shape ``(n_archs, n_devices)``."""
    return np.column_stack([oracle(space.archs, d) for d in space.devices])


# ---------------------------------------------------------------------------
# networks

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class CodesignNet:
    """Two-branch tanh MLP with manual gradients for weights and both inputs."""

    SHAPES = (("a1", 32), ("a2", 32), ("b1", 32), ("b2", 32), ("t1", 64), ("t2", 32))

    def __init__(self, n_out: int, seed: int = 0, dropout: float = 0.0,
                 n_txf: int = ds.EMBEDDING_DIM, n_ed: int = N_ED):
        rng = np.random.default_rng(seed)
        dims = {"a1": (n_txf, 32), "a2": (32, 32), "b1": (n_ed, 32), "b2": (32, 32),
                "t1": (64, 64), "t2": (64, 32), "o": (32, n_out)}
        self.params = {}
        for k, (i, o) in dims.items():
            self.params["W" + k] = rng.standard_normal((i, o)) * math.sqrt(1.0 / i)
            self.params["b" + k] = np.zeros(o)
        self.dropout = dropout
        self.n_out = n_out
        self._adam = None

    def copy(self) -> "CodesignNet":
        c = CodesignNet.__new__(CodesignNet)
        c.params = {k: v.copy() for k, v in self.params.items()}
        c.dropout, c.n_out, c._adam = self.dropout, self.n_out, None
        return c

    def masks(self, n: int, rng: np.random.Generator) -> dict:
        keep = 1.0 - self.dropout
        return {k: (rng.random((n, w)) < keep) / keep for k, w in self.SHAPES}

    def forward(self, xa, xb, masks: dict | None = None):
        P = self.params
        c = {"xa": xa, "xb": xb}

        def dense(name, x):
            z = np.tanh(x @ P["W" + name] + P["b" + name])
            c["z" + name] = z
            if masks is not None:
                z = z * masks[name]
            c["in" + name] = x
            return z

        a = dense("a2", dense("a1", xa))
        b = dense("b2", dense("b1", xb))
        t = np.concatenate([a, b], axis=1)
        t = dense("t2", dense("t1", t))
        c["ino"] = t
        c["masks"] = masks
        return t @ P["Wo"] + P["bo"], c

    def backward(self, dout, c):
        P = self.params
        G = {}
        masks = c["masks"]
        G["Wo"] = c["ino"].T @ dout
        G["bo"] = dout.sum(0)
        d = dout @ P["Wo"].T

        def back(name, d):
            if masks is not None:
                d = d * masks[name]
            dz = d * (1.0 - c["z" + name] ** 2)
            G["W" + name] = c["in" + name].T @ dz
            G["b" + name] = dz.sum(0)
            return dz @ P["W" + name].T

        d = back("t1", back("t2", d))
        da, db = d[:, :32], d[:, 32:]
        dxa = back("a1", back("a2", da))
        dxb = back("b1", back("b2", db))
        return G, dxa, dxb

    def adam_step(self, G, lr=3e-3, b1=0.9, b2=0.999, eps=1e-8):
        if self._adam is None:
            self._adam = [0, {k: np.zeros_like(v) for k, v in self.params.items()},
                          {k: np.zeros_like(v) for k, v in self.params.items()}]
        st = self._adam
        st[0] += 1
        t = st[0]
        for k, g in G.items():
            st[1][k] = b1 * st[1][k] + (1 - b1) * g
            st[2][k] = b2 * st[2][k] + (1 - b2) * g * g
            self.params[k] -= lr * (st[1][k] / (1 - b1 ** t)) / (np.sqrt(st[2][k] / (1 - b2 ** t)) + eps)


# heads: raw network outputs -> quantities, with d(quantity)/d(raw)

SIGMA_FLOOR = 1e-4


def f_outputs(raw):
    mu = raw[:, 0]
    sigma = _softplus(raw[:, 1]) + SIGMA_FLOOR
    return mu, sigma


def f_loss(raw, y):
    """Mean Gaussian negative log-likelihood and its gradient w.r.t. the raw outputs."""
    mu, sigma = f_outputs(raw)
    n = len(y)
    r = y - mu
    loss = float(np.mean(np.log(sigma) + 0.5 * r * r / sigma ** 2 + 0.5 * math.log(2 * math.pi)))
    d = np.zeros_like(raw)
    d[:, 0] = -r / sigma ** 2 / n
    dsig = (1.0 / sigma - r * r / sigma ** 3) / n
    d[:, 1] = dsig * _sigmoid(raw[:, 1])
    return loss, d


def mse_loss(raw, y, positive: bool = False):
    out = _softplus(raw[:, 0]) if positive else raw[:, 0]
    r = out - y
    n = len(y)
    d = np.zeros_like(raw)
    d[:, 0] = 2.0 * r / n * (_sigmoid(raw[:, 0]) if positive else 1.0)
    return float(np.mean(r * r)), d


def train_net(net: CodesignNet, loss_fn, xa, xb, y, epochs: int, rng: np.random.Generator,
              lr: float = 3e-3, batch: int = 64) -> list[float]:
    n = len(y)
    trace = []
    for _ in range(epochs):
        order = rng.permutation(n)
        tot = 0.0
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            masks = net.masks(len(idx), rng) if net.dropout > 0 else None
            raw, c = net.forward(xa[idx], xb[idx], masks)
            loss, d = loss_fn(raw, y[idx])
            if not np.isfinite(loss):
                raise TrainError("surrogate loss diverged")
            G, _, _ = net.backward(d, c)
            net.adam_step(G, lr)
            tot += loss * len(idx)
        trace.append(tot / n)
    return trace


def mc_dropout_std(net: CodesignNet, xa, xb, rng: np.random.Generator, passes: int = MC_PASSES) -> np.ndarray:
    if net.dropout <= 0:
        return np.zeros(len(xa))
    outs = np.stack([net.forward(xa, xb, net.masks(len(xa), rng))[0][:, 0] for _ in range(passes)])
    return outs.std(axis=0)


# ---------------------------------------------------------------------------
# state

@dataclass
class CodesignState:
    space: CodesignSpace
    oracle: PerformanceOracle
    seed: int = 0
    alpha_p: float = ALPHA_P
    beta_p: float = BETA_P
    k1: float = K1
    k2: float = K2
    p_min: float = P_MIN
    epochs: int = 60
    dropout: float = DROPOUT
    xi_scale: float = 0.0   # h is trained on xi / xi_scale
    records: list = field(default_factory=list)   # (embedding, device_id, P)
    trace: list = field(default_factory=list)     # dicts per step
    f: CodesignNet | None = None
    g: CodesignNet | None = None
    h: CodesignNet | None = None
    rng: np.random.Generator | None = None
    _seen: set = field(default_factory=set, repr=False)
    n_device_calls: int = 0

    def inputs(self):
        xa = np.stack([ds.normalize_embedding(e) for e, _, _ in self.records])
        xb = np.stack([device_encoding(d) for _, d, _ in self.records]).astype(np.float64)
        y = np.array([p for _, _, p in self.records])
        return xa, xb, y

    def best(self):
        i = int(np.argmax([p for _, _, p in self.records]))
        e, d, p = self.records[i]
        return ds.decode(e), d, p

    def best_so_far(self) -> list[float]:
        return list(np.maximum.accumulate([p for _, _, p in self.records]))


def _key(emb, device_id) -> tuple:
    return (*(int(v) for v in emb), device_id)


def _well_formed_pair(state: CodesignState, emb, device_id) -> ArchitectureConfig | None:
    if device_id not in state.space.devices:
        return None
    try:
        arch = ds.decode(emb)
    except Exception:
        return None
    return arch if state.space.contains(arch) else None


def evaluate_pair(state: CodesignState, emb, device_id: str, branch: str = "manual") -> float:
    """Evaluate and append one record; invalid pairs are stored at ``P_MIN`` without a device call."""
    arch = _well_formed_pair(state, emb, device_id)
    if arch is None:
        p = state.p_min
    else:
        state.n_device_calls += 1
        p = float(state.oracle([arch], device_id)[0])
    emb = np.asarray(emb, dtype=np.int64)
    state.records.append((emb, device_id, p))
    state._seen.add(_key(emb, device_id))
    best = max(r[2] for r in state.records)
    state.trace.append({"step": len(state.records), "branch": branch, "device": device_id, "P": p, "best": best})
    return p


def init_state(space: CodesignSpace, oracle: PerformanceOracle, seed: int = 0, n_initial: int = N_INITIAL,
               **hyper) -> CodesignState:
    state = CodesignState(space, oracle, seed, **hyper)
    state.rng = np.random.default_rng(seed)
    if oracle.normalizers is None:
        oracle.fit_normalizers(space)
    while len(state.records) < n_initial:
        emb, dev = _random_pair(state)
        evaluate_pair(state, emb, dev, "initial")
    return state


def _random_pair(state: CodesignState):
    for _ in range(1000):
        arch = state.space.sample(1, state.rng)[0]
        dev = state.space.devices[int(state.rng.integers(0, len(state.space.devices)))]
        emb = ds.encode(arch)
        if _key(emb, dev) not in state._seen:
            return emb, dev
    raise QueryExhausted("could not draw an unseen pair")


def fit_surrogates(state: CodesignState, epochs: int | None = None) -> CodesignState:
    """Train f (NLL), g (MSE under dropout), then h on g's MC-dropout spread."""
    if len(state.records) < 8:
        raise TrainError("need at least 8 records")
    epochs = epochs or state.epochs
    xa, xb, y = state.inputs()
    if state.f is None:
        state.f = CodesignNet(2, seed=state.seed)
        state.g = CodesignNet(1, seed=state.seed + 1, dropout=state.dropout)
        state.h = CodesignNet(1, seed=state.seed + 2)
        epochs = 4 * epochs
    rng = state.rng
    train_net(state.f, f_loss, xa, xb, y, epochs, rng)
    train_net(state.g, mse_loss, xa, xb, y, epochs, rng)
    xi = mc_dropout_std(state.g, xa, xb, rng)
    state.xi_scale = float(np.max(xi))
    if state.xi_scale > 0:
        train_net(state.h, lambda r, t: mse_loss(r, t, positive=True), xa, xb, xi / state.xi_scale, epochs, rng)
    return state


def predict(state: CodesignState, xa, xb):
    """``(mu, sigma, xi_hat)`` for relaxed inputs."""
    mu, sigma = f_outputs(state.f.forward(xa, xb)[0])
    xi = state.xi_scale * _softplus(state.h.forward(xa, xb)[0][:, 0])
    return mu, sigma, xi


def ucb(mu, sigma, xi, k1=K1, k2=K2):
    return mu + k1 * sigma + k2 * xi


# ---------------------------------------------------------------------------
# GOBI: gradient ascent on the relaxed inputs

Objective = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


def ucb_objective(state: CodesignState) -> Objective:
    """UCB and its gradients w.r.t. both inputs, batched over rows."""
    k1, k2 = state.k1, state.k2

    def obj(xa, xb):
        raw_f, cf = state.f.forward(xa, xb)
        raw_h, ch = state.h.forward(xa, xb)
        mu, sigma = f_outputs(raw_f)
        xi = state.xi_scale * _softplus(raw_h[:, 0])
        val = mu + k1 * sigma + k2 * xi
        df = np.column_stack([np.ones(len(xa)), k1 * _sigmoid(raw_f[:, 1])])
        _, ga_f, gb_f = state.f.backward(df, cf)
        dh = (k2 * state.xi_scale * _sigmoid(raw_h[:, 0]))[:, None]
        _, ga_h, gb_h = state.h.backward(dh, ch)
        return val, ga_f + ga_h, gb_f + gb_h

    return obj


def gobi_ascent(objective: Objective, xa0: np.ndarray, xb0: np.ndarray, iters: int = 60,
                lr: float = 0.05, floor: float = 1e-2):
    """Projected ascent in [0,1]^n with a diagonal secant curvature step.

    Each coordinate's step is ``lr * g / max(c, floor)`` where ``c`` is the
    magnitude of the secant estimate of the diagonal Hessian from the previous
    iterate; ``floor`` bounds the step where the curvature is near zero.
    """
    xa, xb = xa0.copy(), xb0.copy()
    val, ga, gb = objective(xa, xb)
    prev = None
    best_val = val.copy()
    best_a, best_b = xa.copy(), xb.copy()
    for _ in range(iters):
        x = np.concatenate([xa, xb], axis=1)
        g = np.concatenate([ga, gb], axis=1)
        if prev is None:
            curv = np.ones_like(x)
        else:
            dx = x - prev[0]
            dg = g - prev[1]
            with np.errstate(divide="ignore", invalid="ignore"):
                curv = np.where(np.abs(dx) > 1e-12, np.abs(dg / dx), 1.0)
        prev = (x, g)
        step = lr * g / np.maximum(curv, floor)
        step = np.clip(step, -0.25, 0.25)
        x = np.clip(x + step, 0.0, 1.0)
        xa, xb = x[:, :xa.shape[1]], x[:, xa.shape[1]:]
        val, ga, gb = objective(xa, xb)
        better = val > best_val
        best_val = np.where(better, val, best_val)
        best_a[better], best_b[better] = xa[better], xb[better]
    return best_a, best_b, best_val


def gobi_query(state: CodesignState, objective: Objective | None = None):
    """Best unseen projected pair over the restarts, ranked by relaxed UCB."""
    objective = objective or ucb_objective(state)
    rng = state.rng
    xa_d, xb_d, y = state.inputs()
    top = np.argsort(-y)[: RESTARTS // 2]
    starts_a = [xa_d[i] for i in top]
    starts_b = [xb_d[i] for i in top]
    while len(starts_a) < RESTARTS:
        starts_a.append(ds.normalize_embedding(ds.encode(state.space.sample(1, rng)[0])))
        starts_b.append(rng.dirichlet(np.ones(N_ED)))
    xa, xb, val = gobi_ascent(objective, np.stack(starts_a), np.stack(starts_b))
    for i in np.argsort(-val):
        emb = state.space.project(xa[i])
        dev = project_device(xb[i], state.space.devices)
        if _key(emb, dev) not in state._seen:
            return emb, dev
    raise QueryExhausted("every restart projected onto an evaluated pair")


def project_device(x_ed: np.ndarray, allowed: tuple[str, ...] = DEVICE_IDS) -> str:
    """Nearest one-hot device among ``allowed``."""
    order = np.argsort(-np.asarray(x_ed))
    for i in order:
        if DEVICE_IDS[i] in allowed:
            return DEVICE_IDS[i]
    return allowed[0]


def uncertainty_query(state: CodesignState):
    rng = state.rng
    archs = state.space.sample(POOL_SIZE, rng)
    devs = [state.space.devices[i] for i in rng.integers(0, len(state.space.devices), size=POOL_SIZE)]
    embs = [ds.encode(a) for a in archs]
    keep = [i for i in range(POOL_SIZE) if _key(embs[i], devs[i]) not in state._seen]
    if not keep:
        raise QueryExhausted("candidate pool fully evaluated")
    xa = np.stack([ds.normalize_embedding(embs[i]) for i in keep])
    xb = np.stack([device_encoding(devs[i]) for i in keep]).astype(np.float64)
    _, sigma, xi = predict(state, xa, xb)
    j = keep[int(np.argmax(state.k1 * sigma + state.k2 * xi))]
    return embs[j], devs[j]


def codesign_step(state: CodesignState) -> CodesignState:
    """One iteration: GOBI, uncertainty sampling or diversity sampling."""
    u = state.rng.random()
    if u < 1.0 - state.alpha_p - state.beta_p:
        fit_surrogates(state)
        try:
            emb, dev = gobi_query(state)
            branch = "gobi"
        except QueryExhausted:
            emb, dev = _random_pair(state)
            branch = "diversity"
    elif u < 1.0 - state.beta_p:
        if state.f is None:
            fit_surrogates(state)
        try:
            emb, dev = uncertainty_query(state)
            branch = "uncertainty"
        except QueryExhausted:
            emb, dev = _random_pair(state)
            branch = "diversity"
    else:
        emb, dev = _random_pair(state)
        branch = "diversity"
    evaluate_pair(state, emb, dev, branch)
    return state


@dataclass
class CodesignResult:
    arch: ArchitectureConfig
    device: str
    performance: float
    state: CodesignState

    def convergence(self) -> list[float]:
        return self.state.best_so_far()


def run_codesign(weights: PerfWeights = PerfWeights(), budget: int = 200, seed: int = 0,
                 space: CodesignSpace | None = None, oracle: PerformanceOracle | None = None,
                 patience: int = PATIENCE, **hyper) -> CodesignResult:
    """Search until ``budget`` evaluations or ``patience`` steps without improvement."""
    space = space or FullSpace()
    if oracle is None:
        oracle = PerformanceOracle(device_hardware(), weights)
    oracle.weights = weights
    state = init_state(space, oracle, seed, **hyper)
    best, since = max(r[2] for r in state.records), 0
    while len(state.records) < budget and since < patience:
        codesign_step(state)
        p = state.records[-1][2]
        if p > best + 1e-12:
            best, since = p, 0
        else:
            since += 1
    arch, dev, p = state.best()
    return CodesignResult(arch, dev, p, state)


def random_search(oracle: PerformanceOracle, space: CodesignSpace, budget: int, seed: int = 0) -> list[float]:
    """Best-so-far trace of uniformly random valid pairs."""
    state = CodesignState(space, oracle, seed)
    state.rng = np.random.default_rng(seed)
    if oracle.normalizers is None:
        oracle.fit_normalizers(space)
    for _ in range(budget):
        emb, dev = _random_pair(state)
        evaluate_pair(state, emb, dev, "random")
    return state.best_so_far()
