"""Quasi-random and random samplers over the design space, plus diversity diagnostics.

Every sampler produces points in the unit hypercube with one coordinate per
embedding slot (37). A point is snapped to the grid coordinate-wise:

* slot 0 picks the layer count,
* a hidden-size slot picks one of the four hidden sizes,
* an operation-index slot first picks a block (stack depth, or head count)
  and then a rank inside that block from the fractional remainder.

The two-level snap keeps depths and head counts evenly represented; a flat
snap over 1..21805 would make 12-head layers 85% of all draws.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from . import design_space as ds


class SamplerKind(enum.Enum):
    SOBOL = "sobol"
    LHS = "lhs"
    HALTON = "halton"
    HAMMERSLY = "hammersly"
    RANDOM = "random"


def _first_primes(n: int) -> list[int]:
    primes, k = [], 2
    while len(primes) < n:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return primes


def radical_inverse(indices: np.ndarray, base: int) -> np.ndarray:
    """Van der Corput radical inverse of non-negative integers in ``base``."""
    idx = np.asarray(indices, dtype=np.int64).copy()
    out = np.zeros(idx.shape, dtype=np.float64)
    scale = 1.0 / base
    while np.any(idx > 0):
        idx, digit = np.divmod(idx, base)
        out += digit * scale
        scale /= base
    return out


def halton(n: int, dim: int, start: int = 1) -> np.ndarray:
    """Unscrambled Halton points with indices ``start .. start + n - 1``."""
    idx = np.arange(start, start + n)
    return np.column_stack([radical_inverse(idx, b) for b in _first_primes(dim)])


def hammersly(n: int, dim: int, offset: int = 0) -> np.ndarray:
    """Hammersley set: first coordinate ``i / n``, the rest Halton radical inverses."""
    i = np.arange(n)
    cols = [i / n]
    if dim > 1:
        cols += [radical_inverse(i + offset, b) for b in _first_primes(dim - 1)]
    return np.column_stack(cols)


def sobol(n: int, dim: int, skip: int = 0) -> np.ndarray:
    engine = qmc.Sobol(d=dim, scramble=False)
    if skip:
        engine.fast_forward(skip)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return engine.random(n)


def unit_points(kind: SamplerKind, n: int, seed: int, dim: int = ds.EMBEDDING_DIM) -> np.ndarray:
    """Raw points in [0, 1)^dim, deterministic in ``(kind, n, seed)``.

    The deterministic sequences take the seed as a start offset; for Sobol the
    offset is a multiple of the next power of two so the skipped block keeps
    its net structure.
    """
    kind = SamplerKind(kind)
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind is SamplerKind.RANDOM:
        return rng.random((n, dim))
    if kind is SamplerKind.LHS:
        return qmc.LatinHypercube(d=dim, seed=rng).random(n)
    offset = int(rng.integers(0, 1024))
    if kind is SamplerKind.SOBOL:
        m = 1 << max(0, (n - 1).bit_length())
        return sobol(n, dim, skip=offset * m)
    if kind is SamplerKind.HALTON:
        return halton(n, dim, start=1 + offset * n)
    return hammersly(n, dim, offset=offset * n)


def _snap(u: float, k: int) -> int:
    return min(int(u * k), k - 1)


def _snap_block(u: float, sizes: tuple[int, ...]) -> tuple[int, int]:
    scaled = u * len(sizes)
    b = _snap(u, len(sizes))
    frac = min(max(scaled - b, 0.0), 1.0 - 1e-12)
    return b, _snap(frac, sizes[b])


_FF_BLOCKS = tuple(len(ds.FF_WIDTHS) ** d for d in range(1, ds.MAX_FF_DEPTH + 1))
_MHA_BLOCKS = tuple(ds.mha_block(n)[1] for n in ds.HEAD_COUNTS)


def point_to_embedding(u: np.ndarray) -> np.ndarray:
    e = np.zeros(ds.EMBEDDING_DIM, dtype=np.int64)
    l = ds.LAYER_CHOICES[_snap(u[0], len(ds.LAYER_CHOICES))]
    e[0] = l
    for j in range(l):
        uh, uf, um = u[1 + 3 * j: 4 + 3 * j]
        e[1 + 3 * j] = ds.HIDDEN_SIZES[_snap(uh, len(ds.HIDDEN_SIZES))]
        b, r = _snap_block(uf, _FF_BLOCKS)
        e[2 + 3 * j] = 1 + sum(_FF_BLOCKS[:b]) + r
        b, r = _snap_block(um, _MHA_BLOCKS)
        e[3 + 3 * j] = ds.mha_block(ds.HEAD_COUNTS[b])[0] + r
    return e


def _snap_many(u: np.ndarray, k) -> np.ndarray:
    k = np.asarray(k)
    return np.minimum((u * k).astype(np.int64), k - 1)


def _snap_block_many(u: np.ndarray, sizes: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    nb = len(sizes)
    scaled = u * nb
    b = _snap_many(u, nb)
    frac = np.minimum(np.maximum(scaled - b, 0.0), 1.0 - 1e-12)
    return b, _snap_many(frac, np.asarray(sizes)[b])


def points_to_embeddings(U: np.ndarray) -> np.ndarray:
    """Vectorized :func:`point_to_embedding` over the rows of ``U``."""
    U = np.atleast_2d(U)
    n = len(U)
    E = np.zeros((n, ds.EMBEDDING_DIM), dtype=np.int64)
    l = np.asarray(ds.LAYER_CHOICES)[_snap_many(U[:, 0], len(ds.LAYER_CHOICES))]
    E[:, 0] = l
    ff_off = np.concatenate([[1], 1 + np.cumsum(_FF_BLOCKS)[:-1]])
    mha_off = np.array([ds.mha_block(h)[0] for h in ds.HEAD_COUNTS])
    for j in range(ds.MAX_LAYERS):
        live = l > j
        h = np.asarray(ds.HIDDEN_SIZES)[_snap_many(U[:, 1 + 3 * j], len(ds.HIDDEN_SIZES))]
        b, r = _snap_block_many(U[:, 2 + 3 * j], _FF_BLOCKS)
        f = ff_off[b] + r
        b, r = _snap_block_many(U[:, 3 + 3 * j], _MHA_BLOCKS)
        m = mha_off[b] + r
        E[:, 1 + 3 * j] = np.where(live, h, 0)
        E[:, 2 + 3 * j] = np.where(live, f, 0)
        E[:, 3 + 3 * j] = np.where(live, m, 0)
    return E


def sample_embeddings(kind: SamplerKind, n: int, seed: int) -> np.ndarray:
    return points_to_embeddings(unit_points(kind, n, seed))


def sample(kind: SamplerKind, n: int, seed: int) -> list[ds.ArchitectureConfig]:
    return [ds.decode(e) for e in sample_embeddings(kind, n, seed)]


# ---------------------------------------------------------------------------
# diversity diagnostics

CATEGORIES = ("deep-wide", "deep-narrow", "shallow-wide", "shallow-narrow")


def categorize(arch: ds.ArchitectureConfig) -> str:
    depth = "deep" if arch.n_layers >= 8 else "shallow"
    width = "wide" if ds.median_heads(arch) >= 8 else "narrow"
    return f"{depth}-{width}"


@dataclass
class DiversityReport:
    pairwise_distances: np.ndarray
    quartiles: tuple[float, float, float]
    category_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_pairs": int(len(self.pairwise_distances)),
            "quartiles": list(self.quartiles),
            "category_counts": dict(self.category_counts),
        }


def pairwise_distances(configs: list[ds.ArchitectureConfig]) -> np.ndarray:
    if len(configs) < 2:
        return np.zeros(0)
    emb = np.stack([ds.normalize_embedding(ds.encode(c)) for c in configs])
    return pdist(emb, metric="euclidean")


def diversity_report(configs: list[ds.ArchitectureConfig]) -> DiversityReport:
    if not configs:
        raise ValueError("need at least one config")
    d = pairwise_distances(configs)
    if len(d):
        q = tuple(float(x) for x in np.percentile(d, [25, 50, 75]))
    else:
        q = (0.0, 0.0, 0.0)
    counts = {c: 0 for c in CATEGORIES}
    for c in configs:
        counts[categorize(c)] += 1
    return DiversityReport(d, q, counts)
