"""Heterogeneous transformer design space and its 37-dimensional integer embedding.

An architecture is a list of encoder layers. Each layer holds a multiset of
attention-like heads (seven operation types), a feed-forward stack of one to
three hidden layers and a hidden size equal to the summed head dims.

The embedding stores, for every layer slot ``j`` (0-based here):

    e[0]          number of layers l
    e[1 + 3j]     hidden size h
    e[2 + 3j]     feed-forward operation index (1..258)
    e[3 + 3j]     multi-head operation index (1..21805)

Slots past ``l`` are zero.
"""
from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfig, MalformedEmbedding

SCHEMA_VERSION = 1

LAYER_CHOICES = (2, 4, 6, 8, 10, 12)
HEAD_COUNTS = (2, 4, 8, 12)
HIDDEN_SIZES = (128, 256, 512, 768)
FF_WIDTHS = (256, 512, 1024, 2048, 3072, 4096)
MAX_FF_DEPTH = 3
MAX_LAYERS = 12
MAX_HEADS = 12
EMBEDDING_DIM = 1 + 3 * MAX_LAYERS


class HeadType(enum.Enum):
    SA_SDP = "SA-SDP"
    SA_WMA = "SA-WMA"
    LT_DFT = "LT-DFT"
    LT_DCT = "LT-DCT"
    DSC_5 = "DSC-5"
    DSC_9 = "DSC-9"
    DSC_13 = "DSC-13"

    @property
    def order(self) -> int:
        return _HEAD_ORDER[self]

    @property
    def family(self) -> str:
        return self.value.split("-")[0]

    @property
    def kernel_size(self) -> int | None:
        if self.family != "DSC":
            return None
        return int(self.value.split("-")[1])

    @classmethod
    def from_order(cls, i: int) -> "HeadType":
        return HEAD_TYPES[i]


HEAD_TYPES: tuple[HeadType, ...] = tuple(HeadType)
_HEAD_ORDER = {t: i for i, t in enumerate(HEAD_TYPES)}
N_HEAD_TYPES = len(HEAD_TYPES)


@dataclass(frozen=True)
class Head:
    kind: HeadType
    dim: int


@dataclass(frozen=True)
class EncoderLayerConfig:
    heads: tuple[Head, ...]
    ff_stack: tuple[int, ...]
    hidden_size: int

    @classmethod
    def build(cls, heads: Iterable[tuple[HeadType, int] | Head], ff_stack: Iterable[int],
              hidden_size: int | None = None) -> "EncoderLayerConfig":
        hs = tuple(h if isinstance(h, Head) else Head(HeadType(h[0]), int(h[1])) for h in heads)
        if hidden_size is None:
            hidden_size = sum(h.dim for h in hs)
        return cls(hs, tuple(int(w) for w in ff_stack), int(hidden_size))

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    def head_multiset(self) -> tuple[HeadType, ...]:
        return tuple(sorted((h.kind for h in self.heads), key=lambda t: t.order))


@dataclass(frozen=True)
class ArchitectureConfig:
    layers: tuple[EncoderLayerConfig, ...]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def replace_layer(self, j: int, layer: EncoderLayerConfig) -> "ArchitectureConfig":
        layers = list(self.layers)
        layers[j] = layer
        return ArchitectureConfig(tuple(layers))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "layers": [
                {
                    "hidden_size": layer.hidden_size,
                    "heads": [{"type": h.kind.value, "dim": h.dim} for h in layer.heads],
                    "ff_stack": list(layer.ff_stack),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ArchitectureConfig":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise InvalidConfig(f"unsupported schema_version {version!r}")
        layers = []
        for layer in doc["layers"]:
            heads = [Head(HeadType(h["type"]), int(h["dim"])) for h in layer["heads"]]
            layers.append(EncoderLayerConfig(tuple(heads), tuple(int(w) for w in layer["ff_stack"]),
                                             int(layer["hidden_size"])))
        return cls(tuple(layers))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureConfig":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# validation

def validate(arch: ArchitectureConfig, grid: bool = True) -> None:
    """Raise :class:`InvalidConfig` with the first violated constraint.

    ``grid=True`` enforces the discrete design-space ranges; ``grid=False``
    only the structural invariants that post-processed (grown/pruned)
    architectures must keep.
    """
    n = len(arch.layers)
    if n < 1 or n > MAX_LAYERS:
        raise InvalidConfig("layer count")
    if grid and n not in LAYER_CHOICES:
        raise InvalidConfig("layer count")
    for layer in arch.layers:
        nh = len(layer.heads)
        if nh < 1 or nh > MAX_HEADS:
            raise InvalidConfig("head count")
        if grid and nh not in HEAD_COUNTS:
            raise InvalidConfig("head count")
        if any(h.dim <= 0 for h in layer.heads):
            raise InvalidConfig("head dim")
        if layer.hidden_size != sum(h.dim for h in layer.heads):
            raise InvalidConfig("hidden-size mismatch")
        if grid and layer.hidden_size not in HIDDEN_SIZES:
            raise InvalidConfig("hidden size")
        if not 1 <= len(layer.ff_stack) <= MAX_FF_DEPTH:
            raise InvalidConfig("ff depth")
        if any(w <= 0 for w in layer.ff_stack):
            raise InvalidConfig("ff width")
        if grid and any(w not in FF_WIDTHS for w in layer.ff_stack):
            raise InvalidConfig("ff width")


def is_valid(arch: ArchitectureConfig, grid: bool = True) -> bool:
    try:
        validate(arch, grid)
    except InvalidConfig:
        return False
    return True


# ---------------------------------------------------------------------------
# feed-forward operation index

_FF_OFFSETS = tuple(sum(len(FF_WIDTHS) ** k for k in range(1, d)) for d in range(1, MAX_FF_DEPTH + 2))
N_FF_OPS = _FF_OFFSETS[-1]
_FF_POS = {w: i for i, w in enumerate(FF_WIDTHS)}


def ff_op_index(stack: Sequence[int]) -> int:
    """Index in 1..258: ordered by stack depth, then lexicographically by width."""
    depth = len(stack)
    if not 1 <= depth <= MAX_FF_DEPTH:
        raise InvalidConfig("ff depth")
    rank = 0
    for w in stack:
        if w not in _FF_POS:
            raise InvalidConfig("ff width")
        rank = rank * len(FF_WIDTHS) + _FF_POS[w]
    return 1 + _FF_OFFSETS[depth - 1] + rank


def ff_op_decode(index: int) -> tuple[int, ...]:
    if not 1 <= index <= N_FF_OPS:
        raise InvalidConfig("ff index")
    r = index - 1
    depth = max(d for d in range(1, MAX_FF_DEPTH + 1) if _FF_OFFSETS[d - 1] <= r)
    r -= _FF_OFFSETS[depth - 1]
    base = len(FF_WIDTHS)
    digits = []
    for _ in range(depth):
        r, d = divmod(r, base)
        digits.append(d)
    return tuple(FF_WIDTHS[d] for d in reversed(digits))


# ---------------------------------------------------------------------------
# multi-head operation index (multisets of head types, combinations with replacement)

def _n_multisets(n_types: int, size: int) -> int:
    return comb(n_types + size - 1, size)


_MHA_BLOCK_SIZES = tuple(_n_multisets(N_HEAD_TYPES, n) for n in HEAD_COUNTS)
_MHA_OFFSETS = tuple(itertools.accumulate((0,) + _MHA_BLOCK_SIZES))
N_MHA_OPS = _MHA_OFFSETS[-1]


def mha_block(n_heads: int) -> tuple[int, int]:
    """(first index, block size) of the index block holding ``n_heads``-head multisets."""
    b = HEAD_COUNTS.index(n_heads)
    return _MHA_OFFSETS[b] + 1, _MHA_BLOCK_SIZES[b]


def _rank_multiset(seq: Sequence[int], n_types: int) -> int:
    # seq is non-decreasing; count lexicographically smaller non-decreasing sequences
    rank, lo, m = 0, 0, len(seq)
    for pos, c in enumerate(seq):
        remaining = m - pos - 1
        for v in range(lo, c):
            rank += _n_multisets(n_types - v, remaining)
        lo = c
    return rank


def _unrank_multiset(rank: int, size: int, n_types: int) -> tuple[int, ...]:
    seq, lo = [], 0
    for pos in range(size):
        remaining = size - pos - 1
        v = lo
        while True:
            block = _n_multisets(n_types - v, remaining)
            if rank < block:
                break
            rank -= block
            v += 1
        seq.append(v)
        lo = v
    return tuple(seq)


def mha_op_index(heads: Iterable[HeadType]) -> int:
    seq = sorted(HeadType(h).order for h in heads)
    if len(seq) not in HEAD_COUNTS:
        raise InvalidConfig("head count")
    start, _ = mha_block(len(seq))
    return start + _rank_multiset(seq, N_HEAD_TYPES)


@lru_cache(maxsize=65536)
def mha_op_decode(index: int) -> tuple[HeadType, ...]:
    if not 1 <= index <= N_MHA_OPS:
        raise InvalidConfig("mha index")
    r = index - 1
    b = max(i for i in range(len(HEAD_COUNTS)) if _MHA_OFFSETS[i] <= r)
    seq = _unrank_multiset(r - _MHA_OFFSETS[b], HEAD_COUNTS[b], N_HEAD_TYPES)
    return tuple(HEAD_TYPES[i] for i in seq)


def space_cardinality(layer_choices: Iterable[int] = LAYER_CHOICES) -> int:
    """Exact number of architectures: sum over depths of (per-layer choices)^depth."""
    per_layer = N_FF_OPS * len(HIDDEN_SIZES) * N_MHA_OPS
    return sum(per_layer ** l for l in layer_choices)


# ---------------------------------------------------------------------------
# embedding

def allocate_head_dims(hidden_size: int, n_heads: int) -> list[int]:
    """Equal split of ``hidden_size``; the first ``hidden_size % n_heads`` heads get one extra."""
    q, r = divmod(hidden_size, n_heads)
    return [q + (1 if i < r else 0) for i in range(n_heads)]


def make_layer(hidden_size: int, head_types: Iterable[HeadType], ff_stack: Sequence[int]) -> EncoderLayerConfig:
    kinds = sorted((HeadType(t) for t in head_types), key=lambda t: t.order)
    dims = allocate_head_dims(hidden_size, len(kinds))
    heads = tuple(Head(k, d) for k, d in zip(kinds, dims))
    return EncoderLayerConfig(heads, tuple(ff_stack), hidden_size)


def encode(arch: ArchitectureConfig) -> np.ndarray:
    validate(arch, grid=True)
    e = np.zeros(EMBEDDING_DIM, dtype=np.int64)
    e[0] = arch.n_layers
    for j, layer in enumerate(arch.layers):
        e[1 + 3 * j] = layer.hidden_size
        e[2 + 3 * j] = ff_op_index(layer.ff_stack)
        e[3 + 3 * j] = mha_op_index(h.kind for h in layer.heads)
    return e


def check_embedding(e: Sequence[int] | np.ndarray) -> np.ndarray:
    """Shared well-formedness check; returns the embedding as an int64 array."""
    arr = np.asarray(e)
    if arr.shape != (EMBEDDING_DIM,):
        raise MalformedEmbedding(f"embedding must have length {EMBEDDING_DIM}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
        raise MalformedEmbedding("embedding entries must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise MalformedEmbedding("negative entry")
    l = int(arr[0])
    if l not in LAYER_CHOICES:
        raise MalformedEmbedding(f"layer count {l} not in {LAYER_CHOICES}")
    for j in range(MAX_LAYERS):
        h, ff, mha = (int(v) for v in arr[1 + 3 * j: 4 + 3 * j])
        if j < l:
            if h == 0 or ff == 0 or mha == 0:
                raise MalformedEmbedding(f"zero entry in layer slot {j + 1} of {l}")
            if h not in HIDDEN_SIZES:
                raise MalformedEmbedding(f"hidden size {h} off grid")
            if not 1 <= ff <= N_FF_OPS:
                raise MalformedEmbedding(f"ff index {ff} out of range")
            if not 1 <= mha <= N_MHA_OPS:
                raise MalformedEmbedding(f"mha index {mha} out of range")
            if h < len(mha_op_decode(mha)):
                raise MalformedEmbedding("fewer hidden units than heads")
        elif h or ff or mha:
            raise MalformedEmbedding(f"nonzero entry in absent layer slot {j + 1}")
    return arr


def decode(e: Sequence[int] | np.ndarray) -> ArchitectureConfig:
    arr = check_embedding(e)
    layers = []
    for j in range(int(arr[0])):
        h, ff, mha = (int(v) for v in arr[1 + 3 * j: 4 + 3 * j])
        layers.append(make_layer(h, mha_op_decode(mha), ff_op_decode(ff)))
    return ArchitectureConfig(tuple(layers))


def is_well_formed(e) -> bool:
    try:
        check_embedding(e)
    except MalformedEmbedding:
        return False
    return True


# ---------------------------------------------------------------------------
# convenience constructors and summaries

def uniform_arch(n_layers: int, hidden_size: int, head_types: Sequence[HeadType],
                 ff_stack: Sequence[int]) -> ArchitectureConfig:
    layer = make_layer(hidden_size, head_types, ff_stack)
    return ArchitectureConfig((layer,) * n_layers)


def bert_tiny() -> ArchitectureConfig:
    """Two layers, hidden 128, two scaled dot-product heads, single FF layer of 512."""
    return uniform_arch(2, 128, [HeadType.SA_SDP] * 2, [512])


def median_hidden(arch: ArchitectureConfig) -> float:
    return float(np.median([layer.hidden_size for layer in arch.layers]))


def median_heads(arch: ArchitectureConfig) -> float:
    return float(np.median([layer.n_heads for layer in arch.layers]))


# fixed per-slot scale used to map embeddings into [0, 1]
EMBEDDING_SCALE = np.array(
    [MAX_LAYERS] + [max(HIDDEN_SIZES), N_FF_OPS, N_MHA_OPS] * MAX_LAYERS, dtype=np.float64
)


def normalize_embedding(e) -> np.ndarray:
    return np.asarray(e, dtype=np.float64) / EMBEDDING_SCALE
