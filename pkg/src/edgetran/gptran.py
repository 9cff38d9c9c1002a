"""Block-level grow-and-prune local search.

Starting from a trained root architecture, the search cycles through four
modes (grow attention, grow feed-forward, prune attention, prune
feed-forward).  Each expansion derives children from the current best node,
trains them after weight transfer, and moves to the child with the lowest
loss if it beats the best node.  A full cycle without improvement ends a
descent; the search may then backtrack to an unexpanded node that had beaten
its own parent and continue from there.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import design_space as ds
from . import micro
from .design_space import ArchitectureConfig, EncoderLayerConfig, Head, HeadType
from .micro import BlockStats


class Mode(enum.Enum):
    ROOT = "root"
    G_A = "G_A"
    G_FF = "G_FF"
    P_A = "P_A"
    P_FF = "P_FF"


MODES = (Mode.G_A, Mode.G_FF, Mode.P_A, Mode.P_FF)


@dataclass(frozen=True)
class GPHyper:
    head_types: tuple[HeadType, ...] = ds.HEAD_TYPES
    n_g: int = 10
    n_a_g: int = 1
    h_f_g: int = 1024
    n_p: int = 1
    n_a_p: int = 2
    h_f_p: int = 128
    grad_prob: float = 0.5
    child_steps: int = 300
    root_steps: int = 300
    transfer: str = "OT"
    max_backtracks: int = 2

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["head_types"] = [t.value for t in self.head_types]
        return d


@dataclass
class GPNode:
    id: int
    arch: ArchitectureConfig
    loss: float
    parent: int | None
    origin_mode: Mode
    depth: int
    param_count: int
    stats: BlockStats | None = None
    children: list[int] = field(default_factory=list)
    children_explored: set = field(default_factory=set)

    @property
    def expanded(self) -> bool:
        return bool(self.children_explored)

    def to_dict(self) -> dict:
        return {"id": self.id, "parent": self.parent, "origin_mode": self.origin_mode.value,
                "depth": self.depth, "loss": self.loss, "param_count": self.param_count,
                "children": list(self.children),
                "children_explored": sorted(m.value for m in self.children_explored),
                "arch": self.arch.to_dict()}


# ---------------------------------------------------------------------------
# trainers

class Trainer(Protocol):
    def train_root(self, arch: ArchitectureConfig) -> tuple[float, BlockStats, object]: ...
    def train_child(self, parent_handle, child_arch: ArchitectureConfig,
                    seed: int) -> tuple[float, BlockStats, object]: ...


def param_count(arch: ArchitectureConfig) -> int:
    return int(sum(math.prod(s) for s in micro.param_shapes(arch).values()))


class MicroTrainer:
    """Trains real micro models: transfer from the parent, a fixed step budget, held-out loss."""

    def __init__(self, hyper: GPHyper = GPHyper(), corpus_seed: int = 0, seed: int = 0, eval_batches: int = 8):
        self.hyper = hyper
        self.corpus_seed = corpus_seed
        self.seed = seed
        self.eval_batches = eval_batches

    def _finish(self, model, steps):
        model, _, stats = micro.train_steps(model, self.corpus_seed, steps)
        return micro.evaluate_loss(model, self.corpus_seed, self.eval_batches), stats, model

    def train_root(self, arch):
        return self._finish(micro.build(arch, self.seed), self.hyper.root_steps)

    def train_child(self, parent_handle, child_arch, seed):
        child = micro.transfer_weights(parent_handle, child_arch, self.hyper.transfer, seed)
        return self._finish(child, self.hyper.child_steps)


def _arch_seed(arch: ArchitectureConfig) -> int:
    return zlib.crc32(json.dumps(arch.to_dict(), sort_keys=True).encode())


def synthetic_stats(arch: ArchitectureConfig) -> BlockStats:
    """Deterministic pseudo block statistics keyed on the architecture."""
    rng = np.random.default_rng(_arch_seed(arch))
    st = BlockStats()
    for j, layer in enumerate(arch.layers):
        for i in range(layer.n_heads):
            st.head_grad_norm[(j, i)] = float(rng.random())
            st.head_act_grad_norm[(j, i)] = st.head_grad_norm[(j, i)]
            st.head_weight_mag[(j, i)] = float(rng.random())
        for k in range(len(layer.ff_stack)):
            st.ff_grad_norm[(j, k)] = float(rng.random())
            st.ff_weight_mag[(j, k)] = float(rng.random())
    return st


class SyntheticTrainer:
    """Loss oracle stand-in: ``loss_fn(arch)`` with optional custom block statistics."""

    def __init__(self, loss_fn: Callable[[ArchitectureConfig], float],
                 stats_fn: Callable[[ArchitectureConfig], BlockStats] = synthetic_stats):
        self.loss_fn = loss_fn
        self.stats_fn = stats_fn

    def train_root(self, arch):
        return float(self.loss_fn(arch)), self.stats_fn(arch), None

    def train_child(self, parent_handle, child_arch, seed):
        return float(self.loss_fn(child_arch)), self.stats_fn(child_arch), None


def default_loss_oracle(arch: ArchitectureConfig) -> float:
    """Smooth synthetic pre-training loss: capacity helps with diminishing returns, size costs a little."""
    n = param_count(arch)
    heads = [h.kind for layer in arch.layers for h in layer.heads]
    sa = sum(k.family == "SA" for k in heads) / len(heads)
    fams = len({k.family for k in heads})
    return 2.0 + 3.0 / math.sqrt(n / 1e4) + 1e-7 * n - 0.05 * sa - 0.02 * fams


# ---------------------------------------------------------------------------
# child generators

def _median_dim(layer: EncoderLayerConfig) -> int:
    return int(np.median([h.dim for h in layer.heads]))


def _insert_head(arch: ArchitectureConfig, j: int, pos: int, head: Head) -> ArchitectureConfig:
    layer = arch.layers[j]
    heads = list(layer.heads)
    heads.insert(pos, head)
    return arch.replace_layer(j, EncoderLayerConfig(tuple(heads), layer.ff_stack, layer.hidden_size + head.dim))


def _ranked(scores: dict, descending: bool) -> list:
    """Keys by score; ties by (layer, index) ascending."""
    sign = -1.0 if descending else 1.0
    return sorted(scores, key=lambda key: (sign * scores[key], key))


def grow_attention(arch: ArchitectureConfig, stats: BlockStats, hyper: GPHyper,
                   rng: np.random.Generator, notices: list | None = None) -> list[tuple[ArchitectureConfig, dict]]:
    """``n_g`` children, each with ``n_a_g`` extra heads.

    Gradient branch: the new head copies the type and dim of the k-th highest
    gradient head and sits right after it, k advancing across children.
    Random branch: uniformly random type, layer and position; dim is the
    layer's median head dim.
    """
    notices = notices if notices is not None else []
    ranked = _ranked(stats.head_grad_norm, descending=True)
    k = 0
    children = []
    for c in range(hyper.n_g):
        child, info = arch, {"added": []}
        for _ in range(hyper.n_a_g):
            open_layers = [j for j, layer in enumerate(child.layers) if layer.n_heads < ds.MAX_HEADS]
            if not open_layers:
                break
            if rng.random() < hyper.grad_prob:
                cands = [(j, i) for (j, i) in ranked if child.layers[j].n_heads < ds.MAX_HEADS]
                j, i = cands[k % len(cands)]
                k += 1
                src = child.layers[j].heads[i]
                child = _insert_head(child, j, i + 1, Head(src.kind, src.dim))
                info["added"].append({"branch": "gradient", "layer": j, "position": i + 1, "type": src.kind.value})
            else:
                j = open_layers[int(rng.integers(len(open_layers)))]
                kind = hyper.head_types[int(rng.integers(len(hyper.head_types)))]
                pos = int(rng.integers(child.layers[j].n_heads + 1))
                child = _insert_head(child, j, pos, Head(kind, _median_dim(child.layers[j])))
                info["added"].append({"branch": "random", "layer": j, "position": pos, "type": kind.value})
        if not info["added"]:
            notices.append(f"G_A child {c}: every layer already has {ds.MAX_HEADS} heads; skipped")
            continue
        children.append((child, info))
    return children


def grow_ff(arch: ArchitectureConfig, stats: BlockStats, hyper: GPHyper,
            rng: np.random.Generator, notices: list | None = None) -> list[tuple[ArchitectureConfig, dict]]:
    """``n_g`` children, each appending ``min(h_F, h_F^G)`` neurons to one feed-forward stack."""
    notices = notices if notices is not None else []
    open_stacks = [j for j, layer in enumerate(arch.layers) if len(layer.ff_stack) < ds.MAX_FF_DEPTH]
    if not open_stacks:
        notices.append("G_FF: every feed-forward stack is at full depth; no children")
        return []
    score = {j: float(np.mean([stats.ff_grad_norm.get((j, k), 0.0) for k in range(len(arch.layers[j].ff_stack))]))
             for j in open_stacks}
    ranked = sorted(open_stacks, key=lambda j: (-score[j], j))
    k = 0
    children = []
    for _ in range(hyper.n_g):
        if rng.random() < hyper.grad_prob:
            j = ranked[k % len(ranked)]
            k += 1
            branch = "gradient"
        else:
            j = open_stacks[int(rng.integers(len(open_stacks)))]
            branch = "random"
        layer = arch.layers[j]
        width = min(layer.ff_stack[-1], hyper.h_f_g)
        child = arch.replace_layer(j, EncoderLayerConfig(layer.heads, (*layer.ff_stack, width), layer.hidden_size))
        children.append((child, {"branch": branch, "layer": j, "width": width}))
    return children


def prune_attention(arch: ArchitectureConfig, stats: BlockStats, hyper: GPHyper,
                    notices: list | None = None) -> list[tuple[ArchitectureConfig, dict]]:
    """One child without the ``n_a_p`` heads of smallest mean weight magnitude.

    A head is passed over for the next one if removing it would empty its
    layer, or would not shrink the model: a narrower layer between two
    unchanged neighbours needs hidden-size projections that can cost more
    than the head saves.
    """
    notices = notices if notices is not None else []
    removed: list[tuple[int, int]] = []
    child, size = arch, param_count(arch)
    for j, i in _ranked(stats.head_weight_mag, descending=False):
        if len(removed) == hyper.n_a_p:
            break
        if arch.layers[j].n_heads - sum(jj == j for jj, _ in removed) <= 1:
            notices.append(f"P_A: keeping head {i} of layer {j}, the layer's last head")
            continue
        cand = _drop_heads(arch, removed + [(j, i)])
        cand_size = param_count(cand)
        if cand_size >= size:
            notices.append(f"P_A: keeping head {i} of layer {j}, removing it adds projection parameters")
            continue
        removed.append((j, i))
        child, size = cand, cand_size
    if len(removed) < hyper.n_a_p:
        notices.append("P_A: not enough removable heads; no child")
        return []
    return [(child, {"removed": [list(r) for r in removed]})]


def _drop_heads(arch: ArchitectureConfig, removed: list[tuple[int, int]]) -> ArchitectureConfig:
    child = arch
    for j in sorted({j for j, _ in removed}):
        drop = {i for jj, i in removed if jj == j}
        layer = arch.layers[j]
        heads = tuple(h for i, h in enumerate(layer.heads) if i not in drop)
        child = child.replace_layer(j, EncoderLayerConfig(heads, layer.ff_stack, sum(h.dim for h in heads)))
    return child


def prune_ff(arch: ArchitectureConfig, stats: BlockStats, hyper: GPHyper,
             notices: list | None = None) -> list[tuple[ArchitectureConfig, dict]]:
    """One child with the ``n_a_p`` smallest-magnitude FF layers cut to ``min(h_F^P, h_F - h_F^P)``.

    The count deliberately reuses ``n_a_p`` rather than a separate knob.  Layers
    already at or below ``h_F^P`` are left alone and the next one is taken.
    """
    notices = notices if notices is not None else []
    picked = []
    for j, k in _ranked(stats.ff_weight_mag, descending=False):
        if len(picked) == hyper.n_a_p:
            break
        w = arch.layers[j].ff_stack[k]
        if w <= hyper.h_f_p:
            notices.append(f"P_FF: layer {j} ff{k} has width {w} <= {hyper.h_f_p}; skipped")
            continue
        picked.append((j, k, w, min(hyper.h_f_p, w - hyper.h_f_p)))
    if not picked:
        notices.append("P_FF: no prunable feed-forward layer; no child")
        return []
    child = arch
    for j, k, _, new in picked:
        layer = child.layers[j]
        stack = list(layer.ff_stack)
        stack[k] = new
        child = child.replace_layer(j, EncoderLayerConfig(layer.heads, tuple(stack), layer.hidden_size))
    return [(child, {"resized": [[j, k, w, new] for j, k, w, new in picked]})]


# ---------------------------------------------------------------------------
# search

@dataclass
class GPResult:
    best: GPNode
    nodes: list[GPNode]
    log: list[dict]
    budget_reached: bool

    def mode_log(self) -> list[str]:
        return [e["mode"] for e in self.log if e["event"] == "expand"]

    def n_backtracks(self) -> int:
        return sum(e["event"] == "backtrack" for e in self.log)

    def to_dict(self) -> dict:
        return {"best": self.best.id, "budget_reached": self.budget_reached,
                "nodes": [n.to_dict() for n in self.nodes], "log": self.log}


def _children(mode: Mode, node: GPNode, hyper: GPHyper, rng, notices):
    if mode is Mode.G_A:
        return grow_attention(node.arch, node.stats, hyper, rng, notices)
    if mode is Mode.G_FF:
        return grow_ff(node.arch, node.stats, hyper, rng, notices)
    if mode is Mode.P_A:
        return prune_attention(node.arch, node.stats, hyper, notices)
    return prune_ff(node.arch, node.stats, hyper, notices)


def run_gptran(root_arch: ArchitectureConfig, trainer: Trainer | None = None, hyper: GPHyper = GPHyper(),
               budget: int = 200, seed: int = 0) -> GPResult:
    """Grow-and-prune search; ``budget`` caps the number of trained children.

    The mode cursor advances once per expansion and is never reset, so the
    expansion log cycles G_A, G_FF, P_A, P_FF throughout, backtracks included.
    """
    trainer = trainer or SyntheticTrainer(default_loss_oracle)
    rng = np.random.default_rng(seed)
    loss, stats, handle = trainer.train_root(root_arch)
    root = GPNode(0, root_arch, loss, None, Mode.ROOT, 0, param_count(root_arch), stats)
    nodes, handles = [root], {0: handle}
    log: list[dict] = [{"event": "root", "node": 0, "loss": loss}]
    best, cursor, stale, backtracks, trained = root, 0, 0, 0, 0
    budget_reached = False
    while True:
        if trained >= budget:
            budget_reached = True
            log.append({"event": "budget", "trained": trained})
            break
        mode = MODES[cursor]
        cursor = (cursor + 1) % len(MODES)
        notices: list[str] = []
        specs = _children(mode, best, hyper, rng, notices)
        best.children_explored.add(mode)
        log.append({"event": "expand", "node": best.id, "mode": mode.value, "n_children": len(specs)})
        log.extend({"event": "notice", "mode": mode.value, "text": t} for t in notices)
        kids = []
        for arch, info in specs:
            if trained >= budget:
                break
            loss, stats, handle = trainer.train_child(handles[best.id], arch, int(rng.integers(0, 2**31 - 1)))
            trained += 1
            node = GPNode(len(nodes), arch, loss, best.id, mode, best.depth + 1, param_count(arch), stats)
            nodes.append(node)
            handles[node.id] = handle
            best.children.append(node.id)
            kids.append(node)
            log.append({"event": "child", "node": node.id, "parent": best.id, "mode": mode.value,
                        "loss": loss, "param_count": node.param_count, "info": info})
        top = min(kids, key=lambda n: (n.loss, n.param_count)) if kids else None
        if top is not None and top.loss < best.loss:
            log.append({"event": "accept", "node": top.id, "from": best.id, "mode": mode.value, "loss": top.loss})
            best, stale = top, 0
            continue
        stale += 1
        if stale < len(MODES):
            continue
        log.append({"event": "leaf", "node": best.id, "loss": best.loss})
        if backtracks >= hyper.max_backtracks:
            break
        # next-best viable move: an unexpanded node that beat its own parent
        cands = [n for n in nodes if not n.expanded and n.parent is not None and n.loss < nodes[n.parent].loss]
        if not cands:
            break
        target = min(cands, key=lambda n: (n.loss, n.param_count, n.id))
        backtracks += 1
        log.append({"event": "backtrack", "from": best.id, "to": target.id, "loss": target.loss})
        best, stale = target, 0
    winner = min(nodes, key=lambda n: (n.loss, n.param_count, n.id))
    return GPResult(winner, nodes, log, budget_reached)


def write_tree(result: GPResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2)


def write_loss_trace(result: GPResult, path) -> None:
    """Best loss after every trained node, plus the node that produced it."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "mode", "depth", "loss", "best_loss", "param_count"])
        best = math.inf
        for n in result.nodes:
            best = min(best, n.loss)
            w.writerow([n.id, n.origin_mode.value, n.depth, f"{n.loss:.6g}", f"{best:.6g}", n.param_count])
