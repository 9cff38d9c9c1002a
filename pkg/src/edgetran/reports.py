"""CSV reports with optional PNG renderings (Pareto frontiers, contour grids, convergence curves)."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import design_space as ds
from . import protran
from .design_space import HeadType
from .devices import MEASURE_NAMES, MEASURE_UNITS
from .errors import ReportError
from .store import EvalRecord

CANONICAL_HEADS = [HeadType.SA_SDP] * 8
CANONICAL_FF = [1024]


def _column(name: str) -> str:
    return f"{name} [{MEASURE_UNITS[name]}]"


def pareto_front(cost: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Indices of points not dominated under (min cost, max value), sorted by cost.

    Exact duplicates are all kept.
    """
    cost, value = np.asarray(cost, float), np.asarray(value, float)
    if len(cost) != len(value):
        raise ReportError("cost and value lengths differ")
    order = np.lexsort((-value, cost))
    keep = []
    best = -np.inf
    last = None
    for i in order:
        if value[i] > best:
            keep.append(i)
            best = value[i]
            last = i
        elif last is not None and cost[i] == cost[last] and value[i] == value[last]:
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def _plot(path: Path, draw) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.6), dpi=100)
    draw(ax)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def report_pareto(records: list[EvalRecord], device_id: str, out_dir, plot: bool = True) -> list[Path]:
    """One frontier CSV (and PNG) per hardware measure: accuracy proxy against the measure."""
    recs = [r for r in records if r.device_id == device_id]
    if len(recs) < 2:
        raise ReportError(f"need at least 2 records for {device_id}, found {len(recs)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    acc = np.array([r.raw.get("accuracy_proxy", 0.0) for r in recs])
    written = []
    for name in MEASURE_NAMES:
        cost = np.array([r.raw[name] for r in recs])
        front = pareto_front(cost, acc)
        path = out_dir / f"pareto_{device_id}_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([_column(name), "accuracy_proxy [1]", "on_frontier", "embedding"])
            on = set(front.tolist())
            for i in np.argsort(cost, kind="stable"):
                w.writerow([f"{cost[i]:.6g}", f"{acc[i]:.6f}", int(i in on),
                            " ".join(str(v) for v in recs[i].arch_embedding)])
        written.append(path)
        if plot:
            png = path.with_suffix(".png")

            def draw(ax, cost=cost, front=front, name=name):
                ax.scatter(cost, acc, s=8, c="0.6", label="evaluated")
                ax.plot(cost[front], acc[front], "o-", c="C3", ms=4, label="frontier")
                ax.set_xlabel(_column(name))
                ax.set_ylabel("accuracy proxy")
                ax.set_title(device_id)
                ax.legend(fontsize=7)

            _plot(png, draw)
            written.append(png)
    return written


def contour_grid(surrogates: protran.Surrogates, layers=ds.LAYER_CHOICES, hidden=ds.HIDDEN_SIZES) -> dict:
    """Surrogate predictions on a depth x hidden-size grid, other coordinates canonical."""
    archs = [ds.uniform_arch(l, h, CANONICAL_HEADS, CANONICAL_FF) for l in layers for h in hidden]
    pred = protran.predict(surrogates, archs).reshape(len(layers), len(hidden), len(MEASURE_NAMES))
    return {name: pred[:, :, k] for k, name in enumerate(MEASURE_NAMES)}


def report_contour(surrogates: protran.Surrogates, out_dir, layers=ds.LAYER_CHOICES, hidden=ds.HIDDEN_SIZES,
                   plot: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grids = contour_grid(surrogates, layers, hidden)
    written = []
    for name, grid in grids.items():
        path = out_dir / f"contour_{surrogates.device_id}_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layers", "hidden_size", _column(name)])
            for a, l in enumerate(layers):
                for b, h in enumerate(hidden):
                    w.writerow([l, h, f"{grid[a, b]:.6g}"])
        written.append(path)
        if plot and len(layers) > 1 and len(hidden) > 1:
            png = path.with_suffix(".png")

            def draw(ax, grid=grid, name=name):
                cs = ax.contourf(list(hidden), list(layers), grid, levels=12, cmap="viridis")
                ax.figure.colorbar(cs, ax=ax, label=_column(name))
                ax.set_xlabel("hidden size")
                ax.set_ylabel("layers")
                ax.set_title(surrogates.device_id)

            _plot(png, draw)
            written.append(png)
    return written


def report_convergence(trace: list[float], out_dir, name: str = "convergence", baseline: list[float] | None = None,
                       plot: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["evaluation", "best_performance [1]"] + (["baseline_best [1]"] if baseline else []))
        for i, v in enumerate(trace):
            row = [i + 1, f"{v:.6f}"]
            if baseline:
                row.append(f"{baseline[min(i, len(baseline) - 1)]:.6f}")
            w.writerow(row)
    written = [path]
    if plot:
        png = path.with_suffix(".png")

        def draw(ax):
            ax.plot(np.arange(1, len(trace) + 1), trace, label="search")
            if baseline:
                ax.plot(np.arange(1, len(baseline) + 1), baseline, label="random")
            ax.set_xlabel("evaluations")
            ax.set_ylabel("best performance")
            ax.legend(fontsize=7)

        _plot(png, draw)
        written.append(png)
    return written
