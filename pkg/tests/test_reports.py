import csv

import numpy as np
import pytest

from edgetran import design_space as ds
from edgetran import devices as D
from edgetran import protran as P
from edgetran import reports as Rp
from edgetran import sampling as S
from edgetran.boshcode import accuracy_oracle
from edgetran.errors import ReportError
from edgetran.store import EvalRecord


def test_non_dominating_pair_both_kept():
    assert Rp.pareto_front([1.0, 2.0], [0.5, 0.7]).tolist() == [0, 1]


def test_dominated_point_excluded():
    assert Rp.pareto_front([1.0, 2.0, 1.5], [0.5, 0.7, 0.4]).tolist() == [0, 1]
    assert Rp.pareto_front([1.0, 1.0], [0.5, 0.5]).tolist() == [0, 1]
    with pytest.raises(ReportError):
        Rp.pareto_front([1.0], [0.5, 0.6])


def _sweep_records(device, n=60):
    recs = []
    for arch in S.sample(S.SamplerKind.LHS, n, 3):
        m = D.evaluate(device, arch, 0)
        raw = {**dict(zip(D.MEASURE_NAMES, map(float, m.hardware()))), "accuracy_proxy": accuracy_oracle(arch)}
        recs.append(EvalRecord([int(v) for v in ds.encode(arch)], device.id, raw, {}, None, "t", 0))
    return recs


def test_sweep_frontier_monotone_with_units(tmp_path, device_table):
    written = Rp.report_pareto(_sweep_records(device_table["A100"]), "A100", tmp_path, plot=False)
    assert len(written) == 3
    for path, unit in zip(written, ("s/seq", "J/seq", "W")):
        rows = list(csv.reader(open(path)))
        assert f"[{unit}]" in rows[0][0]
        front = [(float(r[0]), float(r[1])) for r in rows[1:] if r[2] == "1"]
        assert len(front) >= 2
        assert all(b[0] >= a[0] and b[1] >= a[1] for a, b in zip(front, front[1:]))


def test_pareto_needs_two_records(tmp_path, device_table):
    with pytest.raises(ReportError):
        Rp.report_pareto(_sweep_records(device_table["A100"], 1), "A100", tmp_path)


def test_pareto_png(tmp_path, device_table):
    written = Rp.report_pareto(_sweep_records(device_table["NCS-NPU"], 10), "NCS-NPU", tmp_path)
    assert sum(p.suffix == ".png" for p in written) == 3
    assert all(p.stat().st_size > 0 for p in written)


@pytest.fixture(scope="module")
def a100_surrogates(device_table):
    out = []
    for seed in range(5):
        _, st = P.run_until_converged(device_table["A100"], seed=seed, budget=120, threshold=1e-6)
        out.append(P.Surrogates.from_state(st))
    return out


def test_contour_depth_monotone_in_most_seeds(a100_surrogates):
    # seed 1 dips about 13% at one depth step; the canonical off-axis point is sparsely sampled
    ok = 0
    for s in a100_surrogates:
        g = Rp.contour_grid(s)
        ok += bool(np.all(np.diff(g["latency"], axis=0) >= 0) and np.all(np.diff(g["energy"], axis=0) >= 0))
    assert ok >= 4


def test_energy_grows_with_width_on_device(device_table):
    dev = device_table["A100"]
    for l in ds.LAYER_CHOICES:
        e = [D.evaluate_clean(dev, ds.uniform_arch(l, h, Rp.CANONICAL_HEADS, Rp.CANONICAL_FF)).energy
             for h in ds.HIDDEN_SIZES]
        assert all(b >= a for a, b in zip(e, e[1:]))


@pytest.mark.xfail(strict=True, reason="width moves A100 energy by 2-9%, below what the tree surrogates resolve")
def test_contour_energy_monotone_in_width(a100_surrogates):
    g = Rp.contour_grid(a100_surrogates[0])
    assert np.all(np.diff(g["energy"], axis=1) >= 0)


def test_contour_single_cell(tmp_path, a100_surrogates):
    s = a100_surrogates[0]
    written = Rp.report_contour(s, tmp_path, layers=[4], hidden=[256])
    assert [p.suffix for p in written] == [".csv"] * 3
    rows = list(csv.reader(open(written[0])))
    assert rows[0] == ["layers", "hidden_size", "latency [s/seq]"] and len(rows) == 2
    arch = ds.uniform_arch(4, 256, Rp.CANONICAL_HEADS, Rp.CANONICAL_FF)
    assert float(rows[1][2]) == pytest.approx(P.predict(s, [arch])[0, 0], rel=1e-5)


def test_convergence_report(tmp_path):
    written = Rp.report_convergence([0.1, 0.3, 0.3], tmp_path, baseline=[0.1, 0.2])
    rows = list(csv.reader(open(written[0])))
    assert rows[0] == ["evaluation", "best_performance [1]", "baseline_best [1]"]
    assert rows[-1] == ["3", "0.300000", "0.200000"]
    assert written[1].suffix == ".png"
