import json

import pytest

from edgetran.errors import DuplicateError, ScanError
from edgetran.store import EvalRecord, EvalStore, RunManifest, file_digest


def _rec(i, dev="A100", run="r"):
    return EvalRecord([2, 128, 1, 1, 128, 1, 1] + [0] * 30, dev, {"latency": 0.1 * i}, {"latency": 0.5}, None, run, i)


def test_round_trip(tmp_path):
    st = EvalStore(tmp_path / "e.jsonl")
    st.append(_rec(1))
    st.append(_rec(1, dev="NCS-NPU"))
    back = EvalStore(tmp_path / "e.jsonl").scan()
    assert [r.device_id for r in back] == ["A100", "NCS-NPU"]
    assert back[0].raw == {"latency": 0.1}


def test_duplicate_rejected_across_instances(tmp_path):
    EvalStore(tmp_path / "e.jsonl").append(_rec(1))
    with pytest.raises(DuplicateError):
        EvalStore(tmp_path / "e.jsonl").append(_rec(2))
    EvalStore(tmp_path / "e.jsonl").append(_rec(2, run="other"))


def test_many_appends_keep_order_and_timestamps(tmp_path):
    st = EvalStore(tmp_path / "e.jsonl")
    for i in range(10_000):
        st.append(_rec(i, run=str(i)))
    recs = st.scan()
    assert [r.seed for r in recs] == list(range(10_000))
    assert all(b.timestamp > a.timestamp for a, b in zip(recs, recs[1:]))
    assert len(st.scan(lambda r: r.seed % 2 == 0)) == 5_000


def test_corrupt_line_reports_position(tmp_path):
    p = tmp_path / "e.jsonl"
    EvalStore(p).append(_rec(1))
    with open(p, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(ScanError) as err:
        EvalStore(p).scan()
    assert err.value.line == 2


def test_wrong_schema_version(tmp_path):
    p = tmp_path / "e.jsonl"
    doc = json.loads(_rec(1).to_json())
    doc["schema_version"] = 99
    p.write_text(json.dumps(doc) + "\n")
    with pytest.raises(ScanError):
        EvalStore(p).scan()


def test_manifest(tmp_path):
    inp = tmp_path / "in.txt"
    inp.write_text("abc")
    m = RunManifest("sample", {"n": 3}, {"seed": 4})
    m.add_input(inp)
    m.add_output(inp)
    doc = json.loads(m.write(tmp_path).read_text())
    assert doc["seeds"] == {"seed": 4} and doc["outputs"]["in.txt"] == file_digest(inp)
    assert file_digest(inp) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
