import json

from edgetran import design_space as ds
from edgetran.cli import main


def test_space_stats(capsys):
    assert main(["space", "stats"]) == 0
    out = capsys.readouterr().out
    for token in ("258", "21805", str(ds.space_cardinality())):
        assert token in out


def test_encode_decode_round_trip(tmp_path, capsys):
    p = tmp_path / "a.json"
    p.write_text(ds.bert_tiny().to_json())
    assert main(["space", "encode", "--config-file", str(p)]) == 0
    emb = capsys.readouterr().out.strip()
    assert main(["space", "decode", "--embedding", emb]) == 0
    assert ds.ArchitectureConfig.from_json(capsys.readouterr().out) == ds.bert_tiny()


def test_usage_errors(capsys):
    assert main(["space", "stats", "--bogus"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["space", "encode"]) == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path):
    assert main(["report", "pareto", "--store", str(tmp_path / "missing.jsonl"), "--device", "A100",
                 "--out", str(tmp_path)]) == 2


def test_seed_drawn_and_recorded(tmp_path, capsys):
    assert main(["sample", "--n", "4", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert f"seed: {doc['seeds']['seed']}" in printed
    assert doc["outputs"].keys() == {"samples.csv"}


def test_same_seed_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["sample", "--n", "12", "--kind", "sobol", "--seed", "5", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (tmp_path / "b" / "samples.csv").read_bytes()


def test_devices_commands(capsys):
    assert main(["devices", "list"]) == 0
    assert "A100" in capsys.readouterr().out
    assert main(["devices", "calibrate-check"]) == 0


def test_env_override_reaches_command(tmp_path, monkeypatch):
    monkeypatch.setenv("EDGETRAN_SAMPLE_N", "3")
    assert main(["sample", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "samples.csv").read_text().splitlines()) == 4
