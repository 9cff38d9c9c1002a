import json

import pytest

from edgetran.config import DEFAULTS, load_config
from edgetran.errors import InvalidConfig


def test_defaults_untouched():
    cfg = load_config(env={})
    assert cfg == DEFAULTS and cfg is not DEFAULTS


def test_file_then_env_precedence(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"profile": {"budget": 100, "device": "A100"}}))
    cfg = load_config(p, env={"EDGETRAN_PROFILE_BUDGET": "30", "EDGETRAN_NUMBA": "0"})
    assert cfg["profile"]["budget"] == 30 and cfg["profile"]["device"] == "A100"


def test_env_coercion():
    env = {"EDGETRAN_PROFILE_THRESHOLD": "0.01", "EDGETRAN_REPORT_GRID_LAYERS": "[2, 4]",
           "EDGETRAN_CODESIGN_SPACE": "uniform", "EDGETRAN_GPTRAN_N_G": "4"}
    cfg = load_config(env=env)
    assert cfg["profile"]["threshold"] == 0.01
    assert cfg["report"]["grid_layers"] == [2, 4]
    assert cfg["codesign"]["space"] == "uniform"
    assert cfg["gptran"]["n_g"] == 4


def test_bad_values(tmp_path):
    with pytest.raises(InvalidConfig):
        load_config(env={"EDGETRAN_PROFILE_BUDGET": "many"})
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"profile": {"budgett": 3}}))
    with pytest.raises(InvalidConfig):
        load_config(p, env={})
    p.write_text(json.dumps({"nope": {}}))
    with pytest.raises(InvalidConfig):
        load_config(p, env={})
