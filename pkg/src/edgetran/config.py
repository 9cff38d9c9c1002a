"""Run configuration: built-in defaults < JSON file < ``EDGETRAN_<SECTION>_<KEY>`` env vars < CLI flags."""
from __future__ import annotations

import copy
import json
import os

from .errors import InvalidConfig

DEFAULTS: dict[str, dict] = {
    "sample": {"kind": "lhs", "n": 16},
    "profile": {"device": "NCS-NPU", "budget": 250, "threshold": 0.005, "strategy": "active"},
    "codesign": {"weights": "0.5,0.2,0.2,0.1", "budget": 200, "space": "full", "patience": 50},
    "gptran": {"budget": 200, "trainer": "synthetic", "child_steps": 300, "root_steps": 300,
               "max_backtracks": 2, "n_g": 10},
    "report": {"grid_layers": [2, 4, 6, 8, 10, 12], "grid_hidden": [128, 256, 512, 768]},
}

ENV_PREFIX = "EDGETRAN_"


def _coerce(text: str, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, list):
        return json.loads(text)
    return text


def load_config(path=None, env: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path) as fh:
            doc = json.load(fh)
        for section, values in doc.items():
            if section not in cfg:
                raise InvalidConfig(f"unknown config section {section!r}")
            for key, value in values.items():
                if key not in cfg[section]:
                    raise InvalidConfig(f"unknown key {section}.{key}")
                cfg[section][key] = value
    env = os.environ if env is None else env
    for name, text in env.items():
        if not name.startswith(ENV_PREFIX) or name == "EDGETRAN_NUMBA":
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for section in cfg:
            if rest.startswith(section + "_"):
                key = rest[len(section) + 1:]
                if key in cfg[section]:
                    try:
                        cfg[section][key] = _coerce(text, DEFAULTS[section][key])
                    except ValueError as exc:
                        raise InvalidConfig(f"{name}: {exc}") from exc
    return cfg
