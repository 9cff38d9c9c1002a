"""Append-only JSONL evaluation store and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from . import __version__
from .errors import DuplicateError, ScanError

STORE_VERSION = 1


@dataclass
class EvalRecord:
    arch_embedding: list[int]
    device_id: str
    raw: dict
    normalized: dict
    performance: float | None = None
    run_id: str = ""
    seed: int = 0
    timestamp: float = 0.0
    schema_version: int = STORE_VERSION

    def key(self) -> tuple:
        return (tuple(self.arch_embedding), self.device_id, self.run_id)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalRecord":
        if doc.get("schema_version") != STORE_VERSION:
            raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
        doc = dict(doc)
        doc["arch_embedding"] = [int(v) for v in doc["arch_embedding"]]
        return cls(**doc)


class EvalStore:
    """One JSON record per line; a single writer appends, scans preserve file order."""

    def __init__(self, path):
        self.path = Path(path)
        self._keys: set | None = None
        self._last_ts = 0.0

    def _load_keys(self):
        if self._keys is None:
            recs = self.scan() if self.path.exists() else []
            self._keys = {r.key() for r in recs}
            self._last_ts = max((r.timestamp for r in recs), default=0.0)

    def append(self, rec: EvalRecord) -> EvalRecord:
        self._load_keys()
        if rec.key() in self._keys:
            raise DuplicateError(f"record already stored for {rec.device_id} in run {rec.run_id!r}")
        # strictly increasing even when the clock does not advance
        rec.timestamp = max(time.time(), self._last_ts + 1e-6)
        self._last_ts = rec.timestamp
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(rec.to_json() + "\n")
        self._keys.add(rec.key())
        return rec

    def extend(self, recs) -> None:
        for r in recs:
            self.append(r)

    def iter_scan(self, where: Callable[[EvalRecord], bool] | None = None) -> Iterator[EvalRecord]:
        with open(self.path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = EvalRecord.from_dict(json.loads(line))
                except (ValueError, TypeError, KeyError) as exc:
                    raise ScanError(f"{self.path}: {exc}", lineno) from exc
                if where is None or where(rec):
                    yield rec

    def scan(self, where: Callable[[EvalRecord], bool] | None = None) -> list[EvalRecord]:
        return list(self.iter_scan(where))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    version: str = __version__

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path) -> None:
        self.outputs[os.path.basename(path)] = file_digest(path)

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
        return path
