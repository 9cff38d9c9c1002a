"""Device backends returning latency, energy and peak power for an architecture.

The synthetic devices use a small roofline-style cost model:

* per-layer compute time ``flops * batch / (throughput * min(parallel_width, hidden))``
  plus a fixed per-layer dispatch cost,
* a weight-streaming memory term and a fixed per-batch overhead,
* a latency multiplier once the weights overflow device memory,
* energy ``static_power * latency + energy_per_flop * flops + energy_per_byte * bytes``,
* peak power ``static + dynamic * (1 - exp(-work / work_scale))``.

Each device then carries three output scales chosen so that a handful of
reference ratios between devices hold exactly (see :func:`calibrate`).
"""
from __future__ import annotations

import hashlib
import json
import math
import statistics
import threading
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import design_space as ds
from .design_space import ArchitectureConfig, HeadType
from .errors import AggregateError, MeasureError

DEVICE_IDS = ("A100", "M1-CPU", "M1-GPU", "RPi-CPU", "NCS-NPU", "Nano-CPU", "Nano-GPU")
BATCH_SIZES = {"A100": 128, "M1-CPU": 32, "M1-GPU": 32, "RPi-CPU": 1, "NCS-NPU": 1, "Nano-CPU": 1, "Nano-GPU": 1}
DEVICE_FILE_VERSION = 1
SEQ_LEN = 128
BYTES_PER_PARAM = 4
NOISE = 0.02

# reference targets the shipped parameters are solved against
A100_MIN_LATENCY = 5.69e-3          # s/seq, smallest grid model
A100_OVER_M1GPU_ENERGY = 17.6       # BERT-Tiny
A100_OVER_M1GPU_PEAK = 6.6
NCS_OVER_A100_LATENCY = 22.3
M1GPU_OVER_A100_LATENCY = 1.106
A100_BERT_TINY_PEAK = 42.0          # W


@dataclass(frozen=True)
class MeasureVector:
    latency: float       # s/seq
    energy: float        # J/seq
    peak_power: float    # W
    accuracy_proxy: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.latency, self.energy, self.peak_power, self.accuracy_proxy])

    def hardware(self) -> np.ndarray:
        return np.array([self.latency, self.energy, self.peak_power])

    def to_dict(self) -> dict:
        return {"latency_s_per_seq": self.latency, "energy_j_per_seq": self.energy,
                "peak_power_w": self.peak_power, "accuracy_proxy": self.accuracy_proxy}

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureVector":
        return cls(d["latency_s_per_seq"], d["energy_j_per_seq"], d["peak_power_w"], d.get("accuracy_proxy", 0.0))


MEASURE_NAMES = ("latency", "energy", "peak_power")
MEASURE_UNITS = {"latency": "s/seq", "energy": "J/seq", "peak_power": "W"}


@dataclass(frozen=True)
class DeviceProfile:
    id: str
    batch_size: int
    cost_params: dict = field(default_factory=dict, hash=False, compare=False)

    @property
    def index(self) -> int:
        return DEVICE_IDS.index(self.id)

    def encoding(self) -> np.ndarray:
        return device_encoding(self.id)

    def to_dict(self) -> dict:
        return {"id": self.id, "batch_size": self.batch_size, "cost_params": dict(self.cost_params)}


def device_encoding(device_id: str) -> np.ndarray:
    v = np.zeros(len(DEVICE_IDS), dtype=np.int64)
    v[DEVICE_IDS.index(device_id)] = 1
    return v


def decode_device(onehot) -> str:
    v = np.asarray(onehot)
    if v.shape != (len(DEVICE_IDS),) or set(np.unique(v).tolist()) - {0, 1} or v.sum() != 1:
        raise ValueError("device encoding must be one-hot over 7 devices")
    return DEVICE_IDS[int(np.argmax(v))]


# ---------------------------------------------------------------------------
# workload model

def head_flops(kind: HeadType, dim: int, hidden: int, seq: int) -> float:
    proj_in = 2.0 * seq * hidden * dim
    proj_out = 2.0 * seq * dim * hidden
    fam = kind.family
    if fam == "SA":
        f = 3 * proj_in + 4.0 * seq * seq * dim + proj_out
        if kind is HeadType.SA_WMA:
            f += 2.0 * seq * dim * dim
        return f
    if fam == "LT":
        mix = 5.0 * seq * dim * math.log2(seq * max(dim, 2))
        if kind is HeadType.LT_DCT:
            mix *= 1.25
        return proj_in + mix + proj_out
    return proj_in + 2.0 * seq * dim * kind.kernel_size + proj_out


def head_params(kind: HeadType, dim: int, hidden: int) -> int:
    fam = kind.family
    if fam == "SA":
        n = 4 * hidden * dim
        if kind is HeadType.SA_WMA:
            n += dim * dim
        return n
    if fam == "LT":
        return 2 * hidden * dim
    return 2 * hidden * dim + kind.kernel_size * dim


def ff_flops(stack, hidden: int, seq: int) -> float:
    dims = [hidden, *stack, hidden]
    return sum(2.0 * seq * a * b for a, b in zip(dims[:-1], dims[1:]))


def ff_params(stack, hidden: int) -> int:
    dims = [hidden, *stack, hidden]
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class Workload:
    layer_flops: tuple[float, ...]    # per sequence
    layer_width: tuple[int, ...]
    layer_ops: tuple[int, ...]        # dispatched kernels per layer
    params: int

    @property
    def flops(self) -> float:
        return float(sum(self.layer_flops))


def workload(arch: ArchitectureConfig, seq_len: int = SEQ_LEN) -> Workload:
    flops, widths, ops, params = [], [], [], 0
    prev = None
    for layer in arch.layers:
        h = layer.hidden_size
        f = sum(head_flops(hd.kind, hd.dim, h, seq_len) for hd in layer.heads)
        f += ff_flops(layer.ff_stack, h, seq_len) + 10.0 * seq_len * h  # layer norms, residuals
        p = sum(head_params(hd.kind, hd.dim, h) for hd in layer.heads) + ff_params(layer.ff_stack, h) + 4 * h
        if prev is not None and prev != h:
            f += 2.0 * seq_len * prev * h
            p += prev * h
        flops.append(f)
        widths.append(h)
        ops.append(len(layer.heads) + len(layer.ff_stack) + 3)
        params += p
        prev = h
    return Workload(tuple(flops), tuple(widths), tuple(ops), params)


# ---------------------------------------------------------------------------
# synthetic cost model

def _raw_measures(cp: dict, batch: int, w: Workload, seq_len: int = SEQ_LEN) -> tuple[float, float, float]:
    pw = cp["parallel_width"]
    t = cp["batch_overhead_s"]
    for f, h, n_ops in zip(w.layer_flops, w.layer_width, w.layer_ops):
        t += cp["layer_overhead_s"] + cp["op_overhead_s"] * n_ops
        t += cp["act_s_per_elem"] * batch * seq_len * h
        t += f * batch / (cp["flops_per_s_per_lane"] * min(pw, h))
    nbytes = w.params * BYTES_PER_PARAM
    t += nbytes / cp["mem_bandwidth_Bps"]
    overflow = max(0.0, nbytes / cp["mem_capacity_B"] - 1.0)
    t *= 1.0 + cp["mem_penalty"] * overflow
    latency = t / batch
    energy = cp["static_power_w"] * latency + cp["energy_per_flop_j"] * w.flops + cp["energy_per_byte_j"] * nbytes / batch
    width = batch * min(pw, max(w.layer_width))
    peak = cp["static_power_w"] + cp["dynamic_power_w"] * (1.0 - math.exp(-width / cp["width_scale"]))
    return latency, energy, peak


def _noise(device_id: str, arch: ArchitectureConfig, task_seed: int) -> np.ndarray:
    key = f"{device_id}|{task_seed}|{arch.to_json()}".encode()
    seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
    return 1.0 + NOISE * np.random.default_rng(seed).uniform(-1.0, 1.0, size=3)


def evaluate_clean(device: DeviceProfile, arch: ArchitectureConfig) -> MeasureVector:
    """Noise-free synthetic measurement."""
    cp = device.cost_params
    lat, en, pk = _raw_measures(cp, device.batch_size, workload(arch))
    return MeasureVector(lat * cp["latency_scale"], en * cp["energy_scale"], pk * cp["power_scale"], 0.0)


def evaluate(device: DeviceProfile, arch: ArchitectureConfig, task_seed: int = 0) -> MeasureVector:
    """Synthetic measurement with bounded (+-2%) multiplicative run-to-run noise."""
    ds.validate(arch, grid=False)
    m = evaluate_clean(device, arch)
    nz = _noise(device.id, arch, task_seed)
    return MeasureVector(m.latency * nz[0], m.energy * nz[1], m.peak_power * nz[2], 0.0)


def aggregate(measures: list[MeasureVector]) -> MeasureVector:
    """Componentwise geometric mean."""
    if not measures:
        raise AggregateError("cannot aggregate an empty list")
    if len(measures) == 1:
        return measures[0]
    arr = np.stack([m.as_array() for m in measures])
    out = []
    for col in arr.T:
        if np.any(col <= 0):
            out.append(0.0 if np.all(col >= 0) else float("nan"))
        else:
            out.append(float(np.exp(np.mean(np.log(col)))))
    return MeasureVector(*out)


# ---------------------------------------------------------------------------
# parameters and calibration

# Shape parameters per device; output scales are filled in by calibrate().
BASE_PARAMS = {
    "A100": dict(parallel_width=4096, flops_per_s_per_lane=2e+10, layer_overhead_s=0.005,
        op_overhead_s=0.002, act_s_per_elem=2e-10, batch_overhead_s=0.5, mem_bandwidth_Bps=1.5e+12,
        mem_capacity_B=4e+10, mem_penalty=0, static_power_w=40, dynamic_power_w=260,
        width_scale=2e+05, energy_per_flop_j=2e-13, energy_per_byte_j=1e-10),
    "M1-CPU": dict(parallel_width=256, flops_per_s_per_lane=1.5e+08, layer_overhead_s=0.002,
        op_overhead_s=0.0001, act_s_per_elem=1e-09, batch_overhead_s=0.05, mem_bandwidth_Bps=6e+10,
        mem_capacity_B=1.6e+10, mem_penalty=0, static_power_w=8, dynamic_power_w=16,
        width_scale=8000, energy_per_flop_j=1e-10, energy_per_byte_j=2e-10),
    "M1-GPU": dict(parallel_width=1024, flops_per_s_per_lane=1e+10, layer_overhead_s=0.002,
        op_overhead_s=0.003, act_s_per_elem=1e-09, batch_overhead_s=0.08, mem_bandwidth_Bps=6e+10,
        mem_capacity_B=1.6e+10, mem_penalty=0, static_power_w=3, dynamic_power_w=16,
        width_scale=2e+04, energy_per_flop_j=1e-13, energy_per_byte_j=5e-11),
    "RPi-CPU": dict(parallel_width=64, flops_per_s_per_lane=2e+08, layer_overhead_s=0.005, op_overhead_s=0.001,
        act_s_per_elem=1e-08, batch_overhead_s=0.2, mem_bandwidth_Bps=4e+09, mem_capacity_B=1e+09,
        mem_penalty=0.5, static_power_w=3, dynamic_power_w=2, width_scale=200,
        energy_per_flop_j=2e-10, energy_per_byte_j=5e-10),
    "NCS-NPU": dict(parallel_width=128, flops_per_s_per_lane=1e+10, layer_overhead_s=0.02, op_overhead_s=0.01,
        act_s_per_elem=2e-08, batch_overhead_s=0.5, mem_bandwidth_Bps=2e+10, mem_capacity_B=5e+09,
        mem_penalty=0, static_power_w=2.05, dynamic_power_w=0.05, width_scale=200,
        energy_per_flop_j=1e-13, energy_per_byte_j=1e-11),
    "Nano-CPU": dict(parallel_width=64, flops_per_s_per_lane=1.5e+08, layer_overhead_s=0.005,
        op_overhead_s=0.001, act_s_per_elem=1e-08, batch_overhead_s=0.2, mem_bandwidth_Bps=8e+09,
        mem_capacity_B=4e+09, mem_penalty=0.5, static_power_w=2.5, dynamic_power_w=2,
        width_scale=200, energy_per_flop_j=1.5e-10, energy_per_byte_j=3e-10),
    "Nano-GPU": dict(parallel_width=256, flops_per_s_per_lane=4e+09, layer_overhead_s=0.04, op_overhead_s=0.02,
        act_s_per_elem=5e-08, batch_overhead_s=2, mem_bandwidth_Bps=8e+09, mem_capacity_B=4e+09,
        mem_penalty=0.5, static_power_w=2.5, dynamic_power_w=2, width_scale=300,
        energy_per_flop_j=1e-12, energy_per_byte_j=5e-11),
}

# Illustrative absolute anchors (BERT-Tiny, noise-free) for devices without a ratio target.
ANCHORS = {
    "M1-CPU": dict(latency=0.16, energy=3.1, peak=21.0),
    "RPi-CPU": dict(latency=2.1, energy=28.0, peak=4.4),
    "Nano-CPU": dict(latency=6.5, energy=15.0, peak=4.0),
    "Nano-GPU": dict(latency=41.0, energy=90.0, peak=4.1),
}


def min_latency_config() -> ArchitectureConfig:
    """Cheapest grid model: 2 layers, hidden 128, two DFT heads, single FF layer of 256."""
    return ds.uniform_arch(2, 128, [HeadType.LT_DFT] * 2, [256])


def calibrate(base: dict | None = None) -> dict[str, DeviceProfile]:
    """Solve per-device output scales so the reference ratios hold exactly."""
    base = base or BASE_PARAMS
    tiny = workload(ds.bert_tiny())
    cheapest = workload(min_latency_config())
    raw = {d: _raw_measures(base[d], BATCH_SIZES[d], tiny) for d in DEVICE_IDS}
    scales: dict[str, dict] = {}

    a_lat = A100_MIN_LATENCY / _raw_measures(base["A100"], BATCH_SIZES["A100"], cheapest)[0]
    a100 = dict(latency_scale=a_lat, energy_scale=1.0, power_scale=A100_BERT_TINY_PEAK / raw["A100"][2])
    scales["A100"] = a100
    tiny_a = (raw["A100"][0] * a100["latency_scale"], raw["A100"][1] * a100["energy_scale"],
              raw["A100"][2] * a100["power_scale"])
    scales["M1-GPU"] = dict(
        latency_scale=M1GPU_OVER_A100_LATENCY * tiny_a[0] / raw["M1-GPU"][0],
        energy_scale=tiny_a[1] / A100_OVER_M1GPU_ENERGY / raw["M1-GPU"][1],
        power_scale=tiny_a[2] / A100_OVER_M1GPU_PEAK / raw["M1-GPU"][2],
    )
    scales["NCS-NPU"] = dict(latency_scale=NCS_OVER_A100_LATENCY * tiny_a[0] / raw["NCS-NPU"][0],
                             energy_scale=1.0, power_scale=1.0)
    for d, a in ANCHORS.items():
        scales[d] = dict(latency_scale=a["latency"] / raw[d][0], energy_scale=a["energy"] / raw[d][1],
                         power_scale=a["peak"] / raw[d][2])
    return {d: DeviceProfile(d, BATCH_SIZES[d], {**base[d], **scales[d]}) for d in DEVICE_IDS}


def calibration_ratios(devices: dict[str, DeviceProfile]) -> dict[str, float]:
    tiny = ds.bert_tiny()
    a = evaluate_clean(devices["A100"], tiny)
    g = evaluate_clean(devices["M1-GPU"], tiny)
    n = evaluate_clean(devices["NCS-NPU"], tiny)
    return {
        "a100_min_latency_s": evaluate_clean(devices["A100"], min_latency_config()).latency,
        "a100_over_m1gpu_energy": a.energy / g.energy,
        "a100_over_m1gpu_peak_power": a.peak_power / g.peak_power,
        "ncs_over_a100_latency": n.latency / a.latency,
    }


CALIBRATION_TARGETS = {
    "a100_min_latency_s": (A100_MIN_LATENCY, 0.05),
    "a100_over_m1gpu_energy": (A100_OVER_M1GPU_ENERGY, 0.10),
    "a100_over_m1gpu_peak_power": (A100_OVER_M1GPU_PEAK, 0.10),
    "ncs_over_a100_latency": (NCS_OVER_A100_LATENCY, 0.10),
}


def calibration_check(devices: dict[str, DeviceProfile]) -> dict[str, tuple[float, float, bool]]:
    """``name -> (value, target, within tolerance)``."""
    out = {}
    for name, value in calibration_ratios(devices).items():
        target, tol = CALIBRATION_TARGETS[name]
        out[name] = (value, target, abs(value - target) <= tol * target)
    return out


def devices_to_dict(devices: dict[str, DeviceProfile]) -> dict:
    return {"format_version": DEVICE_FILE_VERSION, "seq_len": SEQ_LEN,
            "devices": [devices[d].to_dict() for d in DEVICE_IDS]}


def save_devices(devices: dict[str, DeviceProfile], path) -> None:
    Path(path).write_text(json.dumps(devices_to_dict(devices), indent=2) + "\n")


def load_devices(path=None) -> dict[str, DeviceProfile]:
    """Load the device parameter file (the packaged one by default)."""
    if path is None:
        text = resources.files("edgetran").joinpath("data/devices.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    if doc.get("format_version") != DEVICE_FILE_VERSION:
        raise ValueError(f"unsupported device file version {doc.get('format_version')!r}")
    out = {}
    for d in doc["devices"]:
        if d["id"] not in DEVICE_IDS:
            raise ValueError(f"unknown device {d['id']!r}")
        out[d["id"]] = DeviceProfile(d["id"], int(d["batch_size"]), dict(d["cost_params"]))
    return out


def get_device(device_id: str, devices: dict[str, DeviceProfile] | None = None) -> DeviceProfile:
    devices = devices or load_devices()
    return devices[device_id]


# ---------------------------------------------------------------------------
# host CPU backend

MEASUREMENT_LOCK = threading.Lock()


def evaluate_host_cpu(arch: ArchitectureConfig, micro_model, batch: int = 8, reps: int = 5,
                      tdp_w: float = 15.0, seed: int = 0) -> MeasureVector:
    """Wall-clock inference latency of a micro model on this machine.

    Energy and peak power are derived from a configured TDP. Measurements are
    serialized through :data:`MEASUREMENT_LOCK`.
    """
    if batch < 1:
        raise MeasureError("empty batch")
    if reps < 5:
        raise MeasureError("need at least 5 repetitions")
    if micro_model.arch != arch:
        raise MeasureError("micro model was built for a different architecture")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(1, micro_model.vocab, size=(batch, micro_model.max_seq))
    times = []
    with MEASUREMENT_LOCK:
        micro_model.forward(tokens)  # warm-up
        for _ in range(reps):
            t0 = time.perf_counter()
            micro_model.forward(tokens)
            times.append(time.perf_counter() - t0)
    lat = statistics.median(times) / batch
    return MeasureVector(lat, lat * tdp_w, tdp_w, 0.0)
