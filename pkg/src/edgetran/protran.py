"""Active-learning hardware profiler.

Seed with 16 LHS architectures, fit one GBDT per measure on max-normalized
targets, then repeatedly evaluate the candidate with the largest summed
predictive uncertainty until every measure's validation MSE drops below the
threshold (or the evaluation budget runs out).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import design_space as ds
from . import regressors as R
from . import sampling
from .devices import MEASURE_NAMES, DeviceProfile, MeasureVector, evaluate
from .errors import BudgetExhausted

N_SEED = 16
POOL_SIZE = 512
THRESHOLD = 0.005
SPLIT_SEED = 0

Measure = Callable[[ds.ArchitectureConfig], MeasureVector]


@dataclass
class ProfilerState:
    device: DeviceProfile
    budget: int
    threshold: float = THRESHOLD
    strategy: str = "active"
    seed: int = 0
    sampler: sampling.SamplerKind = sampling.SamplerKind.LHS
    regressor: R.RegressorKind = R.RegressorKind.GBDT
    hyper: dict = field(default_factory=dict)
    embeddings: list = field(default_factory=list)
    measures: list = field(default_factory=list)
    models: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    converged: bool = False
    budget_reached: bool = False
    _seen: set = field(default_factory=set, repr=False)
    _rng: np.random.Generator | None = field(default=None, repr=False)

    @property
    def n_evals(self) -> int:
        return len(self.embeddings)

    def features(self) -> np.ndarray:
        return np.stack([ds.normalize_embedding(e) for e in self.embeddings])

    def targets(self) -> np.ndarray:
        return np.stack([m.hardware() for m in self.measures])

    def last_report(self) -> dict[str, R.FitReport]:
        return self.history[-1] if self.history else {}

    def val_mse(self) -> dict[str, float]:
        return {k: r.val_mse for k, r in self.last_report().items()}


def _device_measure(device: DeviceProfile, task_seed: int) -> Measure:
    return lambda arch: evaluate(device, arch, task_seed)


def _record(state: ProfilerState, emb: np.ndarray, measure: Measure) -> None:
    key = tuple(int(v) for v in emb)
    if key in state._seen:
        raise ValueError("architecture already evaluated")
    state._seen.add(key)
    state.embeddings.append(np.asarray(emb, dtype=np.int64))
    state.measures.append(measure(ds.decode(emb)))


def refit(state: ProfilerState) -> dict[str, R.FitReport]:
    """Fit one surrogate per measure on normalized targets; append the reports."""
    X = state.features()
    Y = state.targets()
    reports = {}
    for k, name in enumerate(MEASURE_NAMES):
        y, scale = R.normalize_targets(Y[:, k])
        model, rep = R.fit_report(state.regressor, X, y, state.hyper, split_seed=SPLIT_SEED)
        state.models[name] = model
        state.scales[name] = scale
        reports[name] = rep
    state.history.append(reports)
    state.converged = all(r.val_mse < state.threshold for r in reports.values())
    return reports


def seed_profile(device: DeviceProfile, seed: int = 0, budget: int = 250, threshold: float = THRESHOLD,
                 strategy: str = "active", measure: Measure | None = None, hyper: dict | None = None,
                 regressor: R.RegressorKind | str = R.RegressorKind.GBDT) -> ProfilerState:
    """Evaluate 16 LHS architectures and fit the initial surrogates."""
    if strategy not in ("active", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    state = ProfilerState(device, budget, threshold, strategy, seed, hyper=dict(hyper or {}),
                          regressor=R.RegressorKind(regressor))
    state._rng = np.random.default_rng(seed)
    measure = measure or _device_measure(device, seed)
    for emb in sampling.sample_embeddings(sampling.SamplerKind.LHS, N_SEED, seed):
        key = tuple(int(v) for v in emb)
        if key not in state._seen:
            _record(state, emb, measure)
    refit(state)
    return state


def candidate_pool(state: ProfilerState) -> np.ndarray:
    """Sampler-drawn unseen embeddings for this step."""
    pool_seed = int(state._rng.integers(0, 2**31 - 1))
    embs = sampling.sample_embeddings(state.sampler, POOL_SIZE, pool_seed)
    keep = [i for i, e in enumerate(embs) if tuple(int(v) for v in e) not in state._seen]
    return embs[keep]


def acquisition(state: ProfilerState, pool: np.ndarray) -> np.ndarray:
    """Summed per-measure predictive sigma for every pool member."""
    X = np.stack([ds.normalize_embedding(e) for e in pool])
    score = np.zeros(len(pool))
    for name in MEASURE_NAMES:
        _, sigma = state.models[name].predict_with_uncertainty(X)
        score += sigma
    return score


def select(state: ProfilerState, pool: np.ndarray) -> int:
    if state.strategy == "active":
        score = acquisition(state, pool)
        if np.max(score) > 0:
            return int(np.argmax(score))
    # no usable uncertainty (or random strategy): a random candidate
    return int(state._rng.integers(0, len(pool)))


def step(state: ProfilerState, measure: Measure | None = None) -> ProfilerState:
    """Query one architecture, evaluate it, and refit."""
    if state.n_evals >= state.budget:
        state.budget_reached = True
        raise BudgetExhausted(f"budget of {state.budget} evaluations used")
    measure = measure or _device_measure(state.device, state.seed)
    pool = candidate_pool(state)
    while len(pool) == 0:  # pragma: no cover - only for tiny spaces
        pool = candidate_pool(state)
    _record(state, pool[select(state, pool)], measure)
    refit(state)
    return state


def run_until_converged(device: DeviceProfile, threshold: float = THRESHOLD, budget: int = 250, seed: int = 0,
                        strategy: str = "active", measure: Measure | None = None, hyper: dict | None = None,
                        callback: Callable[[ProfilerState], None] | None = None):
    """Profile until all normalized validation MSEs are below ``threshold``.

    Returns ``(models, state)``; ``state.budget_reached`` flags a run that
    stopped on budget rather than convergence.
    """
    if not 0.0 < threshold < 1.0 + 1e-12:
        raise ValueError("threshold must lie in (0, 1]")
    state = seed_profile(device, seed, budget, threshold, strategy, measure, hyper)
    if callback:
        callback(state)
    while not state.converged:
        if state.n_evals >= budget:
            state.budget_reached = True
            break
        step(state, measure)
        if callback:
            callback(state)
    return state.models, state


def predict(state: "ProfilerState | Surrogates", archs: list[ds.ArchitectureConfig]) -> np.ndarray:
    """Denormalized surrogate predictions, shape ``(n, 3)``."""
    X = np.stack([ds.normalize_embedding(ds.encode(a)) for a in archs])
    return np.column_stack([state.models[n].predict(X) * state.scales[n] for n in MEASURE_NAMES])


def write_trace(state: ProfilerState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "n_evals", *(f"val_mse_{n}" for n in MEASURE_NAMES)])
        base = state.n_evals - len(state.history) + 1
        for i, rep in enumerate(state.history):
            w.writerow([i, base + i,
                        *(f"{rep[n].val_mse:.6g}" for n in MEASURE_NAMES)])


@dataclass
class Surrogates:
    """Fitted per-measure models of one device, detached from the profiling run."""
    device_id: str
    models: dict
    scales: dict

    @classmethod
    def from_state(cls, state: ProfilerState) -> "Surrogates":
        return cls(state.device.id, dict(state.models), dict(state.scales))

    def to_dict(self) -> dict:
        return {"format_version": R.MODEL_FORMAT_VERSION, "device": self.device_id,
                "scales": {n: self.scales[n] for n in MEASURE_NAMES},
                "models": {n: self.models[n].to_dict() for n in MEASURE_NAMES}}

    @classmethod
    def from_dict(cls, doc: dict) -> "Surrogates":
        return cls(doc["device"], {n: R.load_model(doc["models"][n]) for n in MEASURE_NAMES},
                   {n: float(doc["scales"][n]) for n in MEASURE_NAMES})


def save_surrogates(s: Surrogates, path) -> None:
    with open(path, "w") as fh:
        json.dump(s.to_dict(), fh)


def load_surrogates(path) -> Surrogates:
    with open(path) as fh:
        return Surrogates.from_dict(json.load(fh))
