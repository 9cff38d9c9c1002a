"""``edgetran`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 convergence not reached.
"""
from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from . import boshcode as B
from . import design_space as ds
from . import devices as D
from . import gptran as GP
from . import protran as P
from . import reports
from . import sampling
from .config import load_config
from .errors import EdgeTranError
from .store import EvalRecord, EvalStore, RunManifest

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_UNCONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbelow(2**31 - 1)
        print(f"seed: {args.seed}")
    return args.seed


def _pick(flag, cfg_value):
    return cfg_value if flag is None else flag


def _out(args, name: str) -> Path:
    out = Path(args.out or f"runs/{name}-{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(manifest: RunManifest, out: Path, paths) -> None:
    for p in paths:
        manifest.add_output(p)
    manifest.write(out)
    print(f"wrote {out}")


def _reference_max(device: D.DeviceProfile) -> np.ndarray:
    return D.evaluate_clean(device, B.FullSpace().reference_archs()[0]).hardware()


def _record(arch, device, m: D.MeasureVector, ref: np.ndarray, run_id: str, seed: int,
            performance: float | None = None) -> EvalRecord:
    raw = {**dict(zip(D.MEASURE_NAMES, map(float, m.hardware()))), "accuracy_proxy": B.accuracy_oracle(arch)}
    norm = dict(zip(D.MEASURE_NAMES, map(float, np.clip(m.hardware() / ref, 0.0, 1.0))))
    return EvalRecord([int(v) for v in ds.encode(arch)], device.id, raw, norm, performance, run_id, seed)


# ---------------------------------------------------------------------------
# subcommands

def cmd_space(args, cfg) -> int:
    if args.action == "stats":
        print(f"ff_ops {ds.N_FF_OPS}")
        print(f"mha_ops {ds.N_MHA_OPS}")
        print(f"cardinality {ds.space_cardinality()}")
        print(f"cardinality_sci {float(ds.space_cardinality()):.3g}")
        print(f"embedding_dim {ds.EMBEDDING_DIM}")
    elif args.action == "encode":
        arch = ds.ArchitectureConfig.from_json(Path(args.config_file).read_text())
        print(" ".join(str(v) for v in ds.encode(arch)))
    else:
        emb = [int(v) for v in args.embedding.replace(",", " ").split()]
        print(ds.decode(emb).to_json())
    return EXIT_OK


def cmd_sample(args, cfg) -> int:
    c = cfg["sample"]
    seed = _seed(args)
    kind = sampling.SamplerKind(_pick(args.kind, c["kind"]))
    n = _pick(args.n, c["n"])
    out = _out(args, "sample")
    embs = sampling.sample_embeddings(kind, n, seed)
    path = out / "samples.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "category", *(f"e{k}" for k in range(ds.EMBEDDING_DIM))])
        for i, e in enumerate(embs):
            w.writerow([i, sampling.categorize(ds.decode(e)), *e.tolist()])
    rep = sampling.diversity_report([ds.decode(e) for e in embs])
    print(f"sampled {n} with {kind.value}; first-quartile distance {rep.quartiles[0]:.4f}")
    _finish(RunManifest("sample", {"kind": kind.value, "n": n}, {"seed": seed}), out, [path])
    return EXIT_OK


def cmd_devices(args, cfg) -> int:
    table = D.load_devices(args.devices_file)
    if args.action == "list":
        print(f"{'device':<10}{'batch':>6}  {'latency [s/seq]':>16}{'energy [J/seq]':>16}{'peak [W]':>10}")
        for d in D.DEVICE_IDS:
            m = D.evaluate_clean(table[d], ds.bert_tiny())
            print(f"{d:<10}{table[d].batch_size:>6}  {m.latency:>16.4g}{m.energy:>16.4g}{m.peak_power:>10.4g}")
        return EXIT_OK
    ok = True
    for name, (value, target, good) in D.calibration_check(table).items():
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: {value:.4g} (target {target:.4g})")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_profile(args, cfg) -> int:
    c = cfg["profile"]
    seed = _seed(args)
    device = D.get_device(_pick(args.device, c["device"]), D.load_devices(args.devices_file))
    budget = _pick(args.budget, c["budget"])
    threshold = _pick(args.threshold, c["threshold"])
    strategy = _pick(args.strategy, c["strategy"])
    out = _out(args, f"profile-{device.id}")
    _, state = P.run_until_converged(device, threshold, budget, seed, strategy)
    run_id = f"profile-{device.id}-{seed}"
    store_path = out / "evals.jsonl"
    store_path.unlink(missing_ok=True)
    store = EvalStore(store_path)
    ref = _reference_max(device)
    for emb, m in zip(state.embeddings, state.measures):
        store.append(_record(ds.decode(emb), device, m, ref, run_id, seed))
    sur = out / f"surrogates_{device.id}.json"
    P.save_surrogates(P.Surrogates.from_state(state), sur)
    trace = out / "mse_trace.csv"
    P.write_trace(state, trace)
    status = "converged" if state.converged else "budget reached"
    mse = ", ".join(f"{k} {v:.4g}" for k, v in state.val_mse().items())
    print(f"{device.id}: {status} after {state.n_evals} evaluations (val MSE {mse})")
    conf = {"device": device.id, "budget": budget, "threshold": threshold, "strategy": strategy,
            "converged": state.converged, "n_evals": state.n_evals}
    _finish(RunManifest("profile", conf, {"seed": seed}), out, [store_path, sur, trace])
    return EXIT_OK if state.converged else EXIT_UNCONVERGED


def cmd_codesign(args, cfg) -> int:
    c = cfg["codesign"]
    seed = _seed(args)
    weights = B.PerfWeights.parse(_pick(args.weights, c["weights"]))
    budget = _pick(args.budget, c["budget"])
    space_kind = _pick(args.space, c["space"])
    out = _out(args, "codesign")
    manifest = RunManifest("codesign", {}, {"seed": seed})
    if args.surrogates:
        states = {}
        for path in args.surrogates:
            s = P.load_surrogates(path)
            states[s.device_id] = s
            manifest.add_input(path)
        devices = tuple(d for d in D.DEVICE_IDS if d in states)
        hardware = B.surrogate_hardware(states)
    else:
        devices = D.DEVICE_IDS
        hardware = B.device_hardware(D.load_devices(args.devices_file))
    space = B.UniformSpace(devices=devices) if space_kind == "uniform" else B.FullSpace(devices)
    oracle = B.PerformanceOracle(hardware, weights)
    res = B.run_codesign(weights, budget, seed, space, oracle, patience=_pick(args.patience, c["patience"]))
    winner = out / "winner.json"
    winner.write_text(json.dumps({"device": res.device, "performance": res.performance,
                                  "arch": res.arch.to_dict()}, indent=2))
    written = [winner, *reports.report_convergence(res.convergence(), out, plot=not args.no_plots)]
    steps = out / "steps.csv"
    with open(steps, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "branch", "device", "performance [1]", "best [1]"])
        for t in res.state.trace:
            w.writerow([t["step"], t["branch"], t["device"], f"{t['P']:.6f}", f"{t['best']:.6f}"])
    written.append(steps)
    print(f"winner on {res.device}: P = {res.performance:.4f} after {len(res.state.records)} evaluations")
    manifest.config = {"weights": [weights.alpha, weights.beta, weights.gamma, weights.epsilon], "budget": budget,
                       "space": space_kind, "devices": list(devices),
                       "accuracy_oracle_version": B.ACCURACY_ORACLE_VERSION}
    _finish(manifest, out, written)
    return EXIT_OK


def _load_root(path) -> ds.ArchitectureConfig:
    doc = json.loads(Path(path).read_text())
    return ds.ArchitectureConfig.from_dict(doc["arch"] if "arch" in doc else doc)


def cmd_gptran(args, cfg) -> int:
    c = cfg["gptran"]
    seed = _seed(args)
    budget = _pick(args.budget, c["budget"])
    kind = _pick(args.trainer, c["trainer"])
    hyper = GP.GPHyper(n_g=c["n_g"], child_steps=_pick(args.child_steps, c["child_steps"]),
                       root_steps=c["root_steps"], max_backtracks=c["max_backtracks"])
    root = _load_root(args.root) if args.root else ds.bert_tiny()
    trainer = GP.MicroTrainer(hyper, seed=seed) if kind == "micro" else GP.SyntheticTrainer(GP.default_loss_oracle)
    out = _out(args, "gptran")
    res = GP.run_gptran(root, trainer, hyper, budget, seed)
    tree, trace, best = out / "tree.json", out / "loss_trace.csv", out / "best.json"
    GP.write_tree(res, tree)
    GP.write_loss_trace(res, trace)
    best.write_text(json.dumps({"loss": res.best.loss, "param_count": res.best.param_count,
                                "arch": res.best.arch.to_dict()}, indent=2))
    print(f"best loss {res.best.loss:.4f} (root {res.nodes[0].loss:.4f}); {len(res.nodes)} nodes, "
          f"{res.n_backtracks()} backtracks")
    manifest = RunManifest("gptran", {"budget": budget, "trainer": kind, "hyper": hyper.to_dict()}, {"seed": seed})
    if args.root:
        manifest.add_input(args.root)
    _finish(manifest, out, [tree, trace, best])
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    out = Path(args.out or "runs/report")
    if args.kind == "pareto":
        if not args.store or not args.device:
            raise UsageError("report pareto needs --store and --device")
        recs = EvalStore(args.store).scan()
        written = reports.report_pareto(recs, args.device, out, plot=not args.no_plots)
        manifest = RunManifest("report", {"kind": "pareto", "device": args.device}, {})
        manifest.add_input(args.store)
    else:
        if not args.surrogates:
            raise UsageError("report contour needs --surrogates")
        c = cfg["report"]
        s = P.load_surrogates(args.surrogates[0])
        written = reports.report_contour(s, out, c["grid_layers"], c["grid_hidden"], plot=not args.no_plots)
        manifest = RunManifest("report", {"kind": "contour", "grid_layers": c["grid_layers"],
                                          "grid_hidden": c["grid_hidden"]}, {})
        manifest.add_input(args.surrogates[0])
    _finish(manifest, out, written)
    return EXIT_OK


def cmd_smoke(args, cfg) -> int:
    """sample -> profile (budget 40) -> codesign (budget 50) -> gptran (synthetic oracle) -> reports."""
    seed = _seed(args)
    base = Path(args.out or f"runs/smoke-{seed}")
    device = args.device or "NCS-NPU"
    flags = ["--no-plots"] if args.no_plots else []
    steps = [
        ["sample", "--n", "16", "--seed", str(seed), "--out", str(base / "sample")],
        ["profile", "--device", device, "--budget", "40", "--seed", str(seed), "--out", str(base / "profile")],
        ["codesign", "--budget", "50", "--seed", str(seed), "--space", "uniform",
         "--surrogates", str(base / "profile" / f"surrogates_{device}.json"), "--out", str(base / "codesign")],
        ["gptran", "--root", str(base / "codesign" / "winner.json"), "--trainer", "synthetic", "--budget", "60",
         "--seed", str(seed), "--out", str(base / "gptran")],
        ["report", "pareto", "--store", str(base / "profile" / "evals.jsonl"), "--device", device,
         "--out", str(base / "report")],
        ["report", "contour", "--surrogates", str(base / "profile" / f"surrogates_{device}.json"),
         "--out", str(base / "report_contour")],
    ]
    for argv in steps:
        print("$ edgetran " + " ".join(argv))
        code = main(argv + flags + (["--config", args.config] if args.config else []))
        if code != EXIT_OK:
            print(f"smoke step failed with exit code {code}", file=sys.stderr)
            return code
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--no-plots", action="store_true")
    common.add_argument("--devices-file", help="device table JSON (default: packaged)")

    p = _Parser(prog="edgetran", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("space", parents=[common], help="design-space utilities")
    s.add_argument("action", choices=["stats", "encode", "decode"])
    s.add_argument("--config-file", help="architecture JSON for encode")
    s.add_argument("--embedding", help="37 integers for decode")
    s.set_defaults(func=cmd_space)

    s = sub.add_parser("sample", parents=[common], help="draw architectures")
    s.add_argument("--kind", choices=[k.value for k in sampling.SamplerKind])
    s.add_argument("--n", type=int)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("devices", parents=[common], help="synthetic device table")
    s.add_argument("action", choices=["list", "calibrate-check"])
    s.set_defaults(func=cmd_devices)

    s = sub.add_parser("profile", parents=[common], help="active-learning hardware profiling")
    s.add_argument("--device", choices=D.DEVICE_IDS)
    s.add_argument("--budget", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--strategy", choices=["active", "random"])
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("codesign", parents=[common], help="architecture/device co-design")
    s.add_argument("--weights", help="alpha,beta,gamma,epsilon")
    s.add_argument("--budget", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--space", choices=["full", "uniform"])
    s.add_argument("--surrogates", nargs="+", help="profile surrogate files; restricts the device set")
    s.set_defaults(func=cmd_codesign)

    s = sub.add_parser("gptran", parents=[common], help="grow-and-prune post-processing")
    s.add_argument("--root", help="architecture or codesign winner JSON (default: BERT-Tiny)")
    s.add_argument("--budget", type=int)
    s.add_argument("--trainer", choices=["synthetic", "micro"])
    s.add_argument("--child-steps", type=int)
    s.set_defaults(func=cmd_gptran)

    s = sub.add_parser("report", parents=[common], help="Pareto and contour reports")
    s.add_argument("kind", choices=["pareto", "contour"])
    s.add_argument("--store")
    s.add_argument("--device", choices=D.DEVICE_IDS)
    s.add_argument("--surrogates", nargs=1)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("smoke", parents=[common], help="end-to-end pipeline at toy budgets")
    s.add_argument("--device", choices=D.DEVICE_IDS)
    s.set_defaults(func=cmd_smoke)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "space" and args.action == "encode" and not args.config_file:
            raise UsageError("space encode needs --config-file")
        if args.command == "space" and args.action == "decode" and not args.embedding:
            raise UsageError("space decode needs --embedding")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (EdgeTranError, OSError, ValueError, KeyError) as exc:
        print(f"edgetran: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())
