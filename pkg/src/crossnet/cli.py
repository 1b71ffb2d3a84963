"""Command line: simulate data, fit, summarise, derive strategies and diagnostics.

Every command writes into a run directory. ``run.json`` there is written
when a command starts and updated with its status when it ends; all other
artifacts are deterministic functions of the inputs, flags and seed.

Exit codes: 0 success, 1 numerical/runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .data import DataError, Dataset, load_dataset, write_choices, write_networks
from .diagnostics import agency_edge_probs, fit_report, occupancy_summary, roc_points
from .gibbs import ChainConfig, SamplerError, TraceRecord, run_chain
from .model import Hyperparameters
from .simulate import SimConfig, default_scenario, generate, write_truth
from .strategy import MAX_MULTI, StrategyError, strategy_table
from .summary import SummaryError, map_partition, read_summary, summarize_conditional, conditional_chain, write_summary

log = logging.getLogger("crossnet")

_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}}}

SIM_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "n_i": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "p0": _MATRIX,
        "nu0": _MATRIX,
        "pi0": _MATRIX,
    },
}

HYPER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "alpha_c": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "mu": {"type": "array", "items": {"type": "number"}},
        "sigma2": {"anyOf": [{"type": "number", "exclusiveMinimum": 0},
                             {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}]},
        "a1": {"type": "number", "exclusiveMinimum": 0},
        "a2": {"type": "number", "exclusiveMinimum": 0},
        "H": {"type": "integer", "minimum": 1},
        "R": {"type": "integer", "minimum": 1},
    },
}


class UsageError(Exception):
    """Bad flags or inputs; exit code 2."""


# ---------------------------------------------------------------------------
# helpers


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _load_json(path, schema, what: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what}: file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: {path} is not valid JSON ({exc})") from None
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in exc.absolute_path)
        raise UsageError(f"{what}: {path}: invalid value at {where}: {exc.message}") from None
    return doc


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"--out: cannot write to {out}: {exc.strerror}") from None
    return out


def _run_dir(path) -> Path:
    run = Path(path)
    if not (run / "run.json").exists():
        raise UsageError(f"--run: {run} is not a run directory (no run.json); create one with `fit`")
    return run


class RunLog:
    """run.json bookkeeping: written on start, updated on completion or failure."""

    def __init__(self, directory: Path, command: str, config: dict):
        self.path = directory / "run.json"
        self.doc = json.loads(self.path.read_text()) if self.path.exists() else {}
        self.doc.setdefault("commands", {})
        self.command = command
        self.doc["version"] = __version__
        if command in ("fit", "simulate"):
            self.doc["config"] = config
            self.doc["config_hash"] = _hash(config)
            self.doc["seed"] = config.get("seed")
        self.doc["commands"][command] = {"status": "running", "started": time.time(), "flags": config}
        self.doc["status"] = "running"
        self._write()

    def _write(self):
        self.path.write_text(json.dumps(self.doc, indent=1, sort_keys=True))

    def done(self, **extra):
        entry = self.doc["commands"][self.command]
        entry.update(status="completed", finished=time.time(), **extra)
        self.doc["status"] = "completed"
        self.doc.pop("iteration", None)
        self._write()

    def failed(self, message: str, iteration: int | None = None):
        entry = self.doc["commands"][self.command]
        entry.update(status="failed", finished=time.time(), error=message)
        if iteration is not None:
            entry["iteration"] = self.doc["iteration"] = iteration
        self.doc["status"] = "failed"
        self._write()


def _dataset_from_run(run: Path) -> tuple[Dataset, Hyperparameters, dict]:
    meta = json.loads((run / "run.json").read_text())
    cfg = meta.get("config", {})
    if "choices" not in cfg:
        raise UsageError(f"{run}: run.json does not record a fit; run `fit` first")
    data = load_dataset(cfg["choices"], cfg["networks"], edge_list=cfg.get("edge_list", False))
    hp = Hyperparameters.from_dict(json.loads((run / "hyperparameters.json").read_text()))
    return data, hp, meta


def _read_trace(run: Path) -> list[TraceRecord]:
    path = run / "trace.jsonl"
    if not path.exists():
        raise UsageError(f"{path} not found; run `fit --out {run}` before summarising")
    with path.open() as fh:
        return [TraceRecord.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    out = _out_dir(args.out)
    cfg_doc = default_scenario().to_dict()
    if args.config:
        cfg_doc.update(_load_json(args.config, SIM_CONFIG_SCHEMA, "--config"))
    if args.seed is not None:
        cfg_doc["seed"] = args.seed
    try:
        cfg = SimConfig.from_dict(cfg_doc)
    except ValueError as exc:
        raise UsageError(f"--config: {exc}") from None
    run = RunLog(out, "simulate", cfg.to_dict())
    data, truth = generate(cfg)
    write_choices(data, out / "choices.csv")
    write_networks(data, out / "networks.csv")
    write_truth(truth, out / "truth.json")
    run.done(n=data.n, V=data.v_count)
    print(f"wrote {data.n} agencies over {data.v_count} products to {out}")
    return 0


def _hyperparameters(data: Dataset, args) -> Hyperparameters:
    hp = Hyperparameters.empirical(data)
    if args.hyper:
        doc = _load_json(args.hyper, HYPER_SCHEMA, "--hyper")
        if "sigma2" in doc:
            doc["sigma2"] = np.broadcast_to(np.asarray(doc["sigma2"], dtype=float), hp.mu.shape)
        try:
            hp = hp.with_(**doc)
        except ValueError as exc:
            raise UsageError(f"--hyper: {exc}") from None
    flags = {"H": args.H, "R": args.R, "alpha_c": args.alpha_c}
    try:
        return hp.with_(**{k: v for k, v in flags.items() if v is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_fit(args) -> int:
    for flag, path in (("--choices", args.choices), ("--networks", args.networks)):
        if not Path(path).exists():
            raise UsageError(f"{flag}: file not found: {path}")
    out = _out_dir(args.out)
    try:
        data = load_dataset(args.choices, args.networks, edge_list=args.edge_list)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    hp = _hyperparameters(data, args)
    try:
        cfg = ChainConfig(iterations=args.iters, burnin=args.burnin, thin=args.thin, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    hp_doc = hp.to_dict()
    config = {
        "choices": str(Path(args.choices).resolve()), "networks": str(Path(args.networks).resolve()),
        "edge_list": args.edge_list, "choices_sha": _file_hash(args.choices),
        "networks_sha": _file_hash(args.networks), "iterations": cfg.iterations, "burnin": cfg.burnin,
        "thin": cfg.thin, "seed": cfg.seed, "H": hp.H, "R": hp.R, "alpha_c": hp.alpha_c,
        "a1": hp.a1, "a2": hp.a2, "mu_hash": _hash(hp_doc["mu"]), "alpha_hash": _hash(hp_doc["alpha"]),
        "hyperparameters_hash": _hash(hp_doc),
    }
    run = RunLog(out, "fit", config)
    (out / "hyperparameters.json").write_text(json.dumps(hp_doc, indent=1))
    try:
        result = run_chain(data, hp, cfg, progress_every=args.progress)
    except SamplerError as exc:
        run.failed(str(exc), exc.iteration)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    with open(out / "trace.jsonl", "w") as fh:
        for r in result.records:
            fh.write(json.dumps(r.to_json()) + "\n")
    with open(out / "log_joint.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep", "log_joint"])
        for t, v in enumerate(result.log_joint, start=1):
            w.writerow([t, repr(float(v))])
    meta = {k: v for k, v in result.metadata.items() if k != "elapsed_seconds"}
    run.done(n_records=len(result.records), elapsed_seconds=result.metadata["elapsed_seconds"],
             warnings=meta.get("warnings", []))
    print(f"{len(result.records)} sweeps kept in {out / 'trace.jsonl'}")
    return 0


def cmd_summarize(args) -> int:
    run_path = _run_dir(args.run)
    data, hp, meta = _dataset_from_run(run_path)
    records = _read_trace(run_path)
    seed = meta["config"]["seed"] if args.seed is None else args.seed
    run = RunLog(run_path, "summarize", {"iters": args.iters, "burnin": args.burnin, "seed": seed})
    try:
        part, freq = map_partition(records)
        cond = conditional_chain(data, hp, part, iterations=args.iters, burnin=args.burnin, seed=seed)
        summary = summarize_conditional(cond.records, part, freq)
    except SamplerError as exc:
        run.failed(str(exc), exc.iteration)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_summary(summary, run_path, data.v_count)
    run.done(K_hat=summary.K_hat, frequency=freq)
    print(f"K_hat = {summary.K_hat} (modal partition frequency {freq:.3f})")
    return 0


def cmd_strategies(args) -> int:
    run_path = _run_dir(args.run)
    if args.multi is not None and not 1 <= args.multi <= MAX_MULTI:
        raise UsageError(f"--multi {args.multi}: offers are found by exhaustive search over product "
                         f"sets, which is limited to M <= {MAX_MULTI}")
    try:
        summary = read_summary(run_path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    run = RunLog(run_path, "strategies", {"multi": args.multi})
    table = strategy_table(summary, multi=args.multi)
    table.write(run_path)
    run.done()
    print(f"strategies for {table.K} clusters written to {run_path / 'strategies.csv'}")
    return 0


def cmd_diagnostics(args) -> int:
    run_path = _run_dir(args.run)
    data, hp, _ = _dataset_from_run(run_path)
    try:
        summary = read_summary(run_path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    records = _read_trace(run_path)
    run = RunLog(run_path, "diagnostics", {"auc_flag": args.auc_flag})
    report = fit_report(data, summary.partition, summary.p_mean, summary.pibar_mean,
                        flag_threshold=args.auc_flag, occupancy=occupancy_summary(records, hp))
    doc = report.to_json()
    (run_path / "diagnostics.json").write_text(json.dumps(doc, indent=1))
    flagged = set(report.flagged_agencies)
    with open(run_path / "auc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agency_id", "auc", "epsilon", "flagged"])
        for aid, a, e in zip(report.agency_ids, report.auc, report.epsilon):
            w.writerow([aid, "" if a is None else repr(a), repr(float(e)), int(aid in flagged)])
    with open(run_path / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agency_id", "fpr", "tpr"])
        for i, aid in enumerate(data.ids):
            for f, t in roc_points(data.edges[i], summary.pibar_mean[summary.partition[i]]):
                w.writerow([aid, repr(float(f)), repr(float(t))])
    if flagged:
        with open(run_path / "flagged_edge_probs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["agency_id"] + [f"e_{l + 1}" for l in range(data.n_pairs)])
            for aid in report.flagged_agencies:
                w.writerow([aid] + [repr(float(x)) for x in agency_edge_probs(records, data, aid)])
    run.done(max_epsilon=doc["max_epsilon"], n_flagged=len(flagged))
    print(f"max epsilon {doc['max_epsilon']:.4f}; AUC > {args.auc_flag} for "
          f"{100 * (doc['fraction_auc_above_flag'] or 0):.1f}% of agencies; {len(flagged)} flagged")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crossnet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset with known truth")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON overriding n, n_i, seed, p0, nu0, pi0")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    p.add_argument("--choices", required=True)
    p.add_argument("--networks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edge-list", action="store_true", help="networks file is agency_id,v,u rows")
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--H", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--alpha-c", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hyper", help="JSON overriding hyperparameters")
    p.add_argument("--progress", type=int, default=500, help="log every N sweeps (0: silent)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="modal partition and conditional posterior summaries")
    p.add_argument("--run", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("strategies", help="best offers and performance indicators")
    p.add_argument("--run", required=True)
    p.add_argument("--multi", type=int, help=f"also find the best sets of up to M offers (M <= {MAX_MULTI})")
    p.set_defaults(func=cmd_strategies)

    p = sub.add_parser("diagnostics", help="AUC and choice-fit checks")
    p.add_argument("--run", required=True)
    p.add_argument("--auc-flag", type=float, default=0.75)
    p.set_defaults(func=cmd_diagnostics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SummaryError, StrategyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
