"""Command-line front end: ``rslab analyze|enumerate|mitigate|train``.

Exit codes: 0 ok, 2 parse or usage error, 3 determinism violation,
4 budget exceeded, 5 training divergence, 6 unsupported configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import pickle
import sys
import time

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_BUDGET, BudgetExceeded, RemapFamily, count_rss, diagnose, enumerate_rss, family_size,
)
from .logic import (
    DeterminismViolation, NoConsistentLabel, ParseError, TaskError, build_beta_star, parse_task, pretty_print,
    task_from_json,
)
from .mitigation import parse_strategy, what_if

SCHEMA_VERSION = 1
EXIT_OK, EXIT_PARSE, EXIT_DETERMINISM, EXIT_BUDGET, EXIT_DIVERGENCE, EXIT_UNSUPPORTED = 0, 2, 3, 4, 5, 6


class UsageError(Exception):
    """Bad command-line input that argparse cannot catch."""


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def jsonable(obj):
    """Replace non-finite floats with their string names, recursively."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "nan" if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def load_task(path: str):
    """Parse a task file (DSL, or JSON when the file starts with ``{``)."""
    text = _read(path)
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, exc.lineno, exc.colno) from None
        return task_from_json(obj), text
    return parse_task(text), text


def cached_table(task):
    """Inference table, memoized under ``$RSLAB_CACHE`` when set."""
    root = os.environ.get("RSLAB_CACHE")
    if not root:
        return build_beta_star(task)
    key = hashlib.sha256(pretty_print(task).encode("utf-8")).hexdigest()
    path = os.path.join(root, f"table-{key}.pkl")
    if os.path.exists(path):
        try:
            with open(path, "rb") as fh:
                return pickle.load(fh)
        except (OSError, pickle.UnpicklingError, EOFError):
            pass
    table = build_beta_star(task)
    os.makedirs(root, exist_ok=True)
    tmp = f"{path}.{os.getpid()}.tmp"
    with open(tmp, "wb") as fh:
        pickle.dump(table, fh)
    os.replace(tmp, path)
    return table


def _vectors(items):
    return [tuple(int(x) for x in v) for v in items]


def build_family(args) -> RemapFamily:
    family = RemapFamily(args.family)
    if args.pin:
        obj = json.loads(_read(args.pin))
        if isinstance(obj, list):
            obj = {"pins": obj}
        family = family.with_pins(_vectors(obj.get("pins", [])))
        family = family.with_forbidden((tuple(g), tuple(c)) for g, c in obj.get("forbidden", []))
    if args.injective:
        family = family.with_injective()
    return family


class Output:
    """Writes reports plus one manifest that lists them.

    Reports carry only the manifest's file name, so they stay byte-identical
    across runs; wall-clock time lives in the manifest alone.
    """

    def __init__(self, args, command: str, task_text: str, manifest_path: str | None):
        self.args = args
        self.command = command
        self.task_hash = hashlib.sha256(task_text.encode("utf-8")).hexdigest()
        self.manifest_path = manifest_path
        self.outputs: list[str] = []
        self.start = time.perf_counter()

    def stamp(self, report: dict, kind: str) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "kind": kind, **report}
        if self.manifest_path:
            out["manifest"] = os.path.basename(self.manifest_path)
        return out

    def write(self, path: str | None, text: str) -> None:
        if path is None:
            sys.stdout.write(text)
            return
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.outputs.append(os.path.basename(path))

    def finish(self) -> None:
        if not self.manifest_path:
            return
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": "manifest",
            "command": self.command,
            "argv": self.args.argv,
            "task_sha256": self.task_hash,
            "seed": self.args.seed,
            "threads": self.args.threads,
            "version": __version__,
            "wall_clock_seconds": round(time.perf_counter() - self.start, 6),
            "outputs": self.outputs,
        }
        with open(self.manifest_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(manifest))


def _manifest_for(report: str | None) -> str | None:
    return None if report is None else os.path.splitext(report)[0] + ".manifest.json"


def cmd_analyze(args) -> int:
    task, text = load_task(args.task)
    table = cached_table(task)
    out = Output(args, "analyze", text, _manifest_for(args.report))
    report = diagnose(task, build_family(args), method="brute" if args.brute else "sat", cap=args.cap,
                      budget=args.budget, threads=args.threads, table=table)
    out.write(args.report, dumps(out.stamp(report.to_json(), "diagnostics")))
    out.finish()
    return EXIT_OK


def cmd_enumerate(args) -> int:
    task, text = load_task(args.task)
    table = cached_table(task)
    family = build_family(args)
    out = Output(args, "enumerate", text, _manifest_for(args.report))
    if args.cap == 0:
        total, remaps = count_rss(task, family, budget=args.budget, threads=args.threads, table=table), []
    else:
        enum = enumerate_rss(task, family, cap=args.cap, budget=args.budget, threads=args.threads, table=table)
        total, remaps = enum.total, enum.remaps
    report = {
        "task": task.name,
        "family": family.describe(),
        "family_size": str(family_size(task, family)),
        "count": total,
        "cap": args.cap,
        "remaps": [[[list(g), list(c)] for g, c in r.as_pairs(task.support)] for r in remaps],
    }
    out.write(args.report, dumps(out.stamp(report, "enumeration")))
    out.finish()
    return EXIT_OK


def cmd_mitigate(args) -> int:
    task, text = load_task(args.task)
    cached_table(task)
    try:
        raw = json.loads(_read(args.strategies))
    except json.JSONDecodeError as exc:
        raise ParseError(f"strategies file: {exc.msg}", exc.lineno, exc.colno) from None
    if isinstance(raw, dict):
        raw = raw.get("strategies", [])
    base = os.path.dirname(os.path.abspath(args.strategies))
    strategies = [parse_strategy(s, base) for s in raw]
    report = what_if(task, build_family(args), strategies, combos=args.combos, budget=args.budget,
                     threads=args.threads)
    out = Output(args, "mitigate", text, _manifest_for(args.report))
    stamped = out.stamp(report.to_json(), "what_if")
    if args.report is None:
        out.write(None, report.to_csv() if args.format == "csv" else dumps(stamped))
    else:
        stem = os.path.splitext(args.report)[0]
        out.write(stem + ".json", dumps(stamped))
        out.write(stem + ".csv", report.to_csv())
    out.finish()
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import (
        Divergence, Extractor, SyntheticTaskConfig, TrainConfig, estimate_alpha, evaluate, generate_dataset,
        readout_for, save_dataset, train, train_bears_ensemble,
    )

    task, text = load_task(args.task)
    table = cached_table(task)
    try:
        conf = json.loads(_read(args.config))
    except json.JSONDecodeError as exc:
        raise ParseError(f"train config: {exc.msg}", exc.lineno, exc.colno) from None
    seed = args.seed
    data = conf.get("data", {})
    ds = generate_dataset(SyntheticTaskConfig(
        task, data.get("render", "blockwise"), float(data.get("noise_rate", 0.0)),
        int(data.get("samples_per_support_vector", 10)), seed,
    ))
    ext = dict(conf.get("extractor", {}))
    tc = TrainConfig(**{"seed": seed, **conf.get("train", {})})
    if tc.objective == "sl":
        ext.setdefault("label_dim", task.labels.size)
    if tc.reconstruction > 0:
        ext.setdefault("recon_dim", ds.X.shape[1])
    os.makedirs(args.out, exist_ok=True)
    out = Output(args, "train", text, os.path.join(args.out, "manifest.json"))
    path = lambda name: os.path.join(args.out, name)  # noqa: E731
    ens_conf = conf.get("ensemble")
    try:
        if ens_conf:
            ens = train_bears_ensemble(
                lambda j: Extractor.for_dataset(ds, seed=seed * 1000 + j, **ext), ds, tc,
                size=int(ens_conf.get("size", 5)), diversity=float(ens_conf.get("diversity", 1.0)),
                accuracy_floor=float(ens_conf.get("accuracy_floor", 0.9)), table=table,
            )
            model, trajectory = ens.members[0], ens.trajectory
            ensemble = {"size": len(ens.members) + len(ens.excluded), "excluded": ens.excluded,
                        "slot_entropy": ens.slot_entropy}
        else:
            model = Extractor.for_dataset(ds, seed=seed, **ext)
            trajectory = train(model, ds, tc, table).trajectory
            ensemble = None
    except Divergence as exc:
        sys.stderr.write(f"rslab: {exc}\n")
        out.write(path("divergence.json"), dumps(out.stamp(jsonable({"epoch": exc.epoch, **exc.diagnostics}), "divergence")))
        out.finish()
        return EXIT_DIVERGENCE
    metrics = evaluate(model, ds, table, readout_for(tc.objective))
    alpha = estimate_alpha(model, ds)
    save_dataset(ds, path("dataset.csv"))
    out.outputs += ["dataset.csv", "dataset.csv.json"]
    out.write(path("trajectory.json"), dumps(out.stamp({"config": tc.to_json(), "trajectory": trajectory},
                                                       "trajectory")))
    out.write(path("metrics.json"), dumps(out.stamp(metrics.to_json(), "metrics")))
    out.write(path("alpha.json"), dumps(out.stamp({
        "support": [list(g) for g in alpha.support],
        "concept_vectors": [list(map(int, v)) for v in task.concepts.vectors],
        "rows": np.round(alpha.matrix, 12).tolist(),
    }, "alpha")))
    if ensemble is not None:
        out.write(path("ensemble.json"), dumps(out.stamp(ensemble, "ensemble")))
    out.finish()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (u64)")
    common.add_argument("--threads", type=int, default=1, help="worker cap; never changes results")
    common.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="brute-force candidate budget")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    fam = argparse.ArgumentParser(add_help=False)
    fam.add_argument("--family", choices=("fulltable", "perslot", "sharedslot"), default="fulltable")
    fam.add_argument("--pin", metavar="FILE", help="JSON list of pinned vectors, or {pins, forbidden}")
    fam.add_argument("--injective", action="store_true")
    fam.add_argument("--report", metavar="PATH", help="write the report here instead of stdout")

    parser = argparse.ArgumentParser(prog="rslab", description="Count, enumerate and probe reasoning shortcuts.")
    parser.add_argument("--version", action="version", version=f"rslab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common, fam], help="diagnostics report")
    p.add_argument("task")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sat", action="store_true", help="count with the model counter (default)")
    g.add_argument("--brute", action="store_true", help="count by brute force")
    p.add_argument("--cap", type=int, default=20, help="shortcuts to list in the report")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("enumerate", parents=[common, fam], help="list shortcuts as pair lists")
    p.add_argument("task")
    p.add_argument("--cap", type=int, default=100, help="0 reports the count only")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("mitigate", parents=[common, fam], help="what-if counts per strategy")
    p.add_argument("task")
    p.add_argument("strategies", help="JSON list of strategies")
    p.add_argument("--combos", action="store_true", help="also evaluate every pair of strategies")
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("train", parents=[common], help="train an extractor on a synthetic rendering")
    p.add_argument("task")
    p.add_argument("config", help="JSON with data, extractor, train and optional ensemble sections")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    if args.threads < 1 or args.budget < 0 or args.seed < 0 or getattr(args, "cap", 0) < 0:
        parser.error("--threads must be >= 1; --budget, --seed and --cap must be >= 0")
    from .train.model import Unsupported

    def fail(code: int, msg: str) -> int:
        sys.stderr.write(f"rslab: {msg}\n")
        return code

    try:
        return args.func(args)
    except ParseError as exc:
        return fail(EXIT_PARSE, f"{args.task}:{exc}")
    except (DeterminismViolation, NoConsistentLabel) as exc:
        return fail(EXIT_DETERMINISM, str(exc))
    except BudgetExceeded as exc:
        return fail(EXIT_BUDGET, str(exc))
    except Unsupported as exc:
        return fail(EXIT_UNSUPPORTED, f"unsupported: {exc}")
    except (TaskError, UsageError, ValueError, TypeError) as exc:
        return fail(EXIT_PARSE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
