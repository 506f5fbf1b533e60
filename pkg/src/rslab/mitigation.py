"""Mitigation levers as task and family transforms, and what-if count reports.

Each strategy targets one of four levers: the knowledge, the support of the
ground-truth concepts, the optimality condition (training objective) and the
family of learnable remaps.  Strategies with a symbolic effect are counted;
purely training-time ones are marked empirical-only.
"""

from __future__ import annotations

import csv
import io
import itertools
import os
from dataclasses import dataclass, field
from typing import Sequence, Union

from .analysis import (
    DEFAULT_BUDGET, IdentityExcluded, RemapFamily, count_rss, family_size, knowledge_complexity_detail,
)
from .analysis.remap import SHAPES
from .logic import TaskError, TaskSpec, build_beta_star, parse_task, task_from_json
from .logic.formula import conjoin
from .logic.spaces import Space

LEVERS = ("knowledge", "support", "optimality", "family")


@dataclass(frozen=True)
class MultiTask:
    tasks: tuple
    lever = "knowledge"
    kind = "multitask"


@dataclass(frozen=True)
class RestrictOrExtendSupport:
    vectors: tuple
    mode: str = "add"
    lever = "support"
    kind = "support"

    def __post_init__(self):
        if self.mode not in ("set", "add", "remove"):
            raise ValueError(f"support mode must be set, add or remove, got {self.mode!r}")


@dataclass(frozen=True)
class PinSupervision:
    """Concept supervision on the given support vectors; ``None`` pins all of them."""

    vectors: tuple | None = None
    lever = "optimality"
    kind = "pin"


@dataclass(frozen=True)
class RequireInjectivity:
    lever = "optimality"
    kind = "injective"


@dataclass(frozen=True)
class Factorize:
    shape: str = "perslot"
    lever = "family"
    kind = "factorize"

    def __post_init__(self):
        if self.shape not in ("perslot", "sharedslot"):
            raise ValueError(f"factorize shape must be perslot or sharedslot, got {self.shape!r}")


@dataclass(frozen=True)
class EntropyReg:
    weight: float = 0.1
    lever = "optimality"
    kind = "entropy"

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("entropy weight must be >= 0")


@dataclass(frozen=True)
class SmoothTemperature:
    tau: float = 2.0
    lever = "optimality"
    kind = "smoothing"

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("smoothing temperature must be >= 1")


@dataclass(frozen=True)
class ContrastivePairs:
    weight: float = 0.1
    lever = "optimality"
    kind = "contrastive"

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("contrastive weight must be >= 0")


@dataclass(frozen=True)
class ReconstructionHead:
    weight: float = 0.1
    lever = "optimality"
    kind = "reconstruction"

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("reconstruction weight must be >= 0")


MitigationSpec = Union[
    MultiTask, RestrictOrExtendSupport, PinSupervision, RequireInjectivity, Factorize,
    EntropyReg, SmoothTemperature, ContrastivePairs, ReconstructionHead,
]
EMPIRICAL = (EntropyReg, SmoothTemperature, ContrastivePairs, ReconstructionHead)


def _vectors(items) -> tuple:
    return tuple(tuple(int(x) for x in v) for v in items)


def parse_strategy(obj: dict, base_dir: str = ".") -> MitigationSpec:
    """Build a strategy from its JSON form, e.g. ``{"kind": "injective"}``.

    Multi-task companions are given as task file paths (relative to
    ``base_dir``) or inline DSL/JSON task text.
    """
    kind = obj.get("kind")
    if kind == "multitask":
        tasks = []
        for ref in obj.get("tasks", []):
            if isinstance(ref, dict):
                tasks.append(task_from_json(ref))
                continue
            path = os.path.join(base_dir, ref)
            text = open(path, encoding="utf-8").read() if os.path.exists(path) else ref
            tasks.append(parse_task(text))
        if not tasks:
            raise ValueError("multitask strategy needs at least one companion task")
        return MultiTask(tuple(tasks))
    if kind == "support":
        return RestrictOrExtendSupport(_vectors(obj.get("vectors", [])), obj.get("mode", "add"))
    if kind == "pin":
        vecs = obj.get("vectors", "all")
        return PinSupervision(None if vecs == "all" else _vectors(vecs))
    if kind == "injective":
        return RequireInjectivity()
    if kind == "factorize":
        return Factorize(obj.get("shape", "perslot"))
    if kind == "entropy":
        return EntropyReg(float(obj.get("weight", 0.1)))
    if kind == "smoothing":
        return SmoothTemperature(float(obj.get("tau", 2.0)))
    if kind == "contrastive":
        return ContrastivePairs(float(obj.get("weight", 0.1)))
    if kind == "reconstruction":
        return ReconstructionHead(float(obj.get("weight", 0.1)))
    raise ValueError(f"unknown strategy kind {kind!r}")


def strategy_name(s: MitigationSpec) -> str:
    if isinstance(s, MultiTask):
        return "multitask(" + "+".join(t.name for t in s.tasks) + ")"
    if isinstance(s, RestrictOrExtendSupport):
        return f"support-{s.mode}({len(s.vectors)})"
    if isinstance(s, PinSupervision):
        return "pin(all)" if s.vectors is None else "pin(" + ";".join(",".join(map(str, v)) for v in s.vectors) + ")"
    if isinstance(s, Factorize):
        return f"factorize({s.shape})"
    if isinstance(s, EntropyReg):
        return f"entropy({s.weight:g})"
    if isinstance(s, SmoothTemperature):
        return f"smoothing({s.tau:g})"
    if isinstance(s, ContrastivePairs):
        return f"contrastive({s.weight:g})"
    if isinstance(s, ReconstructionHead):
        return f"reconstruction({s.weight:g})"
    return s.kind


def merge_multitask(tasks: Sequence[TaskSpec]) -> TaskSpec:
    """Conjoin the knowledge of tasks over one concept space.

    Labels are concatenated, the support is the intersection of the supports,
    and the concept distribution is kept only if all tasks agree on it.
    """
    tasks = list(tasks)
    if not tasks:
        raise TaskError("merge_multitask needs at least one task")
    first = tasks[0]
    for t in tasks[1:]:
        if t.concepts != first.concepts:
            raise TaskError(f"concept spaces differ: {first.concepts} vs {t.concepts}")
    if len(tasks) == 1:
        return first
    names, cards, seen = [], [], set()
    knowledge, shared = [], set(first.support)
    for t in tasks:
        same = [n for n in t.labels.names if n in seen]
        if same:
            if t.labels == first.labels and t.source == first.source:
                continue  # conjoining a task with itself changes nothing
            raise TaskError(f"label names clash across tasks: {same}")
        seen.update(t.labels.names)
        names += list(t.labels.names)
        cards += list(t.labels.cards)
        knowledge.append(t.source)
        shared &= set(t.support)
    if not shared:
        raise TaskError("the tasks' supports do not intersect")
    support = sorted(shared, key=first.concepts.index)
    dist = None
    if all(t.distribution is not None for t in tasks):
        maps = [dict(zip(t.support, t.distribution)) for t in tasks]
        if all(m == maps[0] for m in maps) and len(maps[0]) == len(support):
            dist = [maps[0][g] for g in support]
    merged = conjoin(knowledge)
    return TaskSpec.create(
        first.concepts, Space(tuple(names), tuple(cards)), merged, support, dist,
        name="+".join(dict.fromkeys(t.name for t in tasks)), cap=first.cap,
    )


def transform_support(task: TaskSpec, vectors, mode: str = "add") -> TaskSpec:
    """Replace, extend or shrink the support.  Any distribution is dropped."""
    vectors = _vectors(vectors)
    current = list(task.support)
    if mode == "set":
        new = list(dict.fromkeys(vectors))
    elif mode == "add":
        new = current + [v for v in dict.fromkeys(vectors) if v not in set(current)]
    elif mode == "remove":
        drop = set(vectors)
        new = [v for v in current if v not in drop]
    else:
        raise ValueError(f"support mode must be set, add or remove, got {mode!r}")
    if not new:
        raise TaskError("the resulting support is empty")
    if mode == "add" and len(new) == len(current):
        return task
    return task.replace(support=new, distribution=None)


def constrain_family(family: RemapFamily, constraint: str, value=None, task: TaskSpec | None = None) -> RemapFamily:
    """Add ``pin`` (vectors or ``None`` for the whole support of ``task``),
    ``injective`` or ``factorize`` (``value`` = shape) to a family."""
    if constraint == "pin":
        if value is None:
            if task is None:
                raise ValueError("pinning the whole support needs the task")
            value = task.support
        return family.with_pins(value)
    if constraint == "injective":
        return family.with_injective()
    if constraint == "factorize":
        if value not in SHAPES:
            raise ValueError(f"unknown shape {value!r}")
        if family.shape == "sharedslot" or family.shape == value:
            return family
        return family.with_shape(value)
    raise ValueError(f"unknown constraint {constraint!r}")


def apply_strategy(task: TaskSpec, family: RemapFamily, s: MitigationSpec):
    if isinstance(s, MultiTask):
        return merge_multitask([task, *s.tasks]), family
    if isinstance(s, RestrictOrExtendSupport):
        return transform_support(task, s.vectors, s.mode), family
    if isinstance(s, PinSupervision):
        return task, constrain_family(family, "pin", s.vectors, task)
    if isinstance(s, RequireInjectivity):
        return task, constrain_family(family, "injective")
    if isinstance(s, Factorize):
        return task, constrain_family(family, "factorize", s.shape)
    return task, family


@dataclass
class Scenario:
    name: str
    lever: str
    status: str
    count: int | None = None
    knowledge_complexity: float | None = None
    family_size: int | None = None
    method: str | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name, "lever": self.lever, "status": self.status, "count": self.count,
            "knowledge_complexity": self.knowledge_complexity,
            "family_size": None if self.family_size is None else str(self.family_size),
            "method": self.method,
        }


@dataclass
class WhatIfReport:
    task: str
    family: dict
    baseline: Scenario
    strategies: list = field(default_factory=list)
    combinations: list = field(default_factory=list)

    def to_json(self) -> dict:
        base = self.baseline
        def delta(s):
            out = s.to_json()
            if s.status == "counted":
                out["kc_delta"] = s.knowledge_complexity - base.knowledge_complexity
                out["family_size_delta"] = str(s.family_size - base.family_size)
            return out
        return {
            "task": self.task,
            "family": self.family,
            "baseline": base.to_json(),
            "strategies": [delta(s) for s in self.strategies],
            "combinations": [delta(s) for s in self.combinations],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "lever", "before", "after"])
        w.writerow(["baseline", "-", self.baseline.count, self.baseline.count])
        for s in self.strategies + self.combinations:
            w.writerow([s.name, s.lever, self.baseline.count, s.count if s.status == "counted" else s.status])
        return buf.getvalue()


def _measure(name, lever, task, family, budget, threads) -> Scenario:
    table = build_beta_star(task)
    count, method = count_rss(task, family, budget=budget, threads=threads, table=table, with_method=True)
    kc = knowledge_complexity_detail(task, table=table).value
    return Scenario(name, lever, "counted", count, kc, family_size(task, family), method)


def what_if(task: TaskSpec, family: RemapFamily, strategies: Sequence[MitigationSpec], combos: bool = False,
            budget: int = DEFAULT_BUDGET, threads: int = 1) -> WhatIfReport:
    """Shortcut counts before and after each strategy (and each pair).

    Counting uses brute force within ``budget`` and the SAT counter beyond it.
    Training-time strategies other than injectivity are reported as
    empirical-only.
    """
    report = WhatIfReport(task.name, family.describe(), _measure("baseline", "-", task, family, budget, threads))
    counted = []
    for s in strategies:
        name = strategy_name(s)
        if isinstance(s, EMPIRICAL):
            report.strategies.append(Scenario(name, s.lever, "empirical-only"))
            continue
        t, f = apply_strategy(task, family, s)
        report.strategies.append(_measure(name, s.lever, t, f, budget, threads))
        counted.append(s)
    if combos:
        for a, b in itertools.combinations(counted, 2):
            t, f = apply_strategy(task, family, a)
            t, f = apply_strategy(t, f, b)
            lever = a.lever if a.lever == b.lever else f"{a.lever}+{b.lever}"
            report.combinations.append(
                _measure(f"{strategy_name(a)}+{strategy_name(b)}", lever, t, f, budget, threads)
            )
    return report


__all__ = [
    "LEVERS", "MultiTask", "RestrictOrExtendSupport", "PinSupervision", "RequireInjectivity", "Factorize",
    "EntropyReg", "SmoothTemperature", "ContrastivePairs", "ReconstructionHead", "MitigationSpec",
    "parse_strategy", "strategy_name", "merge_multitask", "transform_support", "constrain_family",
    "apply_strategy", "what_if", "WhatIfReport", "Scenario", "IdentityExcluded",
]
