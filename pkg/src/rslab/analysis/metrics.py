"""Diagnostic quantities: knowledge complexity, RS risk, collapse, mixtures."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..inference import ConceptDistribution, pnsp_label_dist
from ..logic.task import InferenceTable, TaskSpec, build_beta_star, check_k_unambiguity
from .count import DEFAULT_BUDGET, BudgetExceeded, count_rss_bruteforce, enumerate_rss, family_size
from .remap import RemapFamily, StochasticRemap
from .sat import count_rss_sat


class KnowledgeWarning(UserWarning):
    """A label with positive probability has no consistent concept vector."""


def default_label_dist(task: TaskSpec, table: InferenceTable) -> np.ndarray:
    """Push the task's concept distribution through the ground-truth table,
    or spread uniformly over the labels reached from the support."""
    out = np.zeros(table.labels.size)
    labels = table.label_index[table.support]
    if task.distribution is not None:
        np.add.at(out, labels, np.asarray(task.distribution))
    else:
        out[np.unique(labels)] = 1.0
        out /= out.sum()
    return out


def count_rss(task: TaskSpec, family: RemapFamily = RemapFamily(), method: str = "auto",
              budget: int = DEFAULT_BUDGET, threads: int = 1, table: InferenceTable | None = None,
              with_method: bool = False):
    """Shortcut count by brute force, SAT, or ``auto`` (brute force within
    ``budget``, SAT beyond it)."""
    if method not in ("auto", "brute", "sat"):
        raise ValueError(f"unknown counting method {method!r}")
    if method == "auto":
        method = "brute" if family_size(task, family) <= budget else "sat"
    if method == "brute":
        n = count_rss_bruteforce(task, family, budget=budget, threads=threads, table=table)
    else:
        n = count_rss_sat(task, family, threads=threads, table=table)
    return (n, method) if with_method else n


def label_preserving_fraction(task: TaskSpec, family: RemapFamily = RemapFamily(), budget: int = DEFAULT_BUDGET,
                              threads: int = 1, table: InferenceTable | None = None) -> float:
    """Share of family members (identity included) that preserve every label.

    Families are defined on the symbols the support uses, so a larger support
    can raise the raw count by adding free rows; this share equals the count
    over maps on the whole concept space up to a constant factor and never
    grows when the support does.
    """
    n = count_rss(task, family, budget=budget, threads=threads, table=table)
    return (n + 1) / family_size(task, family)


@dataclass
class KCResult:
    value: float
    per_label: dict
    warnings: list = field(default_factory=list)


def knowledge_complexity_detail(task: TaskSpec, label_dist=None, table: InferenceTable | None = None) -> KCResult:
    table = table or build_beta_star(task)
    if label_dist is None:
        label_dist = default_label_dist(task, table)
    q = np.asarray(label_dist, dtype=float).reshape(-1)
    if q.shape != (table.labels.size,):
        raise ValueError(f"label distribution has {q.size} entries, expected {table.labels.size}")
    if np.any(q < 0) or abs(q.sum() - 1) > 1e-9:
        raise ValueError("label distribution must be nonnegative and sum to 1")
    inconsistent = (~table.consistent).sum(axis=0)
    notes = []
    per_label = {}
    for yi in np.flatnonzero(q > 0):
        y = table.labels.vector(yi)
        per_label[y] = int(inconsistent[yi])
        if inconsistent[yi] == table.concepts.size:
            notes.append(f"label {y} has positive probability but no consistent concept vector")
    return KCResult(float(q @ inconsistent), per_label, notes)


def knowledge_complexity(task: TaskSpec, label_dist=None, table: InferenceTable | None = None) -> float:
    """Expected number of concept vectors inconsistent with a random label."""
    res = knowledge_complexity_detail(task, label_dist, table)
    for note in res.warnings:
        warnings.warn(note, KnowledgeWarning, stacklevel=2)
    return res.value


def rs_risk(concept_nll: float, label_nll: float) -> float:
    """Concept risk minus label risk; ``+inf`` when only the concept risk is infinite."""
    if math.isinf(concept_nll) and not math.isinf(label_nll):
        return math.inf if concept_nll > 0 else -math.inf
    return float(concept_nll - label_nll)


def collapse_metric(confusion) -> float:
    """``1 - p/m`` where ``p`` counts predicted columns that receive any mass."""
    c = np.asarray(confusion, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise ValueError(f"confusion matrix must be square and nonempty, got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("confusion matrix entries must be nonnegative")
    if not np.any(c > 0):
        raise ValueError("confusion matrix has no mass")
    m = c.shape[0]
    p = int(np.count_nonzero(c.sum(axis=0) > 0))
    return 1.0 - p / m


def remap_collapse(remap, support) -> float:
    """Collapse of a remap restricted to the support (ground truth x image)."""
    images = {remap.apply(g) for g in support}
    return 1.0 - len(images) / len(support)


@dataclass
class MixtureVerdict:
    label_preserving: bool
    max_tv: float
    nontrivial: bool

    def __bool__(self) -> bool:
        return self.label_preserving


def verify_mixture_is_rs(mix: StochasticRemap, table: InferenceTable, tol: float = 1e-9) -> MixtureVerdict:
    """Check that the mixture's output at every support ``g`` is labelled
    ``beta*(g)`` with probability one.

    ``nontrivial`` is false when the mixture only puts weight on remaps that
    are the identity on the support; such a mixture preserves labels but is
    not a shortcut.
    """
    rows = mix.rows()
    worst = 0.0
    for g, row in zip(mix.support, rows):
        probs = pnsp_label_dist(ConceptDistribution(table.concepts, table=row), table).probs
        target = np.zeros_like(probs)
        target[table.label_index[table.concepts.index(g)]] = 1.0
        worst = max(worst, 0.5 * float(np.abs(probs - target).sum()))
    if isinstance(mix, StochasticRemap):
        nontrivial = any(w > 0 and not r.is_identity_on(mix.support) for r, w in zip(mix.components, mix.weights))
    else:
        ident = np.zeros_like(rows)
        ident[np.arange(len(mix.support)), [table.concepts.index(g) for g in mix.support]] = 1.0
        nontrivial = not np.allclose(rows, ident)
    return MixtureVerdict(worst <= tol, worst, nontrivial)


@dataclass
class DiagnosticsReport:
    task: str
    family: dict
    rs_count: int
    method: str
    knowledge_complexity: float
    kc_warnings: list
    k_unambiguity: dict
    collapse: float
    family_size: int
    remaps: list
    enumerated_total: int | None

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "family": self.family,
            "rs_count": self.rs_count,
            "method": self.method,
            "knowledge_complexity": self.knowledge_complexity,
            "kc_warnings": list(self.kc_warnings),
            "k_unambiguity": self.k_unambiguity,
            "collapse": self.collapse,
            "family_size": str(self.family_size),
            "remaps": self.remaps,
            "enumerated_total": self.enumerated_total,
        }


def diagnose(task: TaskSpec, family: RemapFamily = RemapFamily(), method: str = "sat", cap: int = 20,
             budget: int = DEFAULT_BUDGET, threads: int = 1, table: InferenceTable | None = None) -> DiagnosticsReport:
    """Count shortcuts and collect the symbolic diagnostics for a task.

    ``collapse`` is the worst collapse among the enumerated shortcuts (0 when
    there are none or enumeration is over budget).
    """
    if method not in ("sat", "brute"):
        raise ValueError(f"unknown counting method {method!r}")
    table = table or build_beta_star(task)
    remaps, enum_total = [], None
    try:
        enum = enumerate_rss(task, family, cap=cap, budget=budget, threads=threads, table=table)
        remaps, enum_total = enum.remaps, enum.total
    except BudgetExceeded:
        if method == "brute":
            raise
    if method == "brute":
        count = enum_total
    else:
        count = count_rss_sat(task, family, threads=threads, table=table)
    kc = knowledge_complexity_detail(task, table=table)
    k = len(task.concepts)
    if len(set(task.concepts.cards)) == 1:
        ku = check_k_unambiguity(table, k)
        kverdict = {"applicable": True, "unambiguous": ku.unambiguous,
                    "witness": list(ku.witness) if ku.witness else None}
    else:
        kverdict = {"applicable": False, "unambiguous": None, "witness": None}
    collapse = max((remap_collapse(r, task.support) for r in remaps), default=0.0)
    return DiagnosticsReport(
        task=task.name,
        family=family.describe(),
        rs_count=count,
        method=method,
        knowledge_complexity=kc.value,
        kc_warnings=kc.warnings,
        k_unambiguity=kverdict,
        collapse=collapse,
        family_size=family_size(task, family),
        remaps=[r.to_json(task.support) for r in remaps],
        enumerated_total=enum_total,
    )


__all__ = [
    "count_rss", "label_preserving_fraction", "KnowledgeWarning", "KCResult", "knowledge_complexity", "knowledge_complexity_detail",
    "default_label_dist", "rs_risk", "collapse_metric", "remap_collapse", "MixtureVerdict",
    "verify_mixture_is_rs", "DiagnosticsReport", "diagnose",
]
