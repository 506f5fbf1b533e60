"""Deciding, enumerating and brute-force counting deterministic shortcuts."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..logic.task import InferenceTable, TaskSpec, build_beta_star
from .remap import BoundFamily, ConceptRemap, RemapFamily

DEFAULT_BUDGET = 10**8
CHUNK = 1 << 15


class BudgetExceeded(RuntimeError):
    """The family is too large to enumerate; use the SAT counter instead."""

    def __init__(self, candidates: int, budget: int):
        self.candidates = candidates
        self.budget = budget
        super().__init__(
            f"family has {candidates} candidates, over the budget of {budget}; use the SAT counter instead"
        )


class IdentityExcluded(ValueError):
    """The constrained family no longer contains the identity remap."""


def is_rs(alpha: ConceptRemap, table: InferenceTable, support) -> bool:
    """True iff ``alpha`` preserves every support label and is not the identity."""
    changed = False
    for g in support:
        c = alpha.apply(g)
        gi = table.label_index[table.concepts.index(g)]
        ci = table.label_index[table.concepts.index(c)]
        if gi < 0 or ci != gi:
            return False
        changed |= tuple(g) != c
    return changed


@dataclass
class Enumeration:
    remaps: list
    total: int


def _chunk_scan(bound: BoundFamily, target: np.ndarray, label_index: np.ndarray, lo: int, hi: int, keep: int):
    idx = np.arange(lo, hi, dtype=np.int64)
    digits = bound.decode(idx)
    images = bound.images(digits)
    ok = np.all(label_index[images] == target, axis=1) & bound.member_mask(images)
    hits = np.flatnonzero(ok)
    return int(hits.size), digits[hits[:keep]]


def _scan(task: TaskSpec, family: RemapFamily, budget: int, threads: int, keep: int, table=None):
    table = table or build_beta_star(task)
    bound = family.bind(task.concepts, task.support)
    size = bound.size
    if size > budget:
        raise BudgetExceeded(size, budget)
    target = table.label_index[bound.support_idx]
    bounds = [(lo, min(lo + CHUNK, size)) for lo in range(0, size, CHUNK)]
    # each chunk keeps enough hits to cover the cap, including the identity
    args = [(bound, target, table.label_index, lo, hi, keep + 1) for lo, hi in bounds]
    if threads > 1 and len(args) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda a: _chunk_scan(*a), args))
    else:
        parts = [_chunk_scan(*a) for a in args]
    total = sum(n for n, _ in parts)
    ident = bound.identity_digits()
    found = []
    for _, digits in parts:
        for d in digits:
            if len(found) >= keep:
                break
            if not np.array_equal(d, ident):
                found.append(bound.remap(d))
    if total < 1:
        raise IdentityExcluded("the identity is not a member of the constrained family")
    return total - 1, found


def count_rss_bruteforce(task: TaskSpec, family: RemapFamily = RemapFamily(), budget: int = DEFAULT_BUDGET,
                         threads: int = 1, table: InferenceTable | None = None) -> int:
    """Number of non-identity family members preserving every support label.

    Enumerates the whole family in vectorised chunks; raises
    :class:`BudgetExceeded` when the family has more than ``budget`` members.
    """
    count, _ = _scan(task, family, budget, threads, 0, table)
    return count


def enumerate_rss(task: TaskSpec, family: RemapFamily = RemapFamily(), cap: int = 100,
                  budget: int = DEFAULT_BUDGET, threads: int = 1, table: InferenceTable | None = None) -> Enumeration:
    """First ``cap`` shortcuts in canonical member order, plus the total count."""
    if cap < 0:
        raise ValueError("cap must be >= 0")
    count, found = _scan(task, family, budget, threads, cap, table)
    return Enumeration(found, count)


def family_size(task: TaskSpec, family: RemapFamily) -> int:
    return family.bind(task.concepts, task.support).size
