"""Exact shortcut counting by reduction to propositional model counting.

Variables ``M[j, c]`` say that support row ``j`` maps to concept vector
``c``.  Factorised families add symbol variables ``S[i, a, b]`` (slot ``i``
maps symbol ``a`` to ``b``; a single shared set for the shared form) tied to
``M`` in both directions.  Every ``M`` row and every symbol has exactly one
true variable, so models of the formula are in bijection with family members
that preserve the support labels.  Models are counted by an exhaustive DPLL
search with unit propagation, connected-component decomposition and caching.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..logic.task import InferenceTable, TaskSpec, build_beta_star
from .count import IdentityExcluded
from .remap import RemapFamily


@dataclass
class CNF:
    num_vars: int = 0
    clauses: list = field(default_factory=list)
    names: dict = field(default_factory=dict)

    def var(self, name) -> int:
        self.num_vars += 1
        self.names[self.num_vars] = name
        return self.num_vars

    def add(self, *lits: int) -> None:
        self.clauses.append(tuple(sorted(set(lits), key=abs)))


def _exactly_one(cnf: CNF, lits: list[int]) -> None:
    cnf.add(*lits)
    for a in range(len(lits)):
        for b in range(a + 1, len(lits)):
            cnf.add(-lits[a], -lits[b])


def encode(task: TaskSpec, family: RemapFamily, table: InferenceTable | None = None) -> CNF:
    """Build the counting formula for ``family`` on ``task``.

    Clauses containing a literal already falsified by a unit clause are
    satisfied and therefore left out; this keeps the formula linear in the
    number of live ``(row, vector)`` pairs without changing its models.
    """
    table = table or build_beta_star(task)
    bound = family.bind(task.concepts, task.support)
    space = task.concepts
    n = len(task.support)
    rows = {g: j for j, g in enumerate(task.support)}
    cnf = CNF()
    target = table.label_index[bound.support_idx]
    dead = np.zeros((n, space.size), dtype=bool)
    dead |= table.label_index[None, :] != target[:, None]
    for g, c in family.forbidden:
        if g in rows:
            dead[rows[g], space.index(c)] = True
    M = np.zeros((n, space.size), dtype=np.int64)
    for j in range(n):
        for c in range(space.size):
            M[j, c] = cnf.var(("M", j, c))
            if dead[j, c]:
                cnf.add(-int(M[j, c]))
    for j in range(n):
        _exactly_one(cnf, [int(v) for v in M[j][~dead[j]]])
    for g in family.pins:
        cnf.add(int(M[rows[g], space.index(g)]))
    if family.injective:
        for c in range(space.size):
            live = [int(M[j, c]) for j in range(n) if not dead[j, c]]
            for a in range(len(live)):
                for b in range(a + 1, len(live)):
                    cnf.add(-live[a], -live[b])
    if family.shape == "fulltable":
        return cnf
    # symbol variables, one block per digit of the bound family
    S = {}
    for p, (i, a) in enumerate(bound.digits):
        card = bound.radices[p]
        S[p] = [cnf.var(("S", i, a, b)) for b in range(card)]
        _exactly_one(cnf, S[p])
    vecs = space.vectors
    for j in range(n):
        slots = bound.slot_digit[j]
        for c in range(space.size):
            lits = [S[int(p)][int(vecs[c, i])] for i, p in enumerate(slots)]
            if not dead[j, c]:
                for s in set(lits):
                    cnf.add(-int(M[j, c]), s)
            cnf.add(*(-s for s in set(lits)), int(M[j, c]))
    return cnf


class ModelCounter:
    """Exhaustive #SAT by DPLL with components and a component cache."""

    def __init__(self):
        self.cache: dict = {}
        self.decisions = 0

    def count(self, clauses, variables) -> int:
        limit = sys.getrecursionlimit()
        sys.setrecursionlimit(max(limit, 10000))
        try:
            return self._count([tuple(c) for c in clauses], frozenset(variables))
        finally:
            sys.setrecursionlimit(limit)

    @staticmethod
    def _propagate(clauses):
        assigned = set()
        while True:
            units = {c[0] for c in clauses if len(c) == 1}
            if not units:
                return clauses, assigned
            if any(-u in units for u in units):
                return None, assigned
            assigned |= units
            out = []
            for c in clauses:
                if any(l in units for l in c):
                    continue
                reduced = tuple(l for l in c if -l not in units)
                if not reduced:
                    return None, assigned
                out.append(reduced)
            clauses = out

    @staticmethod
    def _components(clauses):
        parent = {}

        def find(x):
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for c in clauses:
            r = find(abs(c[0]))
            for l in c[1:]:
                s = find(abs(l))
                if s != r:
                    parent[s] = r
        groups: dict = {}
        for c in clauses:
            groups.setdefault(find(abs(c[0])), []).append(c)
        return list(groups.values())

    def _count(self, clauses, variables) -> int:
        clauses, assigned = self._propagate(clauses)
        if clauses is None:
            return 0
        variables = variables - {abs(l) for l in assigned}
        if not clauses:
            return 1 << len(variables)
        used = {abs(l) for c in clauses for l in c}
        total = 1 << len(variables - used)
        for comp in self._components(clauses):
            key = frozenset(comp)
            r = self.cache.get(key)
            if r is None:
                r = self._branch(comp)
                self.cache[key] = r
            if r == 0:
                return 0
            total *= r
        return total

    def _branch(self, clauses) -> int:
        freq: dict = {}
        for c in clauses:
            w = 1.0 / len(c)
            for l in c:
                freq[abs(l)] = freq.get(abs(l), 0.0) + w
        v = max(sorted(freq), key=lambda x: freq[x])
        comp_vars = frozenset(freq) - {v}
        self.decisions += 1
        total = 0
        for lit in (v, -v):
            sub = [tuple(l for l in c if l != -lit) for c in clauses if lit not in c]
            if any(len(c) == 0 for c in sub):
                continue
            total += self._count(sub, comp_vars)
        return total


def count_models(cnf: CNF, threads: int = 1) -> int:
    """Number of models of ``cnf`` over all of its variables.

    With ``threads > 1`` the search is split on the first clause's literals
    (made disjoint by fixing earlier literals false) and the parts summed.
    """
    variables = frozenset(range(1, cnf.num_vars + 1))
    if threads <= 1 or not cnf.clauses:
        return ModelCounter().count(cnf.clauses, variables)
    head = max(cnf.clauses, key=len)
    branches = []
    for i, lit in enumerate(head):
        units = [(-l,) for l in head[:i]] + [(lit,)]
        branches.append(cnf.clauses + units)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(lambda cl: ModelCounter().count(cl, variables), branches))
    return sum(parts)


def count_rss_sat(task: TaskSpec, family: RemapFamily = RemapFamily(), threads: int = 1,
                  table: InferenceTable | None = None) -> int:
    """Exact shortcut count via model counting; agrees with brute force."""
    cnf = encode(task, family, table)
    models = count_models(cnf, threads)
    if models < 1:
        raise IdentityExcluded("the identity is not a member of the constrained family")
    return models - 1
