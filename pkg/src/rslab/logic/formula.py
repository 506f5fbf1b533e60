"""Propositional formula AST over finite-domain variables.

Atoms compare a variable against a value (``C = 3``).  The only sugar is
:class:`Relation`, an integer comparison between polynomials over the
variables (``Y == C1 + C2``, ``P == C1 * C2``, ``G <-> (C1 > C2)``), which
:func:`desugar` rewrites into an explicit disjunction of value assignments.
"""

from __future__ import annotations

import functools
import itertools
import operator
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


class Formula:
    """Base class for formula nodes. Nodes are immutable and hashable."""

    def variables(self) -> frozenset[str]:
        raise NotImplementedError

    def __and__(self, other: "Formula") -> "Formula":
        return And(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return Or(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)


@dataclass(frozen=True)
class Const(Formula):
    value: bool

    def variables(self):
        return frozenset()


@dataclass(frozen=True)
class Atom(Formula):
    var: str
    value: int

    def variables(self):
        return frozenset([self.var])


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula

    def variables(self):
        return self.arg.variables()


@dataclass(frozen=True)
class _Binary(Formula):
    left: Formula
    right: Formula

    def variables(self):
        return self.left.variables() | self.right.variables()


class And(_Binary):
    pass


class Or(_Binary):
    pass


class Xor(_Binary):
    pass


class Implies(_Binary):
    pass


class Iff(_Binary):
    pass


_RELOPS = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt,
    "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}


@dataclass(frozen=True)
class Poly:
    """Integer polynomial ``const + sum(coef * prod(names))``."""

    terms: tuple[tuple[int, tuple[str, ...]], ...] = ()
    const: int = 0

    @classmethod
    def build(cls, terms, const: int = 0) -> "Poly":
        acc: dict = {}
        for coef, names in terms:
            names = (names,) if isinstance(names, str) else tuple(sorted(names))
            if not names:
                const += coef
                continue
            acc[names] = acc.get(names, 0) + coef
        return cls(tuple((c, n) for n, c in acc.items() if c != 0), const)

    @classmethod
    def var(cls, name: str) -> "Poly":
        return cls(((1, (name,)),), 0)

    def variables(self) -> frozenset[str]:
        return frozenset(n for _, names in self.terms for n in names)

    def value(self, values: Mapping[str, object]):
        out = self.const
        for coef, names in self.terms:
            out = out + coef * functools.reduce(operator.mul, (_lookup(values, n) for n in names))
        return out


@dataclass(frozen=True)
class Relation(Formula):
    """Arithmetic comparison between two integer polynomials."""

    op: str
    left: Poly
    right: Poly

    def __post_init__(self):
        if self.op not in _RELOPS:
            raise ValueError(f"unknown relation {self.op!r}")

    def variables(self):
        return self.left.variables() | self.right.variables()

    def holds(self, values):
        return _RELOPS[self.op](self.left.value(values), self.right.value(values))


def lin_eq(var: str, terms, const: int = 0) -> Relation:
    """``var == const + sum(coef * name)``, the common sum-style constraint."""
    return Relation("==", Poly.var(var), Poly.build(terms, const))


class MissingVariable(KeyError):
    pass


def _lookup(a: Mapping[str, int], var: str) -> int:
    try:
        return a[var]
    except KeyError:
        raise MissingVariable(var) from None


def evaluate(formula: Formula, a: Mapping[str, int]) -> bool:
    """Truth value of ``formula`` under assignment ``a``.

    Arithmetic sugar is evaluated directly with integer semantics, which makes
    this function usable as an oracle for :func:`desugar`.
    """
    if isinstance(formula, Const):
        return formula.value
    if isinstance(formula, Atom):
        return _lookup(a, formula.var) == formula.value
    if isinstance(formula, Relation):
        return bool(formula.holds(a))
    if isinstance(formula, Not):
        return not evaluate(formula.arg, a)
    left = evaluate(formula.left, a)
    right = evaluate(formula.right, a)
    if isinstance(formula, And):
        return left and right
    if isinstance(formula, Or):
        return left or right
    if isinstance(formula, Xor):
        return left != right
    if isinstance(formula, Implies):
        return (not left) or right
    if isinstance(formula, Iff):
        return left == right
    raise TypeError(f"unknown formula node {formula!r}")


def evaluate_batch(formula: Formula, columns: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorised evaluation; ``columns`` maps each variable to an int array.

    Arrays only need to be broadcast-compatible, so concept and label columns
    can be passed with orthogonal axes to get a full consistency grid.
    """
    if isinstance(formula, Const):
        return np.array(formula.value)
    if isinstance(formula, Atom):
        return _lookup(columns, formula.var) == formula.value
    if isinstance(formula, Relation):
        return np.asarray(formula.holds(columns))
    if isinstance(formula, Not):
        return ~evaluate_batch(formula.arg, columns)
    left = evaluate_batch(formula.left, columns)
    right = evaluate_batch(formula.right, columns)
    if isinstance(formula, And):
        return left & right
    if isinstance(formula, Or):
        return left | right
    if isinstance(formula, Xor):
        return left ^ right
    if isinstance(formula, Implies):
        return ~left | right
    if isinstance(formula, Iff):
        return left == right
    raise TypeError(f"unknown formula node {formula!r}")


def conjoin(parts) -> Formula:
    parts = list(parts)
    if not parts:
        return Const(True)
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def disjoin(parts) -> Formula:
    parts = list(parts)
    if not parts:
        return Const(False)
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


def desugar(formula: Formula, cards: Mapping[str, int]) -> Formula:
    """Replace every :class:`Relation` by a disjunction of value conjunctions.

    ``Y == C1 + C2`` becomes the disjunction, over all in-range assignments
    ``(c1, c2, y)`` with ``y = c1 + c2``, of ``C1=c1 & C2=c2 & Y=y``.
    """
    if isinstance(formula, (Const, Atom)):
        return formula
    if isinstance(formula, Not):
        return Not(desugar(formula.arg, cards))
    if isinstance(formula, _Binary):
        return type(formula)(desugar(formula.left, cards), desugar(formula.right, cards))
    if isinstance(formula, Relation):
        names = sorted(formula.variables())
        rows = []
        for values in itertools.product(*(range(cards[n]) for n in names)):
            env = dict(zip(names, values))
            if formula.holds(env):
                rows.append(conjoin([Atom(n, v) for n, v in env.items()]))
        return disjoin(rows)
    raise TypeError(f"unknown formula node {formula!r}")


def has_sugar(formula: Formula) -> bool:
    if isinstance(formula, Relation):
        return True
    if isinstance(formula, Not):
        return has_sugar(formula.arg)
    if isinstance(formula, _Binary):
        return has_sugar(formula.left) or has_sugar(formula.right)
    return False


def fold(formula: Formula, atom: Callable[[Atom], object], ops: Mapping[type, Callable]) -> object:
    """Generic bottom-up evaluation used by the fuzzy semantics."""
    if isinstance(formula, Atom):
        return atom(formula)
    if isinstance(formula, Const):
        return ops[Const](formula.value)
    if isinstance(formula, Not):
        return ops[Not](fold(formula.arg, atom, ops))
    if isinstance(formula, _Binary):
        return ops[type(formula)](fold(formula.left, atom, ops), fold(formula.right, atom, ops))
    raise TypeError(f"cannot fold {formula!r}; desugar first")


_SYMBOLS = {And: "&", Or: "|", Xor: "^", Implies: "->", Iff: "<->"}


def to_text(formula: Formula) -> str:
    """Fully parenthesised rendering accepted back by the parser."""
    if isinstance(formula, Const):
        return "true" if formula.value else "false"
    if isinstance(formula, Atom):
        return f"{formula.var} = {formula.value}"
    if isinstance(formula, Relation):
        return f"{poly_text(formula.left)} {formula.op} {poly_text(formula.right)}"
    if isinstance(formula, Not):
        return f"!({to_text(formula.arg)})"
    if isinstance(formula, _Binary):
        return f"({to_text(formula.left)}) {_SYMBOLS[type(formula)]} ({to_text(formula.right)})"
    raise TypeError(f"unknown formula node {formula!r}")


def poly_text(poly: Poly) -> str:
    parts = []
    for coef, names in poly.terms:
        mono = "*".join(names) if abs(coef) == 1 else f"{abs(coef)}*{'*'.join(names)}"
        if not parts:
            parts.append(mono if coef > 0 else f"-{mono}")
        else:
            parts.append(f"{'+' if coef > 0 else '-'} {mono}")
    if poly.const or not parts:
        if not parts:
            parts.append(str(poly.const))
        else:
            parts.append(f"{'+' if poly.const > 0 else '-'} {abs(poly.const)}")
    return " ".join(parts)
