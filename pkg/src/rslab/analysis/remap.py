"""Concept remaps, stochastic mixtures of remaps and remap families."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..logic.spaces import Space, TaskError

SHAPES = ("fulltable", "perslot", "sharedslot")


class PartialRemap(TaskError):
    """A remap was applied to a vector outside its domain."""


def _vec(v) -> tuple[int, ...]:
    return tuple(int(x) for x in v)


@dataclass(frozen=True)
class ConceptRemap:
    """A deterministic map from ground-truth to learned concept vectors.

    ``table`` holds ``(g, c)`` pairs for the full-table form; ``slots`` holds
    one ``((a, b), ...)`` symbol map per slot for the per-slot form, and a
    single symbol map for the shared form.
    """

    shape: str
    table: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...] = ()
    slots: tuple[tuple[tuple[int, int], ...], ...] = ()

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown remap shape {self.shape!r}")

    @classmethod
    def fulltable(cls, mapping) -> "ConceptRemap":
        items = mapping.items() if hasattr(mapping, "items") else mapping
        return cls("fulltable", table=tuple(sorted((_vec(g), _vec(c)) for g, c in items)))

    @classmethod
    def perslot(cls, maps: Sequence) -> "ConceptRemap":
        return cls("perslot", slots=tuple(tuple(sorted((int(a), int(b)) for a, b in dict(m).items())) for m in maps))

    @classmethod
    def sharedslot(cls, mapping) -> "ConceptRemap":
        return cls("sharedslot", slots=(tuple(sorted((int(a), int(b)) for a, b in dict(mapping).items())),))

    @classmethod
    def identity(cls, support) -> "ConceptRemap":
        return cls.fulltable({_vec(g): _vec(g) for g in support})

    def apply(self, g) -> tuple[int, ...]:
        g = _vec(g)
        try:
            if self.shape == "fulltable":
                return dict(self.table)[g]
            if self.shape == "sharedslot":
                m = dict(self.slots[0])
                return tuple(m[a] for a in g)
            if len(g) != len(self.slots):
                raise PartialRemap(f"per-slot remap has {len(self.slots)} slots, vector {g} has {len(g)}")
            return tuple(dict(m)[a] for m, a in zip(self.slots, g))
        except KeyError:
            raise PartialRemap(f"remap is undefined on {g}") from None

    def as_pairs(self, support) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        return [(_vec(g), self.apply(g)) for g in support]

    def is_identity_on(self, support) -> bool:
        return all(g == c for g, c in self.as_pairs(support))

    def to_json(self, support=None) -> dict:
        out: dict = {"shape": self.shape}
        if self.shape == "fulltable":
            out["pairs"] = [[list(g), list(c)] for g, c in self.table]
        else:
            out["symbol_maps"] = [[[a, b] for a, b in m] for m in self.slots]
            if support is not None:
                out["pairs"] = [[list(g), list(c)] for g, c in self.as_pairs(support)]
        return out

    def __str__(self) -> str:
        if self.shape == "fulltable":
            return "{" + ", ".join(f"{g}->{c}" for g, c in self.table) + "}"
        maps = ["{" + ", ".join(f"{a}->{b}" for a, b in m) + "}" for m in self.slots]
        return maps[0] if self.shape == "sharedslot" else "[" + ", ".join(maps) + "]"


@dataclass(frozen=True)
class StochasticRemap:
    """Convex combination of deterministic remaps on a fixed support."""

    space: Space
    support: tuple[tuple[int, ...], ...]
    components: tuple[ConceptRemap, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("a mixture needs at least one remap")
        if len(self.components) != len(self.weights):
            raise ValueError("one weight per remap required")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("mixture weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")

    def rows(self) -> np.ndarray:
        """``(|support|, |C|)`` array; row ``g`` is the output distribution at ``g``."""
        out = np.zeros((len(self.support), self.space.size))
        for remap, w in zip(self.components, self.weights):
            for j, g in enumerate(self.support):
                out[j, self.space.index(remap.apply(g))] += w
        return out

    def row(self, g) -> np.ndarray:
        return self.rows()[self.support.index(_vec(g))]

    @property
    def deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.rows().max(axis=1), 1.0)))


@dataclass(frozen=True, eq=False)
class EmpiricalRemap:
    """Row-stochastic remap estimated from data: one distribution over the
    concept space per support vector."""

    space: Space
    support: tuple[tuple[int, ...], ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.support), self.space.size):
            raise ValueError(f"remap rows have shape {m.shape}")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1) > 1e-6):
            raise ValueError("remap rows must be distributions")

    def rows(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    def row(self, g) -> np.ndarray:
        return self.rows()[self.support.index(_vec(g))]

    def argmax_remap(self) -> ConceptRemap:
        return ConceptRemap.fulltable(
            {g: self.space.vector(int(np.argmax(r))) for g, r in zip(self.support, self.rows())}
        )


def mix_remaps(remaps: Sequence[ConceptRemap], weights, space: Space, support) -> StochasticRemap:
    """Convex combination ``sum_a w_a onehot(a(g))`` of deterministic remaps."""
    support = tuple(_vec(g) for g in support)
    return StochasticRemap(space, support, tuple(remaps), tuple(float(w) for w in weights))


@dataclass(frozen=True)
class RemapFamily:
    """Learnable remaps: a base shape plus optional constraints.

    ``pins`` lists ground-truth vectors ``g`` that must map to themselves,
    ``forbidden`` lists ``(g, c)`` pairs that may not occur and ``injective``
    requires distinct support vectors to have distinct images.  Every
    constraint keeps the identity, which the count relies on.
    """

    shape: str = "fulltable"
    pins: frozenset = field(default_factory=frozenset)
    injective: bool = False
    forbidden: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise TaskError(f"unknown family shape {self.shape!r}; expected one of {SHAPES}")
        object.__setattr__(self, "pins", frozenset(_vec(g) for g in self.pins))
        object.__setattr__(self, "forbidden", frozenset((_vec(g), _vec(c)) for g, c in self.forbidden))
        bad = sorted(g for g, c in self.forbidden if g == c)
        if bad:
            raise TaskError(f"forbidden pairs exclude the identity at {bad}")

    def with_pins(self, pins: Iterable) -> "RemapFamily":
        return RemapFamily(self.shape, self.pins | frozenset(_vec(g) for g in pins), self.injective, self.forbidden)

    def with_injective(self) -> "RemapFamily":
        return RemapFamily(self.shape, self.pins, True, self.forbidden)

    def with_shape(self, shape: str) -> "RemapFamily":
        return RemapFamily(shape, self.pins, self.injective, self.forbidden)

    def with_forbidden(self, pairs: Iterable) -> "RemapFamily":
        return RemapFamily(self.shape, self.pins, self.injective, self.forbidden | frozenset(pairs))

    def describe(self) -> dict:
        return {
            "shape": self.shape,
            "pins": [list(g) for g in sorted(self.pins)],
            "injective": self.injective,
            "forbidden": [[list(g), list(c)] for g, c in sorted(self.forbidden)],
        }

    def bind(self, space: Space, support) -> "BoundFamily":
        return BoundFamily(self, space, np.array([_vec(g) for g in support], dtype=np.int64).reshape(len(support), len(space)))


class BoundFamily:
    """A family instantiated on a concept space and support.

    Members are indexed by digit vectors: one digit per support row for the
    full table, one per ``(slot, symbol)`` for the per-slot form and one per
    symbol for the shared form.  The canonical member order is the mixed-radix
    order of these digits, most significant first.
    """

    def __init__(self, family: RemapFamily, space: Space, support: np.ndarray):
        self.family = family
        self.space = space
        self.support = support
        self.support_idx = space.indices(support)
        n, k = support.shape
        sup_set = {tuple(map(int, g)) for g in support}
        for g in family.pins:
            if g not in sup_set:
                raise TaskError(f"pinned vector {g} is not in the support")
        if family.shape == "fulltable":
            self.digits = [("row", j) for j in range(n)]
            self.radices = [space.size] * n
            self.slot_digit = None
        elif family.shape == "perslot":
            self.domains = [sorted(set(int(a) for a in support[:, i])) for i in range(k)]
            self.digits = [(i, a) for i in range(k) for a in self.domains[i]]
            self.radices = [space.cards[i] for i, _ in self.digits]
            pos = {d: p for p, d in enumerate(self.digits)}
            self.slot_digit = np.array([[pos[(i, int(support[j, i]))] for i in range(k)] for j in range(n)], dtype=np.int64)
        else:
            if len(set(space.cards)) != 1:
                raise TaskError("shared-slot family needs all concept slots to have the same cardinality")
            self.domains = [sorted(set(int(a) for a in support.reshape(-1)))]
            self.digits = [(None, a) for a in self.domains[0]]
            self.radices = [space.cards[0]] * len(self.digits)
            pos = {a: p for p, (_, a) in enumerate(self.digits)}
            self.slot_digit = np.array([[pos[int(support[j, i])] for i in range(k)] for j in range(n)], dtype=np.int64)
        self.strides = np.array([int(np.prod(space.cards[i + 1:], dtype=np.int64)) for i in range(k)], dtype=np.int64)

    @property
    def size(self) -> int:
        out = 1
        for r in self.radices:
            out *= r
        return out

    def decode(self, idx: np.ndarray) -> np.ndarray:
        """Digit arrays ``(N, D)`` for candidate indices ``idx``."""
        idx = np.asarray(idx, dtype=np.int64).copy()
        out = np.empty((idx.size, len(self.radices)), dtype=np.int64)
        for p in range(len(self.radices) - 1, -1, -1):
            idx, out[:, p] = np.divmod(idx, self.radices[p])
        return out

    def images(self, digits: np.ndarray) -> np.ndarray:
        """Flat image index of every support row, ``(N, n)``."""
        if self.slot_digit is None:
            return digits
        vals = digits[:, self.slot_digit]  # (N, n, k)
        return vals @ self.strides

    def member_mask(self, images: np.ndarray) -> np.ndarray:
        ok = np.ones(images.shape[0], dtype=bool)
        rows = {tuple(map(int, g)): j for j, g in enumerate(self.support)}
        for g in self.family.pins:
            j = rows[g]
            ok &= images[:, j] == self.support_idx[j]
        for g, c in self.family.forbidden:
            j = rows.get(g)
            if j is not None:
                ok &= images[:, j] != self.space.index(c)
        if self.family.injective and images.shape[1] > 1:
            s = np.sort(images, axis=1)
            ok &= np.all(s[:, 1:] != s[:, :-1], axis=1)
        return ok

    def remap(self, digits: np.ndarray) -> ConceptRemap:
        digits = [int(d) for d in digits]
        if self.family.shape == "fulltable":
            return ConceptRemap.fulltable(
                {tuple(map(int, g)): self.space.vector(d) for g, d in zip(self.support, digits)}
            )
        if self.family.shape == "perslot":
            maps = [dict() for _ in self.domains]
            for (i, a), d in zip(self.digits, digits):
                maps[i][a] = d
            return ConceptRemap.perslot(maps)
        return ConceptRemap.sharedslot({a: d for (_, a), d in zip(self.digits, digits)})

    def identity_digits(self) -> np.ndarray:
        if self.family.shape == "fulltable":
            return self.support_idx.copy()
        return np.array([a for _, a in self.digits], dtype=np.int64)
