"""Tasks, model enumeration and the ground-truth inference table."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .formula import Atom, Formula, Not, Relation, _Binary, desugar, evaluate_batch
from .spaces import DEFAULT_CAP, Space, TaskError, check_cap


class DeterminismViolation(TaskError):
    """Some support vector is consistent with more than one label."""

    def __init__(self, offending: dict):
        self.offending = offending
        items = ", ".join(f"{c} -> {sorted(ys)}" for c, ys in offending.items())
        super().__init__(f"knowledge is not deterministic on the support: {items}")


class NoConsistentLabel(TaskError):
    """Some support vector is consistent with no label at all."""

    def __init__(self, vectors: list):
        self.vectors = vectors
        super().__init__(f"no label is consistent with support vectors {vectors}")


def _check_formula(formula: Formula, cards: dict) -> None:
    if isinstance(formula, Atom):
        if formula.var not in cards:
            raise TaskError(f"undeclared variable {formula.var!r}")
        if not 0 <= formula.value < cards[formula.var]:
            raise TaskError(
                f"value {formula.value} out of range for {formula.var!r} (cardinality {cards[formula.var]})"
            )
    elif isinstance(formula, Relation):
        for name in sorted(formula.variables()):
            if name not in cards:
                raise TaskError(f"undeclared variable {name!r}")
    elif isinstance(formula, Not):
        _check_formula(formula.arg, cards)
    elif isinstance(formula, _Binary):
        _check_formula(formula.left, cards)
        _check_formula(formula.right, cards)


@dataclass(frozen=True)
class TaskSpec:
    """A NeSy task: concept and label spaces, knowledge and concept support.

    ``source`` keeps the knowledge as written (possibly with arithmetic sugar);
    ``knowledge`` is its purely propositional desugaring.  ``support`` holds
    concept vectors in canonical order; ``distribution`` (optional) is aligned
    with it.
    """

    concepts: Space
    labels: Space
    source: Formula
    knowledge: Formula
    support: tuple[tuple[int, ...], ...]
    distribution: tuple[float, ...] | None = None
    name: str = "task"
    cap: int = field(default=DEFAULT_CAP, compare=False)

    @classmethod
    def create(
        cls,
        concepts,
        labels,
        knowledge: Formula,
        support: Iterable[Sequence[int]] | None = None,
        distribution: Sequence[float] | None = None,
        name: str = "task",
        cap: int = DEFAULT_CAP,
    ) -> "TaskSpec":
        concepts = concepts if isinstance(concepts, Space) else Space.of(concepts)
        labels = labels if isinstance(labels, Space) else Space.of(labels)
        if len(concepts) == 0:
            raise TaskError("at least one concept required")
        if len(labels) == 0:
            raise TaskError("at least one label required")
        clash = set(concepts.names) & set(labels.names)
        if clash:
            raise TaskError(f"names declared as both concept and label: {sorted(clash)}")
        check_cap(concepts, cap, "concept space")
        check_cap(labels, cap, "label space")
        cards = dict(zip(concepts.names, concepts.cards)) | dict(zip(labels.names, labels.cards))
        _check_formula(knowledge, cards)

        if support is None:
            vectors = [tuple(map(int, v)) for v in concepts.vectors]
            if distribution is not None and len(distribution) != len(vectors):
                raise TaskError("distribution length does not match the concept space")
            pairs = list(zip(vectors, distribution)) if distribution is not None else [(v, None) for v in vectors]
        else:
            vectors = [tuple(int(x) for x in v) for v in support]
            if distribution is not None and len(distribution) != len(vectors):
                raise TaskError("distribution length does not match the support")
            pairs = list(zip(vectors, distribution if distribution is not None else [None] * len(vectors)))
        if not pairs:
            raise TaskError("support must be nonempty")
        for v, _ in pairs:
            concepts.index(v)
        keys = [v for v, _ in pairs]
        if len(set(keys)) != len(keys):
            raise TaskError("duplicate vectors in support")
        pairs.sort(key=lambda p: concepts.index(p[0]))
        dist = None
        if distribution is not None:
            dist = tuple(float(w) for _, w in pairs)
            if any(w < 0 or not math.isfinite(w) for w in dist):
                raise TaskError("distribution entries must be finite and nonnegative")
            if abs(sum(dist) - 1.0) > 1e-9:
                raise TaskError(f"distribution sums to {sum(dist)!r}, not 1")
        return cls(
            concepts=concepts,
            labels=labels,
            source=knowledge,
            knowledge=desugar(knowledge, cards),
            support=tuple(v for v, _ in pairs),
            distribution=dist,
            name=name,
            cap=cap,
        )

    @property
    def cards(self) -> dict[str, int]:
        return dict(zip(self.concepts.names, self.concepts.cards)) | dict(zip(self.labels.names, self.labels.cards))

    @property
    def support_indices(self) -> np.ndarray:
        return self.concepts.indices(np.array(self.support, dtype=np.int64))

    @property
    def full_support(self) -> bool:
        return len(self.support) == self.concepts.size

    def consistency(self) -> np.ndarray:
        """Boolean ``(|C|, |Y|)`` matrix: entry is true iff ``(c, y)`` satisfies K."""
        check_cap(Space(self.concepts.names + self.labels.names, self.concepts.cards + self.labels.cards),
                  self.cap, "concept x label")
        cols = {}
        for j, n in enumerate(self.concepts.names):
            cols[n] = self.concepts.vectors[:, j][:, None]
        for j, n in enumerate(self.labels.names):
            cols[n] = self.labels.vectors[:, j][None, :]
        # the sugared form evaluates arithmetic directly and agrees with `knowledge`
        grid = evaluate_batch(self.source, cols)
        return np.broadcast_to(grid, (self.concepts.size, self.labels.size)).copy()

    def replace(self, **changes) -> "TaskSpec":
        args = dict(
            concepts=self.concepts, labels=self.labels, knowledge=self.source,
            support=self.support, distribution=self.distribution, name=self.name, cap=self.cap,
        )
        args.update(changes)
        return TaskSpec.create(**args)


def enumerate_models(task: TaskSpec) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All ``(c, y)`` satisfying the knowledge, in lexicographic order."""
    grid = task.consistency()
    ci, yi = np.nonzero(grid)
    return [(task.concepts.vector(c), task.labels.vector(y)) for c, y in zip(ci, yi)]


@dataclass(frozen=True, eq=False)
class InferenceTable:
    """Compiled map from concept vectors to their consistent labels.

    ``label_index[c]`` is the flat label index when ``c`` has exactly one
    consistent label and ``-1`` otherwise.
    """

    concepts: Space
    labels: Space
    consistent: np.ndarray
    support: np.ndarray
    label_index: np.ndarray

    @property
    def deterministic(self) -> bool:
        return bool(np.all(self.label_index[self.support] >= 0))

    def label_of(self, c) -> tuple[int, ...]:
        idx = self.label_index[self.concepts.index(c)]
        if idx < 0:
            raise TaskError(f"concept vector {tuple(c)} has no unique label")
        return self.labels.vector(idx)

    def consistent_labels(self, c) -> list[tuple[int, ...]]:
        row = self.consistent[self.concepts.index(c)]
        return [self.labels.vector(i) for i in np.flatnonzero(row)]

    def as_dict(self) -> dict:
        return {
            self.concepts.vector(i): self.labels.vector(y)
            for i, y in enumerate(self.label_index)
            if y >= 0
        }


def build_beta_star(task: TaskSpec, deterministic: bool = True) -> InferenceTable:
    """Compile the task knowledge into an :class:`InferenceTable`.

    In deterministic mode every support vector must have exactly one
    consistent label; vectors outside the support may have none or several.
    """
    grid = task.consistency()
    grid.setflags(write=False)
    counts = grid.sum(axis=1)
    label_index = np.where(counts == 1, grid.argmax(axis=1), -1).astype(np.int64)
    label_index.setflags(write=False)
    support = task.support_indices
    support.setflags(write=False)
    empty = [task.concepts.vector(i) for i in support if counts[i] == 0]
    if empty:
        raise NoConsistentLabel(empty)
    if deterministic:
        multi = {
            task.concepts.vector(i): [task.labels.vector(y) for y in np.flatnonzero(grid[i])]
            for i in support
            if counts[i] > 1
        }
        if multi:
            raise DeterminismViolation(multi)
    return InferenceTable(task.concepts, task.labels, grid, support, label_index)


@dataclass(frozen=True)
class KUnambiguity:
    unambiguous: bool
    witness: tuple[int, int] | None = None


def check_k_unambiguity(table: InferenceTable, k: int) -> KUnambiguity:
    """Check that constant concept vectors ``(c, ..., c)`` have distinct labels."""
    cards = set(table.concepts.cards)
    if len(table.concepts) != k:
        raise TaskError(f"k={k} but the task has {len(table.concepts)} concept slots")
    if len(cards) != 1:
        raise TaskError("k-unambiguity needs all concept slots to share one symbol set")
    (card,) = cards
    rows = [table.consistent[table.concepts.index((s,) * k)] for s in range(card)]
    for a in range(card):
        for b in range(a + 1, card):
            if np.array_equal(rows[a], rows[b]):
                return KUnambiguity(False, (a, b))
    return KUnambiguity(True)
