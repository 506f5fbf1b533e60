from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEFAULT_CAP = 2**20


class TaskError(ValueError):
    """Invalid task definition (undeclared variables, bad ranges, caps...)."""


@dataclass(frozen=True)
class Space:
    """An ordered product of finite categorical domains ``{0..card-1}``.

    Vectors are enumerated lexicographically with the last variable varying
    fastest, so the flat index of a vector is its mixed-radix value.
    """

    names: tuple[str, ...]
    cards: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.cards):
            raise TaskError("names and cardinalities differ in length")
        if len(set(self.names)) != len(self.names):
            raise TaskError(f"duplicate variable names in {self.names}")
        for n, c in zip(self.names, self.cards):
            if int(c) < 2:
                raise TaskError(f"variable {n!r} needs cardinality >= 2, got {c}")

    @classmethod
    def of(cls, pairs) -> "Space":
        pairs = list(pairs)
        return cls(tuple(n for n, _ in pairs), tuple(int(c) for _, c in pairs))

    def __len__(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return int(np.prod(self.cards, dtype=object)) if self.cards else 1

    @cached_property
    def vectors(self) -> np.ndarray:
        """All vectors as an ``(size, len)`` int array in canonical order."""
        if not self.cards:
            return np.zeros((1, 0), dtype=np.int64)
        grids = np.indices(self.cards).reshape(len(self.cards), -1).T
        return np.ascontiguousarray(grids, dtype=np.int64)

    def index(self, vector) -> int:
        vector = tuple(int(v) for v in vector)
        if len(vector) != len(self.cards):
            raise TaskError(f"vector {vector} has wrong length for {self.names}")
        for n, c, v in zip(self.names, self.cards, vector):
            if not 0 <= v < c:
                raise TaskError(f"value {v} out of range for {n!r} (cardinality {c})")
        return int(np.ravel_multi_index(vector, self.cards))

    def indices(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.asarray(vectors, dtype=np.int64).reshape(-1, len(self.cards))
        return np.ravel_multi_index(tuple(vectors.T), self.cards).astype(np.int64)

    def vector(self, index: int) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unravel_index(int(index), self.cards))

    def describe(self, index: int) -> dict[str, int]:
        return dict(zip(self.names, self.vector(index)))


def check_cap(space: Space, cap: int, what: str) -> None:
    if space.size > cap:
        raise TaskError(f"{what} joint size {space.size} exceeds cap {cap}")
