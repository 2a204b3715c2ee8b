"""Undirected edge sets over nodes 0..p-1."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np


@dataclass(frozen=True)
class EdgeSet:
    p: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < j < self.p):
                raise ValueError(f"invalid edge ({i}, {j}) for p={self.p}")

    @classmethod
    def from_pairs(cls, p: int, pairs: Iterable[tuple[int, int]]) -> "EdgeSet":
        out = set()
        for i, j in pairs:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            out.add((min(i, j), max(i, j)))
        return cls(p, frozenset(out))

    @classmethod
    def from_matrix(cls, m: np.ndarray, tol: float = 0.0) -> "EdgeSet":
        """Edges where |m_ij| > tol, i < j."""
        m = np.asarray(m)
        i, j = np.nonzero(np.triu(np.abs(m) > tol, 1))
        return cls(m.shape[0], frozenset(zip(i.tolist(), j.tolist())))

    @classmethod
    def empty(cls, p: int) -> "EdgeSet":
        return cls(p, frozenset())

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(sorted(self.edges))

    def __contains__(self, pair) -> bool:
        i, j = pair
        return (min(i, j), max(i, j)) in self.edges

    def _check(self, other: "EdgeSet"):
        if other.p != self.p:
            raise ValueError(f"edge sets over different node counts ({self.p} vs {other.p})")

    def __or__(self, other: "EdgeSet") -> "EdgeSet":
        self._check(other)
        return EdgeSet(self.p, self.edges | other.edges)

    def __and__(self, other: "EdgeSet") -> "EdgeSet":
        self._check(other)
        return EdgeSet(self.p, self.edges & other.edges)

    def __sub__(self, other: "EdgeSet") -> "EdgeSet":
        self._check(other)
        return EdgeSet(self.p, self.edges - other.edges)

    def issubset(self, other: "EdgeSet") -> bool:
        self._check(other)
        return self.edges <= other.edges

    def restrict(self, mask: Optional[np.ndarray]) -> "EdgeSet":
        """Keep edges whose cell is True in the symmetric boolean ``mask``."""
        if mask is None:
            return self
        return EdgeSet(self.p, frozenset(e for e in self.edges if mask[e]))

    def to_matrix(self) -> np.ndarray:
        a = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.p, dtype=int)
        for i, j in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def to_list(self, one_based: bool = True) -> list[list[int]]:
        off = 1 if one_based else 0
        return [[i + off, j + off] for i, j in sorted(self.edges)]
