"""Label multisets: class ids with multiplicities and remove-one semantics."""

from __future__ import annotations

from typing import Iterable, Iterator


class LabelMultiset:
    """A multiset of integer class labels.

    Counts are strictly positive; removing the last instance of a label
    deletes its key entirely.
    """

    __slots__ = ("counts",)

    def __init__(self, items: Iterable[int] = ()):
        self.counts: dict[int, int] = {}
        for x in items:
            self.add(int(x))

    @classmethod
    def from_counts(cls, counts: dict[int, int]) -> "LabelMultiset":
        ms = cls()
        for label, c in counts.items():
            if c < 1:
                raise ValueError(f"multiplicity must be >= 1, got {c} for label {label}")
            ms.counts[int(label)] = int(c)
        return ms

    def add(self, label: int) -> None:
        self.counts[label] = self.counts.get(label, 0) + 1

    def contains(self, label: int) -> bool:
        return label in self.counts

    def remove_one(self, label: int) -> "LabelMultiset":
        """A new multiset with one instance of ``label`` removed."""
        if label not in self.counts:
            raise KeyError(f"label {label} not in multiset")
        out = self.copy()
        if out.counts[label] == 1:
            del out.counts[label]
        else:
            out.counts[label] -= 1
        return out

    def copy(self) -> "LabelMultiset":
        out = LabelMultiset()
        out.counts = dict(self.counts)
        return out

    def size(self) -> int:
        return sum(self.counts.values())

    def as_sorted_list(self) -> list[int]:
        out = []
        for label in sorted(self.counts):
            out.extend([label] * self.counts[label])
        return out

    def __len__(self) -> int:
        return self.size()

    def __iter__(self) -> Iterator[int]:
        return iter(self.as_sorted_list())

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelMultiset) and self.counts == other.counts

    def __hash__(self):
        return hash(tuple(sorted(self.counts.items())))

    def __repr__(self):
        return f"LabelMultiset({self.counts})"
