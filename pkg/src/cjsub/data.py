"""Capture-history data model: parsing, unique-history compression, strata.

Occasion indices are 1-based throughout the public API. A history is a
vector of T binary detection indicators; individuals enter the dataset only
if detected at least once.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import IO, Iterable, Literal, Sequence


class ParseError(ValueError):
    """Raised when a capture-history CSV cannot be decoded."""


Scheme = Literal["uniform", "first_last", "first_last_cohort"]

#: Slot identifying one individual inside a CompressedDataset:
#: (entry index, copy index within the entry's multiplicity).
Slot = tuple[int, int]


@dataclass(frozen=True)
class CaptureHistory:
    """One individual's detection record over T occasions."""

    occasions: tuple[int, ...]
    cohort_age: int | None = None

    def __post_init__(self) -> None:
        if not self.occasions:
            raise ValueError("empty history")
        if any(o not in (0, 1) for o in self.occasions):
            raise ValueError("occasions must be 0/1")
        if not any(self.occasions):
            raise ValueError("history has no detections")
        if self.cohort_age is not None and self.cohort_age < 0:
            raise ValueError("cohort_age must be non-negative")

    @property
    def T(self) -> int:
        return len(self.occasions)

    @property
    def first(self) -> int:
        """1-based occasion of first detection."""
        return self.occasions.index(1) + 1

    @property
    def last(self) -> int:
        """1-based occasion of last detection."""
        return len(self.occasions) - self.occasions[::-1].index(1)

    def sort_key(self) -> tuple:
        return (self.occasions, -1 if self.cohort_age is None else self.cohort_age)


@dataclass(frozen=True)
class StratumKey:
    """(first, last) detection pair, optionally refined by cohort age.

    The uniform scheme uses the sentinel ``UNIFORM_KEY`` (first = last = 0).
    """

    first: int
    last: int
    cohort_age: int | None = None

    def __post_init__(self) -> None:
        if self.first > self.last:
            raise ValueError("first must be <= last")

    def sort_key(self) -> tuple:
        return (self.first, self.last,
                -1 if self.cohort_age is None else self.cohort_age)


UNIFORM_KEY = StratumKey(0, 0)


@dataclass(frozen=True)
class CompressedDataset:
    """Unique capture histories with multiplicities.

    Under strict compression (as produced by ``from_rows`` / ``parse_dataset``)
    entries are pairwise distinct and sorted lexicographically; after
    ``cap_multiplicity`` replicate entries are allowed by design.
    """

    entries: tuple[tuple[CaptureHistory, int], ...]
    T: int

    def __post_init__(self) -> None:
        for h, n in self.entries:
            if h.T != self.T:
                raise ValueError("inconsistent history length")
            if n < 1:
                raise ValueError("multiplicity must be >= 1")

    @property
    def total_individuals(self) -> int:
        return sum(n for _, n in self.entries)

    @property
    def n_entries(self) -> int:
        return len(self.entries)

    @classmethod
    def from_rows(cls, rows: Iterable[CaptureHistory]) -> "CompressedDataset":
        rows = list(rows)
        if not rows:
            raise ValueError("no histories")
        T = rows[0].T
        counts: dict[CaptureHistory, int] = {}
        for h in rows:
            counts[h] = counts.get(h, 0) + 1
        entries = tuple(sorted(counts.items(), key=lambda kv: kv[0].sort_key()))
        return cls(entries=entries, T=T)

    @classmethod
    def empty(cls, T: int) -> "CompressedDataset":
        return cls(entries=(), T=T)

    def expand(self) -> list[CaptureHistory]:
        out: list[CaptureHistory] = []
        for h, n in self.entries:
            out.extend([h] * n)
        return out

    def slots(self) -> list[Slot]:
        return [(e, c) for e, (_, n) in enumerate(self.entries) for c in range(n)]

    def subset(self, slots: Sequence[Slot]) -> "CompressedDataset":
        """Strictly recompressed dataset containing exactly the given slots."""
        if not slots:
            return CompressedDataset.empty(self.T)
        return CompressedDataset.from_rows(self.entries[e][0] for e, _ in slots)

    def has_cohort_age(self) -> bool:
        return bool(self.entries) and all(
            h.cohort_age is not None for h, _ in self.entries)

    def to_csv(self, dest: IO[str] | str) -> None:
        close = False
        if isinstance(dest, str):
            dest = open(dest, "w", encoding="utf-8")
            close = True
        try:
            cohort = self.has_cohort_age()
            for h, n in self.entries:
                row = ",".join(str(o) for o in h.occasions)
                if cohort:
                    row += f",{h.cohort_age}"
                for _ in range(n):
                    dest.write(row + "\n")
        finally:
            if close:
                dest.close()


def parse_dataset(source: IO[bytes] | IO[str] | bytes | str,
                  cohort_age: bool = False) -> CompressedDataset:
    """Parse capture-history CSV into a strictly compressed dataset.

    Layout: one row per individual, T comma-separated cells in {0,1}, an
    optional header, and an optional trailing integer ``cohort_age`` column
    (enabled by the flag or by a header whose last field is ``cohort_age``).
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    lines = text.splitlines()
    rows: list[CaptureHistory] = []
    T: int | None = None
    start = 0
    # Header detection: a first line with any non-integer token.
    if lines:
        tokens = [c.strip() for c in lines[0].split(",")]
        if any(not _is_int(tok) for tok in tokens):
            if tokens and tokens[-1] == "cohort_age":
                cohort_age = True
            start = 1

    for ln, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        age: int | None = None
        if cohort_age:
            if len(cells) < 2:
                raise ParseError(f"malformed row at line {ln}")
            if not _is_int(cells[-1]):
                raise ParseError(f"non-integer cohort_age at line {ln}")
            age = int(cells[-1])
            cells = cells[:-1]
        occ = []
        for c in cells:
            if c not in ("0", "1"):
                raise ParseError(f"non-binary cell at line {ln}")
            occ.append(int(c))
        if T is None:
            T = len(occ)
        elif len(occ) != T:
            raise ParseError(f"inconsistent row length at line {ln}")
        try:
            rows.append(CaptureHistory(tuple(occ), cohort_age=age))
        except ValueError as exc:
            raise ParseError(f"{exc} at line {ln}") from exc
    if not rows:
        raise ParseError("no data rows")
    return CompressedDataset.from_rows(rows)


def _is_int(tok: str) -> bool:
    try:
        int(tok)
        return True
    except ValueError:
        return False


def first_last(history: CaptureHistory) -> tuple[int, int]:
    """1-based occasions of first and last detection."""
    return history.first, history.last


def stratify(data: CompressedDataset, scheme: Scheme) -> dict[StratumKey, list[Slot]]:
    """Group individual slots into strata; only non-empty strata are emitted."""
    if scheme == "uniform":
        return {UNIFORM_KEY: data.slots()}
    if scheme == "first_last_cohort" and not data.has_cohort_age():
        raise ValueError("first_last_cohort requires cohort_age on all entries")
    groups: dict[StratumKey, list[Slot]] = {}
    for e, (h, n) in enumerate(data.entries):
        key = StratumKey(
            h.first, h.last,
            h.cohort_age if scheme == "first_last_cohort" else None)
        groups.setdefault(key, []).extend((e, c) for c in range(n))
    return dict(sorted(groups.items(), key=lambda kv: kv[0].sort_key()))


def cap_multiplicity(data: CompressedDataset, cap: int) -> CompressedDataset:
    """Split entries so no multiplicity exceeds ``cap``; total count unchanged."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if all(n <= cap for _, n in data.entries):
        return data
    entries: list[tuple[CaptureHistory, int]] = []
    for h, n in data.entries:
        while n > cap:
            entries.append((h, cap))
            n -= cap
        entries.append((h, n))
    return CompressedDataset(entries=tuple(entries), T=data.T)
