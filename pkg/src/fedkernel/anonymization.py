"""Micro data release with k-anonymity and summary statistics with
differential privacy, plus the per-recipient privacy budget kept on the
governance ledger.

k-anonymization uses full-domain generalization: every quasi-identifier
column is generalized to one level of its hierarchy, the same level for the
whole column. The level vector is found by exhaustive search over the
lattice, minimizing (suppressed rows, total level, lexicographic vector):
since the top of every hierarchy collapses a column to '*', a zero-
suppression vector always exists for k <= row count, so the search
effectively returns the cheapest zero-suppression generalization. Rows in
residual classes smaller than k would be suppressed from the release.

The differential privacy engine releases COUNT/SUM/AVG with Laplace noise of
scale sensitivity/epsilon; AVG is composed from a noisy SUM and a noisy
COUNT, each on half the budget.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import product
from typing import Iterable, Optional, Sequence

from . import canonical
from .errors import (InfeasibleK, MissingSensitivity, NonPositiveEpsilon,
                     SeqConflict)
from .registry import GovernanceRecord, Ledger, RecordKind


class ColumnRole(Enum):
    IDENTIFIER = "IDENTIFIER"
    QUASI_IDENTIFIER = "QUASI_IDENTIFIER"
    SENSITIVE = "SENSITIVE"
    OTHER = "OTHER"


@dataclass(frozen=True)
class Column:
    name: str
    role: ColumnRole
    type: str = "text"  # "text" | "integer"


@dataclass
class Dataset:
    columns: list[Column]
    rows: list[tuple]

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row arity must equal column count")

    def column_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise KeyError(name)

    def qi_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.role is ColumnRole.QUASI_IDENTIFIER]

    def values(self, name: str) -> list:
        i = self.column_index(name)
        return [row[i] for row in self.rows]

    def to_doc(self) -> dict:
        return {
            "columns": [{"name": c.name, "role": c.role.value, "type": c.type}
                        for c in self.columns],
            "rows": [list(r) for r in self.rows],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Dataset":
        cols = [Column(c["name"], ColumnRole(c["role"]), c.get("type", "text"))
                for c in doc["columns"]]
        return cls(cols, [tuple(r) for r in doc["rows"]])


class GeneralizationHierarchy:
    """Ordered coarsenings for one quasi-identifier column.

    ``levels[0]`` is the identity; every later level must merge whatever the
    previous level merged; the last level maps everything to '*'.
    """

    def __init__(self, column: str, levels: Sequence[dict]):
        self.column = column
        self.levels = [dict(lv) for lv in levels]
        if not self.levels:
            raise ValueError("a hierarchy needs at least the identity level")
        for value, label in self.levels[0].items():
            if value != label and str(value) != str(label):
                raise ValueError("level 0 must be the identity map")
        top = set(self.levels[-1].values())
        if top and top != {"*"}:
            raise ValueError("the top level must collapse to '*'")
        for lower, upper in zip(self.levels, self.levels[1:]):
            groups: dict[str, set] = {}
            for value in lower:
                groups.setdefault(lower[value], set()).add(upper[value])
            for label, images in groups.items():
                if len(images) > 1:
                    raise ValueError(
                        f"{column}: level is not a coarsening at {label!r}")

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def generalize(self, value, level: int) -> str:
        mapping = self.levels[level]
        if value in mapping:
            return str(mapping[value])
        # hierarchies that traveled through JSON carry text keys
        return str(mapping[str(value)])

    @classmethod
    def suppression(cls, column: str, values: Iterable) -> "GeneralizationHierarchy":
        """The two-level fallback: identity, then total suppression."""
        domain = list(dict.fromkeys(values))
        return cls(column, [{v: v for v in domain}, {v: "*" for v in domain}])

    @classmethod
    def interval(cls, column: str, values: Iterable[int],
                 widths: Sequence[int]) -> "GeneralizationHierarchy":
        """Numeric hierarchy: identity, then bands of each width, then '*'.

        Each width must divide the next so bands nest; the constructor
        rejects anything that is not a coarsening chain."""
        domain = sorted(set(values))
        levels: list[dict] = [{v: v for v in domain}]
        for width in widths:
            level = {}
            for v in domain:
                low = (v // width) * width
                level[v] = f"{low}-{low + width - 1}"
            levels.append(level)
        levels.append({v: "*" for v in domain})
        return cls(column, levels)


@dataclass(frozen=True)
class AnonymizationResult:
    dataset: Dataset
    levels: dict[str, int]
    suppressed: int


def _release_at(dataset: Dataset, k: int, hierarchies: dict[str, GeneralizationHierarchy],
                vector: dict[str, int]) -> tuple[Dataset, int]:
    """Generalize at the given level vector, suppress residual classes < k."""
    keep_cols = [c for c in dataset.columns if c.role is not ColumnRole.IDENTIFIER]
    qi_names = [c.name for c in keep_cols if c.role is ColumnRole.QUASI_IDENTIFIER]
    out_rows = []
    for row in dataset.rows:
        out = []
        for col in keep_cols:
            value = row[dataset.column_index(col.name)]
            if col.role is ColumnRole.QUASI_IDENTIFIER:
                value = hierarchies[col.name].generalize(value, vector[col.name])
            out.append(value)
        out_rows.append(tuple(out))
    positions = [i for i, c in enumerate(keep_cols) if c.name in qi_names]
    tuples = [tuple(r[i] for i in positions) for r in out_rows]
    counts = Counter(tuples)
    released = [r for r, t in zip(out_rows, tuples) if counts[t] >= k]
    out_cols = [Column(c.name, c.role, "text" if c.role is ColumnRole.QUASI_IDENTIFIER
                       else c.type) for c in keep_cols]
    return Dataset(out_cols, released), len(out_rows) - len(released)


def k_anonymize(dataset: Dataset, k: int,
                hierarchies: dict[str, GeneralizationHierarchy]) -> AnonymizationResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(dataset.rows):
        raise InfeasibleK(f"k={k} exceeds the {len(dataset.rows)}-row dataset")
    qi = dataset.qi_columns()
    for name in qi:
        if name not in hierarchies:
            raise ValueError(f"quasi-identifier {name!r} has no hierarchy")

    best: Optional[tuple[tuple, dict[str, int], Dataset, int]] = None
    axes = [range(hierarchies[name].max_level + 1) for name in qi]
    for combo in product(*axes):
        vector = dict(zip(qi, combo))
        released, suppressed = _release_at(dataset, k, hierarchies, vector)
        score = (suppressed, sum(combo), combo)
        if best is None or score < best[0]:
            best = (score, vector, released, suppressed)
    assert best is not None  # the lattice always has at least the empty vector
    _, vector, released, suppressed = best
    return AnonymizationResult(released, vector, suppressed)


def min_class_size(dataset: Dataset) -> int:
    """Smallest quasi-identifier class in a released dataset (inf if no rows)."""
    qi = dataset.qi_columns()
    if not dataset.rows:
        return 0
    positions = [dataset.column_index(n) for n in qi]
    counts = Counter(tuple(r[i] for i in positions) for r in dataset.rows)
    return min(counts.values())


# --- differential privacy ------------------------------------------------------------


class DpQuery(Enum):
    COUNT = "COUNT"
    SUM = "SUM"
    AVG = "AVG"


@dataclass(frozen=True)
class DpRelease:
    value: float
    scale: float
    component_scales: dict[str, float]
    mean_fraction: Optional[tuple[int, int]] = None


def laplace_draw(rng: random.Random, scale: float) -> float:
    u = rng.random() - 0.5
    return -scale * math.copysign(1.0, u) * math.log1p(-2.0 * abs(u))


def dp_release(dataset: Dataset, query: DpQuery, epsilon: float,
               sensitivity: Optional[float] = None,
               column: Optional[str] = None,
               rng: Optional[random.Random] = None) -> DpRelease:
    if epsilon <= 0:
        raise NonPositiveEpsilon(str(epsilon))
    rng = rng or random.Random()

    def clamped_values() -> list[float]:
        if column is None:
            raise MissingSensitivity("SUM/AVG need a column")
        if sensitivity is None or sensitivity <= 0:
            raise MissingSensitivity("SUM/AVG need the column's value bound")
        return [min(max(float(v), 0.0), float(sensitivity))
                for v in dataset.values(column)]

    if query is DpQuery.COUNT:
        scale = 1.0 / epsilon
        value = len(dataset.rows) + laplace_draw(rng, scale)
        return DpRelease(value, scale, {"count": scale})
    if query is DpQuery.SUM:
        values = clamped_values()
        scale = float(sensitivity) / epsilon
        value = sum(values) + laplace_draw(rng, scale)
        return DpRelease(value, scale, {"sum": scale})
    # AVG: noisy sum over noisy count, budget split equally
    half = epsilon / 2.0
    values = clamped_values()
    sum_scale = float(sensitivity) / half
    count_scale = 1.0 / half
    noisy_sum = sum(values) + laplace_draw(rng, sum_scale)
    noisy_count = len(values) + laplace_draw(rng, count_scale)
    value = noisy_sum / noisy_count if noisy_count else math.inf
    return DpRelease(value, sum_scale, {"sum": sum_scale, "count": count_scale})


# --- sharing history and budget ---------------------------------------------------------


@dataclass(frozen=True)
class AnonHistoryEntry:
    recipient: str
    release_kind: str  # "KANON" | "DP"
    parameters: dict
    timestamp: int

    def to_doc(self) -> dict:
        return {"recipient": self.recipient, "release_kind": self.release_kind,
                "parameters": self.parameters, "timestamp": self.timestamp}

    @classmethod
    def from_doc(cls, doc: dict) -> "AnonHistoryEntry":
        return cls(doc["recipient"], doc["release_kind"], dict(doc["parameters"]),
                   int(doc["timestamp"]))


@dataclass(frozen=True)
class BudgetDecision:
    allowed: bool
    spent: float


class Anonymizer:
    """Release front end that records sharing history through the ledger."""

    def __init__(self, ledger: Ledger, anm_token: object, clock,
                 rng: Optional[random.Random] = None, record_history: bool = True):
        self._ledger = ledger
        self._token = anm_token
        self._clock = clock
        self._rng = rng or random.Random()
        self._record_history = record_history

    def spent_epsilon(self, recipient: str) -> float:
        history = self._ledger.get_history(self._token, RecordKind.ANON_HISTORY,
                                           recipient)
        total = 0.0
        for record in history:
            if record.tombstone:
                continue
            entry = AnonHistoryEntry.from_doc(
                canonical.canonical_loads(record.payload.decode("utf-8")))
            total += float(entry.parameters.get("epsilon", 0.0))
        return total

    def check_budget(self, recipient: str, proposed_epsilon: float, budget: float,
                     entry: Optional[AnonHistoryEntry] = None) -> BudgetDecision:
        """Compare-and-append: the history entry lands atomically with the
        grant, so concurrent releases for one recipient cannot both pass."""
        while True:
            seq = self._ledger.next_seq(self._token, RecordKind.ANON_HISTORY, recipient)
            spent = self.spent_epsilon(recipient)
            if spent + proposed_epsilon > budget:
                return BudgetDecision(False, spent)
            if entry is None:
                entry = AnonHistoryEntry(recipient, "DP",
                                         {"epsilon": proposed_epsilon},
                                         self._clock.now())
            record = GovernanceRecord(
                kind=RecordKind.ANON_HISTORY, key=recipient,
                payload=canonical.canonical_bytes(entry.to_doc()),
                author="ANM", seq=seq)
            try:
                self._ledger.append(self._token, [record], timestamp=self._clock.now())
                return BudgetDecision(True, spent)
            except SeqConflict:
                continue  # another release landed first; re-read and re-check

    def dp_release_with_budget(self, dataset: Dataset, query: DpQuery,
                               epsilon: float, budget: float, recipient: str,
                               sensitivity: Optional[float] = None,
                               column: Optional[str] = None) -> Optional[DpRelease]:
        if epsilon <= 0:
            raise NonPositiveEpsilon(str(epsilon))
        entry = AnonHistoryEntry(recipient, "DP",
                                 {"epsilon": epsilon, "sensitivity": sensitivity},
                                 self._clock.now())
        if self._record_history:
            decision = self.check_budget(recipient, epsilon, budget, entry)
            if not decision.allowed:
                return None
        return dp_release(dataset, query, epsilon, sensitivity, column, self._rng)

    def k_anonymize_recorded(self, dataset: Dataset, k: int,
                             hierarchies: dict[str, GeneralizationHierarchy],
                             recipient: str) -> AnonymizationResult:
        result = k_anonymize(dataset, k, hierarchies)
        if self._record_history:
            entry = AnonHistoryEntry(recipient, "KANON", {"k": k}, self._clock.now())
            while True:
                seq = self._ledger.next_seq(self._token, RecordKind.ANON_HISTORY,
                                            recipient)
                record = GovernanceRecord(
                    kind=RecordKind.ANON_HISTORY, key=recipient,
                    payload=canonical.canonical_bytes(entry.to_doc()),
                    author="ANM", seq=seq)
                try:
                    self._ledger.append(self._token, [record],
                                        timestamp=self._clock.now())
                    break
                except SeqConflict:
                    continue
        return result


def mean_exact(values: Sequence[int]) -> Fraction:
    return Fraction(sum(values), len(values))


# --- delimiter-separated text I/O ----------------------------------------------------------

def dataset_to_text(dataset: Dataset, delimiter: str = ",") -> str:
    header = delimiter.join(f"{c.name}:{c.role.value}:{c.type}" for c in dataset.columns)
    lines = [header]
    for row in dataset.rows:
        lines.append(delimiter.join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str, delimiter: str = ",") -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty dataset document")
    columns = []
    for part in lines[0].split(delimiter):
        pieces = part.split(":")
        if len(pieces) < 2:
            raise ValueError(f"header field {part!r} needs name:ROLE[:type]")
        name, role = pieces[0], ColumnRole(pieces[1])
        ctype = pieces[2] if len(pieces) > 2 else "text"
        columns.append(Column(name, role, ctype))
    rows = []
    for line in lines[1:]:
        raw = line.split(delimiter)
        row = tuple(int(v) if c.type == "integer" else v
                    for v, c in zip(raw, columns))
        rows.append(row)
    return Dataset(columns, rows)
